#pragma once

#include "common.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "features.hpp"
#include "model.hpp"
#include "segmentation.hpp"
#include "evaluation.hpp"
#include "trainer.hpp"
#include "checkpoint.hpp"
#include "synthetic.hpp"
