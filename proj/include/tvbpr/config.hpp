#pragma once

#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"

namespace tvbpr {

enum class VariantKind : std::uint8_t { pop, bpr_mf, bpr_tmf, vbpr, tvbpr, tvbpr_plus };

/// Which terms of the full predictor are active.
struct ModelVariant {
    VariantKind kind = VariantKind::tvbpr_plus;
    bool use_visual = true;
    bool use_temporal_visual = true;
    bool use_temporal_nonvisual = true;
    bool use_taxonomy = true;
    bool use_personal_drift = false;

    bool temporal() const noexcept { return use_temporal_visual || use_temporal_nonvisual; }
    bool is_pop() const noexcept { return kind == VariantKind::pop; }

    static ModelVariant of(VariantKind kind) {
        ModelVariant v;
        v.kind = kind;
        v.use_visual = kind == VariantKind::vbpr || kind == VariantKind::tvbpr || kind == VariantKind::tvbpr_plus;
        v.use_temporal_visual = kind == VariantKind::tvbpr || kind == VariantKind::tvbpr_plus;
        v.use_temporal_nonvisual = kind == VariantKind::bpr_tmf || kind == VariantKind::tvbpr_plus;
        v.use_taxonomy = v.use_temporal_nonvisual;
        return v;
    }

    bool operator==(const ModelVariant&) const = default;
};

inline std::string to_string(VariantKind kind) {
    switch (kind) {
        case VariantKind::pop: return "pop";
        case VariantKind::bpr_mf: return "bpr-mf";
        case VariantKind::bpr_tmf: return "bpr-tmf";
        case VariantKind::vbpr: return "vbpr";
        case VariantKind::tvbpr: return "tvbpr";
        case VariantKind::tvbpr_plus: return "tvbpr+";
    }
    return "?";
}

inline VariantKind parse_variant(std::string_view name) {
    for (auto k : {VariantKind::pop, VariantKind::bpr_mf, VariantKind::bpr_tmf, VariantKind::vbpr, VariantKind::tvbpr,
                   VariantKind::tvbpr_plus})
        if (to_string(k) == name) return k;
    throw ValidationError("unknown variant '" + std::string(name) + "' (expected pop, bpr-mf, bpr-tmf, vbpr, tvbpr, tvbpr+)");
}

struct TrainConfig {
    ModelVariant variant = ModelVariant::of(VariantKind::tvbpr_plus);
    std::size_t dims = 10;          // K
    std::size_t visual_dims = 10;   // K'
    std::size_t feature_dim = 0;    // F, taken from the feature store
    std::size_t epochs = 10;        // N
    std::size_t bins = 40;          // B
    double lambda_theta = 1.0;
    double lambda_temporal = 1e-4;
    double learning_rate = 0.01;
    std::size_t iterations = 100;
    std::size_t patience = 3;
    std::size_t refit_period = 10;  // SGD iterations between segmentation refits / validation checks
    std::size_t neg_batch = 200;    // S
    std::size_t val_negatives = 200;
    double kappa = 0.5;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    // Epoch parameter sets actually allocated: static variants carry one.
    std::size_t model_epochs() const noexcept { return variant.temporal() ? epochs : 1; }

    void validate() const {
        if (epochs < 1) throw ValidationError("epochs must be >= 1");
        if (bins < epochs) throw ValidationError("bins (" + std::to_string(bins) + ") must be >= epochs (" +
                                                 std::to_string(epochs) + ")");
        if (!(learning_rate > 0)) throw ValidationError("learning rate must be > 0");
        if (lambda_theta < 0 || lambda_temporal < 0) throw ValidationError("regularizers must be >= 0");
        if (refit_period < 1) throw ValidationError("refit-period must be >= 1");
        if (neg_batch < 1) throw ValidationError("neg-batch must be >= 1");
        if (val_negatives < 1) throw ValidationError("val-negatives must be >= 1");
        if (variant.use_personal_drift && !(kappa > 0 && kappa <= 1)) throw ValidationError("kappa must lie in (0, 1]");
        if (variant.use_personal_drift && !variant.use_visual)
            throw ValidationError("personal drift requires a visual variant");
        if (threads < 1) throw ValidationError("threads must be >= 1");
    }

    bool operator==(const TrainConfig&) const = default;
};

/// Flat key/value view of a config; the keys double as CLI flag names.
inline std::vector<std::pair<std::string, std::string>> to_key_values(const TrainConfig& c) {
    auto num = [](auto v) { return detail::format_number(v); };
    return {
        {"variant", to_string(c.variant.kind)},
        {"dims", num(c.dims)},
        {"visual-dims", num(c.visual_dims)},
        {"feature-dim", num(c.feature_dim)},
        {"epochs", num(c.epochs)},
        {"bins", num(c.bins)},
        {"lambda", num(c.lambda_theta)},
        {"lambda-temporal", num(c.lambda_temporal)},
        {"lr", num(c.learning_rate)},
        {"iterations", num(c.iterations)},
        {"patience", num(c.patience)},
        {"refit-period", num(c.refit_period)},
        {"neg-batch", num(c.neg_batch)},
        {"val-negatives", num(c.val_negatives)},
        {"personal-drift", c.variant.use_personal_drift ? "true" : "false"},
        {"kappa", num(c.kappa)},
        {"seed", num(c.seed)},
        {"threads", num(c.threads)},
    };
}

inline void apply_key_value(TrainConfig& c, std::string_view key, std::string_view value) {
    auto bad = [&] { return ValidationError("bad value '" + std::string(value) + "' for '" + std::string(key) + "'"); };
    auto get = [&](auto& out) {
        if (!detail::parse_number(value, out)) throw bad();
    };
    if (key == "variant") {
        const bool drift = c.variant.use_personal_drift;
        c.variant = ModelVariant::of(parse_variant(value));
        c.variant.use_personal_drift = drift;
    } else if (key == "dims") get(c.dims);
    else if (key == "visual-dims") get(c.visual_dims);
    else if (key == "feature-dim") get(c.feature_dim);
    else if (key == "epochs") get(c.epochs);
    else if (key == "bins") get(c.bins);
    else if (key == "lambda") get(c.lambda_theta);
    else if (key == "lambda-temporal") get(c.lambda_temporal);
    else if (key == "lr") get(c.learning_rate);
    else if (key == "iterations") get(c.iterations);
    else if (key == "patience") get(c.patience);
    else if (key == "refit-period") get(c.refit_period);
    else if (key == "neg-batch") get(c.neg_batch);
    else if (key == "val-negatives") get(c.val_negatives);
    else if (key == "kappa") get(c.kappa);
    else if (key == "seed") get(c.seed);
    else if (key == "threads") get(c.threads);
    else if (key == "personal-drift") {
        if (value == "true" || value == "1") c.variant.use_personal_drift = true;
        else if (value == "false" || value == "0") c.variant.use_personal_drift = false;
        else throw bad();
    } else {
        throw ValidationError("unknown config key '" + std::string(key) + "'");
    }
}

/// Reads `key = value` lines ('#' starts a comment) into an ordered map.
inline std::map<std::string, std::string> read_key_value_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view text = line;
        if (auto hash = text.find('#'); hash != std::string_view::npos) text = text.substr(0, hash);
        text = detail::trim(text);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string_view::npos) throw ParseError("expected key = value", line_no);
        out[std::string(detail::trim(text.substr(0, eq)))] = std::string(detail::trim(text.substr(eq + 1)));
    }
    return out;
}

}  // namespace tvbpr
