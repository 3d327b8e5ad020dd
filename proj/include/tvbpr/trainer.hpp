#pragma once

#include <limits>
#include <ostream>
#include <vector>

#include "common.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "evaluation.hpp"
#include "features.hpp"
#include "model.hpp"
#include "segmentation.hpp"

namespace tvbpr {

/// (u, i, j, t_ui) with i ∈ P_u and j ∉ P_u.
struct TrainingQuadruple {
    UserId u;
    ItemId i;
    ItemId j;
    Timestamp t;

    bool operator==(const TrainingQuadruple&) const = default;
};

/// User uniform over U, positive uniform over P_u, negative uniform over
/// I \ P_u by rejection.
inline TrainingQuadruple sample_quadruple(const Split& split, Rng& rng) {
    const auto u = static_cast<UserId>(rng.index(split.num_users));
    const auto& positives = split.train[u];
    if (positives.empty() || positives.size() >= split.num_items)
        throw ValidationError("user " + std::to_string(u) + " has no valid (positive, negative) pair");
    const auto [i, t] = positives[rng.index(positives.size())];
    ItemId j;
    do {
        j = static_cast<ItemId>(rng.index(split.num_items));
    } while (split.in_train(u, j));
    return {u, i, j, t};
}

/// One stochastic gradient ascent step on log σ(x̂_uij(ep)) with L2 decay.
/// Only parameters that appear in x̂_uij are touched, and among the temporal
/// families only those of epoch `ep`. α and β_u cancel in the difference and
/// are left alone. Returns x̂_uij before the update.
template <class Real>
double sgd_step(BasicModel<Real>& model, const TrainingQuadruple& q, std::size_t ep) {
    const auto& cfg = model.config;
    const auto& v = cfg.variant;
    const double eps = cfg.learning_rate, lam = cfg.lambda_theta, lam_t = cfg.lambda_temporal;
    auto& g = model.global;
    auto& bias = model.epochs[model.bias_epoch(ep)];
    auto& temporal = model.epochs[ep];

    double x = static_cast<double>(bias.item_bias[q.i]) - static_cast<double>(bias.item_bias[q.j]);
    std::uint32_t ci = 0, cj = 0;
    if (v.use_taxonomy) {
        ci = model.taxonomy()->category_of[q.i];
        cj = model.taxonomy()->category_of[q.j];
        if (ci != cj) x += static_cast<double>(bias.category_bias[ci]) - static_cast<double>(bias.category_bias[cj]);
    }
    auto gu = g.gamma_user.row(q.u);
    auto gi = g.gamma_item.row(q.i);
    auto gj = g.gamma_item.row(q.j);
    for (std::size_t k = 0; k < gu.size(); ++k) x += static_cast<double>(gu[k]) * (static_cast<double>(gi[k]) - gj[k]);

    const std::size_t Kv = model.visual_dims();
    std::vector<double> emb_i, emb_j, diff, tu;
    SparseView fi{}, fj{};
    const bool temporal_visual = v.use_visual && v.use_temporal_visual;
    double drift = 0.0;
    if (v.use_visual) {
        fi = (*model.features())[q.i];
        fj = (*model.features())[q.j];
        emb_i = model.embed(q.i);
        emb_j = model.embed(q.j);
        diff.resize(Kv);
        for (std::size_t k = 0; k < Kv; ++k) {
            if (temporal_visual) {
                const auto dE = temporal.delta_embedding.row(k);
                const double w = temporal.weighting[k];
                diff[k] = (emb_i[k] - emb_j[k]) * w + model.features()->dot_embed(dE, q.i) -
                          model.features()->dot_embed(dE, q.j);
            } else {
                diff[k] = emb_i[k] - emb_j[k];
            }
        }
        tu = model.user_visual_factors(q.u, q.t);
        if (v.use_personal_drift) drift = model.drift_scale(q.u, q.t);
        for (std::size_t k = 0; k < Kv; ++k) x += tu[k] * diff[k];
        if (temporal_visual) {
            for_each_union(fi, fj, [&](std::uint32_t idx, float a, float b) {
                x += (static_cast<double>(g.visual_bias[idx]) * temporal.bias_weighting[idx] +
                      temporal.delta_visual_bias[idx]) *
                     (static_cast<double>(a) - b);
            });
        }
    }

    const double d = sigmoid(-x);
    auto step = [eps](Real& p, double grad, double reg) {
        p = static_cast<Real>(p + eps * (grad - reg * p));
    };

    step(bias.item_bias[q.i], d, lam);
    step(bias.item_bias[q.j], -d, lam);
    if (v.use_taxonomy && ci != cj) {
        step(bias.category_bias[ci], d, lam);
        step(bias.category_bias[cj], -d, lam);
    }
    for (std::size_t k = 0; k < gu.size(); ++k) {
        const double u_k = gu[k], i_k = gi[k], j_k = gj[k];
        step(gu[k], d * (i_k - j_k), lam);
        step(gi[k], d * u_k, lam);
        step(gj[k], -d * u_k, lam);
    }

    if (v.use_visual) {
        auto theta = g.theta_user.row(q.u);
        for (std::size_t k = 0; k < Kv; ++k) step(theta[k], d * diff[k], lam);
        if (v.use_personal_drift) {
            auto eta = model.drift.eta.row(q.u);
            for (std::size_t k = 0; k < Kv; ++k) step(eta[k], d * drift * diff[k], lam);
        }
        for (std::size_t k = 0; k < Kv; ++k) {
            auto E = g.embedding.row(k);
            if (temporal_visual) {
                const double w = temporal.weighting[k];
                const double ce = d * tu[k] * w, cd = d * tu[k];
                auto dE = temporal.delta_embedding.row(k);
                for_each_union(fi, fj, [&](std::uint32_t idx, float a, float b) {
                    const double df = static_cast<double>(a) - b;
                    step(E[idx], ce * df, 0.0);
                    step(dE[idx], cd * df, lam_t);
                });
                step(temporal.weighting[k], d * tu[k] * (emb_i[k] - emb_j[k]), lam_t);
            } else {
                const double ce = d * tu[k];
                for_each_union(fi, fj, [&](std::uint32_t idx, float a, float b) {
                    step(E[idx], ce * (static_cast<double>(a) - b), 0.0);
                });
            }
        }
        if (temporal_visual) {
            for_each_union(fi, fj, [&](std::uint32_t idx, float a, float b) {
                const double df = d * (static_cast<double>(a) - b);
                const double beta = g.visual_bias[idx], bw = temporal.bias_weighting[idx];
                step(g.visual_bias[idx], df * bw, 0.0);
                step(temporal.bias_weighting[idx], df * beta, lam_t);
                step(temporal.delta_visual_bias[idx], df, lam_t);
            });
        }
    }
    return x;
}

template <class Real>
double sgd_step(BasicModel<Real>& model, const TrainingQuadruple& q, const EpochSegmentation& seg) {
    return sgd_step(model, q, seg.epoch_of(q.t));
}

struct IterationStats {
    std::size_t steps = 0;
    double mean_log_likelihood = 0.0;  // mean log σ(x̂_uij) over the sampled quadruples, pre-update
};

/// |P| = Σ_u |P_u| sampled SGD steps.
template <class Real>
IterationStats run_iteration(BasicModel<Real>& model, const Split& split, const EpochSegmentation& seg, Rng& rng) {
    IterationStats s;
    const std::size_t n = split.num_train_positives();
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const auto q = sample_quadruple(split, rng);
        acc += log_sigmoid(sgd_step(model, q, seg));
    }
    s.steps = n;
    s.mean_log_likelihood = n ? acc / static_cast<double>(n) : 0.0;
    return s;
}

/// Exact expectation of log σ(x̂_uij) under the sampling distribution (users
/// uniform, positives uniform within P_u, negatives uniform over I \ P_u).
/// Enumerates every triple; intended for small datasets.
template <class Real>
double training_objective(const BasicModel<Real>& model, const Split& split, const EpochSegmentation& seg) {
    const ScoringCache<Real> cache(model);
    double total = 0.0;
    for (std::size_t u = 0; u < split.num_users; ++u) {
        const auto user = static_cast<UserId>(u);
        const auto& P = split.train[u];
        double user_acc = 0.0;
        for (const auto& [i, t] : P) {
            const auto ep = seg.epoch_of(t);
            const double xi = cache.score(user, i, ep, t);
            double acc = 0.0;
            std::size_t n = 0;
            for (ItemId j = 0; j < split.num_items; ++j) {
                if (split.in_train(user, j)) continue;
                acc += log_sigmoid(xi - cache.score(user, j, ep, t));
                ++n;
            }
            user_acc += acc / static_cast<double>(n);
        }
        total += user_acc / static_cast<double>(P.size());
    }
    return total / static_cast<double>(split.num_users);
}

struct TrainerState {
    std::size_t iteration = 0;
    double best_val_auc = -std::numeric_limits<double>::infinity();
    std::size_t best_iteration = 0;
    std::size_t since_improvement = 0;
};

struct HistoryEntry {
    std::size_t iteration;
    double objective;
    double val_auc;  // NaN between validation checks
};

template <class Real>
struct TrainResult {
    BasicModel<Real> model;
    EpochSegmentation segmentation;
    std::vector<HistoryEntry> history;
    TrainerState state;
    double val_auc_exact = std::numeric_limits<double>::quiet_NaN();
    bool stopped_early = false;
};

inline void write_history_line(std::ostream& out, const HistoryEntry& h) {
    out << h.iteration << '\t' << detail::format_number(h.objective) << '\t' << detail::format_number(h.val_auc) << '\n';
}

/// Alternates SGD over Θ with dynamic-programming refits of the epoch
/// segmentation. Every `refit_period` iterations the segmentation is refit
/// and validation AUC (sampled negatives) is checked; training stops after
/// `iterations` or once `patience` consecutive checks fail to improve, and
/// the best-validation model is returned.
template <class Real = float>
TrainResult<Real> coordinate_ascent(const Split& split, std::shared_ptr<const FeatureStore> features,
                                    std::shared_ptr<const Taxonomy> taxonomy, TrainConfig config,
                                    std::ostream* log = nullptr) {
    if (config.variant.is_pop()) throw ValidationError("pop has no trainable parameters");
    if (features) config.feature_dim = features->dim();
    config.validate();
    const std::size_t N = config.model_epochs();
    const auto bins = make_bins(split.t_min, split.t_max, config.bins);
    if (bins.count() < N)
        throw ValidationError("timeline yields " + std::to_string(bins.count()) + " bin(s) for " + std::to_string(N) + " epochs");

    ModelShape shape{split.num_users, split.num_items, taxonomy ? taxonomy->num_categories() : 1};
    BasicModel<Real> model(config, shape, features, taxonomy, config.seed);
    model.set_mean_times(split);
    auto seg = uniform_segmentation(bins, N);
    TrainResult<Real> result{model, seg, {}, {}};

    Rng sgd_rng(mix_seed(config.seed, 1));
    Rng seg_rng(mix_seed(config.seed, 2));
    auto& st = result.state;

    for (std::size_t it = 1; it <= config.iterations; ++it) {
        st.iteration = it;
        const auto stats = run_iteration(model, split, seg, sgd_rng);
        HistoryEntry h{it, stats.mean_log_likelihood, std::numeric_limits<double>::quiet_NaN()};
        const bool check = it % config.refit_period == 0 || it == config.iterations;
        if (check) {
            if (N > 1) {
                const auto L = build_likelihood_matrix(model, split, bins, config.neg_batch, seg_rng, config.threads);
                seg = dp_segment(L);
            }
            const ScoringCache<Real> cache(model, config.threads);
            Rng val_rng(mix_seed(config.seed, 3));  // same negatives at every check
            h.val_auc = auc_sampled(split, split.validation, model_scorer(cache, seg), config.val_negatives, val_rng,
                                    AucMode::all, config.threads)
                            .auc;
        }
        result.history.push_back(h);
        if (log) write_history_line(*log, h);
        if (check) {
            if (h.val_auc > st.best_val_auc) {
                st.best_val_auc = h.val_auc;
                st.best_iteration = it;
                st.since_improvement = 0;
                result.model = model;
                result.segmentation = seg;
            } else if (++st.since_improvement >= config.patience) {
                st.since_improvement = config.patience;
                result.stopped_early = true;
                break;
            }
        }
    }

    const ScoringCache<Real> cache(result.model, config.threads);
    result.val_auc_exact =
        auc_exact(split, split.validation, model_scorer(cache, result.segmentation), AucMode::all, config.threads).auc;
    return result;
}

}  // namespace tvbpr
