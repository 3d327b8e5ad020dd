#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "common.hpp"
#include "dataset.hpp"
#include "model.hpp"
#include "segmentation.hpp"

namespace tvbpr {

enum class AucMode { all, cold };

inline std::string to_string(AucMode m) { return m == AucMode::all ? "all" : "cold"; }

struct AucReport {
    AucMode mode = AucMode::all;
    double auc = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> per_user;        // NaN for users outside the population
    std::vector<std::uint64_t> correct;  // pairs ranked correctly, per user
    std::vector<std::uint64_t> pairs;    // pairs evaluated, per user
    std::size_t users_evaluated = 0;
    std::size_t users_excluded = 0;      // in the population but with no eligible negatives
    std::size_t num_cold_items = 0;
};

namespace detail {

inline std::vector<bool> cold_mask(const Split& split, std::size_t threshold) {
    std::vector<bool> mask(split.num_items, false);
    for (auto i : cold_items(split, threshold)) mask[i] = true;
    return mask;
}

inline AucReport finish_report(AucReport r, std::size_t num_cold) {
    double sum = 0.0;
    r.users_evaluated = 0;
    for (double a : r.per_user)
        if (!std::isnan(a)) {
            sum += a;
            ++r.users_evaluated;
        }
    r.auc = r.users_evaluated ? sum / static_cast<double>(r.users_evaluated) : std::numeric_limits<double>::quiet_NaN();
    r.num_cold_items = num_cold;
    return r;
}

}  // namespace detail

/// Exact time-dependent AUC over held-out items. For each user with held-out
/// (i, t) counts j ∉ P_u ∪ V_u ∪ T_u with score(u, i, t) > score(u, j, t);
/// ties count as failures. Per-user fractions are averaged over users. In cold
/// mode only users whose held-out item has fewer than `cold_threshold`
/// training positives take part.
template <class Scorer>
AucReport auc_exact(const Split& split, const std::vector<ItemTime>& heldout, Scorer&& score, AucMode mode,
                    unsigned threads = 1, std::size_t cold_threshold = 5) {
    const auto cold = detail::cold_mask(split, cold_threshold);
    AucReport r;
    r.mode = mode;
    r.per_user.assign(split.num_users, std::numeric_limits<double>::quiet_NaN());
    r.correct.assign(split.num_users, 0);
    r.pairs.assign(split.num_users, 0);
    std::vector<std::uint8_t> excluded(split.num_users, 0);
    parallel_for(split.num_users, threads, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t u = begin; u < end; ++u) {
            const auto user = static_cast<UserId>(u);
            const auto [i, t] = heldout[u];
            if (mode == AucMode::cold && !cold[i]) continue;
            const double xi = score(user, i, t);
            const auto& seen = split.observed_items[u];
            std::size_t next = 0;
            std::uint64_t correct = 0, pairs = 0;
            for (ItemId j = 0; j < split.num_items; ++j) {
                if (next < seen.size() && seen[next] == j) {
                    ++next;
                    continue;
                }
                ++pairs;
                if (xi > score(user, j, t)) ++correct;
            }
            r.correct[u] = correct;
            r.pairs[u] = pairs;
            if (pairs == 0) excluded[u] = 1;
            else r.per_user[u] = static_cast<double>(correct) / static_cast<double>(pairs);
        }
    });
    for (auto x : excluded) r.users_excluded += x;
    return detail::finish_report(std::move(r), static_cast<std::size_t>(std::count(cold.begin(), cold.end(), true)));
}

/// Same estimator against `negatives_per_user` uniformly drawn eligible
/// negatives (with replacement); falls back to the full eligible set when
/// that is no larger.
template <class Scorer>
AucReport auc_sampled(const Split& split, const std::vector<ItemTime>& heldout, Scorer&& score,
                      std::size_t negatives_per_user, Rng& rng, AucMode mode = AucMode::all, unsigned threads = 1,
                      std::size_t cold_threshold = 5) {
    if (negatives_per_user < 1) throw ValidationError("negatives_per_user must be >= 1");
    const auto cold = detail::cold_mask(split, cold_threshold);
    const std::uint64_t base = rng.next();
    AucReport r;
    r.mode = mode;
    r.per_user.assign(split.num_users, std::numeric_limits<double>::quiet_NaN());
    r.correct.assign(split.num_users, 0);
    r.pairs.assign(split.num_users, 0);
    std::vector<std::uint8_t> excluded(split.num_users, 0);
    parallel_for(split.num_users, threads, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t u = begin; u < end; ++u) {
            const auto user = static_cast<UserId>(u);
            const auto [i, t] = heldout[u];
            if (mode == AucMode::cold && !cold[i]) continue;
            const std::size_t eligible = split.num_items - split.observed_items[u].size();
            if (eligible == 0) {
                excluded[u] = 1;
                continue;
            }
            const double xi = score(user, i, t);
            std::uint64_t correct = 0, pairs = 0;
            if (negatives_per_user >= eligible) {
                for (ItemId j = 0; j < split.num_items; ++j) {
                    if (split.observed(user, j)) continue;
                    ++pairs;
                    if (xi > score(user, j, t)) ++correct;
                }
            } else {
                Rng local(mix_seed(base, u));
                while (pairs < negatives_per_user) {
                    const auto j = static_cast<ItemId>(local.index(split.num_items));
                    if (split.observed(user, j)) continue;
                    ++pairs;
                    if (xi > score(user, j, t)) ++correct;
                }
            }
            r.correct[u] = correct;
            r.pairs[u] = pairs;
            r.per_user[u] = static_cast<double>(correct) / static_cast<double>(pairs);
        }
    });
    for (auto x : excluded) r.users_excluded += x;
    return detail::finish_report(std::move(r), static_cast<std::size_t>(std::count(cold.begin(), cold.end(), true)));
}

/// Scorer over a model and segmentation: x̂_{u,i}(ep(t)).
template <class Real>
auto model_scorer(const ScoringCache<Real>& cache, const EpochSegmentation& seg) {
    return [&cache, &seg](UserId u, ItemId i, Timestamp t) { return cache.score(u, i, seg.epoch_of(t), t); };
}

template <class Real>
AucReport auc(const BasicModel<Real>& model, const EpochSegmentation& seg, const Split& split, AucMode mode,
              unsigned threads = 1) {
    const ScoringCache<Real> cache(model, threads);
    return auc_exact(split, split.test, model_scorer(cache, seg), mode, threads);
}

/// Training-set positive count per item.
inline std::vector<double> pop_scores(const Split& split) {
    const auto counts = train_counts(split);
    return {counts.begin(), counts.end()};
}

/// Popularity with a fixed pseudo-random tie-break in [0, 0.5), so equally
/// popular items are ordered arbitrarily but never tie.
inline std::vector<double> pop_ranking_scores(const Split& split, std::uint64_t seed = 0) {
    auto s = pop_scores(split);
    Rng rng(mix_seed(seed, 0x9097));
    for (auto& x : s) x += 0.5 * rng.uniform();
    return s;
}

struct EvalReport {
    std::string variant;
    std::size_t epochs = 1;
    AucReport all;
    AucReport cold;
    std::size_t test_items_cold = 0;  // users whose test item is cold

    void write(std::ostream& out) const {
        out << "variant\t" << variant << '\n'
            << "epochs\t" << epochs << '\n'
            << "auc_all\t" << detail::format_number(all.auc) << '\n'
            << "users_all\t" << all.users_evaluated << '\n'
            << "excluded_all\t" << all.users_excluded << '\n'
            << "auc_cold\t" << detail::format_number(cold.auc) << '\n'
            << "users_cold\t" << cold.users_evaluated << '\n'
            << "excluded_cold\t" << cold.users_excluded << '\n'
            << "num_cold_items\t" << all.num_cold_items << '\n'
            << "cold_test_fraction\t"
            << detail::format_number(all.per_user.empty()
                                         ? 0.0
                                         : static_cast<double>(test_items_cold) / static_cast<double>(all.per_user.size()))
            << '\n';
    }

    void write_per_user_csv(std::ostream& out, const IdMap& users) const {
        out << "user_id,auc_all,auc_cold\n";
        for (std::size_t u = 0; u < all.per_user.size(); ++u) {
            out << users.name(static_cast<UserId>(u)) << ',' << detail::format_number(all.per_user[u]) << ',';
            if (!std::isnan(cold.per_user[u])) out << detail::format_number(cold.per_user[u]);
            out << '\n';
        }
    }
};

template <class Scorer>
EvalReport evaluate_with(const Split& split, Scorer&& score, std::string variant, std::size_t epochs, unsigned threads = 1) {
    EvalReport r;
    r.variant = std::move(variant);
    r.epochs = epochs;
    r.all = auc_exact(split, split.test, score, AucMode::all, threads);
    r.cold = auc_exact(split, split.test, score, AucMode::cold, threads);
    const auto cold = detail::cold_mask(split, 5);
    for (const auto& t : split.test) r.test_items_cold += cold[t.item];
    return r;
}

template <class Real>
EvalReport evaluate(const BasicModel<Real>& model, const EpochSegmentation& seg, const Split& split, unsigned threads = 1) {
    const ScoringCache<Real> cache(model, threads);
    return evaluate_with(split, model_scorer(cache, seg), to_string(model.variant().kind), seg.num_epochs, threads);
}

inline EvalReport evaluate_pop(const Split& split, std::uint64_t seed = 0) {
    const auto s = pop_ranking_scores(split, seed);
    return evaluate_with(split, [&s](UserId, ItemId i, Timestamp) { return s[i]; }, "pop", 1);
}

// ---- visual analysis -------------------------------------------------------

template <class Real>
std::vector<double> mean_user_visual_factor(const BasicModel<Real>& model) {
    std::vector<double> mean(model.visual_dims(), 0.0);
    const auto& th = model.global.theta_user;
    for (std::size_t u = 0; u < th.rows(); ++u)
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += th(u, k);
    for (auto& x : mean) x /= static_cast<double>(std::max<std::size_t>(1, th.rows()));
    return mean;
}

template <class Real>
void require_visual(const BasicModel<Real>& model) {
    if (!model.variant().use_visual)
        throw UnsupportedOperation("variant " + to_string(model.variant().kind) + " has no visual component");
}

/// Population-average visual component of the predictor:
/// mean_u ⟨θ_u, θ_i(ep)⟩ + ⟨β(ep), f_i⟩, using ⟨θ̄, θ_i(ep)⟩ for the average.
template <class Real>
double visual_score(const BasicModel<Real>& model, std::span<const double> mean_theta, ItemId i, std::size_t ep) {
    require_visual(model);
    const auto ti = model.item_visual_factors(i, ep);
    return dot(mean_theta, std::span<const double>(ti)) + model.visual_bias(i, ep);
}

template <class Real>
double visual_score(const BasicModel<Real>& model, ItemId i, std::size_t ep) {
    const auto mean = mean_user_visual_factor(model);
    return visual_score(model, std::span<const double>(mean), i, ep);
}

/// Visual scores of `items` in epoch `ep`, centered on their mean.
template <class Real>
std::vector<double> normalized_visual_scores(const BasicModel<Real>& model, std::span<const ItemId> items, std::size_t ep) {
    require_visual(model);
    if (items.empty()) throw ValidationError("normalized visual scores need a non-empty item set");
    const auto mean_theta = mean_user_visual_factor(model);
    std::vector<double> out;
    out.reserve(items.size());
    for (auto i : items) out.push_back(visual_score(model, std::span<const double>(mean_theta), i, ep));
    double mean = 0.0;
    for (double x : out) mean += x;
    mean /= static_cast<double>(out.size());
    for (auto& x : out) x -= mean;
    return out;
}

struct RankedItem {
    ItemId item;
    double score;
};

/// The n items with the largest E_k f_i, descending; ties go to the lower
/// item index. `category`, when given, restricts the candidates.
template <class Real>
std::vector<RankedItem> top_items_per_dimension(const BasicModel<Real>& model, std::size_t k, std::size_t n,
                                                std::optional<std::uint32_t> category = std::nullopt) {
    require_visual(model);
    if (k >= model.visual_dims())
        throw std::out_of_range("dimension " + std::to_string(k) + " >= K' = " + std::to_string(model.visual_dims()));
    if (category && !model.taxonomy()) throw ValidationError("category filter needs a taxonomy");
    std::vector<RankedItem> all;
    for (std::size_t i = 0; i < model.shape.num_items; ++i) {
        const auto item = static_cast<ItemId>(i);
        if (category && model.taxonomy()->category_of[i] != *category) continue;
        all.push_back({item, model.features()->dot_embed(model.global.embedding.row(k), item)});
    }
    const auto better = [](const RankedItem& a, const RankedItem& b) {
        return a.score > b.score || (a.score == b.score && a.item < b.item);
    };
    const auto m = std::min(n, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(m), all.end(), better);
    all.resize(m);
    return all;
}

}  // namespace tvbpr
