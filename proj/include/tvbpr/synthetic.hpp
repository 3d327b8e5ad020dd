#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "dataset.hpp"
#include "features.hpp"
#include <nlohmann/json.hpp>

namespace tvbpr {

/// Desk-scale dataset with planted visual dimensions, fashion epochs and
/// non-visual drift.
///
/// Utility of item i for user u at time t, with e = ep*(t):
///   ⟨θ*_u + μ*(e), v_i ⊙ w*(e)⟩ + c*(C_i, e) - penalty·[t < release_i]
/// where v_i = E* f_i (standardized per dimension). Each event picks an item
/// the user has not chosen before with probability ∝ exp(utility / T).
struct SynthConfig {
    std::size_t num_users = 2000;
    std::size_t num_items = 5000;
    std::size_t num_events = 60000;
    std::size_t feature_dim = 256;
    double density = 0.05;
    std::size_t visual_dims = 6;  // K'_true
    std::size_t num_categories = 50;
    Timestamp t_begin = 1104537600;  // 2005-01-01
    Timestamp t_end = 1420070400;    // 2015-01-01
    // ascending, strictly inside the timeline; default at 20% and 50%
    std::vector<Timestamp> epoch_boundaries{t_begin + (t_end - t_begin) / 5, t_begin + (t_end - t_begin) / 2};
    std::vector<std::vector<double>> weighting;    // w* per epoch; default below
    double weighting_base = 0.4;                   // default w*(e) = base + peak on dimension e mod K'
    double weighting_peak = 2.0;
    double user_factor_mean = 0.0;
    double user_factor_scale = 1.5;
    double trend_scale = 1.2;                      // std of the per-epoch shift μ*(e) of every user's taste, centered over epochs
    double temperature = 1.0;                      // +inf gives uniform choice
    double category_drift = 1.5;                   // std of c*(C, e), centered over epochs
    double release_penalty = 5.0;
    double late_release_fraction = 0.8;            // items released uniformly over the timeline
    std::uint64_t seed = 1;

    std::size_t num_epochs() const noexcept { return epoch_boundaries.size() + 1; }

    // Boundaries at the given fractions of the timeline.
    SynthConfig& with_epoch_fractions(const std::vector<double>& fractions) {
        epoch_boundaries.clear();
        for (double f : fractions)
            epoch_boundaries.push_back(t_begin + static_cast<Timestamp>(f * static_cast<double>(t_end - t_begin)));
        return *this;
    }

    void validate() const {
        if (num_users == 0 || num_items == 0 || feature_dim == 0) throw ValidationError("synthetic sizes must be positive");
        if (num_events < num_users * 5)
            throw ValidationError("infeasible: " + std::to_string(num_events) + " events cannot give " +
                                  std::to_string(num_users) + " users 5 actions each");
        if (num_events > num_users * num_items) throw ValidationError("infeasible: more events than (user, item) pairs");
        if (visual_dims > feature_dim) throw ValidationError("K'_true must not exceed F");
        if (!(density > 0 && density <= 1)) throw ValidationError("density must lie in (0, 1]");
        if (!(temperature > 0)) throw ValidationError("temperature must be > 0");
        if (t_end <= t_begin) throw ValidationError("empty timeline");
        for (std::size_t k = 0; k < epoch_boundaries.size(); ++k) {
            if (epoch_boundaries[k] <= t_begin || epoch_boundaries[k] >= t_end)
                throw ValidationError("epoch boundary outside the timeline");
            if (k > 0 && epoch_boundaries[k] <= epoch_boundaries[k - 1])
                throw ValidationError("epoch boundaries must ascend");
        }
        if (!weighting.empty()) {
            if (weighting.size() != num_epochs()) throw ValidationError("need one weighting vector per planted epoch");
            for (const auto& w : weighting)
                if (w.size() != visual_dims) throw ValidationError("weighting vectors must have K'_true entries");
        }
        if (num_categories == 0) throw ValidationError("need at least one category");
    }
};

/// Key/value view of a synthetic config; keys double as `synth` flags.
inline std::vector<std::pair<std::string, std::string>> to_key_values(const SynthConfig& c) {
    auto num = [](auto v) { return detail::format_number(v); };
    std::string fractions;
    for (auto b : c.epoch_boundaries) {
        if (!fractions.empty()) fractions += ',';
        fractions += num(static_cast<double>(b - c.t_begin) / static_cast<double>(c.t_end - c.t_begin));
    }
    return {
        {"users", num(c.num_users)},
        {"items", num(c.num_items)},
        {"events", num(c.num_events)},
        {"feature-dim", num(c.feature_dim)},
        {"density", num(c.density)},
        {"true-dims", num(c.visual_dims)},
        {"categories", num(c.num_categories)},
        {"t-begin", num(c.t_begin)},
        {"t-end", num(c.t_end)},
        {"epoch-fractions", fractions},
        {"weighting-base", num(c.weighting_base)},
        {"weighting-peak", num(c.weighting_peak)},
        {"user-mean", num(c.user_factor_mean)},
        {"user-scale", num(c.user_factor_scale)},
        {"trend", num(c.trend_scale)},
        {"temperature", num(c.temperature)},
        {"category-drift", num(c.category_drift)},
        {"release-penalty", num(c.release_penalty)},
        {"late-release", num(c.late_release_fraction)},
        {"seed", num(c.seed)},
    };
}

// Boundaries are given as timeline fractions, so t-begin/t-end must be set first.
inline void apply_key_value(SynthConfig& c, std::string_view key, std::string_view value) {
    auto get = [&](auto& out) {
        if (!detail::parse_number(value, out))
            throw ValidationError("bad value '" + std::string(value) + "' for '" + std::string(key) + "'");
    };
    if (key == "users") get(c.num_users);
    else if (key == "items") get(c.num_items);
    else if (key == "events") get(c.num_events);
    else if (key == "feature-dim") get(c.feature_dim);
    else if (key == "density") get(c.density);
    else if (key == "true-dims") get(c.visual_dims);
    else if (key == "categories") get(c.num_categories);
    else if (key == "t-begin") get(c.t_begin);
    else if (key == "t-end") get(c.t_end);
    else if (key == "weighting-base") get(c.weighting_base);
    else if (key == "weighting-peak") get(c.weighting_peak);
    else if (key == "user-mean") get(c.user_factor_mean);
    else if (key == "user-scale") get(c.user_factor_scale);
    else if (key == "trend") get(c.trend_scale);
    else if (key == "temperature") get(c.temperature);
    else if (key == "category-drift") get(c.category_drift);
    else if (key == "release-penalty") get(c.release_penalty);
    else if (key == "late-release") get(c.late_release_fraction);
    else if (key == "seed") get(c.seed);
    else if (key == "epoch-fractions") {
        std::vector<double> fractions;
        for (auto part : detail::split(value, ',')) {
            part = detail::trim(part);
            if (part.empty()) continue;
            double f;
            if (!detail::parse_number(part, f) || !(f > 0 && f < 1))
                throw ValidationError("epoch fractions must lie in (0, 1): '" + std::string(value) + "'");
            fractions.push_back(f);
        }
        c.with_epoch_fractions(fractions);
        c.weighting.clear();
    } else {
        throw ValidationError("unknown synth key '" + std::string(key) + "'");
    }
}

/// Planted parameters, indexed like the generated log (dense user/item ids).
struct GroundTruth {
    std::vector<Timestamp> epoch_boundaries;
    std::vector<std::vector<double>> weighting;  // per epoch, K'_true
    Matrix<double> embedding;                    // K'_true x F, after standardization scaling
    Matrix<double> item_style;                   // |I| x K'_true, standardized E* f_i
    Matrix<double> user_factors;                 // |U| x K'_true
    Matrix<double> trend;                        // epochs x K'_true
    Matrix<double> category_bias;                // categories x epochs
    std::vector<std::uint32_t> category_of;      // per item, 0-based cluster
    std::vector<Timestamp> release;              // per item
    double temperature = 1.0;
    double release_penalty = 0.0;

    std::size_t epoch_of(Timestamp t) const {
        return static_cast<std::size_t>(std::upper_bound(epoch_boundaries.begin(), epoch_boundaries.end(), t) -
                                        epoch_boundaries.begin());
    }

    double utility(UserId u, ItemId i, Timestamp t) const {
        const auto e = epoch_of(t);
        double x = category_bias(category_of[i], e);
        for (std::size_t k = 0; k < user_factors.cols(); ++k)
            x += (user_factors(u, k) + trend(e, k)) * item_style(i, k) * weighting[e][k];
        if (t < release[i]) x -= release_penalty;
        return x;
    }
};

struct SynthDataset {
    InteractionLog log;
    FeatureStore features;  // aligned with log.items
    Taxonomy taxonomy;      // aligned with log.items
    GroundTruth truth;      // aligned with log.users / log.items
    // Items never chosen do not enter the log; their vectors are kept for export.
    IdMap all_items;
    FeatureStore all_features;
};

namespace detail {

// Lloyd's k-means on the sparse rows, centroids seeded with distinct random items.
inline std::vector<std::uint32_t> cluster_items(const FeatureStore& f, std::size_t k, Rng& rng, int rounds = 10) {
    const std::size_t n = f.num_items(), F = f.dim();
    k = std::min(k, n);
    std::vector<std::size_t> seeds(n);
    std::iota(seeds.begin(), seeds.end(), 0);
    for (std::size_t a = 0; a < k; ++a) std::swap(seeds[a], seeds[a + rng.index(n - a)]);
    Matrix<double> centroid(k, F);
    for (std::size_t c = 0; c < k; ++c) {
        const auto d = f.dense(static_cast<ItemId>(seeds[c]));
        std::copy(d.begin(), d.end(), centroid.row(c).begin());
    }
    std::vector<std::uint32_t> label(n, 0);
    std::vector<double> norm2(k);
    for (int round = 0; round < rounds; ++round) {
        for (std::size_t c = 0; c < k; ++c) {
            double s = 0.0;
            for (double x : centroid.row(c)) s += x * x;
            norm2[c] = s;
        }
        // argmin ||f - c||^2 = argmin ||c||^2 - 2<f, c>
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double d = norm2[c] - 2.0 * f.dot_embed(std::span<const double>(centroid.row(c)), static_cast<ItemId>(i));
                if (d < best) {
                    best = d;
                    label[i] = static_cast<std::uint32_t>(c);
                }
            }
        }
        Matrix<double> sum(k, F);
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto v = f[static_cast<ItemId>(i)];
            for (std::size_t q = 0; q < v.nnz(); ++q) sum(label[i], v.index[q]) += v.value[q];
            ++count[label[i]];
        }
        for (std::size_t c = 0; c < k; ++c)
            if (count[c] > 0)
                for (std::size_t j = 0; j < F; ++j) centroid(c, j) = sum(c, j) / static_cast<double>(count[c]);
    }
    return label;
}

}  // namespace detail

inline SynthDataset generate(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t U = cfg.num_users, I = cfg.num_items, F = cfg.feature_dim, K = cfg.visual_dims;
    const std::size_t N = cfg.num_epochs();

    // Sparse non-negative features; every item gets at least one nonzero.
    FeatureStore features(F);
    {
        std::vector<std::uint32_t> idx;
        std::vector<float> val;
        for (std::size_t i = 0; i < I; ++i) {
            idx.clear();
            val.clear();
            for (std::uint32_t j = 0; j < F; ++j)
                if (rng.uniform() < cfg.density) idx.push_back(j);
            if (idx.empty()) idx.push_back(static_cast<std::uint32_t>(rng.index(F)));
            for (std::size_t q = 0; q < idx.size(); ++q) val.push_back(static_cast<float>(1.0 - rng.uniform()));
            features.append(idx, val);
        }
    }

    GroundTruth truth;
    truth.temperature = cfg.temperature;
    truth.release_penalty = cfg.release_penalty;
    truth.epoch_boundaries = cfg.epoch_boundaries;
    truth.weighting = cfg.weighting;
    if (truth.weighting.empty()) {
        truth.weighting.assign(N, std::vector<double>(K, cfg.weighting_base));
        for (std::size_t e = 0; e < N; ++e)
            if (K > 0) truth.weighting[e][e % K] += cfg.weighting_peak;
    }

    // E* with rows rescaled so every style dimension has unit spread over items.
    truth.embedding = Matrix<double>(K, F);
    for (auto& x : truth.embedding.data()) x = rng.normal();
    Matrix<double> style(I, K);
    for (std::size_t k = 0; k < K; ++k) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < I; ++i) {
            style(i, k) = features.dot_embed(std::span<const double>(truth.embedding.row(k)), static_cast<ItemId>(i));
            mean += style(i, k);
        }
        mean /= static_cast<double>(I);
        for (std::size_t i = 0; i < I; ++i) sq += (style(i, k) - mean) * (style(i, k) - mean);
        const double sd = std::sqrt(sq / static_cast<double>(I));
        const double scale = sd > 0 ? 1.0 / sd : 1.0;
        for (auto& x : truth.embedding.row(k)) x *= scale;
        for (std::size_t i = 0; i < I; ++i) style(i, k) = (style(i, k) - mean) * scale;
    }

    Matrix<double> users(U, K);
    for (auto& x : users.data()) x = cfg.user_factor_mean + cfg.user_factor_scale * rng.normal();

    truth.trend = Matrix<double>(N, K);
    for (auto& x : truth.trend.data()) x = cfg.trend_scale * rng.normal();
    for (std::size_t k = 0; k < K; ++k) {
        double mean = 0.0;
        for (std::size_t e = 0; e < N; ++e) mean += truth.trend(e, k);
        for (std::size_t e = 0; e < N; ++e) truth.trend(e, k) -= mean / static_cast<double>(N);
    }

    const auto category = detail::cluster_items(features, cfg.num_categories, rng);
    const std::size_t C = std::min(cfg.num_categories, I);
    Matrix<double> cat_bias(C, N);
    for (auto& x : cat_bias.data()) x = cfg.category_drift * rng.normal();
    for (std::size_t c = 0; c < C; ++c) {
        // drift only: no category is more popular on average
        double mean = 0.0;
        for (double x : cat_bias.row(c)) mean += x;
        for (auto& x : cat_bias.row(c)) x -= mean / static_cast<double>(N);
    }

    std::vector<Timestamp> release(I, cfg.t_begin);
    for (auto& r : release)
        if (rng.uniform() < cfg.late_release_fraction)
            r = cfg.t_begin + static_cast<Timestamp>(rng.index(static_cast<std::uint64_t>(cfg.t_end - cfg.t_begin)));

    // Events per user: 5 each, the remainder spread uniformly over users.
    std::vector<std::size_t> per_user(U, 5);
    for (std::size_t k = 0; k < cfg.num_events - 5 * U; ++k) {
        std::size_t u;
        do {
            u = rng.index(U);
        } while (per_user[u] >= I);
        ++per_user[u];
    }

    const bool uniform_choice = std::isinf(cfg.temperature);
    const double inv_t = uniform_choice ? 0.0 : 1.0 / cfg.temperature;
    const double late_factor = std::exp(-cfg.release_penalty * inv_t);

    struct Event {
        std::uint32_t user;
        std::uint32_t item;
        Timestamp t;
    };
    std::vector<Event> events;
    events.reserve(cfg.num_events);
    Matrix<double> weight(N, I);
    std::vector<std::uint8_t> chosen(I, 0);
    std::vector<Timestamp> times;
    for (std::size_t u = 0; u < U; ++u) {
        for (std::size_t e = 0; e < N; ++e) {
            auto w = weight.row(e);
            double top = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < I; ++i) {
                double x = cat_bias(category[i], e);
                for (std::size_t k = 0; k < K; ++k) x += (users(u, k) + truth.trend(e, k)) * style(i, k) * truth.weighting[e][k];
                w[i] = x * inv_t;
                top = std::max(top, w[i]);
            }
            for (auto& x : w) x = std::exp(x - top);
        }
        times.resize(per_user[u]);
        for (auto& t : times) t = cfg.t_begin + static_cast<Timestamp>(rng.index(static_cast<std::uint64_t>(cfg.t_end - cfg.t_begin) + 1));
        std::sort(times.begin(), times.end());
        for (const auto t : times) {
            const auto e = static_cast<std::size_t>(
                std::upper_bound(cfg.epoch_boundaries.begin(), cfg.epoch_boundaries.end(), t) - cfg.epoch_boundaries.begin());
            const auto w = weight.row(e);
            double total = 0.0;
            for (std::size_t i = 0; i < I; ++i)
                if (!chosen[i]) total += t < release[i] ? w[i] * late_factor : w[i];
            double r = rng.uniform() * total;
            std::size_t pick = I;
            for (std::size_t i = 0; i < I; ++i) {
                if (chosen[i]) continue;
                pick = i;
                r -= t < release[i] ? w[i] * late_factor : w[i];
                if (r < 0) break;
            }
            chosen[pick] = 1;
            events.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(pick), t});
        }
        for (const auto& ev : events)
            if (ev.user == u) chosen[ev.item] = 0;
    }

    SynthDataset out;
    for (std::size_t i = 0; i < I; ++i) out.all_items.intern("i" + std::to_string(i));
    out.all_features = features;
    std::vector<ItemId> generator_item;  // dense log index -> generator index
    for (const auto& ev : events) {
        const auto u = out.log.users.intern("u" + std::to_string(ev.user));
        const auto before = out.log.items.size();
        const auto i = out.log.items.intern("i" + std::to_string(ev.item));
        if (out.log.items.size() != before) generator_item.push_back(ev.item);
        out.log.interactions.push_back({u, i, ev.t});
    }
    out.log.t_min = out.log.t_max = events.front().t;
    for (const auto& ev : events) {
        out.log.t_min = std::min(out.log.t_min, ev.t);
        out.log.t_max = std::max(out.log.t_max, ev.t);
    }

    const std::size_t L = generator_item.size();
    out.features = FeatureStore(F);
    out.taxonomy.category_of.resize(L);
    out.taxonomy.category_names.clear();
    out.taxonomy.category_names.push_back("<unknown>");
    for (std::size_t c = 0; c < C; ++c) out.taxonomy.category_names.push_back("c" + std::to_string(c));
    truth.item_style = Matrix<double>(L, K);
    truth.category_of.resize(L);
    truth.release.resize(L);
    for (std::size_t i = 0; i < L; ++i) {
        const auto g = generator_item[i];
        const auto v = features[g];
        out.features.append(v.index, v.value);
        out.taxonomy.category_of[i] = category[g] + 1;
        truth.category_of[i] = category[g];
        truth.release[i] = release[g];
        for (std::size_t k = 0; k < K; ++k) truth.item_style(i, k) = style(g, k);
    }
    truth.user_factors = std::move(users);
    truth.category_bias = std::move(cat_bias);
    out.truth = std::move(truth);
    return out;
}

inline nlohmann::json truth_to_json(const SynthDataset& d) {
    const auto& t = d.truth;
    nlohmann::json j;
    j["format"] = "tvbpr-synth-truth";
    j["version"] = 1;
    j["temperature"] = std::isinf(t.temperature) ? nlohmann::json("inf") : nlohmann::json(t.temperature);
    j["release_penalty"] = t.release_penalty;
    j["epoch_boundaries"] = t.epoch_boundaries;
    j["weighting"] = t.weighting;
    auto rows = [](const Matrix<double>& m) {
        std::vector<std::vector<double>> out(m.rows());
        for (std::size_t r = 0; r < m.rows(); ++r) out[r].assign(m.row(r).begin(), m.row(r).end());
        return out;
    };
    j["embedding"] = rows(t.embedding);
    j["category_bias"] = rows(t.category_bias);
    j["trend"] = rows(t.trend);
    auto& users = j["users"];
    for (std::size_t u = 0; u < d.log.num_users(); ++u) {
        const auto r = t.user_factors.row(u);
        users[d.log.users.name(static_cast<UserId>(u))] = std::vector<double>(r.begin(), r.end());
    }
    auto& items = j["items"];
    for (std::size_t i = 0; i < d.log.num_items(); ++i) {
        const auto r = t.item_style.row(i);
        items[d.log.items.name(static_cast<ItemId>(i))] = {{"release", t.release[i]},
                                                           {"category", t.category_of[i]},
                                                           {"style", std::vector<double>(r.begin(), r.end())}};
    }
    return j;
}

/// Writes interactions.tsv, features.txt, taxonomy.tsv and truth.json into `dir`.
inline void write_dataset(const SynthDataset& d, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream out(dir / name);
        if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
        return out;
    };
    {
        auto out = open("interactions.tsv");
        out << "# user_id\titem_id\ttimestamp\n";
        write_interactions(d.log, out);
    }
    {
        auto out = open("features.txt");
        write_features(d.all_features, d.all_items, out);
    }
    {
        auto out = open("taxonomy.tsv");
        for (std::size_t i = 0; i < d.log.num_items(); ++i)
            out << d.log.items.name(static_cast<ItemId>(i)) << '\t'
                << d.taxonomy.category_names[d.taxonomy.category_of[i]] << '\n';
    }
    {
        auto out = open("truth.json");
        out << truth_to_json(d).dump(1) << '\n';
    }
}

}  // namespace tvbpr
