#pragma once

#include <iostream>
#include <ostream>
#include <vector>

#include "common.hpp"
#include "dataset.hpp"
#include "model.hpp"

namespace tvbpr {

/// Equal-duration partition of [t_min, t_max] into left-closed bins; the last
/// bin also holds t_max.
class TimeBins {
public:
    TimeBins() = default;
    TimeBins(Timestamp t_min, Timestamp t_max, std::size_t count) : t_min_(t_min), t_max_(t_max), count_(count) {}

    Timestamp t_min() const noexcept { return t_min_; }
    Timestamp t_max() const noexcept { return t_max_; }
    std::size_t count() const noexcept { return count_; }

    double edge(std::size_t k) const {
        return static_cast<double>(t_min_) +
               static_cast<double>(k) * static_cast<double>(t_max_ - t_min_) / static_cast<double>(count_);
    }

    std::vector<double> edges() const {
        std::vector<double> out(count_ + 1);
        for (std::size_t k = 0; k <= count_; ++k) out[k] = edge(k);
        return out;
    }

    // Exact integer arithmetic: t lies in bin k iff k*span/B <= t - t_min < (k+1)*span/B.
    std::size_t bin_of(Timestamp t) const {
        if (t <= t_min_ || t_max_ == t_min_) return 0;
        if (t >= t_max_) return count_ - 1;
        const auto offset = static_cast<__int128>(t - t_min_) * static_cast<__int128>(count_);
        return static_cast<std::size_t>(offset / (t_max_ - t_min_));
    }

    bool operator==(const TimeBins&) const = default;

private:
    Timestamp t_min_ = 0;
    Timestamp t_max_ = 0;
    std::size_t count_ = 1;
};

inline TimeBins make_bins(Timestamp t_min, Timestamp t_max, std::size_t count) {
    if (count < 1) throw ValidationError("bin count must be >= 1");
    if (t_max < t_min) throw ValidationError("timeline end precedes its start");
    if (t_max == t_min) {
        std::cerr << "warning: degenerate timeline (t_min == t_max); using a single bin\n";
        return TimeBins(t_min, t_max, 1);
    }
    return TimeBins(t_min, t_max, count);
}

/// Contiguous assignment of bins to epochs; epoch_of_bin is non-decreasing,
/// starts at 0, ends at N-1 and steps by at most one.
struct EpochSegmentation {
    TimeBins bins;
    std::vector<std::uint32_t> epoch_of_bin;
    std::size_t num_epochs = 1;

    std::size_t epoch_of(Timestamp t) const { return epoch_of_bin[bins.bin_of(t)]; }

    // [first_bin, last_bin] owned by epoch e.
    std::pair<std::size_t, std::size_t> bin_range(std::size_t e) const {
        const auto first = std::find(epoch_of_bin.begin(), epoch_of_bin.end(), e);
        const auto last = std::find_if(first, epoch_of_bin.end(), [e](auto x) { return x != e; });
        return {static_cast<std::size_t>(first - epoch_of_bin.begin()),
                static_cast<std::size_t>(last - epoch_of_bin.begin()) - 1};
    }

    // Bin indices where a new epoch starts (N - 1 entries).
    std::vector<std::size_t> boundaries() const {
        std::vector<std::size_t> out;
        for (std::size_t b = 1; b < epoch_of_bin.size(); ++b)
            if (epoch_of_bin[b] != epoch_of_bin[b - 1]) out.push_back(b);
        return out;
    }

    bool is_valid() const {
        if (epoch_of_bin.size() != bins.count() || epoch_of_bin.empty()) return false;
        if (epoch_of_bin.front() != 0 || epoch_of_bin.back() + 1 != num_epochs) return false;
        for (std::size_t b = 1; b < epoch_of_bin.size(); ++b) {
            const auto step = static_cast<std::int64_t>(epoch_of_bin[b]) - epoch_of_bin[b - 1];
            if (step != 0 && step != 1) return false;
        }
        return true;
    }

    bool operator==(const EpochSegmentation&) const = default;
};

/// Consecutive equal runs of B/N bins (earlier epochs absorb no remainder;
/// bin b goes to epoch floor(b N / B)).
inline EpochSegmentation uniform_segmentation(const TimeBins& bins, std::size_t num_epochs) {
    if (bins.count() < num_epochs)
        throw ValidationError("cannot split " + std::to_string(bins.count()) + " bins into " + std::to_string(num_epochs) +
                              " non-empty epochs");
    EpochSegmentation seg{bins, std::vector<std::uint32_t>(bins.count()), num_epochs};
    for (std::size_t b = 0; b < bins.count(); ++b)
        seg.epoch_of_bin[b] = static_cast<std::uint32_t>(b * num_epochs / bins.count());
    return seg;
}

inline void write_segments(const EpochSegmentation& seg, std::ostream& out) {
    for (std::size_t e = 0; e < seg.num_epochs; ++e) {
        const auto [first, last] = seg.bin_range(e);
        out << e << '\t' << detail::format_number(seg.bins.edge(first)) << '\t'
            << detail::format_number(seg.bins.edge(last + 1)) << '\n';
    }
}

/// B x N matrix of sampled log-likelihood contributions.
struct LikelihoodMatrix {
    TimeBins bins;
    Matrix<double> values;
    std::size_t sample_size = 0;
};

/// For every training positive (u, i, t) in bin b, adds to L[b][e] the mean of
/// log σ(x̂_{u,i}(e) - x̂_{u,j}(e)) over S negatives j drawn uniformly from
/// I \ P_u, with the same negatives reused across all epoch columns. When S
/// covers I \ P_u the negatives are enumerated exhaustively instead.
template <class Real>
LikelihoodMatrix build_likelihood_matrix(const BasicModel<Real>& model, const Split& split, const TimeBins& bins,
                                         std::size_t sample_size, Rng& rng, unsigned threads = 1) {
    const std::size_t N = model.num_epochs();
    const std::uint64_t base_seed = rng.next();
    const ScoringCache<Real> cache(model, threads);

    std::vector<std::size_t> first_positive(split.num_users + 1, 0);
    for (std::size_t u = 0; u < split.num_users; ++u) first_positive[u + 1] = first_positive[u] + split.train[u].size();
    // Per-positive contributions, reduced serially so the result does not depend on `threads`.
    Matrix<double> contrib(first_positive.back(), N);

    parallel_for(split.num_users, threads, [&](std::size_t begin, std::size_t end, std::size_t) {
        std::vector<ItemId> negatives;
        for (std::size_t u = begin; u < end; ++u) {
            const auto user = static_cast<UserId>(u);
            const auto& positives = split.train[u];
            const std::size_t eligible = split.num_items - split.train_items[u].size();
            if (eligible == 0) continue;
            for (std::size_t p = 0; p < positives.size(); ++p) {
                const std::size_t slot = first_positive[u] + p;
                negatives.clear();
                if (sample_size >= eligible) {
                    for (ItemId j = 0; j < split.num_items; ++j)
                        if (!split.in_train(user, j)) negatives.push_back(j);
                } else {
                    Rng local(mix_seed(base_seed, slot));
                    while (negatives.size() < sample_size) {
                        const auto j = static_cast<ItemId>(local.index(split.num_items));
                        if (!split.in_train(user, j)) negatives.push_back(j);
                    }
                }
                const auto [i, t] = positives[p];
                auto row = contrib.row(slot);
                for (std::size_t e = 0; e < N; ++e) {
                    const double xi = cache.score(user, i, e, t);
                    double acc = 0.0;
                    for (auto j : negatives) acc += log_sigmoid(xi - cache.score(user, j, e, t));
                    row[e] = acc / static_cast<double>(negatives.size());
                }
            }
        }
    });

    LikelihoodMatrix L{bins, Matrix<double>(bins.count(), N), sample_size};
    for (std::size_t u = 0; u < split.num_users; ++u)
        for (std::size_t p = 0; p < split.train[u].size(); ++p) {
            const auto b = bins.bin_of(split.train[u][p].t);
            const auto row = contrib.row(first_positive[u] + p);
            for (std::size_t e = 0; e < N; ++e) L.values(b, e) += row[e];
        }
    return L;
}

inline double segmentation_value(const Matrix<double>& L, std::span<const std::uint32_t> epoch_of_bin) {
    double v = 0.0;
    for (std::size_t b = 0; b < epoch_of_bin.size(); ++b) v += L(b, epoch_of_bin[b]);
    return v;
}

/// Maximizes Σ_b L[b][ep(b)] over contiguous segmentations that use every
/// epoch. best[b][e] = L[b][e] + max(best[b-1][e], best[b-1][e-1]); on ties
/// bin b-1 stays in epoch e.
inline EpochSegmentation dp_segment(const LikelihoodMatrix& L) {
    const std::size_t B = L.values.rows(), N = L.values.cols();
    if (B < N) throw ValidationError("infeasible segmentation: " + std::to_string(B) + " bins < " + std::to_string(N) + " epochs");
    constexpr double ninf = -std::numeric_limits<double>::infinity();
    Matrix<double> best(B, N, ninf);
    Matrix<std::uint8_t> advanced(B, N, 0);
    best(0, 0) = L.values(0, 0);
    for (std::size_t b = 1; b < B; ++b) {
        // Epoch e at bin b needs e <= b and enough bins left for the remaining epochs.
        const std::size_t lo = (N - 1 + b >= B) ? N - 1 - (B - 1 - b) : 0;
        const std::size_t hi = std::min(b, N - 1);
        for (std::size_t e = lo; e <= hi; ++e) {
            const double stay = best(b - 1, e);
            const double step = e > 0 ? best(b - 1, e - 1) : ninf;
            if (step > stay) {
                best(b, e) = L.values(b, e) + step;
                advanced(b, e) = 1;
            } else {
                best(b, e) = L.values(b, e) + stay;
            }
        }
    }
    EpochSegmentation seg{L.bins, std::vector<std::uint32_t>(B), N};
    std::size_t e = N - 1;
    for (std::size_t b = B; b-- > 0;) {
        seg.epoch_of_bin[b] = static_cast<std::uint32_t>(e);
        if (b > 0 && advanced(b, e)) --e;
    }
    return seg;
}

}  // namespace tvbpr
