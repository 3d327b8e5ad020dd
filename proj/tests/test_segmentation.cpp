#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"

using namespace tvbpr;

namespace {

LikelihoodMatrix random_matrix(std::size_t B, std::size_t N, Rng& rng) {
    LikelihoodMatrix L{TimeBins(0, 1000, B), Matrix<double>(B, N), 0};
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t e = 0; e < N; ++e) L.values(b, e) = -10.0 * rng.uniform();
    return L;
}

}  // namespace

TEST(Bins, EdgesAndLookup) {
    const auto bins = make_bins(0, 100, 4);
    EXPECT_EQ(bins.edges(), (std::vector<double>{0, 25, 50, 75, 100}));
    EXPECT_EQ(bins.bin_of(0), 0u);
    EXPECT_EQ(bins.bin_of(24), 0u);
    EXPECT_EQ(bins.bin_of(25), 1u);
    EXPECT_EQ(bins.bin_of(74), 2u);
    EXPECT_EQ(bins.bin_of(75), 3u);
    EXPECT_EQ(bins.bin_of(100), 3u);
}

TEST(Bins, SingleBinAndDegenerate) {
    const auto one = make_bins(10, 500, 1);
    for (Timestamp t : {10, 11, 300, 500}) EXPECT_EQ(one.bin_of(t), 0u);
    testing::internal::CaptureStderr();
    const auto flat = make_bins(7, 7, 10);
    EXPECT_NE(testing::internal::GetCapturedStderr().find("warning"), std::string::npos);
    EXPECT_EQ(flat.count(), 1u);
    EXPECT_EQ(flat.bin_of(7), 0u);
    EXPECT_THROW(make_bins(0, 10, 0), ValidationError);
}

TEST(Bins, EveryTimestampInExactlyOneBin) {
    const auto bins = make_bins(1000, 1997, 7);
    const auto edges = bins.edges();
    for (Timestamp t = 1000; t <= 1997; ++t) {
        const auto b = bins.bin_of(t);
        ASSERT_LT(b, 7u);
        EXPECT_GE(static_cast<double>(t), edges[b]);
        if (b + 1 < 7) EXPECT_LT(static_cast<double>(t), edges[b + 1]);
    }
}

TEST(Uniform, EqualRuns) {
    const auto seg = uniform_segmentation(TimeBins(0, 100, 12), 4);
    EXPECT_EQ(seg.epoch_of_bin, (std::vector<std::uint32_t>{0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3}));
    EXPECT_TRUE(seg.is_valid());
    EXPECT_EQ(seg.boundaries(), (std::vector<std::size_t>{3, 6, 9}));
    EXPECT_EQ(seg.bin_range(2), (std::pair<std::size_t, std::size_t>{6, 8}));
    EXPECT_THROW(uniform_segmentation(TimeBins(0, 100, 3), 4), ValidationError);
}

TEST(Segments, WritesOneLinePerEpoch) {
    const auto seg = uniform_segmentation(TimeBins(0, 120, 12), 3);
    std::ostringstream out;
    write_segments(seg, out);
    EXPECT_EQ(out.str(), "0\t0\t40\n1\t40\t80\n2\t80\t120\n");
}

TEST(Dp, MatchesBruteForce) {
    Rng rng(17);
    std::size_t count = 0;
    oracle::enumerate_segmentations(12, 4, [&](const std::vector<std::uint32_t>&) { ++count; });
    ASSERT_EQ(count, 165u);
    for (int trial = 0; trial < 100; ++trial) {
        const auto L = random_matrix(12, 4, rng);
        double best = -std::numeric_limits<double>::infinity();
        std::vector<std::uint32_t> arg;
        oracle::enumerate_segmentations(12, 4, [&](const std::vector<std::uint32_t>& labels) {
            double v = 0.0;
            for (std::size_t b = 0; b < 12; ++b) v += L.values(b, labels[b]);
            if (v > best) {
                best = v;
                arg = labels;
            }
        });
        const auto seg = dp_segment(L);
        ASSERT_TRUE(seg.is_valid());
        EXPECT_EQ(segmentation_value(L.values, seg.epoch_of_bin), best);
        EXPECT_EQ(seg.epoch_of_bin, arg);
    }
}

TEST(Dp, BeatsRandomFeasibleSegmentations) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t N = 1 + rng.index(6), B = N + rng.index(30);
        const auto L = random_matrix(B, N, rng);
        const auto seg = dp_segment(L);
        ASSERT_TRUE(seg.is_valid());
        const double v = segmentation_value(L.values, seg.epoch_of_bin);
        for (int k = 0; k < 50; ++k) {
            // Random feasible assignment: pick N-1 distinct boundaries in [1, B).
            std::vector<std::size_t> pool(B - 1);
            for (std::size_t b = 0; b + 1 < B; ++b) pool[b] = b + 1;
            for (std::size_t j = 0; j + 1 < N; ++j) std::swap(pool[j], pool[j + rng.index(pool.size() - j)]);
            std::vector<bool> starts(B, false);
            for (std::size_t j = 0; j + 1 < N; ++j) starts[pool[j]] = true;
            std::vector<std::uint32_t> labels(B, 0);
            for (std::size_t b = 1; b < B; ++b) labels[b] = labels[b - 1] + (starts[b] ? 1 : 0);
            EXPECT_GE(v, segmentation_value(L.values, labels));
        }
    }
}

TEST(Dp, ForcedCases) {
    Rng rng(1);
    const auto L1 = random_matrix(9, 1, rng);
    const auto one = dp_segment(L1);
    EXPECT_EQ(one.epoch_of_bin, std::vector<std::uint32_t>(9, 0));
    double sum = 0.0;
    for (std::size_t b = 0; b < 9; ++b) sum += L1.values(b, 0);
    EXPECT_EQ(segmentation_value(L1.values, one.epoch_of_bin), sum);

    const auto square = dp_segment(random_matrix(5, 5, rng));
    EXPECT_EQ(square.epoch_of_bin, (std::vector<std::uint32_t>{0, 1, 2, 3, 4}));

    EXPECT_THROW(dp_segment(random_matrix(3, 4, rng)), ValidationError);
}

TEST(Dp, TiesExtendTheLaterEpochBackward) {
    LikelihoodMatrix L{TimeBins(0, 60, 6), Matrix<double>(6, 3, 0.0), 0};
    const auto seg = dp_segment(L);
    EXPECT_TRUE(seg.is_valid());
    EXPECT_EQ(seg.epoch_of_bin, (std::vector<std::uint32_t>{0, 1, 2, 2, 2, 2}));
}

TEST(Dp, RecoversPlantedBoundaries) {
    // Each epoch column is best on its own stretch of bins.
    LikelihoodMatrix L{TimeBins(0, 300, 30), Matrix<double>(30, 3, -1.0), 0};
    for (std::size_t b = 0; b < 30; ++b) L.values(b, b < 6 ? 0 : (b < 15 ? 1 : 2)) = -0.5;
    EXPECT_EQ(dp_segment(L).boundaries(), (std::vector<std::size_t>{6, 15}));
}

TEST(LikelihoodMatrix, EmptyBinsAreZeroAndEntriesNonPositive) {
    // All events in the first half of the timeline, plus one at the end to fix t_max.
    auto log = oracle::random_log(12, 30, 6, 3, 0, 500);
    log.interactions.push_back({0, 29, 1000});
    log.t_max = 1000;
    const auto split = split_leave_one_out(log, 1);
    auto inst = oracle::random_instance(VariantKind::tvbpr_plus, 12, 30, 3, 3, 8, 3, 2);
    const auto bins = TimeBins(split.t_min, split.t_max, 10);
    Rng rng(4);
    const auto L = build_likelihood_matrix(inst.model, split, bins, 5, rng);
    ASSERT_EQ(L.values.rows(), 10u);
    ASSERT_EQ(L.values.cols(), 3u);
    std::vector<bool> occupied(10, false);
    for (auto& p : split.train)
        for (auto& e : p) occupied[bins.bin_of(e.t)] = true;
    for (std::size_t b = 0; b < 10; ++b)
        for (std::size_t e = 0; e < 3; ++e) {
            EXPECT_TRUE(std::isfinite(L.values(b, e)));
            EXPECT_LE(L.values(b, e), 0.0);
            if (!occupied[b]) EXPECT_EQ(L.values(b, e), 0.0);
        }
    EXPECT_FALSE(occupied[7]);
}

TEST(LikelihoodMatrix, IndifferentModelGivesLogHalf) {
    const auto log = oracle::random_log(10, 25, 6, 8);
    const auto split = split_leave_one_out(log, 1);
    auto inst = oracle::random_instance(VariantKind::tvbpr_plus, 10, 25, 3, 3, 8, 2, 2);
    inst.model.for_each_family([](std::string_view, std::size_t, std::span<double> v) {
        for (auto& x : v) x = 0.0;
    });
    const auto bins = TimeBins(split.t_min, split.t_max, 4);
    Rng rng(9);
    const auto L = build_likelihood_matrix(inst.model, split, bins, 7, rng);
    std::vector<double> per_bin(4, 0.0);
    for (auto& p : split.train)
        for (auto& e : p) per_bin[bins.bin_of(e.t)] += std::log(0.5);
    for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t e = 0; e < 2; ++e) EXPECT_NEAR(L.values(b, e), per_bin[b], 1e-12);
}

TEST(LikelihoodMatrix, ExhaustiveMatchesEnumeration) {
    const auto log = oracle::random_log(8, 15, 6, 21);
    const auto split = split_leave_one_out(log, 3);
    auto inst = oracle::random_instance(VariantKind::tvbpr_plus, 8, 15, 3, 2, 6, 3, 5);
    const auto& m = inst.model;
    const auto bins = TimeBins(split.t_min, split.t_max, 6);
    Rng rng(2);
    const auto L = build_likelihood_matrix(m, split, bins, 1000, rng);
    Matrix<double> want(6, 3);
    for (std::size_t u = 0; u < split.num_users; ++u) {
        const auto uid = static_cast<UserId>(u);
        for (auto [i, t] : split.train[u])
            for (std::size_t e = 0; e < 3; ++e) {
                double acc = 0.0;
                int n = 0;
                for (ItemId j = 0; j < split.num_items; ++j) {
                    if (split.in_train(uid, j)) continue;
                    acc += std::log(1.0 / (1.0 + std::exp(-(m.predict(uid, i, e, t) - m.predict(uid, j, e, t)))));
                    ++n;
                }
                want(bins.bin_of(t), e) += acc / n;
            }
    }
    for (std::size_t b = 0; b < 6; ++b)
        for (std::size_t e = 0; e < 3; ++e) EXPECT_NEAR(L.values(b, e), want(b, e), 1e-9);
}

TEST(LikelihoodMatrix, IndependentOfThreadCount) {
    const auto log = oracle::random_log(30, 40, 7, 4);
    const auto split = split_leave_one_out(log, 1);
    auto inst = oracle::random_instance(VariantKind::tvbpr, 30, 40, 3, 3, 8, 3, 6);
    const auto bins = TimeBins(split.t_min, split.t_max, 9);
    Rng a(5), b(5);
    const auto La = build_likelihood_matrix(inst.model, split, bins, 4, a, 1);
    const auto Lb = build_likelihood_matrix(inst.model, split, bins, 4, b, 3);
    for (std::size_t r = 0; r < 9; ++r)
        for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(La.values(r, e), Lb.values(r, e));
}

TEST(LikelihoodMatrix, RefitNeverLowersTheObjective) {
    const auto log = oracle::random_log(20, 40, 7, 12);
    const auto split = split_leave_one_out(log, 2);
    auto inst = oracle::random_instance(VariantKind::tvbpr_plus, 20, 40, 3, 3, 8, 4, 3);
    const auto bins = TimeBins(split.t_min, split.t_max, 16);
    Rng rng(1);
    const auto L = build_likelihood_matrix(inst.model, split, bins, 10, rng);
    const auto before = uniform_segmentation(bins, 4);
    const auto after = dp_segment(L);
    EXPECT_GE(segmentation_value(L.values, after.epoch_of_bin), segmentation_value(L.values, before.epoch_of_bin));
}
