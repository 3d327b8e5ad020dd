#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"

using namespace tvbpr;

namespace {

IdMap ids(std::initializer_list<const char*> names) {
    IdMap m;
    for (auto n : names) m.intern(n);
    return m;
}

FeatureStore parse(const std::string& text, const IdMap& items) {
    std::istringstream in(text);
    return parse_features(in, items);
}

}  // namespace

TEST(Features, SparseLineMatchesDense) {
    const auto store = parse("#dim 4\ni1 0:1.0 3:2.0\n", ids({"i1"}));
    EXPECT_EQ(store.dense(0), (std::vector<float>{1, 0, 0, 2}));
    EXPECT_EQ(store[0].nnz(), 2u);
    EXPECT_DOUBLE_EQ(store.density(), 0.5);
}

TEST(Features, DotWithOnesAndZeroRow) {
    const auto store = parse("#dim 4\ni1 0:1.0 3:2.0\ni2\n", ids({"i1", "i2"}));
    const std::vector<double> ones(4, 1.0);
    EXPECT_DOUBLE_EQ(store.dot_embed(ones, 0), 3.0);
    EXPECT_DOUBLE_EQ(store.dot_embed(ones, 1), 0.0);
}

TEST(Features, OrderFollowsIdMapNotFile) {
    const auto store = parse("#dim 3\nb 2:5\na 0:1\nextra 1:1\n", ids({"a", "b"}));
    EXPECT_EQ(store.dense(0), (std::vector<float>{1, 0, 0}));
    EXPECT_EQ(store.dense(1), (std::vector<float>{0, 0, 5}));
}

TEST(Features, SparseDotMatchesDense) {
    Rng rng(3);
    const auto store = oracle::random_features(50, 300, 0.05, rng);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> row(300);
        for (auto& x : row) x = rng.normal();
        for (ItemId i = 0; i < 50; ++i) {
            const auto f = store->dense(i);
            double want = 0.0;
            for (std::size_t j = 0; j < f.size(); ++j) want += row[j] * f[j];
            const double got = store->dot_embed(row, i);
            EXPECT_LE(std::abs(got - want), 1e-6 * std::max(1.0, std::abs(want)));
        }
    }
}

TEST(Features, RoundTripIsBitExact) {
    Rng rng(8);
    const auto store = oracle::random_features(40, 64, 0.2, rng);
    IdMap items;
    for (int i = 0; i < 40; ++i) items.intern("item" + std::to_string(i));
    std::ostringstream a;
    write_features(*store, items, a);
    const auto again = parse(a.str(), items);
    EXPECT_EQ(again, *store);
    std::ostringstream b;
    write_features(again, items, b);
    EXPECT_EQ(a.str(), b.str());
}

TEST(Features, MissingItemsListed) {
    try {
        parse("#dim 2\na 0:1\n", ids({"a", "b", "c"}));
        FAIL();
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("b"), std::string::npos);
        EXPECT_NE(msg.find("c"), std::string::npos);
    }
}

TEST(Features, IndexOutOfRange) {
    try {
        parse("#dim 4\na 1:1\nb 4:1\n", ids({"a", "b"}));
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    FeatureStore s(4);
    const std::vector<std::uint32_t> idx{4};
    const std::vector<float> val{1};
    EXPECT_THROW(s.append(idx, val), FormatError);
}

TEST(Features, MalformedInput) {
    EXPECT_THROW(parse("a 0:1\n", ids({"a"})), ParseError);
    EXPECT_THROW(parse("#dim 4\na 0-1\n", ids({"a"})), ParseError);
    EXPECT_THROW(parse("#dim 4\na 2:1 1:1\n", ids({"a"})), ParseError);
    EXPECT_THROW(parse("#dim 4\na 0:1\na 1:1\n", ids({"a"})), ParseError);
}

TEST(Features, UnknownItemLookup) {
    const auto store = parse("#dim 2\na 0:1\n", ids({"a"}));
    EXPECT_THROW(store[1], std::out_of_range);
    const std::vector<double> row(2, 1.0);
    EXPECT_THROW(store.dot_embed(row, 7), std::out_of_range);
}
