#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"

using namespace tvbpr;

namespace {

Checkpoint make_checkpoint(VariantKind kind, bool drift = false) {
    auto inst = oracle::random_instance(kind, 9, 14, 3, 2, 10, 3, 5, drift);
    Checkpoint ck;
    ck.model = inst.model.cast<float>();
    ck.segmentation = uniform_segmentation(TimeBins(1000, 9000, 6), ck.model.num_epochs());
    for (int u = 0; u < 9; ++u) ck.users.intern("user" + std::to_string(u));
    for (int i = 0; i < 14; ++i) ck.items.intern("item" + std::to_string(i));
    ck.taxonomy = inst.taxonomy;
    return ck;
}

std::string bytes_of(const Checkpoint& ck) {
    std::ostringstream out(std::ios::binary);
    save_checkpoint(ck, out);
    return out.str();
}

Checkpoint from_bytes(const std::string& s, std::shared_ptr<const FeatureStore> f = nullptr) {
    std::istringstream in(s, std::ios::binary);
    return load_checkpoint(in, std::move(f));
}

}  // namespace

TEST(Checkpoint, RoundTripIsByteIdentical) {
    for (auto kind : {VariantKind::bpr_mf, VariantKind::bpr_tmf, VariantKind::vbpr, VariantKind::tvbpr, VariantKind::tvbpr_plus}) {
        const auto ck = make_checkpoint(kind);
        const auto a = bytes_of(ck);
        const auto back = from_bytes(a, ck.model.shared_features());
        EXPECT_EQ(bytes_of(back), a) << to_string(kind);
        EXPECT_TRUE(back.model.same_parameters(ck.model)) << to_string(kind);
        EXPECT_EQ(back.segmentation, ck.segmentation);
        EXPECT_EQ(back.users, ck.users);
        EXPECT_EQ(back.items, ck.items);
        EXPECT_EQ(*back.taxonomy, *ck.taxonomy);
    }
}

TEST(Checkpoint, PredictionsSurviveReload) {
    const auto ck = make_checkpoint(VariantKind::tvbpr_plus, true);
    const auto back = from_bytes(bytes_of(ck), ck.model.shared_features());
    for (UserId u = 0; u < 9; ++u)
        for (ItemId i = 0; i < 14; ++i)
            for (std::size_t e = 0; e < 3; ++e) {
                const Timestamp t = 1000 + 500 * static_cast<Timestamp>(u + i);
                EXPECT_EQ(back.model.predict(u, i, e, t), ck.model.predict(u, i, e, t));
            }
}

TEST(Checkpoint, BadMagic) {
    auto s = bytes_of(make_checkpoint(VariantKind::vbpr));
    s[0] = 'X';
    EXPECT_THROW(from_bytes(s), FormatError);
    EXPECT_THROW(from_bytes("hello"), FormatError);
}

TEST(Checkpoint, VersionMismatchNamesBothVersions) {
    auto s = bytes_of(make_checkpoint(VariantKind::vbpr));
    s[6] = 7;
    try {
        from_bytes(s);
        FAIL();
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find('7'), std::string::npos);
        EXPECT_NE(msg.find('1'), std::string::npos);
    }
}

TEST(Checkpoint, TruncationDetected) {
    const auto s = bytes_of(make_checkpoint(VariantKind::tvbpr));
    for (std::size_t cut : {std::size_t{3}, std::size_t{20}, s.size() / 2, s.size() - 1})
        EXPECT_THROW(from_bytes(s.substr(0, cut)), FormatError) << cut;
}

TEST(Checkpoint, TrailingBytesRejected) {
    const auto s = bytes_of(make_checkpoint(VariantKind::bpr_mf));
    EXPECT_THROW(from_bytes(s + "x"), FormatError);
}

TEST(Checkpoint, MissingFile) { EXPECT_THROW(load_checkpoint("/nonexistent/ck.bin"), ValidationError); }

TEST(Checkpoint, ParameterDumpListsEmbeddingAndWeights) {
    const auto ck = make_checkpoint(VariantKind::tvbpr);
    std::ostringstream out;
    export_parameters_text(ck.model, out);
    const auto text = out.str();
    EXPECT_NE(text.find("E[0]"), std::string::npos);
    EXPECT_NE(text.find("E[1]"), std::string::npos);
    EXPECT_NE(text.find("w[2]"), std::string::npos);
    EXPECT_NE(text.find("b[2]"), std::string::npos);
}
