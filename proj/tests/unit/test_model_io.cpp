// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "repshift/model_io.hpp"
#include "repshift/synthetic.hpp"
#include "support/expect_error.hpp"
#include "support/temp_dir.hpp"

using namespace repshift;
using namespace repshift::test_support;

namespace {

const VitConfig kSmall{16, 16, 4, 2, 16, 2, 3, 4, true};

std::vector<char> encoded_small() { return encode_container(to_container(make_synthetic_bundle(1, kSmall, SyntheticInit::Random))); }

template <typename T>
void put_le(std::vector<char>& buf, std::size_t at, T v) {
    std::memcpy(buf.data() + at, &v, sizeof(T));
}

}  // namespace

TEST(Sha256, KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Container, LayoutIsAligned) {
    const auto buf = encoded_small();
    ASSERT_GE(buf.size(), kPreludeSize);
    EXPECT_EQ(std::memcmp(buf.data(), "REPSHIFT", 8), 0);
    std::uint32_t version = 0, flags = 1;
    std::uint64_t header_len = 0, payload_len = 0;
    std::memcpy(&version, buf.data() + 8, 4);
    std::memcpy(&flags, buf.data() + 12, 4);
    std::memcpy(&header_len, buf.data() + 16, 8);
    std::memcpy(&payload_len, buf.data() + 24, 8);
    EXPECT_EQ(version, 1u);
    EXPECT_EQ(flags, 0u);
    EXPECT_EQ(buf.size(), kPreludeSize + detail::align_up(header_len) + payload_len);
    const auto header = nlohmann::json::parse(std::string(buf.data() + 64, header_len));
    EXPECT_EQ(header.at("format"), "repshift.container");
    EXPECT_EQ(header.at("kind"), "vit");
    for (const auto& t : header.at("tensors")) {
        EXPECT_EQ(t.at("offset").get<std::size_t>() % 64, 0u);
        EXPECT_EQ(t.at("dtype"), "f32");
    }
}

TEST(Container, VitRoundTripIsBitExact) {
    TempDir dir;
    const ModelBundle b = make_synthetic_bundle(2, kSmall, SyntheticInit::Random);
    const std::string digest = save_bundle(b, dir / "m.rsw");
    EXPECT_EQ(digest, b.digest);
    EXPECT_EQ(digest.size(), 64u);
    const ModelBundle back = load_bundle(dir / "m.rsw");
    EXPECT_EQ(back.digest, digest);
    EXPECT_EQ(back.vit(), kSmall);
    ASSERT_EQ(back.tensors.size(), b.tensors.size());
    for (const auto& [name, t] : b.tensors) EXPECT_TRUE(bit_identical(t, back.tensors.at(name))) << name;

    const VitModel m = vit_model_from_bundle(back);
    const VitModel orig = make_synthetic_model(2, kSmall, SyntheticInit::Random);
    std::mt19937_64 rng(3);
    Tensor img({16, 16, 3});
    for (auto& v : img.data()) v = static_cast<float>(rng() % 1000) / 1000.0f;
    EXPECT_TRUE(bit_identical(forward(img, m, {}).logits, forward(img, orig, {}).logits));
}

TEST(Container, DigestIsDeterministic) {
    EXPECT_EQ(encoded_small(), encoded_small());
    EXPECT_NE(make_synthetic_bundle(1, kSmall, SyntheticInit::Random).digest, make_synthetic_bundle(2, kSmall, SyntheticInit::Random).digest);
}

TEST(Container, CnnRoundTrip) {
    TempDir dir;
    CnnConfig c;
    c.stages = {{8, 2, 1}, {16, 1, 2}};
    c.prune_plan = {{0, 2, 2, GridPruneMode::LineWise}, {1, 1, 1, GridPruneMode::TokenWise}};
    const CnnModel m = make_synthetic_cnn(4, c, SyntheticInit::Random);
    save_bundle(bundle_from_model(m), dir / "c.rsw");
    const ModelBundle back = load_bundle(dir / "c.rsw");
    ASSERT_FALSE(back.is_vit());
    EXPECT_EQ(back.cnn().prune_plan.size(), 2u);
    EXPECT_EQ(back.cnn().prune_plan[1].mode, GridPruneMode::TokenWise);
    const CnnModel m2 = cnn_model_from_bundle(back);
    std::mt19937_64 rng(5);
    Tensor img({16, 16, 3});
    for (auto& v : img.data()) v = static_cast<float>(rng() % 1000) / 1000.0f;
    EXPECT_TRUE(bit_identical(cnn_forward(img, m, c.prune_plan).logits, cnn_forward(img, m2, c.prune_plan).logits));
}

TEST(Container, TruncationIsDigestMismatch) {
    const auto buf = encoded_small();
    for (std::size_t keep : {std::size_t{10}, std::size_t{40}, buf.size() / 2, buf.size() - 1}) {
        std::vector<char> cut(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(keep));
        SCOPED_TRACE(keep);
        EXPECT_REPSHIFT_ERROR(decode_container(cut), ErrorCode::DigestMismatch);
    }
}

TEST(Container, FlippedPayloadByteIsDigestMismatch) {
    auto buf = encoded_small();
    buf[buf.size() - 5] ^= 0x10;
    EXPECT_REPSHIFT_ERROR(decode_container(buf), ErrorCode::DigestMismatch);
}

TEST(Container, BadMagic) {
    auto buf = encoded_small();
    buf[0] = 'X';
    EXPECT_REPSHIFT_ERROR(decode_container(buf), ErrorCode::BadMagic);
    EXPECT_REPSHIFT_ERROR(decode_container({}), ErrorCode::BadMagic);
}

TEST(Container, UnsupportedVersion) {
    auto buf = encoded_small();
    put_le<std::uint32_t>(buf, 8, 2);
    EXPECT_REPSHIFT_ERROR(decode_container(buf), ErrorCode::VersionUnsupported);
}

TEST(Container, MissingTensorIsNamed) {
    Container c = to_container(make_synthetic_bundle(6, kSmall, SyntheticInit::Random));
    c.tensors.erase("blocks.0.mlp.w1");
    const auto bytes = encode_container(c);
    const std::string msg = error_message([&] { bundle_from_container(decode_container(bytes)); });
    EXPECT_NE(msg.find("ShapeMismatch"), std::string::npos) << msg;
    EXPECT_NE(msg.find("blocks.0.mlp.w1"), std::string::npos) << msg;
}

TEST(Container, WrongShapeAndExtraTensor) {
    Container c = to_container(make_synthetic_bundle(7, kSmall, SyntheticInit::Random));
    c.tensors["head.bias"] = Tensor({4});
    EXPECT_REPSHIFT_ERROR(bundle_from_container(decode_container(encode_container(c))), ErrorCode::ShapeMismatch);
    Container d = to_container(make_synthetic_bundle(7, kSmall, SyntheticInit::Random));
    d.tensors["extra"] = Tensor({1});
    EXPECT_REPSHIFT_ERROR(bundle_from_container(decode_container(encode_container(d))), ErrorCode::ShapeMismatch);
}

TEST(Container, OptionalAttentionBiases) {
    ModelBundle b = make_synthetic_bundle(8, kSmall, SyntheticInit::Random);
    b.tensors.erase("blocks.1.attn.qkv.bias");
    b.tensors.erase("blocks.1.attn.proj.bias");
    EXPECT_NO_THROW(b.validate());
    const VitModel m = vit_model_from_bundle(b);
    EXPECT_TRUE(m.weights.blocks[1].attn.qkv_bias.empty());
}

TEST(Container, MissingFileIsIoError) {
    EXPECT_REPSHIFT_ERROR(read_container("/nonexistent/dir/x.rsw"), ErrorCode::IoError);
}

TEST(Container, FixtureRoundTrip) {
    TempDir dir;
    const VitConfig grid{16, 16, 4, 1, 16, 2, 2, 4, false};
    const PlantedFixture f = make_planted_fixture(9, 5, grid, 3);
    write_container(to_container(f), dir / "f.rsw");
    const PlantedFixture g = fixture_from_container(read_container(dir / "f.rsw"));
    EXPECT_EQ(g.seed, 9u);
    EXPECT_EQ(g.signal_patches, 3u);
    EXPECT_EQ(g.labels, f.labels);
    EXPECT_EQ(g.signal_mask, f.signal_mask);
    ASSERT_EQ(g.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_TRUE(bit_identical(g.images[i], f.images[i]));
    EXPECT_REPSHIFT_ERROR(fixture_from_container(to_container(make_synthetic_bundle(1, kSmall, SyntheticInit::Random))), ErrorCode::ConfigError);
}
