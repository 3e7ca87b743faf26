// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Weight container, v1. All integers little-endian.
//
//   offset  size  field
//   0       8     magic "REPSHIFT"
//   8       4     u32 format version (1)
//   12      4     u32 flags (0)
//   16      8     u64 header_len: bytes of the UTF-8 JSON header
//   24      8     u64 payload_len: bytes of the raw tensor payload
//   32      32    SHA-256 over header bytes followed by payload bytes
//   64      ...   JSON header, zero-padded to a multiple of 64 bytes
//   ...     ...   payload: f32 tensors, each starting at a 64-byte aligned
//                 offset relative to the payload start
//
// Header JSON:
//   { "format": "repshift.container", "kind": "vit" | "cnn" | "fixture",
//     "config": {...}, "meta": {...},
//     "tensors": [ { "name", "dtype": "f32", "shape": [..], "offset", "nbytes" } ] }
//
// See docs/container_format.md for the full field list.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "repshift/cnn_model.hpp"
#include "repshift/tensor.hpp"
#include "repshift/vit_model.hpp"

namespace repshift {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

inline constexpr std::array<char, 8> kContainerMagic = {'R', 'E', 'P', 'S', 'H', 'I', 'F', 'T'};
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerAlign = 64;
inline constexpr std::size_t kPreludeSize = 64;

using TensorMap = std::map<std::string, Tensor>;

/// Generic decoded container: JSON metadata plus named tensors.
struct Container {
    std::string kind;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json meta = nlohmann::json::object();
    TensorMap tensors;
    std::uint32_t version = kContainerVersion;
    std::string digest;  // lowercase hex SHA-256
};

namespace detail {

inline std::size_t align_up(std::size_t n) { return (n + kContainerAlign - 1) / kContainerAlign * kContainerAlign; }

inline std::array<unsigned char, 32> sha256(std::span<const std::span<const char>> parts) {
    std::array<unsigned char, 32> out{};
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    unsigned int len = 0;
    bool ok = ctx != nullptr && EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1;
    for (const auto& p : parts) ok = ok && EVP_DigestUpdate(ctx, p.data(), p.size()) == 1;
    ok = ok && EVP_DigestFinal_ex(ctx, out.data(), &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) fail(ErrorCode::IoError, "SHA-256 computation failed");
    return out;
}

inline std::string to_hex(std::span<const unsigned char> bytes) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string s;
    s.reserve(bytes.size() * 2);
    for (unsigned char b : bytes) {
        s.push_back(kDigits[b >> 4]);
        s.push_back(kDigits[b & 0xF]);
    }
    return s;
}

template <typename T>
void put_le(std::vector<char>& buf, std::size_t offset, T value) {
    std::memcpy(buf.data() + offset, &value, sizeof(T));
}

template <typename T>
T get_le(const std::vector<char>& buf, std::size_t offset) {
    T value;
    std::memcpy(&value, buf.data() + offset, sizeof(T));
    return value;
}

}  // namespace detail

inline std::string sha256_hex(std::string_view text) {
    const std::array<std::span<const char>, 1> parts{std::span<const char>(text.data(), text.size())};
    const auto d = detail::sha256(parts);
    return detail::to_hex(d);
}

/// Serializes a container to bytes. Returns the digest via `c.digest`-compatible hex.
inline std::vector<char> encode_container(const Container& c, std::string* digest_out = nullptr) {
    nlohmann::json header;
    header["format"] = "repshift.container";
    header["kind"] = c.kind;
    header["config"] = c.config;
    header["meta"] = c.meta;
    header["tensors"] = nlohmann::json::array();
    std::size_t payload_len = 0;
    for (const auto& [name, t] : c.tensors) {
        const std::size_t offset = detail::align_up(payload_len);
        const std::size_t nbytes = t.size() * sizeof(float);
        header["tensors"].push_back(
            {{"name", name}, {"dtype", "f32"}, {"shape", t.shape()}, {"offset", offset}, {"nbytes", nbytes}});
        payload_len = offset + nbytes;
    }
    const std::string text = header.dump();
    const std::size_t header_padded = detail::align_up(text.size());

    std::vector<char> buf(kPreludeSize + header_padded + payload_len, 0);
    std::memcpy(buf.data(), kContainerMagic.data(), kContainerMagic.size());
    detail::put_le<std::uint32_t>(buf, 8, kContainerVersion);
    detail::put_le<std::uint32_t>(buf, 12, 0);
    detail::put_le<std::uint64_t>(buf, 16, text.size());
    detail::put_le<std::uint64_t>(buf, 24, payload_len);
    std::memcpy(buf.data() + kPreludeSize, text.data(), text.size());
    char* payload = buf.data() + kPreludeSize + header_padded;
    std::size_t i = 0;
    for (const auto& [name, t] : c.tensors) {
        const std::size_t offset = header["tensors"][i++]["offset"].get<std::size_t>();
        if (!t.empty()) std::memcpy(payload + offset, t.ptr(), t.size() * sizeof(float));
    }
    const std::array<std::span<const char>, 2> parts{std::span<const char>(text.data(), text.size()),
                                                     std::span<const char>(payload, payload_len)};
    const auto digest = detail::sha256(parts);
    std::memcpy(buf.data() + 32, digest.data(), digest.size());
    if (digest_out) *digest_out = detail::to_hex(digest);
    return buf;
}

inline Container decode_container(const std::vector<char>& buf) {
    if (buf.size() < kContainerMagic.size() ||
        std::memcmp(buf.data(), kContainerMagic.data(), kContainerMagic.size()) != 0) {
        detail::fail(ErrorCode::BadMagic, "not a repshift container (magic mismatch)");
    }
    if (buf.size() < 12) detail::fail(ErrorCode::DigestMismatch, "file truncated inside the prelude");
    const auto version = detail::get_le<std::uint32_t>(buf, 8);
    if (version != kContainerVersion) {
        detail::fail(ErrorCode::VersionUnsupported, "container version ", version, ", supported ", kContainerVersion);
    }
    if (buf.size() < kPreludeSize) detail::fail(ErrorCode::DigestMismatch, "file truncated inside the prelude");
    const auto header_len = detail::get_le<std::uint64_t>(buf, 16);
    const auto payload_len = detail::get_le<std::uint64_t>(buf, 24);
    const std::uint64_t header_padded = detail::align_up(header_len);
    if (header_len > buf.size() || payload_len > buf.size() ||
        kPreludeSize + header_padded + payload_len > buf.size()) {
        detail::fail(ErrorCode::DigestMismatch, "file truncated: expected ", kPreludeSize + header_padded + payload_len,
                     " bytes, have ", buf.size());
    }
    const char* header_ptr = buf.data() + kPreludeSize;
    const char* payload = header_ptr + header_padded;
    const std::array<std::span<const char>, 2> parts{std::span<const char>(header_ptr, header_len),
                                                     std::span<const char>(payload, payload_len)};
    const auto digest = detail::sha256(parts);
    if (std::memcmp(digest.data(), buf.data() + 32, digest.size()) != 0) {
        detail::fail(ErrorCode::DigestMismatch, "content digest does not match the stored digest");
    }

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(std::string_view(header_ptr, header_len));
    } catch (const nlohmann::json::exception& e) {
        detail::fail(ErrorCode::ConfigError, "container header is not valid JSON: ", e.what());
    }
    Container c;
    c.version = version;
    c.digest = detail::to_hex(digest);
    c.kind = header.value("kind", "");
    c.config = header.value("config", nlohmann::json::object());
    c.meta = header.value("meta", nlohmann::json::object());
    for (const auto& entry : header.at("tensors")) {
        const auto name = entry.at("name").get<std::string>();
        if (entry.value("dtype", "") != "f32") {
            detail::fail(ErrorCode::ShapeMismatch, "tensor '", name, "' has unsupported dtype");
        }
        const auto shape = entry.at("shape").get<Shape>();
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
        if (nbytes != shape_numel(shape) * sizeof(float) || offset % kContainerAlign != 0 ||
            offset + nbytes > payload_len) {
            detail::fail(ErrorCode::ShapeMismatch, "tensor '", name, "' extent does not match its shape ",
                         shape_str(shape));
        }
        std::vector<float> data(shape_numel(shape));
        if (nbytes) std::memcpy(data.data(), payload + offset, nbytes);
        c.tensors.emplace(name, Tensor(shape, std::move(data)));
    }
    return c;
}

inline std::string write_container(const Container& c, const std::filesystem::path& path) {
    std::string digest;
    const auto buf = encode_container(c, &digest);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) detail::fail(ErrorCode::IoError, "cannot open '", path.string(), "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) detail::fail(ErrorCode::IoError, "write to '", path.string(), "' failed");
    return digest;
}

inline Container read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) detail::fail(ErrorCode::IoError, "cannot open '", path.string(), "'");
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_container(buf);
}

//============================ architecture configs ============================

inline nlohmann::json to_json(const VitConfig& c) {
    return {{"architecture", "vit"},     {"image_size", {c.image_h, c.image_w}},
            {"patch_size", c.patch},     {"depth", c.depth},
            {"width", c.width},          {"heads", c.heads},
            {"num_classes", c.num_classes}, {"mlp_ratio", c.mlp_ratio},
            {"class_token", c.use_class_token}, {"ln_eps", c.ln_eps}};
}

inline VitConfig vit_config_from_json(const nlohmann::json& j) {
    VitConfig c;
    const auto size = j.at("image_size").get<std::array<std::size_t, 2>>();
    c.image_h = size[0];
    c.image_w = size[1];
    c.patch = j.at("patch_size").get<std::size_t>();
    c.depth = j.at("depth").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.mlp_ratio = j.value("mlp_ratio", std::size_t{4});
    c.use_class_token = j.at("class_token").get<bool>();
    c.ln_eps = j.value("ln_eps", 1e-6f);
    c.validate();
    return c;
}

inline nlohmann::json to_json(const CnnConfig& c) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : c.stages) stages.push_back({{"channels", s.channels}, {"blocks", s.blocks}, {"stride", s.stride}});
    nlohmann::json plan = nlohmann::json::array();
    for (const auto& p : c.prune_plan) {
        plan.push_back({{"stage", p.stage},
                        {"drop_rows", p.drop_rows},
                        {"drop_cols", p.drop_cols},
                        {"mode", std::string(to_string(p.mode))}});
    }
    return {{"architecture", "cnn"}, {"image_size", {c.image_h, c.image_w}}, {"in_channels", c.in_channels},
            {"stages", stages},      {"num_classes", c.num_classes},         {"prune_plan", plan}};
}

inline GridPruneMode grid_prune_mode_from(const std::string& s) {
    if (s == "line") return GridPruneMode::LineWise;
    if (s == "token") return GridPruneMode::TokenWise;
    detail::fail(ErrorCode::ConfigError, "unknown grid prune mode '", s, "' (line|token)");
}

inline CnnConfig cnn_config_from_json(const nlohmann::json& j) {
    CnnConfig c;
    const auto size = j.at("image_size").get<std::array<std::size_t, 2>>();
    c.image_h = size[0];
    c.image_w = size[1];
    c.in_channels = j.value("in_channels", std::size_t{3});
    c.num_classes = j.at("num_classes").get<std::size_t>();
    for (const auto& s : j.at("stages")) {
        c.stages.push_back({s.at("channels").get<std::size_t>(), s.at("blocks").get<std::size_t>(),
                            s.at("stride").get<std::size_t>()});
    }
    for (const auto& p : j.value("prune_plan", nlohmann::json::array())) {
        c.prune_plan.push_back({p.at("stage").get<std::size_t>(), p.at("drop_rows").get<std::size_t>(),
                                p.at("drop_cols").get<std::size_t>(),
                                grid_prune_mode_from(p.at("mode").get<std::string>())});
    }
    c.validate();
    return c;
}

//============================ manifests ============================

struct TensorSpec {
    std::string name;
    Shape shape;
    bool optional = false;
};

inline std::vector<TensorSpec> expected_manifest(const VitConfig& c) {
    const std::size_t C = c.width, Hd = c.hidden();
    std::vector<TensorSpec> m = {
        {"patch_embed.weight", {c.patch_dim(), C}},
        {"patch_embed.bias", {C}},
        {"pos_embed", {c.num_tokens(), C}},
    };
    if (c.use_class_token) m.push_back({"cls_token", {1, C}});
    for (std::size_t i = 0; i < c.depth; ++i) {
        const std::string p = "blocks." + std::to_string(i) + ".";
        m.push_back({p + "norm1.weight", {C}});
        m.push_back({p + "norm1.bias", {C}});
        m.push_back({p + "attn.qkv.weight", {C, 3 * C}});
        m.push_back({p + "attn.qkv.bias", {3 * C}, true});
        m.push_back({p + "attn.proj.weight", {C, C}});
        m.push_back({p + "attn.proj.bias", {C}, true});
        m.push_back({p + "norm2.weight", {C}});
        m.push_back({p + "norm2.bias", {C}});
        m.push_back({p + "mlp.w1", {C, Hd}});
        m.push_back({p + "mlp.b1", {Hd}});
        m.push_back({p + "mlp.w2", {Hd, C}});
        m.push_back({p + "mlp.b2", {C}});
    }
    m.push_back({"norm.weight", {C}});
    m.push_back({"norm.bias", {C}});
    m.push_back({"head.weight", {C, c.num_classes}});
    m.push_back({"head.bias", {c.num_classes}});
    return m;
}

inline std::vector<TensorSpec> expected_manifest(const CnnConfig& c) {
    std::vector<TensorSpec> m;
    std::size_t cin = c.in_channels;
    for (std::size_t s = 0; s < c.stages.size(); ++s) {
        const std::size_t cout = c.stages[s].channels;
        for (std::size_t b = 0; b < c.stages[s].blocks; ++b) {
            const std::string p = "stages." + std::to_string(s) + ".blocks." + std::to_string(b) + ".";
            m.push_back({p + "conv.weight", {3, 3, b == 0 ? cin : cout, cout}});
            m.push_back({p + "norm.scale", {cout}});
            m.push_back({p + "norm.bias", {cout}});
        }
        cin = cout;
    }
    m.push_back({"head.weight", {cin, c.num_classes}});
    m.push_back({"head.bias", {c.num_classes}});
    return m;
}

inline void validate_manifest(const TensorMap& tensors, const std::vector<TensorSpec>& manifest) {
    for (const auto& spec : manifest) {
        const auto it = tensors.find(spec.name);
        if (it == tensors.end()) {
            if (spec.optional) continue;
            detail::fail(ErrorCode::ShapeMismatch, "missing tensor '", spec.name, "' (expected ",
                         shape_str(spec.shape), ")");
        }
        if (it->second.shape() != spec.shape) {
            detail::fail(ErrorCode::ShapeMismatch, "tensor '", spec.name, "' has shape ",
                         shape_str(it->second.shape()), ", expected ", shape_str(spec.shape));
        }
    }
    for (const auto& [name, t] : tensors) {
        const bool known = std::any_of(manifest.begin(), manifest.end(), [&](const auto& s) { return s.name == name; });
        if (!known) detail::fail(ErrorCode::ShapeMismatch, "unexpected tensor '", name, "' not in manifest");
    }
}

//============================ model bundle ============================

using ArchConfig = std::variant<VitConfig, CnnConfig>;

/// Immutable weights plus architecture, as stored in a container file.
struct ModelBundle {
    TensorMap tensors;
    ArchConfig arch;
    std::uint32_t version = kContainerVersion;
    std::string digest;

    bool is_vit() const { return std::holds_alternative<VitConfig>(arch); }
    const VitConfig& vit() const { return std::get<VitConfig>(arch); }
    const CnnConfig& cnn() const { return std::get<CnnConfig>(arch); }

    const Tensor& get(const std::string& name) const {
        const auto it = tensors.find(name);
        if (it == tensors.end()) detail::fail(ErrorCode::ShapeMismatch, "missing tensor '", name, "'");
        return it->second;
    }
    Tensor get_or_empty(const std::string& name) const {
        const auto it = tensors.find(name);
        return it == tensors.end() ? Tensor{} : it->second;
    }

    std::vector<TensorSpec> manifest() const {
        return std::visit([](const auto& c) { return expected_manifest(c); }, arch);
    }
    void validate() const { validate_manifest(tensors, manifest()); }
};

inline Container to_container(const ModelBundle& b) {
    Container c;
    c.kind = b.is_vit() ? "vit" : "cnn";
    c.config = std::visit([](const auto& cfg) { return to_json(cfg); }, b.arch);
    c.tensors = b.tensors;
    return c;
}

inline ModelBundle bundle_from_container(Container c) {
    ModelBundle b;
    try {
        if (c.kind == "vit") {
            b.arch = vit_config_from_json(c.config);
        } else if (c.kind == "cnn") {
            b.arch = cnn_config_from_json(c.config);
        } else {
            detail::fail(ErrorCode::ConfigError, "container kind '", c.kind, "' is not a model");
        }
    } catch (const nlohmann::json::exception& e) {
        detail::fail(ErrorCode::ConfigError, "architecture config: ", e.what());
    }
    b.tensors = std::move(c.tensors);
    b.version = c.version;
    b.digest = std::move(c.digest);
    b.validate();
    return b;
}

/// Writes the bundle and returns its content digest.
inline std::string save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
    bundle.validate();
    return write_container(to_container(bundle), path);
}

inline ModelBundle load_bundle(const std::filesystem::path& path) { return bundle_from_container(read_container(path)); }

/// Digest the bundle would have on disk.
inline std::string bundle_digest(const ModelBundle& bundle) {
    std::string digest;
    encode_container(to_container(bundle), &digest);
    return digest;
}

//============================ bundle <-> model ============================

inline VitModel vit_model_from_bundle(const ModelBundle& b) {
    b.validate();
    VitModel m{b.vit(), {}};
    auto& w = m.weights;
    w.patch_w = b.get("patch_embed.weight");
    w.patch_b = b.get("patch_embed.bias");
    w.pos_embed = b.get("pos_embed");
    if (m.config.use_class_token) w.cls_token = b.get("cls_token");
    for (std::size_t i = 0; i < m.config.depth; ++i) {
        const std::string p = "blocks." + std::to_string(i) + ".";
        BlockWeights blk;
        blk.norm1_w = b.get(p + "norm1.weight");
        blk.norm1_b = b.get(p + "norm1.bias");
        blk.attn.qkv_proj = b.get(p + "attn.qkv.weight");
        blk.attn.qkv_bias = b.get_or_empty(p + "attn.qkv.bias");
        blk.attn.out_proj = b.get(p + "attn.proj.weight");
        blk.attn.out_bias = b.get_or_empty(p + "attn.proj.bias");
        blk.attn.num_heads = m.config.heads;
        blk.norm2_w = b.get(p + "norm2.weight");
        blk.norm2_b = b.get(p + "norm2.bias");
        blk.mlp = {b.get(p + "mlp.w1"), b.get(p + "mlp.b1"), b.get(p + "mlp.w2"), b.get(p + "mlp.b2")};
        w.blocks.push_back(std::move(blk));
    }
    w.norm_w = b.get("norm.weight");
    w.norm_b = b.get("norm.bias");
    w.head_w = b.get("head.weight");
    w.head_b = b.get("head.bias");
    return m;
}

inline ModelBundle bundle_from_model(const VitModel& m) {
    ModelBundle b;
    b.arch = m.config;
    const auto& w = m.weights;
    auto& t = b.tensors;
    t["patch_embed.weight"] = w.patch_w;
    t["patch_embed.bias"] = w.patch_b;
    t["pos_embed"] = w.pos_embed;
    if (m.config.use_class_token) t["cls_token"] = w.cls_token;
    for (std::size_t i = 0; i < w.blocks.size(); ++i) {
        const std::string p = "blocks." + std::to_string(i) + ".";
        const auto& blk = w.blocks[i];
        t[p + "norm1.weight"] = blk.norm1_w;
        t[p + "norm1.bias"] = blk.norm1_b;
        t[p + "attn.qkv.weight"] = blk.attn.qkv_proj;
        if (!blk.attn.qkv_bias.empty()) t[p + "attn.qkv.bias"] = blk.attn.qkv_bias;
        t[p + "attn.proj.weight"] = blk.attn.out_proj;
        if (!blk.attn.out_bias.empty()) t[p + "attn.proj.bias"] = blk.attn.out_bias;
        t[p + "norm2.weight"] = blk.norm2_w;
        t[p + "norm2.bias"] = blk.norm2_b;
        t[p + "mlp.w1"] = blk.mlp.w1;
        t[p + "mlp.b1"] = blk.mlp.b1;
        t[p + "mlp.w2"] = blk.mlp.w2;
        t[p + "mlp.b2"] = blk.mlp.b2;
    }
    t["norm.weight"] = w.norm_w;
    t["norm.bias"] = w.norm_b;
    t["head.weight"] = w.head_w;
    t["head.bias"] = w.head_b;
    b.validate();
    b.digest = bundle_digest(b);
    return b;
}

inline CnnModel cnn_model_from_bundle(const ModelBundle& b) {
    b.validate();
    CnnModel m{b.cnn(), {}};
    for (std::size_t s = 0; s < m.config.stages.size(); ++s) {
        StageWeights stage;
        stage.stride = m.config.stages[s].stride;
        for (std::size_t k = 0; k < m.config.stages[s].blocks; ++k) {
            const std::string p = "stages." + std::to_string(s) + ".blocks." + std::to_string(k) + ".";
            stage.blocks.push_back({b.get(p + "conv.weight"), b.get(p + "norm.scale"), b.get(p + "norm.bias")});
        }
        m.weights.stages.push_back(std::move(stage));
    }
    m.weights.head_w = b.get("head.weight");
    m.weights.head_b = b.get("head.bias");
    return m;
}

inline ModelBundle bundle_from_model(const CnnModel& m) {
    ModelBundle b;
    b.arch = m.config;
    for (std::size_t s = 0; s < m.weights.stages.size(); ++s) {
        for (std::size_t k = 0; k < m.weights.stages[s].blocks.size(); ++k) {
            const std::string p = "stages." + std::to_string(s) + ".blocks." + std::to_string(k) + ".";
            const auto& blk = m.weights.stages[s].blocks[k];
            b.tensors[p + "conv.weight"] = blk.kernel;
            b.tensors[p + "norm.scale"] = blk.scale;
            b.tensors[p + "norm.bias"] = blk.bias;
        }
    }
    b.tensors["head.weight"] = m.weights.head_w;
    b.tensors["head.bias"] = m.weights.head_b;
    b.validate();
    b.digest = bundle_digest(b);
    return b;
}

}  // namespace repshift
