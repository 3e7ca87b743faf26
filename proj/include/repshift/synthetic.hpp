// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Seeded synthetic models and planted-signal fixtures.
//
// Planted ViT construction (width C, patch dim D = P*P*3, template u):
//   * u is a fixed unit vector in patch-pixel space (kTemplateSeed).
//   * A signal patch is  s*A*u + noise, a background patch is noise alone,
//     with noise ~ N(0, 1) per pixel, A = 4*sqrt(C) and s = +1 (class 0) or -1 (class 1).
//   * Patch embedding writes u·p to channel 0, leaves channel 1 empty and spreads the
//     orthogonal complement of u over channels 2..C-1 with unit per-channel variance.
//   * Attention is orthogonal with gain 0.1 on every projection, so it only perturbs.
//   * MLP hidden units 0/1 read w = (e0 + e1)/sqrt(2) from the normed input with
//     threshold 0.4*sqrt(C) and write ±7 into channel 1. Background tokens stay below
//     the threshold; signal tokens fire, so signal tokens carry the largest shift.
//     Remaining hidden units are orthogonal with gain 0.05.
//   * Head: logit0 = z0 + z1, logit1 = -(z0 + z1) on the mean-pooled normed tokens.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string_view>
#include <vector>

#include "repshift/cnn_model.hpp"
#include "repshift/model_io.hpp"
#include "repshift/tensor.hpp"
#include "repshift/vit_model.hpp"

namespace repshift {

enum class SyntheticInit { Planted, Random, Zero };

constexpr std::string_view to_string(SyntheticInit i) {
    switch (i) {
    case SyntheticInit::Planted: return "planted";
    case SyntheticInit::Random: return "random";
    case SyntheticInit::Zero: return "zero";
    }
    return "?";
}

inline constexpr std::uint64_t kTemplateSeed = 0x5eed7e3a1a7e0001ull;

using Rng = std::mt19937_64;

inline Tensor gaussian(Shape shape, Rng& rng, float stddev = 1.0f) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, stddev);
    for (float& v : t.data()) v = dist(rng);
    return t;
}

/// rows×cols matrix whose columns (rows > cols) or rows (otherwise) are
/// orthonormal, via modified Gram-Schmidt on a Gaussian draw; scaled by gain.
inline Tensor orthogonal(std::size_t rows, std::size_t cols, Rng& rng, float gain = 1.0f) {
    const bool by_rows = rows <= cols;
    const std::size_t count = by_rows ? rows : cols, len = by_rows ? cols : rows;
    std::vector<std::vector<double>> vecs(count, std::vector<double>(len));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : vecs) {
        for (double& x : v) x = dist(rng);
    }
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < len; ++k) dot += vecs[i][k] * vecs[j][k];
            for (std::size_t k = 0; k < len; ++k) vecs[i][k] -= dot * vecs[j][k];
        }
        double norm = 0.0;
        for (double x : vecs[i]) norm += x * x;
        norm = std::sqrt(norm);
        for (double& x : vecs[i]) x /= norm;
    }
    Tensor t({rows, cols});
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t k = 0; k < len; ++k) {
            (by_rows ? t.at(i, k) : t.at(k, i)) = static_cast<float>(vecs[i][k] * gain);
        }
    }
    return t;
}

/// Orthonormal basis of R^dim (as rows) whose first row is the planted template.
inline Tensor planted_basis(std::size_t dim) {
    Rng rng(kTemplateSeed);
    return orthogonal(dim, dim, rng);
}

inline std::vector<float> planted_template(std::size_t dim) {
    const Tensor basis = planted_basis(dim);
    const auto r = basis.row(0);
    return {r.begin(), r.end()};
}

inline float planted_amplitude(std::size_t width) { return 4.0f * std::sqrt(static_cast<float>(width)); }

namespace detail {

inline Tensor ones(std::size_t n) { return Tensor::full({n}, 1.0f); }

inline void planted_embedding(VitWeights& w, const VitConfig& c, Rng& rng) {
    const std::size_t D = c.patch_dim(), C = c.width;
    const Tensor basis = planted_basis(D);
    w.patch_w = Tensor({D, C});
    for (std::size_t k = 0; k < D; ++k) w.patch_w.at(k, 0) = basis.at(0, k);
    const std::size_t free_channels = C - 2;
    const std::size_t m = std::min(D - 1, free_channels);
    if (m > 0) {
        const float gain = std::sqrt(static_cast<float>(free_channels) / static_cast<float>(m));
        const Tensor spread = orthogonal(m, free_channels, rng, gain);
        for (std::size_t k = 0; k < D; ++k) {
            for (std::size_t r = 0; r < m; ++r) {
                const float b = basis.at(r + 1, k);
                if (b == 0.0f) continue;
                for (std::size_t ch = 0; ch < free_channels; ++ch) w.patch_w.at(k, ch + 2) += b * spread.at(r, ch);
            }
        }
    }
}

}  // namespace detail

inline VitModel make_synthetic_model(std::uint64_t seed, const VitConfig& config,
                                     SyntheticInit init = SyntheticInit::Planted) {
    config.validate();
    const std::size_t C = config.width, Hd = config.hidden(), N = config.num_tokens();
    if (init == SyntheticInit::Planted && (config.num_classes != 2 || C < 4)) {
        detail::fail(ErrorCode::ConfigError, "planted init needs num_classes = 2 and width >= 4");
    }
    Rng rng(seed);
    VitModel m{config, {}};
    auto& w = m.weights;

    if (init == SyntheticInit::Zero) {
        w.patch_w = Tensor({config.patch_dim(), C});
        w.patch_b = Tensor({C});
        w.pos_embed = Tensor({N, C});
        if (config.use_class_token) w.cls_token = Tensor({1, C});
        for (std::size_t l = 0; l < config.depth; ++l) {
            BlockWeights b;
            b.norm1_w = detail::ones(C);
            b.norm1_b = Tensor({C});
            b.attn = {Tensor({C, 3 * C}), Tensor({C, C}), {}, {}, config.heads};
            b.norm2_w = detail::ones(C);
            b.norm2_b = Tensor({C});
            b.mlp = {Tensor({C, Hd}), Tensor({Hd}), Tensor({Hd, C}), Tensor({C})};
            w.blocks.push_back(std::move(b));
        }
        w.norm_w = detail::ones(C);
        w.norm_b = Tensor({C});
        w.head_w = Tensor({C, config.num_classes});
        w.head_b = Tensor({config.num_classes});
        return m;
    }

    const bool planted = init == SyntheticInit::Planted;
    if (planted) {
        detail::planted_embedding(w, config, rng);
    } else {
        w.patch_w = orthogonal(config.patch_dim(), C, rng, 1.0f);
    }
    w.patch_b = planted ? Tensor({C}) : gaussian({C}, rng, 0.02f);
    w.pos_embed = gaussian({N, C}, rng, 0.02f);
    if (config.use_class_token) w.cls_token = gaussian({1, C}, rng, planted ? 0.02f : 1.0f);

    const float attn_gain = planted ? 0.1f : 1.0f;
    const float mlp_gain = planted ? 0.05f : 1.0f;
    const float sqrt_c = std::sqrt(static_cast<float>(C));
    for (std::size_t l = 0; l < config.depth; ++l) {
        BlockWeights b;
        b.norm1_w = detail::ones(C);
        b.norm1_b = Tensor({C});
        b.norm2_w = detail::ones(C);
        b.norm2_b = Tensor({C});
        b.attn.num_heads = config.heads;
        b.attn.qkv_proj = Tensor({C, 3 * C});
        for (std::size_t part = 0; part < 3; ++part) {
            const Tensor o = orthogonal(C, C, rng, attn_gain);
            for (std::size_t i = 0; i < C; ++i) {
                for (std::size_t j = 0; j < C; ++j) b.attn.qkv_proj.at(i, part * C + j) = o.at(i, j);
            }
        }
        b.attn.out_proj = orthogonal(C, C, rng, attn_gain);
        if (!planted) {
            b.attn.qkv_bias = gaussian({3 * C}, rng, 0.02f);
            b.attn.out_bias = gaussian({C}, rng, 0.02f);
        }

        b.mlp.w1 = orthogonal(C, Hd, rng, mlp_gain);
        b.mlp.b1 = planted ? Tensor({Hd}) : gaussian({Hd}, rng, 0.02f);
        b.mlp.w2 = orthogonal(Hd, C, rng, mlp_gain / 2.0f);
        b.mlp.b2 = planted ? Tensor({C}) : gaussian({C}, rng, 0.02f);
        if (planted) {
            const float r = 1.0f / std::sqrt(2.0f);
            const float threshold = 0.4f * sqrt_c;
            const float write = 7.0f;
            for (std::size_t i = 0; i < C; ++i) {
                b.mlp.w1.at(i, 0) = (i < 2) ? r : 0.0f;
                b.mlp.w1.at(i, 1) = (i < 2) ? -r : 0.0f;
            }
            b.mlp.b1[0] = -threshold;
            b.mlp.b1[1] = -threshold;
            for (std::size_t j = 0; j < C; ++j) {
                b.mlp.w2.at(0, j) = j == 1 ? write : 0.0f;
                b.mlp.w2.at(1, j) = j == 1 ? -write : 0.0f;
            }
        }
        w.blocks.push_back(std::move(b));
    }

    w.norm_w = detail::ones(C);
    w.norm_b = Tensor({C});
    if (planted) {
        w.head_w = Tensor({C, 2});
        for (std::size_t i = 0; i < 2; ++i) {
            w.head_w.at(i, 0) = 1.0f;
            w.head_w.at(i, 1) = -1.0f;
        }
        w.head_b = Tensor({2});
    } else {
        w.head_w = orthogonal(C, config.num_classes, rng, 1.0f);
        w.head_b = gaussian({config.num_classes}, rng, 0.02f);
    }
    return m;
}

inline ModelBundle make_synthetic_bundle(std::uint64_t seed, const VitConfig& config,
                                         SyntheticInit init = SyntheticInit::Planted) {
    return bundle_from_model(make_synthetic_model(seed, config, init));
}

//============================ planted ViT fixture ============================

struct PlantedFixture {
    std::uint64_t seed = 0;
    std::size_t image_h = 0, image_w = 0, patch = 0;
    std::size_t signal_patches = 0;
    std::vector<Tensor> images;                  // [H, W, 3]
    std::vector<std::size_t> labels;             // 0 or 1
    std::vector<std::vector<bool>> signal_mask;  // per item, per patch (row-major patch grid)

    std::size_t size() const { return images.size(); }
    std::size_t num_patches() const { return (image_h / patch) * (image_w / patch); }
};

/// Items with `signal_patches` randomly placed signal patches each; every other
/// patch is independent noise. Labels alternate-free: drawn uniformly from {0, 1}.
inline PlantedFixture make_planted_fixture(std::uint64_t seed, std::size_t n_items, const VitConfig& grid,
                                           std::size_t signal_patches) {
    grid.validate();
    const std::size_t P = grid.patch, gh = grid.grid_h(), gw = grid.grid_w(), np = gh * gw;
    if (signal_patches == 0 || signal_patches > np) {
        detail::fail(ErrorCode::ConfigError, "signal_patches ", signal_patches, " outside [1, ", np, "]");
    }
    const std::vector<float> u = planted_template(grid.patch_dim());
    const float A = planted_amplitude(grid.width);

    PlantedFixture f;
    f.seed = seed;
    f.image_h = grid.image_h;
    f.image_w = grid.image_w;
    f.patch = P;
    f.signal_patches = signal_patches;
    Rng rng(seed);
    std::normal_distribution<float> noise(0.0f, 1.0f);
    for (std::size_t item = 0; item < n_items; ++item) {
        const std::size_t label = static_cast<std::size_t>(rng() & 1u);
        std::vector<std::size_t> order(np);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<bool> mask(np, false);
        for (std::size_t i = 0; i < signal_patches; ++i) mask[order[i]] = true;

        Tensor img({grid.image_h, grid.image_w, 3});
        for (float& v : img.data()) v = noise(rng);
        const float s = label == 0 ? A : -A;
        for (std::size_t p = 0; p < np; ++p) {
            if (!mask[p]) continue;
            const std::size_t py = p / gw, px = p % gw;
            std::size_t k = 0;
            for (std::size_t y = 0; y < P; ++y) {
                for (std::size_t x = 0; x < P; ++x) {
                    for (std::size_t ch = 0; ch < 3; ++ch, ++k) {
                        img[((py * P + y) * grid.image_w + px * P + x) * 3 + ch] += s * u[k];
                    }
                }
            }
        }
        f.images.push_back(std::move(img));
        f.labels.push_back(label);
        f.signal_mask.push_back(std::move(mask));
    }
    return f;
}

inline Container to_container(const PlantedFixture& f) {
    Container c;
    c.kind = "fixture";
    c.meta = {{"seed", f.seed},   {"image_size", {f.image_h, f.image_w}}, {"patch_size", f.patch},
              {"signal_patches", f.signal_patches}, {"items", f.size()}};
    const std::size_t n = f.size(), np = f.num_patches();
    Tensor images({n, f.image_h, f.image_w, 3});
    Tensor labels({n});
    Tensor mask({n, np});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(f.images[i].data().begin(), f.images[i].data().end(), images.ptr() + i * f.images[i].size());
        labels[i] = static_cast<float>(f.labels[i]);
        for (std::size_t p = 0; p < np; ++p) mask[i * np + p] = f.signal_mask[i][p] ? 1.0f : 0.0f;
    }
    c.tensors.emplace("images", std::move(images));
    c.tensors.emplace("labels", std::move(labels));
    c.tensors.emplace("signal_mask", std::move(mask));
    return c;
}

inline PlantedFixture fixture_from_container(const Container& c) {
    if (c.kind != "fixture") detail::fail(ErrorCode::ConfigError, "container kind '", c.kind, "' is not a fixture");
    PlantedFixture f;
    try {
        f.seed = c.meta.at("seed").get<std::uint64_t>();
        const auto size = c.meta.at("image_size").get<std::array<std::size_t, 2>>();
        f.image_h = size[0];
        f.image_w = size[1];
        f.patch = c.meta.at("patch_size").get<std::size_t>();
        f.signal_patches = c.meta.at("signal_patches").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        detail::fail(ErrorCode::ConfigError, "fixture metadata: ", e.what());
    }
    auto need = [&](const char* name) -> const Tensor& {
        const auto it = c.tensors.find(name);
        if (it == c.tensors.end()) detail::fail(ErrorCode::ShapeMismatch, "fixture is missing tensor '", name, "'");
        return it->second;
    };
    const Tensor& images = need("images");
    const Tensor& labels = need("labels");
    const Tensor& mask = need("signal_mask");
    const std::size_t n = labels.size(), np = f.num_patches(), per = f.image_h * f.image_w * 3;
    if (images.size() != n * per || mask.size() != n * np) {
        detail::fail(ErrorCode::ShapeMismatch, "fixture tensors disagree with metadata");
    }
    for (std::size_t i = 0; i < n; ++i) {
        f.images.emplace_back(Shape{f.image_h, f.image_w, 3},
                              std::vector<float>(images.ptr() + i * per, images.ptr() + (i + 1) * per));
        f.labels.push_back(static_cast<std::size_t>(labels[i]));
        std::vector<bool> m(np);
        for (std::size_t p = 0; p < np; ++p) m[p] = mask[i * np + p] != 0.0f;
        f.signal_mask.push_back(std::move(m));
    }
    return f;
}

//============================ planted CNN ============================
//
// Kernels are non-negative and channel-aligned: output channel o of every conv
// reads input channel (o mod Cin) at the centre tap with weight 1 plus small
// positive neighbours (block 0), or small positive taps only (residual blocks).
// No biases, so an all-zero background stays exactly zero through every stage.
// Channel o carries class (o mod Cin_0) evidence; the head scores class k by the
// mean of the channels tagged k.

inline CnnModel make_synthetic_cnn(std::uint64_t seed, const CnnConfig& config,
                                   SyntheticInit init = SyntheticInit::Planted) {
    config.validate();
    Rng rng(seed);
    std::uniform_real_distribution<float> small(0.0f, 0.1f);
    CnnModel m{config, {}};
    std::size_t cin = config.in_channels;
    std::vector<std::size_t> tag(cin);
    std::iota(tag.begin(), tag.end(), std::size_t{0});
    for (const auto& st : config.stages) {
        StageWeights sw;
        sw.stride = st.stride;
        std::vector<std::size_t> next_tag(st.channels);
        for (std::size_t o = 0; o < st.channels; ++o) next_tag[o] = tag[o % cin];
        for (std::size_t b = 0; b < st.blocks; ++b) {
            const std::size_t ci = b == 0 ? cin : st.channels;
            ConvBlockWeights blk;
            if (init == SyntheticInit::Random) {
                blk.kernel = gaussian({3, 3, ci, st.channels}, rng, 1.0f / std::sqrt(9.0f * static_cast<float>(ci)));
                blk.scale = detail::ones(st.channels);
                blk.bias = gaussian({st.channels}, rng, 0.02f);
            } else {
                blk.kernel = Tensor({3, 3, ci, st.channels});
                if (init == SyntheticInit::Planted) {
                    for (std::size_t o = 0; o < st.channels; ++o) {
                        const std::size_t src = o % ci;
                        for (std::size_t t = 0; t < 9; ++t) {
                            float v = small(rng);
                            if (b == 0 && t == 4) v += 1.0f;
                            blk.kernel[(t * ci + src) * st.channels + o] = v;
                        }
                    }
                }
                blk.scale = detail::ones(st.channels);
                blk.bias = Tensor({st.channels});
            }
            sw.blocks.push_back(std::move(blk));
        }
        m.weights.stages.push_back(std::move(sw));
        tag = std::move(next_tag);
        cin = st.channels;
    }
    m.weights.head_w = Tensor({cin, config.num_classes});
    m.weights.head_b = Tensor({config.num_classes});
    if (init == SyntheticInit::Random) {
        m.weights.head_w = gaussian({cin, config.num_classes}, rng, 1.0f / std::sqrt(static_cast<float>(cin)));
    } else if (init == SyntheticInit::Planted) {
        for (std::size_t o = 0; o < cin; ++o) {
            if (tag[o] < config.num_classes) m.weights.head_w.at(o, tag[o]) = 1.0f;
        }
    }
    return m;
}

struct PlantedGridItem {
    Tensor image;  // [H, W, Cin], zero outside the blob
    std::size_t label = 0;
    std::size_t top = 0, left = 0, size = 0;  // blob square
};

/// Zero image with one positive square blob of side `blob` in channel `label`.
inline PlantedGridItem make_planted_grid_item(Rng& rng, const CnnConfig& config, std::size_t blob) {
    if (blob == 0 || blob > config.image_h || blob > config.image_w) {
        detail::fail(ErrorCode::ConfigError, "blob size ", blob, " does not fit the image");
    }
    PlantedGridItem item;
    item.label = static_cast<std::size_t>(rng() % std::min(config.num_classes, config.in_channels));
    item.size = blob;
    item.top = static_cast<std::size_t>(rng() % (config.image_h - blob + 1));
    item.left = static_cast<std::size_t>(rng() % (config.image_w - blob + 1));
    std::uniform_real_distribution<float> amp(0.5f, 1.5f);
    item.image = Tensor({config.image_h, config.image_w, config.in_channels});
    for (std::size_t y = item.top; y < item.top + blob; ++y) {
        for (std::size_t x = item.left; x < item.left + blob; ++x) {
            item.image[(y * config.image_w + x) * config.in_channels + item.label] = amp(rng);
        }
    }
    return item;
}

}  // namespace repshift
