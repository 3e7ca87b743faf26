// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Straight-line double-precision references used as test oracles. They share
// no code with the library kernels.

#include <cmath>
#include <cstddef>
#include <vector>

#include "repshift/vit_model.hpp"

namespace repshift::test_support {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t) {
    const std::size_t R = t.dim(0), C = t.size() / R;
    Mat m(R, std::vector<double>(C));
    for (std::size_t i = 0; i < R; ++i) {
        for (std::size_t j = 0; j < C; ++j) m[i][j] = t[i * C + j];
    }
    return m;
}

inline Tensor to_tensor(const Mat& m) {
    Tensor t({m.size(), m.empty() ? 0 : m[0].size()});
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (std::size_t j = 0; j < m[i].size(); ++j) t.at(i, j) = static_cast<float>(m[i][j]);
    }
    return t;
}

inline Mat ref_linear(const Mat& x, const Tensor& w, const Tensor& b) {
    const std::size_t K = w.dim(0), N = w.dim(1);
    Mat out(x.size(), std::vector<double>(N, 0.0));
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            double s = b.empty() ? 0.0 : b[j];
            for (std::size_t k = 0; k < K; ++k) s += x[i][k] * w.at(k, j);
            out[i][j] = s;
        }
    }
    return out;
}

/// Three nested loops per head: scores, softmax, weighted sum.
inline Mat ref_attention(const Mat& x, const AttentionWeights& w, std::vector<Mat>* maps = nullptr) {
    const std::size_t N = x.size(), C = w.width(), H = w.num_heads, d = C / H;
    const Mat qkv = ref_linear(x, w.qkv_proj, w.qkv_bias);
    Mat heads(N, std::vector<double>(C, 0.0));
    if (maps) maps->assign(H, Mat(N, std::vector<double>(N)));
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t i = 0; i < N; ++i) {
            std::vector<double> s(N);
            double mx = -1e300;
            for (std::size_t j = 0; j < N; ++j) {
                double dot = 0.0;
                for (std::size_t t = 0; t < d; ++t) dot += qkv[i][h * d + t] * qkv[j][C + h * d + t];
                s[j] = dot / std::sqrt(static_cast<double>(d));
                mx = std::max(mx, s[j]);
            }
            double z = 0.0;
            for (double& v : s) z += (v = std::exp(v - mx));
            for (std::size_t j = 0; j < N; ++j) {
                const double p = s[j] / z;
                if (maps) (*maps)[h][i][j] = p;
                for (std::size_t t = 0; t < d; ++t) heads[i][h * d + t] += p * qkv[j][2 * C + h * d + t];
            }
        }
    }
    return ref_linear(heads, w.out_proj, w.out_bias);
}

inline Mat ref_layer_norm(const Mat& x, const Tensor& g, const Tensor& b, double eps) {
    Mat out = x;
    for (auto& row : out) {
        double mean = 0.0, var = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(row.size());
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(row.size());
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mean) / std::sqrt(var + eps) * g[j] + b[j];
    }
    return out;
}

inline double ref_gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

inline Mat ref_add(const Mat& a, const Mat& b) {
    Mat out = a;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < a[i].size(); ++j) out[i][j] += b[i][j];
    }
    return out;
}

/// x' = SA(LN x) + x; out = MLP(LN x') + x'.
inline Mat ref_block(const Mat& x, const BlockWeights& w, double eps) {
    const Mat x1 = ref_add(x, ref_attention(ref_layer_norm(x, w.norm1_w, w.norm1_b, eps), w.attn));
    Mat hidden = ref_linear(ref_layer_norm(x1, w.norm2_w, w.norm2_b, eps), w.mlp.w1, w.mlp.b1);
    for (auto& row : hidden) {
        for (double& v : row) v = ref_gelu(v);
    }
    return ref_add(x1, ref_linear(hidden, w.mlp.w2, w.mlp.b2));
}

/// Unpruned forward: patchify, embed, blocks, final norm, pool, head.
inline std::vector<double> ref_forward(const Tensor& image, const VitModel& m) {
    const auto& c = m.config;
    const std::size_t P = c.patch, gw = c.grid_w(), W = c.image_w;
    Mat patches;
    for (std::size_t py = 0; py < c.grid_h(); ++py) {
        for (std::size_t px = 0; px < gw; ++px) {
            std::vector<double> p;
            for (std::size_t y = 0; y < P; ++y) {
                for (std::size_t x = 0; x < P; ++x) {
                    for (std::size_t ch = 0; ch < 3; ++ch) p.push_back(image[((py * P + y) * W + px * P + x) * 3 + ch]);
                }
            }
            patches.push_back(p);
        }
    }
    Mat x = ref_linear(patches, m.weights.patch_w, m.weights.patch_b);
    if (c.use_class_token) x.insert(x.begin(), to_mat(m.weights.cls_token)[0]);
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = 0; j < c.width; ++j) x[i][j] += m.weights.pos_embed.at(i, j);
    }
    for (const auto& b : m.weights.blocks) x = ref_block(x, b, c.ln_eps);
    x = ref_layer_norm(x, m.weights.norm_w, m.weights.norm_b, c.ln_eps);
    std::vector<double> pooled(c.width, 0.0);
    if (c.use_class_token) {
        pooled = x[0];
    } else {
        for (const auto& row : x) {
            for (std::size_t j = 0; j < c.width; ++j) pooled[j] += row[j] / static_cast<double>(x.size());
        }
    }
    return ref_linear({pooled}, m.weights.head_w, m.weights.head_b)[0];
}

}  // namespace repshift::test_support
