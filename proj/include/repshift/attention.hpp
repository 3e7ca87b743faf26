// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>

#include "repshift/tensor.hpp"

namespace repshift {

inline constexpr std::size_t kDefaultTileSize = 64;

struct AttentionWeights {
    Tensor qkv_proj;   // [C, 3C], column blocks Q | K | V, heads contiguous inside each block
    Tensor out_proj;   // [C, C]
    Tensor qkv_bias;   // [3C] or empty (zero)
    Tensor out_bias;   // [C] or empty (zero)
    std::size_t num_heads = 1;

    std::size_t width() const { return out_proj.empty() ? 0 : out_proj.dim(0); }

    void validate() const {
        detail::require_rank(qkv_proj, 2, "qkv_proj");
        detail::require_rank(out_proj, 2, "out_proj");
        const std::size_t C = out_proj.dim(0);
        if (out_proj.dim(1) != C || qkv_proj.dim(0) != C || qkv_proj.dim(1) != 3 * C) {
            detail::fail(ErrorCode::DimensionError, "attention weights inconsistent: qkv ", shape_str(qkv_proj.shape()),
                         ", out ", shape_str(out_proj.shape()));
        }
        if (num_heads == 0 || C % num_heads != 0) {
            detail::fail(ErrorCode::DimensionError, "width ", C, " not divisible by num_heads ", num_heads);
        }
        if (!qkv_bias.empty() && qkv_bias.size() != 3 * C) {
            detail::fail(ErrorCode::DimensionError, "qkv bias ", shape_str(qkv_bias.shape()));
        }
        if (!out_bias.empty() && out_bias.size() != C) {
            detail::fail(ErrorCode::DimensionError, "out bias ", shape_str(out_bias.shape()));
        }
    }
};

struct AttentionArtifacts {
    Tensor output;                  // [N, C]
    std::optional<Tensor> attn_map; // [heads, N, N], naive path only
};

namespace detail {

inline Tensor project_qkv(const Tensor& x, const AttentionWeights& w) {
    require_rank(x, 2, "attention input");
    w.validate();
    if (x.dim(0) == 0) fail(ErrorCode::InvalidArgument, "attention needs at least one token");
    if (x.dim(1) != w.width()) {
        fail(ErrorCode::DimensionError, "attention input ", shape_str(x.shape()), " vs width ", w.width());
    }
    return linear(x, w.qkv_proj, w.qkv_bias);
}

}  // namespace detail

/// Softmax(Q Kᵀ / sqrt(d_head)) V per head, heads concatenated, then the output
/// projection. The full [heads, N, N] map is always built; it is returned only
/// when keep_map is set.
inline AttentionArtifacts naive_attention(const Tensor& x, const AttentionWeights& w, bool keep_map) {
    const Tensor qkv = detail::project_qkv(x, w);
    const std::size_t N = x.dim(0), C = w.width(), H = w.num_heads, d = C / H;
    const std::size_t stride = 3 * C;
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));

    Tensor map({H, N, N});
    Tensor heads_out({N, C});
    for (std::size_t h = 0; h < H; ++h) {
        float* A = map.ptr() + h * N * N;
        for (std::size_t i = 0; i < N; ++i) {
            const float* q = qkv.ptr() + i * stride + h * d;
            for (std::size_t j = 0; j < N; ++j) {
                const float* k = qkv.ptr() + j * stride + C + h * d;
                float s = 0.0f;
                for (std::size_t t = 0; t < d; ++t) s += q[t] * k[t];
                A[i * N + j] = s * scale;
            }
            softmax_inplace({A + i * N, N});
        }
        for (std::size_t i = 0; i < N; ++i) {
            float* o = heads_out.ptr() + i * C + h * d;
            for (std::size_t j = 0; j < N; ++j) {
                const float a = A[i * N + j];
                const float* v = qkv.ptr() + j * stride + 2 * C + h * d;
                for (std::size_t t = 0; t < d; ++t) o[t] += a * v[t];
            }
        }
    }
    MacCounter::add(2ull * H * N * N * d);

    AttentionArtifacts out;
    out.output = linear(heads_out, w.out_proj, w.out_bias);
    if (keep_map) out.attn_map = std::move(map);
    return out;
}

/// Same result as naive_attention, computed tile by tile with the online-softmax
/// recurrence. Per head, live buffers are one [tile, d_head] accumulator, two
/// [tile] running statistics and one [tile] score row; nothing of size N×N is
/// ever allocated.
inline AttentionArtifacts fused_attention(const Tensor& x, const AttentionWeights& w,
                                          std::size_t tile_size = kDefaultTileSize) {
    if (tile_size == 0) detail::fail(ErrorCode::InvalidArgument, "tile_size must be >= 1");
    const Tensor qkv = detail::project_qkv(x, w);
    const std::size_t N = x.dim(0), C = w.width(), H = w.num_heads, d = C / H;
    const std::size_t stride = 3 * C;
    const std::size_t tile = std::min(tile_size, N);
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));

    Tensor heads_out({N, C});
    Tensor acc({tile, d});
    Tensor row_max({tile});
    Tensor row_sum({tile});
    Tensor scores({tile});

    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t q0 = 0; q0 < N; q0 += tile) {
            const std::size_t qn = std::min(tile, N - q0);
            std::fill(acc.data().begin(), acc.data().end(), 0.0f);
            std::fill(row_max.data().begin(), row_max.data().end(), -std::numeric_limits<float>::infinity());
            std::fill(row_sum.data().begin(), row_sum.data().end(), 0.0f);

            for (std::size_t k0 = 0; k0 < N; k0 += tile) {
                const std::size_t kn = std::min(tile, N - k0);
                for (std::size_t qi = 0; qi < qn; ++qi) {
                    const float* q = qkv.ptr() + (q0 + qi) * stride + h * d;
                    float tile_max = -std::numeric_limits<float>::infinity();
                    for (std::size_t kj = 0; kj < kn; ++kj) {
                        const float* k = qkv.ptr() + (k0 + kj) * stride + C + h * d;
                        float s = 0.0f;
                        for (std::size_t t = 0; t < d; ++t) s += q[t] * k[t];
                        scores[kj] = s * scale;
                        tile_max = std::max(tile_max, scores[kj]);
                    }
                    const float m_old = row_max[qi];
                    const float m_new = std::max(m_old, tile_max);
                    const float correction = std::exp(m_old - m_new);  // exp(-inf) = 0 on the first tile
                    float* a = acc.ptr() + qi * d;
                    for (std::size_t t = 0; t < d; ++t) a[t] *= correction;
                    float l = row_sum[qi] * correction;
                    for (std::size_t kj = 0; kj < kn; ++kj) {
                        const float p = std::exp(scores[kj] - m_new);
                        l += p;
                        const float* v = qkv.ptr() + (k0 + kj) * stride + 2 * C + h * d;
                        for (std::size_t t = 0; t < d; ++t) a[t] += p * v[t];
                    }
                    row_sum[qi] = l;
                    row_max[qi] = m_new;
                }
            }

            for (std::size_t qi = 0; qi < qn; ++qi) {
                const float inv = 1.0f / row_sum[qi];
                const float* a = acc.ptr() + qi * d;
                float* o = heads_out.ptr() + (q0 + qi) * C + h * d;
                for (std::size_t t = 0; t < d; ++t) o[t] = a[t] * inv;
            }
        }
    }
    MacCounter::add(2ull * H * N * N * d);

    AttentionArtifacts out;
    out.output = linear(heads_out, w.out_proj, w.out_bias);
    return out;
}

}  // namespace repshift
