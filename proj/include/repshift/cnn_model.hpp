// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "repshift/compression.hpp"
#include "repshift/tensor.hpp"

namespace repshift {

struct CnnStage {
    std::size_t channels = 8;
    std::size_t blocks = 1;
    std::size_t stride = 1;
};

enum class GridPruneMode { LineWise, TokenWise };

constexpr std::string_view to_string(GridPruneMode m) { return m == GridPruneMode::LineWise ? "line" : "token"; }

/// Pruning applied to the output grid of one stage.
struct StagePrune {
    std::size_t stage = 0;
    std::size_t drop_rows = 0;
    std::size_t drop_cols = 0;
    GridPruneMode mode = GridPruneMode::LineWise;
};

using CnnPrunePlan = std::vector<StagePrune>;

using GridDims = std::array<std::size_t, 2>;

inline std::size_t strided_extent(std::size_t n, std::size_t stride) { return (n + stride - 1) / stride; }

struct CnnConfig {
    std::size_t image_h = 16;
    std::size_t image_w = 16;
    std::size_t in_channels = 3;
    std::vector<CnnStage> stages;
    std::size_t num_classes = 2;
    CnnPrunePlan prune_plan;  // default plan stored with the bundle

    /// Spatial dims after each stage (post-prune) under `plan`; validates the plan.
    std::vector<GridDims> analytic_dims(const CnnPrunePlan& plan) const {
        std::vector<GridDims> dims;
        std::size_t h = image_h, w = image_w;
        std::size_t last_stage = 0;
        for (std::size_t i = 0; i < plan.size(); ++i) {
            if (plan[i].stage >= stages.size() || (i > 0 && plan[i].stage <= last_stage)) {
                detail::fail(ErrorCode::ConfigError, "prune plan stages must be increasing and below ", stages.size());
            }
            last_stage = plan[i].stage;
        }
        for (std::size_t s = 0; s < stages.size(); ++s) {
            h = strided_extent(h, stages[s].stride);
            w = strided_extent(w, stages[s].stride);
            for (const auto& p : plan) {
                if (p.stage != s) continue;
                if (p.drop_rows >= h || p.drop_cols >= w) {
                    detail::fail(ErrorCode::ConfigError, "stage ", s, " drops ", p.drop_rows, "x", p.drop_cols,
                                 " from a ", h, "x", w, " grid");
                }
                h -= p.drop_rows;
                w -= p.drop_cols;
            }
            dims.push_back({h, w});
        }
        return dims;
    }

    void validate() const {
        if (stages.empty() || image_h == 0 || image_w == 0 || in_channels == 0 || num_classes == 0) {
            detail::fail(ErrorCode::ConfigError, "cnn config needs stages, a non-empty image and classes");
        }
        for (const auto& s : stages) {
            if (s.channels == 0 || s.blocks == 0 || s.stride == 0) {
                detail::fail(ErrorCode::ConfigError, "cnn stage channels, blocks and stride must be positive");
            }
        }
        analytic_dims(prune_plan);
    }
};

struct ConvBlockWeights {
    Tensor kernel;  // [3, 3, Cin, Cout]
    Tensor scale;   // [Cout] per-channel affine norm (inference-folded)
    Tensor bias;    // [Cout]
};

struct StageWeights {
    std::size_t stride = 1;
    std::vector<ConvBlockWeights> blocks;
};

struct CnnWeights {
    std::vector<StageWeights> stages;
    Tensor head_w;  // [C_last, num_classes]
    Tensor head_b;  // [num_classes]
};

struct CnnModel {
    CnnConfig config;
    CnnWeights weights;
};

/// 3×3 convolution, zero padding 1, via im2col and matmul. grid is [H, W, Cin].
inline Tensor conv3x3(const Tensor& grid, const Tensor& kernel, std::size_t stride) {
    detail::require_rank(grid, 3, "conv input");
    detail::require_rank(kernel, 4, "conv kernel");
    const std::size_t H = grid.dim(0), W = grid.dim(1), Cin = grid.dim(2);
    if (kernel.dim(0) != 3 || kernel.dim(1) != 3 || kernel.dim(2) != Cin) {
        detail::fail(ErrorCode::DimensionError, "kernel ", shape_str(kernel.shape()), " vs input ",
                     shape_str(grid.shape()));
    }
    if (H == 0 || W == 0) detail::fail(ErrorCode::DimensionError, "conv on empty grid");
    const std::size_t Cout = kernel.dim(3);
    const std::size_t Ho = strided_extent(H, stride), Wo = strided_extent(W, stride);
    Tensor cols({Ho * Wo, 9 * Cin});
    for (std::size_t oy = 0; oy < Ho; ++oy) {
        for (std::size_t ox = 0; ox < Wo; ++ox) {
            float* dst = cols.ptr() + (oy * Wo + ox) * 9 * Cin;
            for (std::size_t ky = 0; ky < 3; ++ky) {
                for (std::size_t kx = 0; kx < 3; ++kx, dst += Cin) {
                    const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + ky) - 1;
                    const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * stride + kx) - 1;
                    if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(H) || x >= static_cast<std::ptrdiff_t>(W)) {
                        continue;
                    }
                    std::copy_n(grid.ptr() + (static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)) * Cin,
                                Cin, dst);
                }
            }
        }
    }
    return matmul(cols, kernel.reshaped({9 * Cin, Cout})).reshaped({Ho, Wo, Cout});
}

/// Block 0 is conv(stride) + norm + ReLU and may change resolution and width;
/// later blocks are residual: ReLU(x + norm(conv(x))).
inline Tensor stage_forward(const Tensor& grid, const StageWeights& stage) {
    Tensor x = grid;
    for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
        const auto& blk = stage.blocks[b];
        Tensor y = conv3x3(x, blk.kernel, b == 0 ? stage.stride : 1);
        const std::size_t C = y.dim(2);
        if (blk.scale.size() != C || blk.bias.size() != C) {
            detail::fail(ErrorCode::DimensionError, "norm params do not match ", C, " channels");
        }
        const bool residual = b > 0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            const std::size_t c = i % C;
            float v = y[i] * blk.scale[c] + blk.bias[c];
            if (residual) v += x[i];
            y[i] = std::max(v, 0.0f);
        }
        x = std::move(y);
    }
    return x;
}

/// Per-position L2 distance between a stage's output and its input. The input is
/// first average-pooled to the output resolution (stride inferred from the dims)
/// and zero-padded or truncated to the output width.
inline Tensor stage_shift(const Tensor& before, const Tensor& after) {
    detail::require_rank(before, 3, "stage_shift before");
    detail::require_rank(after, 3, "stage_shift after");
    const std::size_t H = before.dim(0), W = before.dim(1), Cb = before.dim(2);
    const std::size_t Ho = after.dim(0), Wo = after.dim(1), Ca = after.dim(2);
    if (Ho == 0 || Wo == 0) detail::fail(ErrorCode::DimensionError, "stage_shift on empty grid");
    const std::size_t sy = (H + Ho - 1) / Ho, sx = (W + Wo - 1) / Wo;
    if (strided_extent(H, sy) != Ho || strided_extent(W, sx) != Wo) {
        detail::fail(ErrorCode::DimensionError, "stage_shift cannot align ", shape_str(before.shape()), " to ",
                     shape_str(after.shape()));
    }
    const std::size_t Cmin = std::min(Cb, Ca);
    Tensor shift({Ho, Wo});
    std::vector<double> pooled(Cmin);
    for (std::size_t oy = 0; oy < Ho; ++oy) {
        for (std::size_t ox = 0; ox < Wo; ++ox) {
            std::fill(pooled.begin(), pooled.end(), 0.0);
            std::size_t n = 0;
            for (std::size_t y = oy * sy; y < std::min(H, oy * sy + sy); ++y) {
                for (std::size_t x = ox * sx; x < std::min(W, ox * sx + sx); ++x, ++n) {
                    const float* p = before.ptr() + (y * W + x) * Cb;
                    for (std::size_t c = 0; c < Cmin; ++c) pooled[c] += p[c];
                }
            }
            const float* a = after.ptr() + (oy * Wo + ox) * Ca;
            double acc = 0.0;
            for (std::size_t c = 0; c < Ca; ++c) {
                const double b = c < Cmin ? pooled[c] / static_cast<double>(n) : 0.0;
                acc += (a[c] - b) * (a[c] - b);
            }
            shift.at(oy, ox) = static_cast<float>(std::sqrt(acc));
        }
    }
    return shift;
}

struct CnnStageTrace {
    GridDims dims_before_prune{};
    GridDims dims_after_prune{};
    Tensor shift;                    // [H, W] at stage resolution, empty when not pruned
    std::optional<LinePlan> lines;   // line-wise pruning only
};

struct CnnResult {
    Tensor logits;
    std::vector<CnnStageTrace> stages;
};

inline CnnResult cnn_forward(const Tensor& image, const CnnModel& model, const CnnPrunePlan& plan) {
    const auto& cfg = model.config;
    if (image.rank() != 3 || image.dim(0) != cfg.image_h || image.dim(1) != cfg.image_w ||
        image.dim(2) != cfg.in_channels) {
        detail::fail(ErrorCode::DimensionError, "image ", shape_str(image.shape()), " does not match cnn config");
    }
    cfg.analytic_dims(plan);

    CnnResult result;
    Tensor x = image;
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
        Tensor y = stage_forward(x, model.weights.stages[s]);
        CnnStageTrace trace;
        trace.dims_before_prune = {y.dim(0), y.dim(1)};
        const auto it = std::find_if(plan.begin(), plan.end(), [&](const StagePrune& p) { return p.stage == s; });
        if (it != plan.end() && (it->drop_rows > 0 || it->drop_cols > 0)) {
            trace.shift = stage_shift(x, y);
            if (it->mode == GridPruneMode::LineWise) {
                trace.lines = plan_line_prune(trace.shift, it->drop_rows, it->drop_cols);
                y = crop_grid(y, *trace.lines);
            } else {
                y = token_wise_prune(y, trace.shift, it->drop_cols, it->drop_rows);
            }
        }
        trace.dims_after_prune = {y.dim(0), y.dim(1)};
        result.stages.push_back(std::move(trace));
        x = std::move(y);
    }

    const std::size_t C = x.dim(2), HW = x.dim(0) * x.dim(1);
    Tensor pooled({1, C});
    for (std::size_t i = 0; i < HW; ++i) {
        for (std::size_t c = 0; c < C; ++c) pooled[c] += x[i * C + c];
    }
    for (std::size_t c = 0; c < C; ++c) pooled[c] /= static_cast<float>(HW);
    result.logits = linear(pooled, model.weights.head_w, model.weights.head_b).reshaped({cfg.num_classes});
    check_finite(result.logits, "cnn_forward");
    return result;
}

}  // namespace repshift
