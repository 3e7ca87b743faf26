// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "repshift/attention.hpp"
#include "repshift/compression.hpp"
#include "repshift/importance.hpp"
#include "repshift/tensor.hpp"

namespace repshift {

enum class Mode { Baseline, AttnScore, RepShift };
enum class AttnImpl { Naive, Fused };

constexpr std::string_view to_string(Mode m) {
    switch (m) {
    case Mode::Baseline: return "baseline";
    case Mode::AttnScore: return "attn_score";
    case Mode::RepShift: return "rep_shift";
    }
    return "?";
}

constexpr std::string_view to_string(AttnImpl a) { return a == AttnImpl::Naive ? "naive" : "fused"; }

struct VitConfig {
    std::size_t image_h = 224;
    std::size_t image_w = 224;
    std::size_t patch = 16;
    std::size_t depth = 12;
    std::size_t width = 384;
    std::size_t heads = 6;
    std::size_t num_classes = 1000;
    std::size_t mlp_ratio = 4;
    bool use_class_token = true;
    float ln_eps = 1e-6f;

    bool operator==(const VitConfig&) const = default;

    std::size_t grid_h() const { return image_h / patch; }
    std::size_t grid_w() const { return image_w / patch; }
    std::size_t num_patches() const { return grid_h() * grid_w(); }
    std::size_t num_tokens() const { return num_patches() + (use_class_token ? 1 : 0); }
    std::size_t patch_dim() const { return patch * patch * 3; }
    std::size_t hidden() const { return width * mlp_ratio; }

    void validate() const {
        if (patch == 0 || image_h % patch != 0 || image_w % patch != 0 || image_h == 0 || image_w == 0) {
            detail::fail(ErrorCode::ConfigError, "image ", image_h, "x", image_w, " not divisible by patch ", patch);
        }
        if (depth == 0 || width == 0 || num_classes == 0 || mlp_ratio == 0) {
            detail::fail(ErrorCode::ConfigError, "depth, width, num_classes and mlp_ratio must be positive");
        }
        if (heads == 0 || width % heads != 0) {
            detail::fail(ErrorCode::ConfigError, "width ", width, " not divisible by heads ", heads);
        }
        if (!(ln_eps > 0.0f)) detail::fail(ErrorCode::ConfigError, "ln_eps must be > 0");
    }
};

struct MlpWeights {
    Tensor w1;  // [C, hidden]
    Tensor b1;  // [hidden]
    Tensor w2;  // [hidden, C]
    Tensor b2;  // [C]
};

struct BlockWeights {
    Tensor norm1_w, norm1_b;
    AttentionWeights attn;
    Tensor norm2_w, norm2_b;
    MlpWeights mlp;
};

struct VitWeights {
    Tensor patch_w;    // [P*P*3, C], patch pixels flattened (py, px, channel)
    Tensor patch_b;    // [C]
    Tensor pos_embed;  // [num_tokens, C], class token first when present
    Tensor cls_token;  // [1, C] or empty
    std::vector<BlockWeights> blocks;
    Tensor norm_w, norm_b;
    Tensor head_w;  // [C, num_classes]
    Tensor head_b;  // [num_classes]
};

struct VitModel {
    VitConfig config;
    VitWeights weights;
};

struct BlockTrace {
    std::size_t n_tokens_in = 0;
    std::size_t n_tokens_out = 0;
    std::optional<ImportanceScores> scores;
    std::optional<OpChoice> shift_source;
};

/// How a block computes and scores. scorer/metric/op only matter when it prunes.
struct BlockOptions {
    Mode mode = Mode::Baseline;
    AttnImpl impl = AttnImpl::Fused;
    std::size_t tile_size = kDefaultTileSize;
    Scorer scorer = Scorer::RepShift;
    Metric metric = Metric::L2;
    OpChoice op = OpChoice::MlpBranch;
    float ln_eps = 1e-6f;
};

/// A schedule entry resolved to a token count for one block.
struct BlockPrune {
    std::size_t prune_count = 0;  // patch tokens to remove
    Retain retain = Retain::Highest;
};

inline Tensor mlp_forward(const Tensor& x, const MlpWeights& w) {
    return linear(gelu(linear(x, w.w1, w.b1)), w.w2, w.b2);
}

/// x' = SA(LN(x)) + x; x̂ = MLP(LN(x')) + x'. When `prune` is set and the mode is
/// not Baseline, the block scores its tokens and prunes its own output.
inline std::pair<TokenState, BlockTrace> block_forward(const TokenState& state, const BlockWeights& w,
                                                       const BlockOptions& opt,
                                                       std::optional<BlockPrune> prune = std::nullopt) {
    if (opt.mode == Mode::AttnScore && opt.impl == AttnImpl::Fused) {
        detail::fail(ErrorCode::FusedIncompatible, kFusedIncompatibleReason);
    }
    const bool scoring = prune.has_value() && opt.mode != Mode::Baseline;
    const Tensor& x = state.tokens;

    const Tensor ln1 = layer_norm(x, w.norm1_w, w.norm1_b, opt.ln_eps);
    AttentionArtifacts attn = opt.impl == AttnImpl::Naive
                                  ? naive_attention(ln1, w.attn, scoring && opt.mode == Mode::AttnScore)
                                  : fused_attention(ln1, w.attn, opt.tile_size);
    Tensor x1 = add(x, attn.output);
    const Tensor ln2 = layer_norm(x1, w.norm2_w, w.norm2_b, opt.ln_eps);
    const Tensor mlp = mlp_forward(ln2, w.mlp);
    Tensor out = add(x1, mlp);

    BlockTrace trace;
    trace.n_tokens_in = state.live();
    trace.n_tokens_out = state.live();
    if (!scoring) return {TokenState{std::move(out), state.origin_index}, std::move(trace)};

    ImportanceScores scores;
    if (opt.mode == Mode::RepShift) {
        switch (opt.op) {
        case OpChoice::AttnBranch: scores = representation_shift(x, attn.output, opt.metric); break;
        case OpChoice::MlpBranch: scores = representation_shift(x1, mlp, opt.metric); break;
        case OpChoice::FullBlock: scores = representation_shift(x, out, opt.metric); break;
        }
        scores.op = opt.op;
        trace.shift_source = opt.op;
    } else if (opt.scorer == Scorer::ClsAttention) {
        if (!state.has_class_token()) {
            detail::fail(ErrorCode::ConfigError, "cls_attention scoring needs a class token; use mean_attention");
        }
        scores = cls_attention_score(attn);
    } else if (opt.scorer == Scorer::MeanAttention) {
        scores = mean_attention_score(attn);
    } else {
        detail::fail(ErrorCode::ConfigError, "attn_score mode needs an attention scorer, got ", to_string(opt.scorer));
    }
    if (state.has_class_token()) scores.scores[0] = kNeverPrune;

    const std::size_t patches = state.live_patches();
    if (prune->prune_count >= patches) {
        detail::fail(ErrorCode::ConfigError, "cannot prune ", prune->prune_count, " of ", patches, " patch tokens");
    }
    const auto keep = select_keep_indices(scores, state.live() - prune->prune_count, prune->retain);
    TokenState next = apply_prune(TokenState{std::move(out), state.origin_index}, keep);
    trace.n_tokens_out = next.live();
    trace.scores = std::move(scores);
    return {std::move(next), std::move(trace)};
}

//============================ full model ============================

struct ForwardOptions {
    Mode mode = Mode::Baseline;
    AttnImpl impl = AttnImpl::Fused;
    std::size_t tile_size = kDefaultTileSize;
    Retain retain = Retain::Highest;
};

struct ForwardResult {
    Tensor logits;  // [num_classes]
    std::vector<BlockTrace> traces;
    std::vector<std::int64_t> final_origin;
};

/// Non-overlapping P×P patches of an [H, W, 3] image, one flattened patch per row.
inline Tensor extract_patches(const Tensor& image, std::size_t patch) {
    detail::require_rank(image, 3, "image");
    const std::size_t H = image.dim(0), W = image.dim(1), Ch = image.dim(2);
    const std::size_t gh = H / patch, gw = W / patch;
    Tensor out({gh * gw, patch * patch * Ch});
    float* dst = out.ptr();
    for (std::size_t py = 0; py < gh; ++py) {
        for (std::size_t px = 0; px < gw; ++px) {
            for (std::size_t y = 0; y < patch; ++y) {
                const float* src = image.ptr() + ((py * patch + y) * W + px * patch) * Ch;
                dst = std::copy_n(src, patch * Ch, dst);
            }
        }
    }
    return out;
}

/// Patch projection + positional embedding (+ class token). Patch i keeps origin i.
inline TokenState embed_image(const Tensor& image, const VitModel& model) {
    const auto& cfg = model.config;
    const auto& w = model.weights;
    if (image.rank() != 3 || image.dim(0) != cfg.image_h || image.dim(1) != cfg.image_w || image.dim(2) != 3) {
        detail::fail(ErrorCode::DimensionError, "image ", shape_str(image.shape()), " does not match config ",
                     cfg.image_h, "x", cfg.image_w, "x3");
    }
    const Tensor patches = linear(extract_patches(image, cfg.patch), w.patch_w, w.patch_b);
    const std::size_t C = cfg.width, offset = cfg.use_class_token ? 1 : 0;
    TokenState state{Tensor({cfg.num_tokens(), C}), {}};
    state.origin_index.reserve(cfg.num_tokens());
    if (cfg.use_class_token) {
        for (std::size_t j = 0; j < C; ++j) state.tokens.at(0, j) = w.cls_token[j] + w.pos_embed.at(0, j);
        state.origin_index.push_back(kClassTokenOrigin);
    }
    for (std::size_t i = 0; i < patches.dim(0); ++i) {
        for (std::size_t j = 0; j < C; ++j) {
            state.tokens.at(i + offset, j) = patches.at(i, j) + w.pos_embed.at(i + offset, j);
        }
        state.origin_index.push_back(static_cast<std::int64_t>(i));
    }
    return state;
}

/// Final norm, then the class-token row (or the mean over live tokens when the
/// model has no class token) through the linear head.
inline Tensor classify(const TokenState& state, const VitModel& model) {
    const auto& w = model.weights;
    const Tensor normed = layer_norm(state.tokens, w.norm_w, w.norm_b, model.config.ln_eps);
    const std::size_t C = normed.dim(1);
    Tensor pooled({1, C});
    if (model.config.use_class_token) {
        std::copy_n(normed.row(0).data(), C, pooled.ptr());
    } else {
        for (std::size_t i = 0; i < normed.dim(0); ++i) {
            for (std::size_t j = 0; j < C; ++j) pooled[j] += normed.at(i, j);
        }
        for (std::size_t j = 0; j < C; ++j) pooled[j] /= static_cast<float>(normed.dim(0));
    }
    return linear(pooled, w.head_w, w.head_b).reshaped({model.config.num_classes});
}

inline ForwardResult forward(const Tensor& image, const VitModel& model, const PruneSchedule& schedule,
                             const ForwardOptions& opt = {}) {
    const auto& cfg = model.config;
    const bool pruning = opt.mode != Mode::Baseline && !schedule.empty();
    if (opt.mode == Mode::AttnScore && opt.impl == AttnImpl::Fused) {
        detail::fail(ErrorCode::FusedIncompatible, kFusedIncompatibleReason);
    }
    if (pruning) {
        if (opt.mode == Mode::RepShift && schedule.scorer != Scorer::RepShift) {
            detail::fail(ErrorCode::ConfigError, "rep_shift mode with scorer ", to_string(schedule.scorer));
        }
        if (opt.mode == Mode::AttnScore && schedule.scorer == Scorer::RepShift) {
            detail::fail(ErrorCode::ConfigError, "attn_score mode needs cls_attention or mean_attention scorer");
        }
        schedule.simulate(cfg.depth, cfg.num_patches());
    }

    BlockOptions bopt{opt.mode, opt.impl, opt.tile_size, schedule.scorer, schedule.metric, schedule.op, cfg.ln_eps};
    TokenState state = embed_image(image, model);
    ForwardResult result;
    result.traces.reserve(cfg.depth);
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        std::optional<BlockPrune> prune;
        if (pruning) {
            if (const auto* e = schedule.entry_for(l)) {
                prune = BlockPrune{schedule.tokens_to_prune(*e, state.live_patches(), cfg.num_patches()), opt.retain};
            }
        }
        auto [next, trace] = block_forward(state, model.weights.blocks[l], bopt, prune);
        state = std::move(next);
        result.traces.push_back(std::move(trace));
    }
    result.logits = classify(state, model);
    check_finite(result.logits, "forward");
    result.final_origin = std::move(state.origin_index);
    return result;
}

inline std::size_t argmax(const Tensor& logits) {
    return static_cast<std::size_t>(std::max_element(logits.data().begin(), logits.data().end()) -
                                    logits.data().begin());
}

}  // namespace repshift
