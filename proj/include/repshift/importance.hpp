// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string_view>

#include "repshift/attention.hpp"
#include "repshift/log.hpp"
#include "repshift/tensor.hpp"

namespace repshift {

enum class Scorer { RepShift, ClsAttention, MeanAttention };
enum class Metric { L1, L2, Cosine };
/// Which transformation F the shift is measured across.
enum class OpChoice { AttnBranch, MlpBranch, FullBlock };

constexpr std::string_view to_string(Scorer s) {
    switch (s) {
    case Scorer::RepShift: return "rep_shift";
    case Scorer::ClsAttention: return "cls_attention";
    case Scorer::MeanAttention: return "mean_attention";
    }
    return "?";
}

constexpr std::string_view to_string(Metric m) {
    switch (m) {
    case Metric::L1: return "l1";
    case Metric::L2: return "l2";
    case Metric::Cosine: return "cosine";
    }
    return "?";
}

constexpr std::string_view to_string(OpChoice o) {
    switch (o) {
    case OpChoice::AttnBranch: return "attn";
    case OpChoice::MlpBranch: return "mlp";
    case OpChoice::FullBlock: return "block";
    }
    return "?";
}

/// Marks tokens that must never be pruned (the class token).
inline constexpr float kNeverPrune = std::numeric_limits<float>::infinity();

struct ImportanceScores {
    Tensor scores;  // [N_live]
    Scorer scorer = Scorer::RepShift;
    std::optional<Metric> metric;
    std::optional<OpChoice> op;

    std::size_t size() const { return scores.size(); }
};

/// Per-token distance between the branch output (`after`, without the residual
/// add) and the branch input (`before`).
///
/// Cosine distance on a zero-norm row is defined as 1.
inline ImportanceScores representation_shift(const Tensor& before, const Tensor& after, Metric metric) {
    detail::require_rank(before, 2, "representation_shift before");
    if (before.shape() != after.shape()) {
        detail::fail(ErrorCode::DimensionError, "representation_shift shapes ", shape_str(before.shape()), " vs ",
                     shape_str(after.shape()));
    }
    const std::size_t N = before.dim(0), C = before.dim(1);
    ImportanceScores out{Tensor({N}), Scorer::RepShift, metric, std::nullopt};
    for (std::size_t i = 0; i < N; ++i) {
        const float* b = before.ptr() + i * C;
        const float* a = after.ptr() + i * C;
        double acc = 0.0;
        switch (metric) {
        case Metric::L1:
            for (std::size_t j = 0; j < C; ++j) acc += std::fabs(a[j] - b[j]);
            break;
        case Metric::L2:
            for (std::size_t j = 0; j < C; ++j) acc += static_cast<double>(a[j] - b[j]) * (a[j] - b[j]);
            acc = std::sqrt(acc);
            break;
        case Metric::Cosine: {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (std::size_t j = 0; j < C; ++j) {
                dot += static_cast<double>(a[j]) * b[j];
                na += static_cast<double>(a[j]) * a[j];
                nb += static_cast<double>(b[j]) * b[j];
            }
            if (na == 0.0 || nb == 0.0) {
                log().debug("cosine shift: zero-norm row {} scored as orthogonal", i);
                acc = 1.0;
            } else {
                acc = std::clamp(1.0 - dot / std::sqrt(na * nb), 0.0, 2.0);
            }
            break;
        }
        }
        out.scores[i] = static_cast<float>(acc);
    }
    return out;
}

namespace detail {

inline const Tensor& require_map(const AttentionArtifacts& artifacts) {
    if (!artifacts.attn_map) fail(ErrorCode::FusedIncompatible, kFusedIncompatibleReason);
    return *artifacts.attn_map;
}

}  // namespace detail

/// Class-token query row of the attention map, averaged over heads. Token 0 is
/// the class token and receives the never-prune sentinel.
inline ImportanceScores cls_attention_score(const AttentionArtifacts& artifacts) {
    const Tensor& map = detail::require_map(artifacts);
    const std::size_t H = map.dim(0), N = map.dim(1);
    ImportanceScores out{Tensor({N}), Scorer::ClsAttention, std::nullopt, std::nullopt};
    for (std::size_t h = 0; h < H; ++h) {
        const float* row0 = map.ptr() + h * N * N;
        for (std::size_t j = 0; j < N; ++j) out.scores[j] += row0[j];
    }
    for (std::size_t j = 0; j < N; ++j) out.scores[j] /= static_cast<float>(H);
    out.scores[0] = kNeverPrune;
    return out;
}

/// Attention received by each token: column means of the map, averaged over heads.
inline ImportanceScores mean_attention_score(const AttentionArtifacts& artifacts) {
    const Tensor& map = detail::require_map(artifacts);
    const std::size_t H = map.dim(0), N = map.dim(1);
    ImportanceScores out{Tensor({N}), Scorer::MeanAttention, std::nullopt, std::nullopt};
    for (std::size_t h = 0; h < H; ++h) {
        const float* A = map.ptr() + h * N * N;
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t j = 0; j < N; ++j) out.scores[j] += A[i * N + j];
        }
    }
    const float denom = static_cast<float>(H) * static_cast<float>(N);
    for (std::size_t j = 0; j < N; ++j) out.scores[j] /= denom;
    return out;
}

}  // namespace repshift
