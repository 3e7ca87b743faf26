// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "repshift/vit_model.hpp"

namespace repshift {

// Costs are multiply-accumulate counts, the convention behind the usual
// "GFLOPs" column for vision models. Per encoder block with N tokens, width C
// and MLP expansion r:
//
//   qkv projection      3·N·C²
//   output projection     N·C²
//   Q·Kᵀ                  N²·C
//   A·V                   N²·C
//   MLP (two linears)   2·r·N·C²     (8·N·C² for r = 4)
//
// Patch embedding, head and elementwise work (norms, GELU, softmax) are not
// part of the estimate.

inline std::uint64_t block_macs(std::uint64_t n, std::uint64_t c, std::uint64_t mlp_ratio = 4) {
    const std::uint64_t attention = 4 * n * c * c + 2 * n * n * c;
    const std::uint64_t mlp = 2 * mlp_ratio * n * c * c;
    return attention + mlp;
}

/// Estimated GFLOPs (10⁹ MACs) given the token count entering every block.
inline double estimate_flops(const VitConfig& config, std::span<const std::size_t> tokens_per_layer) {
    std::uint64_t total = 0;
    for (std::size_t n : tokens_per_layer) total += block_macs(n, config.width, config.mlp_ratio);
    return static_cast<double>(total) / 1e9;
}

/// Token counts entering each block (class token included) predicted from a schedule.
/// A Baseline run or an empty schedule keeps every token.
inline std::vector<std::size_t> scheduled_tokens(const VitConfig& config, const PruneSchedule& schedule,
                                                 bool pruning = true) {
    std::vector<std::size_t> counts(config.depth, config.num_patches());
    if (pruning && !schedule.empty()) counts = schedule.simulate(config.depth, config.num_patches());
    const std::size_t extra = config.use_class_token ? 1 : 0;
    for (auto& n : counts) n += extra;
    return counts;
}

/// Token counts entering each block, read from a forward trace.
inline std::vector<std::size_t> tokens_per_layer(const std::vector<BlockTrace>& traces) {
    std::vector<std::size_t> out;
    out.reserve(traces.size());
    for (const auto& t : traces) out.push_back(t.n_tokens_in);
    return out;
}

}  // namespace repshift
