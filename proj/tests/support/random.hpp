// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <random>

#include "repshift/attention.hpp"
#include "repshift/tensor.hpp"

namespace repshift::test_support {

inline Tensor uniform(std::mt19937_64& rng, Shape shape, float lo = -1.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> d(lo, hi);
    Tensor t(std::move(shape));
    for (float& v : t.data()) v = d(rng);
    return t;
}

inline AttentionWeights random_attention(std::mt19937_64& rng, std::size_t C, std::size_t heads, bool bias = true) {
    const float s = 1.0f / std::sqrt(static_cast<float>(C));
    AttentionWeights w;
    w.qkv_proj = uniform(rng, {C, 3 * C}, -2 * s, 2 * s);
    w.out_proj = uniform(rng, {C, C}, -s, s);
    if (bias) {
        w.qkv_bias = uniform(rng, {3 * C}, -0.1f, 0.1f);
        w.out_bias = uniform(rng, {C}, -0.1f, 0.1f);
    }
    w.num_heads = heads;
    return w;
}

}  // namespace repshift::test_support
