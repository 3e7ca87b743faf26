// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "repshift/error.hpp"

namespace repshift {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
    std::ostringstream oss;
    oss << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        oss << (i ? "x" : "") << shape[i];
    }
    oss << ']';
    return oss.str();
}

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

//============================ instrumentation ============================
//
// Both hooks are thread-local so parallel workers never observe each other.

/// Records the shape of every tensor buffer allocated on this thread while alive.
class AllocationProbe {
public:
    AllocationProbe() : m_prev(current()) { current() = this; }
    ~AllocationProbe() { current() = m_prev; }
    AllocationProbe(const AllocationProbe&) = delete;
    AllocationProbe& operator=(const AllocationProbe&) = delete;

    const std::vector<Shape>& shapes() const { return m_shapes; }

    std::size_t largest_numel() const {
        std::size_t best = 0;
        for (const auto& s : m_shapes) best = std::max(best, shape_numel(s));
        return best;
    }

    /// True if any recorded buffer has two dimensions both equal to n.
    bool saw_square_buffer(std::size_t n) const {
        for (const auto& s : m_shapes) {
            if (std::count(s.begin(), s.end(), n) >= 2) return true;
        }
        return false;
    }

    static void record(const Shape& shape) {
        for (AllocationProbe* p = current(); p != nullptr; p = p->m_prev) {
            p->m_shapes.push_back(shape);
        }
    }

private:
    static AllocationProbe*& current() {
        thread_local AllocationProbe* probe = nullptr;
        return probe;
    }

    AllocationProbe* m_prev;
    std::vector<Shape> m_shapes;
};

/// Counts multiply-accumulate operations executed by the matrix kernels on this thread.
class MacCounter {
public:
    MacCounter() : m_prev(current()) { current() = this; }
    ~MacCounter() { current() = m_prev; }
    MacCounter(const MacCounter&) = delete;
    MacCounter& operator=(const MacCounter&) = delete;

    std::uint64_t macs() const { return m_macs; }

    static void add(std::uint64_t n) {
        for (MacCounter* c = current(); c != nullptr; c = c->m_prev) c->m_macs += n;
    }

private:
    static MacCounter*& current() {
        thread_local MacCounter* counter = nullptr;
        return counter;
    }

    MacCounter* m_prev;
    std::uint64_t m_macs = 0;
};

//============================ Tensor ============================

/// Dense row-major float32 tensor.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : m_shape(std::move(shape)), m_data(shape_numel(m_shape), 0.0f) {
        AllocationProbe::record(m_shape);
    }

    Tensor(Shape shape, std::vector<float> data) : m_shape(std::move(shape)), m_data(std::move(data)) {
        if (shape_numel(m_shape) != m_data.size()) {
            detail::fail(ErrorCode::DimensionError, "shape ", shape_str(m_shape), " needs ", shape_numel(m_shape),
                         " elements, got ", m_data.size());
        }
        AllocationProbe::record(m_shape);
    }

    Tensor(const Tensor& other) : m_shape(other.m_shape), m_data(other.m_data) {
        if (!m_data.empty()) AllocationProbe::record(m_shape);
    }
    Tensor& operator=(const Tensor& other) {
        if (this != &other) {
            m_shape = other.m_shape;
            m_data = other.m_data;
            if (!m_data.empty()) AllocationProbe::record(m_shape);
        }
        return *this;
    }
    Tensor(Tensor&&) noexcept = default;
    Tensor& operator=(Tensor&&) noexcept = default;

    static Tensor full(Shape shape, float value) {
        Tensor t(std::move(shape));
        std::fill(t.m_data.begin(), t.m_data.end(), value);
        return t;
    }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.m_data[i * n + i] = 1.0f;
        return t;
    }

    /// 2-D tensor from nested rows; all rows must have equal length.
    static Tensor from_rows(const std::vector<std::vector<float>>& rows) {
        const std::size_t cols = rows.empty() ? 0 : rows.front().size();
        std::vector<float> data;
        data.reserve(rows.size() * cols);
        for (const auto& r : rows) {
            if (r.size() != cols) detail::fail(ErrorCode::DimensionError, "ragged rows in from_rows");
            data.insert(data.end(), r.begin(), r.end());
        }
        return Tensor({rows.size(), cols}, std::move(data));
    }

    const Shape& shape() const { return m_shape; }
    std::size_t rank() const { return m_shape.size(); }
    std::size_t dim(std::size_t i) const { return m_shape.at(i); }
    std::size_t size() const { return m_data.size(); }
    bool empty() const { return m_data.empty(); }

    std::span<float> data() { return m_data; }
    std::span<const float> data() const { return m_data; }
    float* ptr() { return m_data.data(); }
    const float* ptr() const { return m_data.data(); }

    float& operator[](std::size_t i) { return m_data[i]; }
    float operator[](std::size_t i) const { return m_data[i]; }

    // 2-D accessors; row stride is the last dimension.
    float& at(std::size_t r, std::size_t c) { return m_data[r * m_shape.back() + c]; }
    float at(std::size_t r, std::size_t c) const { return m_data[r * m_shape.back() + c]; }
    std::span<float> row(std::size_t r) { return {m_data.data() + r * m_shape.back(), m_shape.back()}; }
    std::span<const float> row(std::size_t r) const { return {m_data.data() + r * m_shape.back(), m_shape.back()}; }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != m_data.size()) {
            detail::fail(ErrorCode::DimensionError, "cannot reshape ", shape_str(m_shape), " to ", shape_str(shape));
        }
        return Tensor(std::move(shape), m_data);
    }

    bool operator==(const Tensor& other) const { return m_shape == other.m_shape && m_data == other.m_data; }

private:
    Shape m_shape;
    std::vector<float> m_data;
};

inline bool bit_identical(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end(),
                      [](float x, float y) { return std::memcmp(&x, &y, sizeof(float)) == 0; });
}

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        detail::fail(ErrorCode::DimensionError, "max_abs_diff shapes ", shape_str(a.shape()), " vs ",
                     shape_str(b.shape()));
    }
    float m = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

inline void check_finite(const Tensor& t, std::string_view op) {
    for (float v : t.data()) {
        if (!std::isfinite(v)) detail::fail(ErrorCode::NonFinite, op, " produced a non-finite value");
    }
}

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, std::string_view what) {
    if (t.rank() != rank) {
        fail(ErrorCode::DimensionError, what, " expects rank ", rank, ", got ", shape_str(t.shape()));
    }
}

}  // namespace detail

//============================ kernels ============================

/// c[M×N] = a[M×K] · b[K×N]. Blocked over (j, k) for cache reuse; the per-element
/// accumulation order is always k = 0..K-1, so results are bit-reproducible and
/// independent of the blocking.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank(a, 2, "matmul lhs");
    detail::require_rank(b, 2, "matmul rhs");
    const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
    if (b.dim(0) != K) {
        detail::fail(ErrorCode::DimensionError, "matmul inner dimensions disagree: ", shape_str(a.shape()), " x ",
                     shape_str(b.shape()));
    }
    Tensor c({M, N});
    constexpr std::size_t kBlockN = 256;
    constexpr std::size_t kBlockK = 128;
    const float* pa = a.ptr();
    const float* pb = b.ptr();
    float* pc = c.ptr();
    for (std::size_t j0 = 0; j0 < N; j0 += kBlockN) {
        const std::size_t j1 = std::min(N, j0 + kBlockN);
        for (std::size_t k0 = 0; k0 < K; k0 += kBlockK) {
            const std::size_t k1 = std::min(K, k0 + kBlockK);
            for (std::size_t i = 0; i < M; ++i) {
                float* crow = pc + i * N;
                const float* arow = pa + i * K;
                for (std::size_t k = k0; k < k1; ++k) {
                    const float aik = arow[k];
                    const float* brow = pb + k * N;
                    for (std::size_t j = j0; j < j1; ++j) crow[j] += aik * brow[j];
                }
            }
        }
    }
    MacCounter::add(static_cast<std::uint64_t>(M) * K * N);
    check_finite(c, "matmul");
    return c;
}

/// x · w + bias, bias broadcast over rows. An empty bias is treated as zero.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    Tensor y = matmul(x, w);
    if (!bias.empty()) {
        if (bias.size() != y.dim(1)) {
            detail::fail(ErrorCode::DimensionError, "bias ", shape_str(bias.shape()), " does not match output ",
                         shape_str(y.shape()));
        }
        for (std::size_t i = 0; i < y.dim(0); ++i) {
            auto r = y.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
        }
    }
    return y;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    detail::require_rank(x, 2, "layer_norm");
    const std::size_t N = x.dim(0), C = x.dim(1);
    if (gamma.size() != C || beta.size() != C) {
        detail::fail(ErrorCode::DimensionError, "layer_norm width ", C, " vs gamma ", shape_str(gamma.shape()),
                     " / beta ", shape_str(beta.shape()));
    }
    if (!(eps > 0.0f)) detail::fail(ErrorCode::InvalidArgument, "layer_norm eps must be > 0");
    Tensor y({N, C});
    for (std::size_t i = 0; i < N; ++i) {
        auto in = x.row(i);
        auto out = y.row(i);
        double mean = 0.0;
        for (float v : in) mean += v;
        mean /= static_cast<double>(C);
        double var = 0.0;
        for (float v : in) var += (v - mean) * (v - mean);
        var /= static_cast<double>(C);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < C; ++j) {
            out[j] = static_cast<float>((in[j] - mean) * inv) * gamma[j] + beta[j];
        }
    }
    check_finite(y, "layer_norm");
    return y;
}

inline void softmax_inplace(std::span<float> row) {
    if (row.empty()) return;
    const float m = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (float& v : row) {
        v = std::exp(v - m);
        sum += v;
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (float& v : row) v *= inv;
}

inline Tensor softmax_rows(const Tensor& x) {
    detail::require_rank(x, 2, "softmax_rows");
    Tensor y = x;
    for (std::size_t i = 0; i < y.dim(0); ++i) softmax_inplace(y.row(i));
    return y;
}

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
inline constexpr float kGeluSqrt2OverPi = 0.7978845608028654f;
inline constexpr float kGeluCubic = 0.044715f;

inline float gelu(float x) {
    return 0.5f * x * (1.0f + std::tanh(kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x)));
}

inline Tensor gelu(const Tensor& x) {
    Tensor y = x;
    for (float& v : y.data()) v = gelu(v);
    check_finite(y, "gelu");
    return y;
}

enum class Norm { L1, L2 };

inline Tensor row_norm(const Tensor& x, Norm p) {
    detail::require_rank(x, 2, "row_norm");
    Tensor out({x.dim(0)});
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        double acc = 0.0;
        for (float v : x.row(i)) acc += p == Norm::L1 ? std::fabs(v) : static_cast<double>(v) * v;
        out[i] = static_cast<float>(p == Norm::L1 ? acc : std::sqrt(acc));
    }
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        detail::fail(ErrorCode::DimensionError, "add shapes ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
    }
    Tensor y = a;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
    return y;
}

/// Gathers the given rows of a 2-D tensor in order.
inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    detail::require_rank(x, 2, "gather_rows");
    const std::size_t C = x.dim(1);
    Tensor y({rows.size(), C});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= x.dim(0)) detail::fail(ErrorCode::InvalidArgument, "row index ", rows[i], " out of range");
        std::copy_n(x.row(rows[i]).data(), C, y.row(i).data());
    }
    return y;
}

}  // namespace repshift
