// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "repshift/importance.hpp"
#include "repshift/tensor.hpp"

namespace repshift {

//============================ schedule ============================

struct PruneCount {
    std::size_t tokens = 0;
};

struct PruneRatio {
    double fraction = 0.0;  // in (0, 1)
};

using Reduction = std::variant<PruneCount, PruneRatio>;

/// Whether a ratio applies to the live patch-token count at the scheduled layer
/// (compounding) or to the original patch count.
enum class RatioBase { Current, Original };

/// Which end of the ranking survives. Lowest exists for the reliability study.
enum class Retain { Highest, Lowest };

struct ScheduleEntry {
    std::size_t layer = 0;
    Reduction reduction = PruneCount{};
};

struct PruneSchedule {
    std::vector<ScheduleEntry> entries;
    Scorer scorer = Scorer::RepShift;
    Metric metric = Metric::L2;
    OpChoice op = OpChoice::MlpBranch;
    RatioBase ratio_base = RatioBase::Current;

    bool empty() const { return entries.empty(); }

    const ScheduleEntry* entry_for(std::size_t layer) const {
        for (const auto& e : entries) {
            if (e.layer == layer) return &e;
        }
        return nullptr;
    }

    /// Patch tokens removed at an entry given the live and original patch counts.
    /// Ratios use floor(count * fraction).
    std::size_t tokens_to_prune(const ScheduleEntry& e, std::size_t live_patches, std::size_t original_patches) const {
        if (const auto* c = std::get_if<PruneCount>(&e.reduction)) return c->tokens;
        const double f = std::get<PruneRatio>(e.reduction).fraction;
        const std::size_t base = ratio_base == RatioBase::Current ? live_patches : original_patches;
        return static_cast<std::size_t>(std::floor(static_cast<double>(base) * f));
    }

    /// Structural checks: strictly increasing layers below depth, ratios in (0, 1).
    void validate(std::size_t depth) const {
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto& e = entries[i];
            if (e.layer >= depth) {
                detail::fail(ErrorCode::ConfigError, "schedule layer ", e.layer, " outside model depth ", depth);
            }
            if (i > 0 && e.layer <= entries[i - 1].layer) {
                detail::fail(ErrorCode::ConfigError, "schedule layers must be strictly increasing");
            }
            if (const auto* r = std::get_if<PruneRatio>(&e.reduction)) {
                if (!(r->fraction > 0.0 && r->fraction < 1.0)) {
                    detail::fail(ErrorCode::ConfigError, "prune ratio ", r->fraction, " outside (0, 1)");
                }
            }
        }
    }

    /// Live patch-token count entering each layer, simulated from the schedule.
    /// Fails if any step would leave fewer than one patch token.
    std::vector<std::size_t> simulate(std::size_t depth, std::size_t patches) const {
        validate(depth);
        std::vector<std::size_t> counts(depth);
        std::size_t live = patches;
        for (std::size_t l = 0; l < depth; ++l) {
            counts[l] = live;
            if (const auto* e = entry_for(l)) {
                const std::size_t r = tokens_to_prune(*e, live, patches);
                if (r >= live) {
                    detail::fail(ErrorCode::ConfigError, "schedule prunes ", r, " of ", live,
                                 " patch tokens at layer ", l, "; at least one must survive");
                }
                live -= r;
            }
        }
        return counts;
    }
};

//============================ token state ============================

inline constexpr std::int64_t kClassTokenOrigin = -1;

struct TokenState {
    Tensor tokens;                          // [N_live, C]
    std::vector<std::int64_t> origin_index; // original patch index per row; class token = -1

    std::size_t live() const { return origin_index.size(); }
    bool has_class_token() const { return !origin_index.empty() && origin_index.front() == kClassTokenOrigin; }
    std::size_t live_patches() const { return live() - (has_class_token() ? 1 : 0); }
};

/// Indices of the `keep` best tokens in ascending order. Ties go to the lower index.
/// Tokens scored kNeverPrune are always kept and count toward `keep`.
inline std::vector<std::size_t> select_keep_indices(const ImportanceScores& scores, std::size_t keep,
                                                    Retain retain = Retain::Highest) {
    const std::size_t N = scores.size();
    if (keep < 1 || keep > N) {
        detail::fail(ErrorCode::InvalidArgument, "keep ", keep, " outside [1, ", N, "]");
    }
    std::vector<std::size_t> mandatory, ranked;
    for (std::size_t i = 0; i < N; ++i) {
        (scores.scores[i] == kNeverPrune ? mandatory : ranked).push_back(i);
    }
    if (mandatory.size() > keep) {
        detail::fail(ErrorCode::InvalidArgument, "keep ", keep, " is below the ", mandatory.size(),
                     " never-prune tokens");
    }
    const std::size_t take = keep - mandatory.size();
    const auto& s = scores.scores;
    auto better = [&](std::size_t a, std::size_t b) {
        if (s[a] != s[b]) return retain == Retain::Highest ? s[a] > s[b] : s[a] < s[b];
        return a < b;
    };
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(), better);
    ranked.resize(take);
    ranked.insert(ranked.end(), mandatory.begin(), mandatory.end());
    std::sort(ranked.begin(), ranked.end());
    return ranked;
}

inline TokenState apply_prune(const TokenState& state, std::span<const std::size_t> keep) {
    if (keep.empty()) detail::fail(ErrorCode::InvalidArgument, "pruning must keep at least one token");
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i] >= state.live()) {
            detail::fail(ErrorCode::InvalidArgument, "keep index ", keep[i], " out of range for ", state.live(),
                         " tokens");
        }
        if (i > 0 && keep[i] <= keep[i - 1]) {
            detail::fail(ErrorCode::InvalidArgument, "keep indices must be strictly increasing (duplicate or unsorted ",
                         keep[i], ")");
        }
    }
    TokenState out;
    out.tokens = gather_rows(state.tokens, keep);
    out.origin_index.reserve(keep.size());
    for (std::size_t k : keep) out.origin_index.push_back(state.origin_index[k]);
    return out;
}

//============================ grid pruning ============================

namespace detail {

/// Indices of `drop` lowest values (ties: lowest index), returned as a keep mask.
inline std::vector<bool> lowest_mask(std::span<const double> values, std::size_t drop) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<bool> keep(values.size(), true);
    for (std::size_t i = 0; i < drop; ++i) keep[order[i]] = false;
    return keep;
}

inline void require_grid(const Tensor& grid, const Tensor& shift) {
    require_rank(grid, 3, "grid");
    require_rank(shift, 2, "shift map");
    if (shift.dim(0) != grid.dim(0) || shift.dim(1) != grid.dim(1)) {
        fail(ErrorCode::DimensionError, "shift map ", shape_str(shift.shape()), " does not cover grid ",
             shape_str(grid.shape()));
    }
}

}  // namespace detail

/// Rows and columns that survive line-wise pruning, both ascending.
struct LinePlan {
    std::vector<std::size_t> rows;
    std::vector<std::size_t> cols;
};

/// Ranks rows by mean shift and columns by mean shift over the full map, and
/// drops the lowest of each.
inline LinePlan plan_line_prune(const Tensor& shift, std::size_t drop_rows, std::size_t drop_cols) {
    detail::require_rank(shift, 2, "shift map");
    const std::size_t H = shift.dim(0), W = shift.dim(1);
    if (drop_rows >= H || drop_cols >= W) {
        detail::fail(ErrorCode::InvalidArgument, "cannot drop ", drop_rows, " rows / ", drop_cols, " cols from ", H,
                     "x", W);
    }
    std::vector<double> row_mean(H, 0.0), col_mean(W, 0.0);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            row_mean[y] += shift.at(y, x);
            col_mean[x] += shift.at(y, x);
        }
    }
    for (auto& v : row_mean) v /= static_cast<double>(W);
    for (auto& v : col_mean) v /= static_cast<double>(H);
    const auto rk = detail::lowest_mask(row_mean, drop_rows);
    const auto ck = detail::lowest_mask(col_mean, drop_cols);
    LinePlan plan;
    for (std::size_t y = 0; y < H; ++y) {
        if (rk[y]) plan.rows.push_back(y);
    }
    for (std::size_t x = 0; x < W; ++x) {
        if (ck[x]) plan.cols.push_back(x);
    }
    return plan;
}

inline Tensor crop_grid(const Tensor& grid, const LinePlan& plan) {
    const std::size_t W = grid.dim(1), C = grid.dim(2);
    Tensor out({plan.rows.size(), plan.cols.size(), C});
    float* dst = out.ptr();
    for (std::size_t y : plan.rows) {
        for (std::size_t x : plan.cols) {
            std::copy_n(grid.ptr() + (y * W + x) * C, C, dst);
            dst += C;
        }
    }
    return out;
}

inline Tensor line_wise_prune(const Tensor& grid, const Tensor& shift, std::size_t drop_rows, std::size_t drop_cols) {
    detail::require_grid(grid, shift);
    return crop_grid(grid, plan_line_prune(shift, drop_rows, drop_cols));
}

/// Drops the `drop_per_row` lowest-shift tokens inside every row, repacks rows to
/// the left, then drops the `drop_per_col` lowest inside every column of the
/// repacked grid and repacks upward. Output is (H - drop_per_col) x (W - drop_per_row).
inline Tensor token_wise_prune(const Tensor& grid, const Tensor& shift, std::size_t drop_per_row,
                               std::size_t drop_per_col) {
    detail::require_grid(grid, shift);
    const std::size_t H = grid.dim(0), W = grid.dim(1), C = grid.dim(2);
    if (drop_per_row >= W || drop_per_col >= H) {
        detail::fail(ErrorCode::InvalidArgument, "cannot drop ", drop_per_row, " per row / ", drop_per_col,
                     " per column from ", H, "x", W);
    }
    const std::size_t W2 = W - drop_per_row, H2 = H - drop_per_col;

    Tensor mid({H, W2, C});
    std::vector<double> mid_shift(H * W2);
    std::vector<double> line(W);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) line[x] = shift.at(y, x);
        const auto keep = detail::lowest_mask(line, drop_per_row);
        std::size_t out_x = 0;
        for (std::size_t x = 0; x < W; ++x) {
            if (!keep[x]) continue;
            std::copy_n(grid.ptr() + (y * W + x) * C, C, mid.ptr() + (y * W2 + out_x) * C);
            mid_shift[y * W2 + out_x] = line[x];
            ++out_x;
        }
    }

    Tensor out({H2, W2, C});
    std::vector<double> col(H);
    for (std::size_t x = 0; x < W2; ++x) {
        for (std::size_t y = 0; y < H; ++y) col[y] = mid_shift[y * W2 + x];
        const auto keep = detail::lowest_mask(col, drop_per_col);
        std::size_t out_y = 0;
        for (std::size_t y = 0; y < H; ++y) {
            if (!keep[y]) continue;
            std::copy_n(mid.ptr() + (y * W2 + x) * C, C, out.ptr() + (out_y * W2 + x) * C);
            ++out_y;
        }
    }
    return out;
}

}  // namespace repshift
