// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Optional arguments select criteria by name substring.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "repshift/repshift.hpp"

using namespace repshift;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    const char* name;
    std::function<Outcome()> run;
};

template <class... Args>
std::string fmt(const char* f, Args... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor uniform(Rng& rng, Shape shape, float lo = -1.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> d(lo, hi);
    Tensor t(std::move(shape));
    for (float& v : t.data()) v = d(rng);
    return t;
}

AttentionWeights random_attention(Rng& rng, std::size_t C, std::size_t heads) {
    const float s = 1.0f / std::sqrt(static_cast<float>(C));
    AttentionWeights w;
    w.qkv_proj = uniform(rng, {C, 3 * C}, -2 * s, 2 * s);
    w.qkv_bias = uniform(rng, {3 * C}, -0.1f, 0.1f);
    w.out_proj = uniform(rng, {C, C}, -s, s);
    w.out_bias = uniform(rng, {C}, -0.1f, 0.1f);
    w.num_heads = heads;
    return w;
}

template <class Fn>
std::optional<ErrorCode> error_code_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

//------------------------------------------------------------------------------

Outcome fused_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(20260101);
    float worst = 0.0f;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t heads = std::size_t{1} << (rng() % 3);
        const std::size_t C = heads * (1 + rng() % (128 / heads));
        const std::size_t N = 1 + rng() % 256;
        const std::size_t tiles[] = {1, 3, 16, 64, N + 1};
        const std::size_t tile = tiles[rng() % 5];
        const AttentionWeights w = random_attention(rng, C, heads);
        const Tensor x = uniform(rng, {N, C}, -2.0f, 2.0f);
        const float diff = max_abs_diff(fused_attention(x, w, tile).output, naive_attention(x, w, false).output);
        worst = std::max(worst, diff);
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-5f && secs < 60.0, fmt("100 configs, max |fused - naive| = %.3g (< 1e-5), %.1f s (< 60 s)", worst, secs)};
}

Outcome no_map_guarantee() {
    // Widths chosen so no weight or activation dimension equals a live token count.
    struct Case {
        VitConfig config;
        PruneSchedule schedule;
    };
    std::vector<Case> cases;
    PruneSchedule counts;
    counts.entries = {{0, PruneCount{15}}, {2, PruneCount{15}}};
    PruneSchedule ratios;
    ratios.entries = {{1, PruneRatio{0.2}}, {3, PruneRatio{0.2}}};
    cases.push_back({VitConfig{40, 40, 4, 4, 24, 2, 2, 4, false}, counts});
    cases.push_back({VitConfig{40, 40, 4, 4, 24, 2, 2, 4, true}, counts});
    cases.push_back({VitConfig{56, 56, 4, 4, 24, 2, 2, 4, true}, ratios});
    cases.push_back({VitConfig{56, 56, 4, 4, 24, 2, 2, 4, false}, PruneSchedule{}});
    std::size_t checked = 0;
    bool ok = true;
    for (const auto& c : cases) {
        for (OpChoice op : {OpChoice::AttnBranch, OpChoice::MlpBranch, OpChoice::FullBlock}) {
            PruneSchedule s = c.schedule;
            s.op = op;
            const VitModel m = make_synthetic_model(3, c.config, SyntheticInit::Random);
            Rng rng(4);
            const Tensor img = uniform(rng, {c.config.image_h, c.config.image_w, 3});
            AllocationProbe probe;
            const auto res = forward(img, m, s, {Mode::RepShift, AttnImpl::Fused, 16});
            for (const auto& t : res.traces) {
                ok &= !probe.saw_square_buffer(t.n_tokens_in) && !probe.saw_square_buffer(t.n_tokens_out);
                ++checked;
            }
        }
    }
    // Positive control: the naive path does allocate the map.
    const VitModel m = make_synthetic_model(5, cases[0].config, SyntheticInit::Random);
    Rng rng(6);
    const Tensor img = uniform(rng, {40, 40, 3});
    bool control = false;
    {
        AllocationProbe probe;
        forward(img, m, counts, {Mode::RepShift, AttnImpl::Naive});
        control = probe.saw_square_buffer(100);
    }
    PruneSchedule attn = counts;
    attn.scorer = Scorer::MeanAttention;
    const bool incompatible =
        error_code_of([&] { forward(img, m, attn, {Mode::AttnScore, AttnImpl::Fused}); }) == ErrorCode::FusedIncompatible;
    return {ok && control && incompatible,
            fmt("%zu fused layer traces without an NxN buffer, naive control %s, AttnScore+Fused %s", checked,
                control ? "sees the map" : "MISSED the map", incompatible ? "raises FusedIncompatible" : "did not raise")};
}

Outcome shift_correctness() {
    struct Hand {
        std::vector<std::vector<float>> before, after;
        double l1[3], l2[3], cos[3];
    };
    const Hand cases[] = {
        {{{1, 0}, {0, 2}, {3, 4}}, {{0, 1}, {0, 2}, {6, 8}}, {2, 0, 7}, {1.41421356, 0, 5}, {1, 0, 0}},
        {{{1, 1}, {2, -1}, {0.5f, 0}},
         {{-1, -1}, {1, 2}, {0.5f, 1.5f}},
         {4, 4, 1.5},
         {2.82842712, 3.16227766, 1.5},
         {2, 1, 0.683772234}},
    };
    double worst = 0.0;
    for (const auto& h : cases) {
        const Tensor b = Tensor::from_rows(h.before), a = Tensor::from_rows(h.after);
        const auto l1 = representation_shift(b, a, Metric::L1);
        const auto l2 = representation_shift(b, a, Metric::L2);
        const auto cs = representation_shift(b, a, Metric::Cosine);
        for (std::size_t i = 0; i < 3; ++i) {
            worst = std::max({worst, std::fabs(l1.scores[i] - h.l1[i]), std::fabs(l2.scores[i] - h.l2[i]),
                              std::fabs(cs.scores[i] - h.cos[i])});
        }
    }
    Rng rng(7);
    bool identity_zero = true;
    for (int t = 0; t < 20; ++t) {
        const Tensor x = uniform(rng, {1 + rng() % 40, 1 + rng() % 16}, -5.0f, 5.0f);
        for (Metric m : {Metric::L1, Metric::L2, Metric::Cosine}) {
            const auto s = representation_shift(x, x, m);
            for (float v : s.scores.data()) identity_zero &= v == 0.0f;
        }
    }
    bool equivariant = true;
    for (int t = 0; t < 50; ++t) {
        const std::size_t N = 2 + rng() % 40;
        const Tensor a = uniform(rng, {N, 9}), b = uniform(rng, {N, 9});
        std::vector<std::size_t> perm(N);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        for (Metric m : {Metric::L1, Metric::L2, Metric::Cosine}) {
            const auto s = representation_shift(a, b, m);
            const auto p = representation_shift(gather_rows(a, perm), gather_rows(b, perm), m);
            for (std::size_t i = 0; i < N; ++i) equivariant &= p.scores[i] == s.scores[perm[i]];
        }
    }
    return {worst < 1e-6 && identity_zero && equivariant,
            fmt("hand cases max error %.2g (< 1e-6), identity %s, 50 permutations %s", worst,
                identity_zero ? "exactly 0" : "NONZERO", equivariant ? "equivariant" : "NOT equivariant")};
}

Outcome affine_invariance() {
    // Scores on a dyadic grid with power-of-two scales and integer offsets, so
    // a*s + b is exact in float and ties survive the map.
    Rng rng(8);
    std::size_t mismatches = 0, with_ties = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng() % 200;
        Tensor s({n}), t({n});
        for (float& v : s.data()) v = static_cast<float>(static_cast<int>(rng() % 2048) - 1024) * 0.125f;
        const float a = std::exp2(static_cast<float>(static_cast<int>(rng() % 9) - 4));
        const float b = static_cast<float>(static_cast<int>(rng() % 2001) - 1000);
        for (std::size_t i = 0; i < n; ++i) t[i] = a * s[i] + b;
        std::vector<float> sorted(s.data().begin(), s.data().end());
        std::sort(sorted.begin(), sorted.end());
        with_ties += std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
        const std::size_t keep = 1 + rng() % n;
        ImportanceScores ss, ts;
        ss.scores = s;
        ts.scores = t;
        for (Retain r : {Retain::Highest, Retain::Lowest}) {
            mismatches += select_keep_indices(ss, keep, r) != select_keep_indices(ts, keep, r);
        }
    }
    return {mismatches == 0, fmt("1000 trials x 2 retention orders, %zu mismatches, %zu trials with tied scores",
                                 mismatches, with_ties)};
}

Outcome reliability() {
    const auto t0 = std::chrono::steady_clock::now();
    const SyntheticSpec spec;
    const VitConfig& c = std::get<VitConfig>(spec.arch);
    const VitModel m = make_synthetic_model(spec.seed, c);
    const PlantedFixture f = make_planted_fixture(1, 128, c, c.num_patches() / 8);
    const double baseline = evaluate(m, f, {}, {Mode::Baseline}, 1).accuracy;
    std::string per_layer;
    double min_gap = 1.0;
    for (std::size_t layer = 0; layer < c.depth; ++layer) {
        const auto r = run_reliability(m, f, layer, 0.5);
        min_gap = std::min(min_gap, r.gap());
        per_layer += fmt(" L%zu %.0f/%.0f", layer, 100 * r.top_acc, 100 * r.bottom_acc);
    }
    const double secs = seconds_since(t0);
    return {min_gap >= 0.2 && secs < 120.0,
            fmt("top/bottom-50%% accuracy, %zu items, baseline %.0f%%, min gap %.1f pp (>= 20), %.1f s (< 120 s);",
                f.size(), 100 * baseline, 100 * min_gap, secs) +
                per_layer};
}

Outcome speedup() {
    const VitConfig c{128, 128, 4, 12, 384, 6, 2, 4, false};
    const VitModel m = make_synthetic_model(11, c);
    PruneSchedule s;
    s.entries = {{1, PruneRatio{0.2}}, {4, PruneRatio{0.2}}, {7, PruneRatio{0.2}}};
    BenchOptions opt;
    opt.batch = 1;
    opt.warmup = 2;
    opt.repeats = 5;
    opt.mode = Mode::Baseline;
    opt.name = "baseline-fused";
    const BenchReport base = run_benchmark(m, {}, opt);
    opt.mode = Mode::RepShift;
    opt.name = "rep-shift";
    BenchReport run = run_benchmark(m, s, opt);
    set_speedup(run, base);
    if (!base.ok() || !run.ok()) return {false, "benchmark failed: " + (base.ok() ? run : base).error->message};
    const double measured = run.gflops_measured / base.gflops_measured;
    const double estimated = run.gflops_estimated / base.gflops_estimated;
    const double rel = std::fabs(measured / estimated - 1.0);
    return {*run.speedup >= 1.3 && rel <= 0.1,
            fmt("N=%zu C=%zu depth %zu, 20%% at [1,4,7]: %.3f vs %.3f items/s, speedup %.2fx (>= 1.3); "
                "FLOP ratio measured %.4f vs estimated %.4f, off by %.2f%% (<= 10%%)",
                c.num_patches(), c.width, c.depth, run.throughput, base.throughput, *run.speedup, measured, estimated,
                100 * rel)};
}

Outcome ablation_grid() {
    const SyntheticSpec spec;
    const VitConfig& c = std::get<VitConfig>(spec.arch);
    const VitModel m = make_synthetic_model(spec.seed, c);
    const PlantedFixture f = make_planted_fixture(2, 32, c, c.num_patches() / 8);
    AblationOptions opt;
    opt.axis = AblationAxis::Full;
    opt.layers = {0, 2, 4, 6, 8};
    AblationTable t;
    try {
        t = run_ablation(m, f, opt);
    } catch (const Error& e) {
        return {false, std::string("ablation raised ") + e.what()};
    }
    std::size_t complete = 0;
    double lo = 1.0, hi = 0.0;
    std::vector<std::string> seen;
    for (const auto& r : t.rows) {
        const bool ok = r.predictions.size() == f.size() && std::isfinite(r.accuracy) && r.layers.size() == 1;
        complete += ok;
        lo = std::min(lo, r.accuracy);
        hi = std::max(hi, r.accuracy);
        seen.push_back(std::string(to_string(r.op)) + "/" + std::string(to_string(r.metric)) + "/" +
                       std::to_string(r.layers.front()));
    }
    std::sort(seen.begin(), seen.end());
    const bool distinct = std::adjacent_find(seen.begin(), seen.end()) == seen.end();
    return {t.rows.size() == 45 && complete == 45 && distinct,
            fmt("%zu/45 distinct op x metric x layer cells complete, accuracy range %.2f-%.2f", complete, lo, hi)};
}

Outcome cnn_shape_law() {
    CnnConfig c;
    c.image_h = c.image_w = 16;
    c.in_channels = 3;
    c.num_classes = 3;
    c.stages = {{8, 1, 1}, {16, 1, 2}};
    const CnnPrunePlan plan{{0, 2, 2, GridPruneMode::LineWise}, {1, 1, 1, GridPruneMode::LineWise}};
    const auto analytic = c.analytic_dims(plan);
    const bool law = analytic == std::vector<GridDims>{{14, 14}, {6, 6}};
    const CnnModel m = make_synthetic_cnn(12, c);
    Rng rng(13);
    std::size_t shapes_ok = 0, signal_kept = 0, labels_ok = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto item = make_planted_grid_item(rng, c, 1 + static_cast<std::size_t>(rng() % 4));
        const auto res = cnn_forward(item.image, m, plan);
        shapes_ok += res.stages[0].dims_after_prune == analytic[0] && res.stages[1].dims_after_prune == analytic[1];
        labels_ok += argmax(res.logits) == item.label;
        // Stage 1: every line crossing the blob survives. Stage 2: every dropped line has zero shift.
        bool ok = true;
        const auto& l0 = *res.stages[0].lines;
        for (std::size_t y = item.top; y < item.top + item.size; ++y) {
            ok &= std::find(l0.rows.begin(), l0.rows.end(), y) != l0.rows.end();
        }
        for (std::size_t x = item.left; x < item.left + item.size; ++x) {
            ok &= std::find(l0.cols.begin(), l0.cols.end(), x) != l0.cols.end();
        }
        const Tensor& shift = res.stages[1].shift;
        const auto& l1 = *res.stages[1].lines;
        for (std::size_t y = 0; y < shift.dim(0); ++y) {
            if (std::find(l1.rows.begin(), l1.rows.end(), y) != l1.rows.end()) continue;
            for (std::size_t x = 0; x < shift.dim(1); ++x) ok &= shift.at(y, x) == 0.0f;
        }
        for (std::size_t x = 0; x < shift.dim(1); ++x) {
            if (std::find(l1.cols.begin(), l1.cols.end(), x) != l1.cols.end()) continue;
            for (std::size_t y = 0; y < shift.dim(0); ++y) ok &= shift.at(y, x) == 0.0f;
        }
        signal_kept += ok;
    }
    return {law && shapes_ok == 100 && signal_kept == 100,
            fmt("16 -> 14 -> 7 -> 6 %s; traced dims match %zu/100; background lines pruned first %zu/100; "
                "class kept %zu/100",
                law ? "holds" : "VIOLATED", shapes_ok, signal_kept, labels_ok)};
}

Outcome container_round_trip() {
    const auto dir = std::filesystem::temp_directory_path() / fmt("repshift-acceptance-%u", std::random_device{}());
    std::filesystem::create_directories(dir);
    const VitConfig c{32, 32, 4, 3, 32, 2, 5, 4, true};
    const ModelBundle b = make_synthetic_bundle(14, c, SyntheticInit::Random);
    const std::string digest = save_bundle(b, dir / "m.rsw");
    const ModelBundle back = load_bundle(dir / "m.rsw");
    bool identical = back.digest == digest && back.tensors.size() == b.tensors.size() && back.vit() == c;
    for (const auto& [name, t] : b.tensors) {
        const auto it = back.tensors.find(name);
        identical &= it != back.tensors.end() && bit_identical(t, it->second);
    }
    const PlantedFixture f = make_planted_fixture(15, 4, c, 3);
    write_container(to_container(f), dir / "f.rsw");
    const PlantedFixture g = fixture_from_container(read_container(dir / "f.rsw"));
    identical &= g.labels == f.labels && g.signal_mask == f.signal_mask;
    for (std::size_t i = 0; i < f.size(); ++i) identical &= bit_identical(f.images[i], g.images[i]);
    std::filesystem::remove_all(dir);

    const auto bytes = encode_container(to_container(b));
    auto patched = [&](auto edit) {
        auto copy = bytes;
        edit(copy);
        return copy;
    };
    Container missing = to_container(b);
    missing.tensors.erase("blocks.0.mlp.w1");
    const auto missing_bytes = encode_container(missing);
    const std::pair<const char*, bool> checks[] = {
        {"truncated",
         error_code_of([&] { decode_container(std::vector<char>(bytes.begin(), bytes.end() - 100)); }) ==
             ErrorCode::DigestMismatch},
        {"flipped byte",
         error_code_of([&] { decode_container(patched([](auto& v) { v[v.size() - 3] ^= 1; })); }) ==
             ErrorCode::DigestMismatch},
        {"bad magic",
         error_code_of([&] { decode_container(patched([](auto& v) { v[0] = 'Q'; })); }) == ErrorCode::BadMagic},
        {"version 2",
         error_code_of([&] { decode_container(patched([](auto& v) { v[8] = 2; })); }) == ErrorCode::VersionUnsupported},
        {"missing tensor",
         error_code_of([&] { bundle_from_container(decode_container(missing_bytes)); }) == ErrorCode::ShapeMismatch},
    };
    std::string rejected;
    bool all = true;
    for (const auto& [what, ok] : checks) {
        all &= ok;
        rejected += std::string(rejected.empty() ? "" : ", ") + what + (ok ? "" : " (WRONG CATEGORY)");
    }
    return {identical && all, std::string("save/load ") + (identical ? "bit-identical" : "DIFFERS") +
                                  " for model and fixture; rejected " + rejected};
}

}  // namespace

int main(int argc, char** argv) {
    log().set_level(spdlog::level::warn);
    const std::vector<Criterion> criteria = {
        {"fused-attention-oracle", fused_oracle},
        {"no-map-guarantee", no_map_guarantee},
        {"shift-correctness", shift_correctness},
        {"keep-set-affine-invariance", affine_invariance},
        {"reliability-top-vs-bottom", reliability},
        {"speedup-and-flops", speedup},
        {"ablation-grid", ablation_grid},
        {"cnn-shape-law", cnn_shape_law},
        {"container-round-trip", container_round_trip},
    };
    std::size_t run = 0, failed = 0;
    for (const auto& c : criteria) {
        bool selected = argc < 2;
        for (int i = 1; i < argc; ++i) selected |= std::strstr(c.name, argv[i]) != nullptr;
        if (!selected) continue;
        ++run;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("raised ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s  %-28s %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", run - failed, run);
    return failed == 0 && run > 0 ? 0 : 1;
}
