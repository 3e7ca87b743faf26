// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Benchmarks, ablations, the reliability study and report emission.
// Report schemas are described in docs/reports.md.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "repshift/compression.hpp"
#include "repshift/error.hpp"
#include "repshift/flops.hpp"
#include "repshift/log.hpp"
#include "repshift/model_io.hpp"
#include "repshift/synthetic.hpp"
#include "repshift/vit_model.hpp"

namespace repshift {

inline constexpr std::string_view kBenchSchema = "repshift.bench/1";
inline constexpr std::string_view kAblationSchema = "repshift.ablation/1";
inline constexpr std::string_view kReliabilitySchema = "repshift.reliability/1";

/// Runs fn(i) for i in [0, n) on `workers` threads. The first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = n;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
    body();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

/// Canonical JSON of a schedule, for digests and reports.
inline nlohmann::json to_json(const PruneSchedule& s) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : s.entries) {
        if (const auto* c = std::get_if<PruneCount>(&e.reduction)) {
            entries.push_back({{"layer", e.layer}, {"count", c->tokens}});
        } else {
            entries.push_back({{"layer", e.layer}, {"ratio", std::get<PruneRatio>(e.reduction).fraction}});
        }
    }
    return {{"entries", entries},
            {"scorer", to_string(s.scorer)},
            {"metric", to_string(s.metric)},
            {"op", to_string(s.op)},
            {"ratio_base", s.ratio_base == RatioBase::Current ? "current" : "original"}};
}

/// Schedule removing `count` patch tokens at each of `layers`.
inline PruneSchedule count_schedule(std::vector<std::size_t> layers, std::size_t count, OpChoice op = OpChoice::MlpBranch,
                                    Metric metric = Metric::L2) {
    PruneSchedule s;
    for (std::size_t l : layers) s.entries.push_back({l, PruneCount{count}});
    s.op = op;
    s.metric = metric;
    return s;
}

/// Published reference values from the original evaluation, carried in reports
/// as context. Nothing here is measured by this library.
inline nlohmann::json reference_values() {
    return {
        {"label", "published reference values, not reproduced"},
        {"deit_s_imagenet",
         {{"columns", {"method", "top1", "throughput_img_s", "gflops"}},
          {"rows", {{"baseline", 79.8, 3002, 4.6}, {"attention_score", 72.1, 4844, 3.0}, {"rep_shift", 77.8, 5948, 3.0}}}}},
        {"umt_b_msrvtt",
         {{"columns", {"method", "throughput_vid_s", "gflops"}},
          {"rows", {{"baseline", 32, 303.3}, {"attention_score_no_fused", 57, 156.4}, {"rep_shift_fused", 175, 156.4}}}}},
        {"deit_s_top_vs_bottom_50", {{"top", 78.0}, {"bottom", 51.7}}},
    };
}

//============================ benchmark ============================

struct BenchOptions {
    Mode mode = Mode::RepShift;
    AttnImpl impl = AttnImpl::Fused;
    std::size_t tile_size = kDefaultTileSize;
    std::size_t batch = 8;  // items per timed run
    std::size_t repeats = 5;
    std::size_t warmup = 2;
    std::size_t workers = 1;
    std::uint64_t seed = 0;  // input images when no fixture is given
    std::string name = "run";
};

struct BenchError {
    std::string category;
    std::string message;
};

struct BenchReport {
    std::string name;
    std::string config_digest;
    std::string mode, impl;
    std::size_t tile_size = 0, batch = 0, repeats = 0, warmup = 0, workers = 0;
    nlohmann::json schedule;
    std::vector<double> run_seconds;   // wall clock per timed run
    double throughput = 0.0;           // items/s, median over timed runs
    double gflops_estimated = 0.0;     // per item
    double gflops_measured = 0.0;      // per item, instrumented counter
    std::vector<std::size_t> tokens_per_layer;
    std::optional<double> accuracy;    // when labels are available
    std::vector<std::size_t> predictions;
    std::optional<std::string> baseline;
    std::optional<double> speedup;
    std::optional<BenchError> error;

    bool ok() const { return !error.has_value(); }
};

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Random N(0, 1) images for timing without a fixture.
inline std::vector<Tensor> random_images(std::uint64_t seed, std::size_t n, const VitConfig& c) {
    Rng rng(seed);
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(gaussian({c.image_h, c.image_w, 3}, rng));
    return out;
}

/// Times forward passes over a batch of items. Items come from `fixture` in
/// order (cycling), or from seeded noise images when no fixture is given.
/// Errors raised by the configuration (for example FusedIncompatible) are
/// recorded in the report rather than thrown.
inline BenchReport run_benchmark(const VitModel& model, const PruneSchedule& schedule, const BenchOptions& opt,
                                 const PlantedFixture* fixture = nullptr) {
    BenchReport r;
    r.name = opt.name;
    r.mode = std::string(to_string(opt.mode));
    r.impl = std::string(to_string(opt.impl));
    r.tile_size = opt.tile_size;
    r.batch = opt.batch;
    r.repeats = opt.repeats;
    r.warmup = opt.warmup;
    r.workers = std::max<std::size_t>(1, opt.workers);
    r.schedule = to_json(schedule);
    const nlohmann::json digest_src = {{"model", to_json(model.config)}, {"schedule", r.schedule},   {"mode", r.mode},
                                       {"impl", r.impl},                 {"tile", r.tile_size},       {"batch", r.batch},
                                       {"seed", opt.seed},               {"fixture", fixture ? fixture->seed : 0}};
    r.config_digest = sha256_hex(digest_src.dump());

    try {
        if (opt.batch == 0 || opt.repeats == 0) {
            detail::fail(ErrorCode::ConfigError, "benchmark needs batch >= 1 and repeats >= 1");
        }
        const bool pruning = opt.mode != Mode::Baseline;
        r.tokens_per_layer = scheduled_tokens(model.config, schedule, pruning);
        r.gflops_estimated = estimate_flops(model.config, r.tokens_per_layer);

        std::vector<Tensor> noise;
        if (fixture == nullptr) noise = random_images(opt.seed, opt.batch, model.config);
        auto image = [&](std::size_t i) -> const Tensor& {
            return fixture ? fixture->images[i % fixture->size()] : noise[i];
        };
        if (fixture != nullptr && fixture->size() == 0) detail::fail(ErrorCode::ConfigError, "empty fixture");

        const ForwardOptions fopt{opt.mode, opt.impl, opt.tile_size, Retain::Highest};

        // Untimed instrumented pass on the first item: MAC count and token trace.
        {
            MacCounter counter;
            const auto res = forward(image(0), model, schedule, fopt);
            r.gflops_measured = static_cast<double>(counter.macs()) * 1e-9;
            auto seen = tokens_per_layer(res.traces);
            if (seen != r.tokens_per_layer) {
                detail::fail(ErrorCode::ConfigError, "forward token counts disagree with the schedule");
            }
        }

        std::vector<std::size_t> preds(opt.batch);
        auto run_once = [&] {
            parallel_for(opt.batch, r.workers, [&](std::size_t i) {
                preds[i] = argmax(forward(image(i), model, schedule, fopt).logits);
            });
        };
        for (std::size_t w = 0; w < opt.warmup; ++w) run_once();
        std::vector<double> rates;
        for (std::size_t rep = 0; rep < opt.repeats; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            run_once();
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            r.run_seconds.push_back(secs);
            rates.push_back(static_cast<double>(opt.batch) / std::max(secs, 1e-12));
        }
        r.throughput = median(rates);
        r.predictions = preds;
        if (fixture != nullptr) {
            std::size_t correct = 0;
            for (std::size_t i = 0; i < opt.batch; ++i) correct += preds[i] == fixture->labels[i % fixture->size()];
            r.accuracy = static_cast<double>(correct) / static_cast<double>(opt.batch);
        }
        log().info("bench {}: {:.2f} items/s, {:.4f} GFLOPs", r.name, r.throughput, r.gflops_estimated);
    } catch (const Error& e) {
        r.error = BenchError{std::string(to_string(e.code())), e.what()};
        log().warn("bench {} failed: {}", r.name, e.what());
    }
    return r;
}

inline void set_speedup(BenchReport& run, const BenchReport& baseline) {
    run.baseline = baseline.name;
    if (run.ok() && baseline.ok() && baseline.throughput > 0.0) run.speedup = run.throughput / baseline.throughput;
}

//============================ ablation ============================

enum class AblationAxis { OpChoice, Metric, PruneLayer, Full };

constexpr std::string_view to_string(AblationAxis a) {
    switch (a) {
    case AblationAxis::OpChoice: return "op";
    case AblationAxis::Metric: return "metric";
    case AblationAxis::PruneLayer: return "layer";
    case AblationAxis::Full: return "full";
    }
    return "?";
}

inline AblationAxis ablation_axis_from(std::string_view s) {
    if (s == "op") return AblationAxis::OpChoice;
    if (s == "metric") return AblationAxis::Metric;
    if (s == "layer") return AblationAxis::PruneLayer;
    if (s == "full") return AblationAxis::Full;
    detail::fail(ErrorCode::ConfigError, "unknown ablation axis '", s, "' (expected op, metric, layer or full)");
}

struct AblationOptions {
    AblationAxis axis = AblationAxis::OpChoice;
    std::vector<std::size_t> layers{0, 2, 4, 6, 8};
    std::size_t prune_count = 0;  // 0 means num_patches / 8
    AttnImpl impl = AttnImpl::Fused;
    std::size_t tile_size = kDefaultTileSize;
    std::size_t workers = 1;
};

struct AblationRow {
    OpChoice op = OpChoice::MlpBranch;
    Metric metric = Metric::L2;
    std::vector<std::size_t> layers;  // layers pruned in this cell
    std::size_t prune_count = 0;
    double accuracy = 0.0;
    double throughput = 0.0;  // items/s over one pass of the fixture
    double gflops_estimated = 0.0;
    std::vector<std::size_t> predictions;
};

struct AblationTable {
    AblationAxis axis = AblationAxis::OpChoice;
    std::size_t items = 0;
    std::vector<AblationRow> rows;
};

struct FixtureEval {
    double accuracy = 0.0;
    double seconds = 0.0;
    std::vector<std::size_t> predictions;
};

inline FixtureEval evaluate(const VitModel& model, const PlantedFixture& fixture, const PruneSchedule& schedule,
                            const ForwardOptions& fopt, std::size_t workers) {
    FixtureEval ev;
    ev.predictions.resize(fixture.size());
    const auto t0 = std::chrono::steady_clock::now();
    parallel_for(fixture.size(), workers, [&](std::size_t i) {
        ev.predictions[i] = argmax(forward(fixture.images[i], model, schedule, fopt).logits);
    });
    ev.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < fixture.size(); ++i) correct += ev.predictions[i] == fixture.labels[i];
    ev.accuracy = fixture.size() ? static_cast<double>(correct) / static_cast<double>(fixture.size()) : 0.0;
    return ev;
}

/// Sweeps one axis with the others at defaults (MLP branch, L2, every listed layer).
/// The op and metric axes prune `prune_count` tokens at every layer in `layers`;
/// the layer axis prunes at one layer per cell; `full` crosses op × metric × layer.
inline AblationTable run_ablation(const VitModel& model, const PlantedFixture& fixture, const AblationOptions& opt) {
    const std::size_t count = opt.prune_count ? opt.prune_count : std::max<std::size_t>(1, model.config.num_patches() / 8);
    const std::vector<OpChoice> ops{OpChoice::AttnBranch, OpChoice::MlpBranch, OpChoice::FullBlock};
    const std::vector<Metric> metrics{Metric::L1, Metric::L2, Metric::Cosine};

    struct Cell {
        OpChoice op;
        Metric metric;
        std::vector<std::size_t> layers;
    };
    std::vector<Cell> cells;
    switch (opt.axis) {
    case AblationAxis::OpChoice:
        for (auto o : ops) cells.push_back({o, Metric::L2, opt.layers});
        break;
    case AblationAxis::Metric:
        for (auto m : metrics) cells.push_back({OpChoice::MlpBranch, m, opt.layers});
        break;
    case AblationAxis::PruneLayer:
        for (auto l : opt.layers) cells.push_back({OpChoice::MlpBranch, Metric::L2, {l}});
        break;
    case AblationAxis::Full:
        for (auto o : ops) {
            for (auto m : metrics) {
                for (auto l : opt.layers) cells.push_back({o, m, {l}});
            }
        }
        break;
    }

    AblationTable table;
    table.axis = opt.axis;
    table.items = fixture.size();
    const ForwardOptions fopt{Mode::RepShift, opt.impl, opt.tile_size, Retain::Highest};
    for (const auto& cell : cells) {
        const PruneSchedule s = count_schedule(cell.layers, count, cell.op, cell.metric);
        const auto ev = evaluate(model, fixture, s, fopt, opt.workers);
        AblationRow row;
        row.op = cell.op;
        row.metric = cell.metric;
        row.layers = cell.layers;
        row.prune_count = count;
        row.accuracy = ev.accuracy;
        row.throughput = ev.seconds > 0 ? static_cast<double>(fixture.size()) / ev.seconds : 0.0;
        row.gflops_estimated = estimate_flops(model.config, scheduled_tokens(model.config, s));
        row.predictions = ev.predictions;
        table.rows.push_back(std::move(row));
    }
    return table;
}

//============================ reliability ============================

struct ReliabilityResult {
    std::size_t layer = 0;
    double fraction = 0.0;
    std::size_t keep = 0;  // patch tokens retained
    double top_acc = 0.0;
    double bottom_acc = 0.0;
    double baseline_acc = 0.0;

    double gap() const { return top_acc - bottom_acc; }
};

struct ReliabilityOptions {
    OpChoice op = OpChoice::MlpBranch;
    Metric metric = Metric::L2;
    AttnImpl impl = AttnImpl::Fused;
    std::size_t tile_size = kDefaultTileSize;
    std::size_t workers = 1;
};

/// Keeps round(fraction · patches) patch tokens at `layer`, once by highest and
/// once by lowest representation shift, and reports both accuracies.
inline ReliabilityResult run_reliability(const VitModel& model, const PlantedFixture& fixture, std::size_t layer,
                                         double fraction, const ReliabilityOptions& opt = {}) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        detail::fail(ErrorCode::InvalidArgument, "reliability fraction ", fraction, " outside (0, 1)");
    }
    const std::size_t patches = model.config.num_patches();
    const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(patches)));
    if (keep == 0) {
        detail::fail(ErrorCode::InvalidArgument, "fraction ", fraction, " keeps zero of ", patches, " patch tokens");
    }
    if (layer >= model.config.depth) {
        detail::fail(ErrorCode::ConfigError, "reliability layer ", layer, " outside model depth ", model.config.depth);
    }
    const PruneSchedule s = count_schedule({layer}, patches - keep, opt.op, opt.metric);
    ReliabilityResult r;
    r.layer = layer;
    r.fraction = fraction;
    r.keep = keep;
    r.top_acc = evaluate(model, fixture, s, {Mode::RepShift, opt.impl, opt.tile_size, Retain::Highest}, opt.workers).accuracy;
    r.bottom_acc = evaluate(model, fixture, s, {Mode::RepShift, opt.impl, opt.tile_size, Retain::Lowest}, opt.workers).accuracy;
    r.baseline_acc = evaluate(model, fixture, {}, {Mode::Baseline, opt.impl, opt.tile_size, Retain::Highest}, opt.workers).accuracy;
    return r;
}

//============================ reports ============================

inline nlohmann::json to_json(const BenchReport& r) {
    nlohmann::json j = {{"schema", kBenchSchema},
                        {"name", r.name},
                        {"config_digest", r.config_digest},
                        {"mode", r.mode},
                        {"attn_impl", r.impl},
                        {"tile_size", r.tile_size},
                        {"batch", r.batch},
                        {"repeats", r.repeats},
                        {"warmup", r.warmup},
                        {"workers", r.workers},
                        {"schedule", r.schedule},
                        {"run_seconds", r.run_seconds},
                        {"throughput_items_per_s", r.throughput},
                        {"gflops_estimated", r.gflops_estimated},
                        {"gflops_measured", r.gflops_measured},
                        {"tokens_per_layer", r.tokens_per_layer},
                        {"predictions", r.predictions},
                        {"accuracy", nullptr},
                        {"baseline", nullptr},
                        {"speedup", nullptr},
                        {"error", nullptr},
                        {"reference", reference_values()}};
    if (r.accuracy) j["accuracy"] = *r.accuracy;
    if (r.baseline) j["baseline"] = *r.baseline;
    if (r.speedup) j["speedup"] = *r.speedup;
    if (r.error) j["error"] = {{"category", r.error->category}, {"message", r.error->message}};
    return j;
}

inline nlohmann::json to_json(const AblationTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows) {
        rows.push_back({{"op", to_string(r.op)},
                        {"metric", to_string(r.metric)},
                        {"layers", r.layers},
                        {"prune_count", r.prune_count},
                        {"accuracy", r.accuracy},
                        {"throughput_items_per_s", r.throughput},
                        {"gflops_estimated", r.gflops_estimated}});
    }
    return {{"schema", kAblationSchema}, {"axis", to_string(t.axis)}, {"items", t.items}, {"rows", rows}};
}

inline nlohmann::json to_json(const std::vector<ReliabilityResult>& results) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : results) {
        rows.push_back({{"layer", r.layer},
                        {"fraction", r.fraction},
                        {"keep", r.keep},
                        {"top_acc", r.top_acc},
                        {"bottom_acc", r.bottom_acc},
                        {"baseline_acc", r.baseline_acc},
                        {"gap", r.gap()}});
    }
    return {{"schema", kReliabilitySchema}, {"rows", rows}, {"reference", reference_values()}};
}

namespace detail {

inline std::string join(const std::vector<std::size_t>& v, char sep = ' ') {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += sep;
        out += std::to_string(v[i]);
    }
    return out;
}

inline std::string num(double v) {
    std::ostringstream s;
    s.precision(9);
    s << v;
    return s.str();
}

}  // namespace detail

inline std::string to_csv(const std::vector<BenchReport>& reports) {
    std::string out = "schema,name,config_digest,mode,attn_impl,tile_size,batch,repeats,warmup,workers,"
                      "throughput_items_per_s,gflops_estimated,gflops_measured,tokens_per_layer,accuracy,baseline,"
                      "speedup,error\n";
    for (const auto& r : reports) {
        out += std::string(kBenchSchema) + ',' + r.name + ',' + r.config_digest + ',' + r.mode + ',' + r.impl + ',' +
               std::to_string(r.tile_size) + ',' + std::to_string(r.batch) + ',' + std::to_string(r.repeats) + ',' +
               std::to_string(r.warmup) + ',' + std::to_string(r.workers) + ',' + detail::num(r.throughput) + ',' +
               detail::num(r.gflops_estimated) + ',' + detail::num(r.gflops_measured) + ',' +
               detail::join(r.tokens_per_layer) + ',' + (r.accuracy ? detail::num(*r.accuracy) : "") + ',' +
               r.baseline.value_or("") + ',' + (r.speedup ? detail::num(*r.speedup) : "") + ',' +
               (r.error ? r.error->category : "") + '\n';
    }
    return out;
}

inline std::string to_csv(const AblationTable& t) {
    std::string out = "schema,axis,op,metric,layers,prune_count,accuracy,throughput_items_per_s,gflops_estimated\n";
    for (const auto& r : t.rows) {
        out += std::string(kAblationSchema) + ',' + std::string(to_string(t.axis)) + ',' + std::string(to_string(r.op)) +
               ',' + std::string(to_string(r.metric)) + ',' + detail::join(r.layers) + ',' +
               std::to_string(r.prune_count) + ',' + detail::num(r.accuracy) + ',' + detail::num(r.throughput) + ',' +
               detail::num(r.gflops_estimated) + '\n';
    }
    return out;
}

inline std::string to_csv(const std::vector<ReliabilityResult>& results) {
    std::string out = "schema,layer,fraction,keep,top_acc,bottom_acc,baseline_acc,gap\n";
    for (const auto& r : results) {
        out += std::string(kReliabilitySchema) + ',' + std::to_string(r.layer) + ',' + detail::num(r.fraction) + ',' +
               std::to_string(r.keep) + ',' + detail::num(r.top_acc) + ',' + detail::num(r.bottom_acc) + ',' +
               detail::num(r.baseline_acc) + ',' + detail::num(r.gap()) + '\n';
    }
    return out;
}

}  // namespace repshift
