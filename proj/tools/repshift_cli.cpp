// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

// repshift command-line tool.
//
//   repshift run          [--config F] [--out F] [--seed N] [--workers N] [--format json|csv]
//   repshift bench        ...
//   repshift ablate       ... [--axis op|metric|layer|full]
//   repshift reliability  ... [--layer L] [--fraction F]
//   repshift gen-fixture  --out F [--config F] [--seed N]
//   repshift inspect      PATH [--out F] [--format json|csv]
//
// Exit codes: 0 success, 1 runtime error ("error: <Category>: <message>" on
// stderr), 2 usage error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>

#include "repshift/repshift.hpp"

namespace {

using namespace repshift;
using json = nlohmann::json;

constexpr std::string_view kRunSchema = "repshift.run/1";
constexpr std::string_view kInspectSchema = "repshift.inspect/1";

struct Options {
    std::string config;
    std::string out;
    std::string format = "json";
    std::optional<std::uint64_t> seed;
    std::size_t workers = 1;
    std::optional<std::string> axis;
    std::optional<std::size_t> layer;
    std::optional<double> fraction;
    std::string path;
};

struct Output {
    std::string body;     // report text
    std::string summary;  // one line
    bool failed = false;
    std::string failure;  // "Category: message" when failed
};

RunConfig load_config(const Options& o) {
    RunConfig cfg = o.config.empty() ? RunConfig{} : parse_run_config(o.config);
    if (o.seed) cfg.fixture.seed = *o.seed;
    return cfg;
}

using AnyModel = std::variant<VitModel, CnnModel>;

struct LoadedModel {
    AnyModel model;
    std::string digest;
};

LoadedModel load_model(const RunConfig& cfg) {
    if (cfg.model.bundle) {
        const ModelBundle b = load_bundle(*cfg.model.bundle);
        if (b.is_vit()) return {vit_model_from_bundle(b), b.digest};
        return {cnn_model_from_bundle(b), b.digest};
    }
    const auto& s = cfg.model.synthetic;
    if (const auto* v = std::get_if<VitConfig>(&s.arch)) {
        VitModel m = make_synthetic_model(s.seed, *v, s.init);
        std::string digest = bundle_from_model(m).digest;
        return {std::move(m), std::move(digest)};
    }
    CnnModel m = make_synthetic_cnn(s.seed, std::get<CnnConfig>(s.arch), s.init);
    std::string digest = bundle_from_model(m).digest;
    return {std::move(m), std::move(digest)};
}

const VitModel& require_vit(const LoadedModel& m, std::string_view command) {
    if (const auto* v = std::get_if<VitModel>(&m.model)) return *v;
    detail::fail(ErrorCode::ConfigError, command, " needs a vit model; the configured model is a cnn");
}

PlantedFixture load_fixture(const RunConfig& cfg, const VitConfig& model) {
    if (cfg.fixture.path) {
        PlantedFixture f = fixture_from_container(read_container(*cfg.fixture.path));
        if (f.image_h != model.image_h || f.image_w != model.image_w) {
            detail::fail(ErrorCode::ConfigError, "fixture images are ", f.image_h, "x", f.image_w, ", model expects ",
                         model.image_h, "x", model.image_w);
        }
        return f;
    }
    const std::size_t signal = cfg.fixture.signal_patches ? cfg.fixture.signal_patches
                                                          : std::max<std::size_t>(1, model.num_patches() / 8);
    return make_planted_fixture(cfg.fixture.seed, cfg.fixture.items, model, signal);
}

std::string fixed(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string csv_row(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    return out + "\n";
}

std::string join(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + std::to_string(v[i]);
    return out;
}

//------------------------------------------------------------------------------

Output cmd_run(const Options& o) {
    const RunConfig cfg = load_config(o);
    const LoadedModel loaded = load_model(cfg);
    const Mode mode = cfg.effective_mode();
    json report = {{"schema", kRunSchema},
                   {"model_digest", loaded.digest},
                   {"mode", to_string(mode)},
                   {"attn_impl", to_string(cfg.impl)},
                   {"workers", o.workers}};
    Output out;

    if (const auto* vit = std::get_if<VitModel>(&loaded.model)) {
        const PlantedFixture f = load_fixture(cfg, vit->config);
        const auto ev = evaluate(*vit, f, cfg.schedule, {mode, cfg.impl, cfg.tile_size, Retain::Highest}, o.workers);
        const auto tokens = scheduled_tokens(vit->config, cfg.schedule, mode != Mode::Baseline);
        const double gflops = estimate_flops(vit->config, tokens);
        report.update({{"architecture", "vit"},
                       {"schedule", to_json(cfg.schedule)},
                       {"fixture_seed", f.seed},
                       {"items", f.size()},
                       {"accuracy", ev.accuracy},
                       {"predictions", ev.predictions},
                       {"tokens_per_layer", tokens},
                       {"gflops_estimated", gflops}});
        out.summary = "run: accuracy " + fixed(ev.accuracy) + " over " + std::to_string(f.size()) + " items, " +
                      fixed(gflops, 4) + " GFLOPs/item, final tokens " + std::to_string(tokens.back());
        if (o.format == "csv") {
            out.body = "schema,architecture,mode,attn_impl,items,accuracy,gflops_estimated,tokens_per_layer\n" +
                       csv_row({std::string(kRunSchema), "vit", std::string(to_string(mode)),
                                std::string(to_string(cfg.impl)), std::to_string(f.size()), fixed(ev.accuracy, 6),
                                fixed(gflops, 6), join(tokens)});
        }
    } else {
        const CnnModel& cnn = std::get<CnnModel>(loaded.model);
        if (cfg.fixture.path) detail::fail(ErrorCode::ConfigError, "cnn runs use generated blob items, not fixture files");
        const CnnPrunePlan plan = cfg.cnn_plan.value_or(cnn.config.prune_plan);
        const auto dims = cnn.config.analytic_dims(plan);
        Rng rng(cfg.fixture.seed);
        std::vector<PlantedGridItem> items;
        for (std::size_t i = 0; i < cfg.fixture.items; ++i) items.push_back(make_planted_grid_item(rng, cnn.config, cfg.fixture.blob));
        std::vector<std::size_t> preds(items.size());
        parallel_for(items.size(), o.workers,
                     [&](std::size_t i) { preds[i] = argmax(cnn_forward(items[i].image, cnn, plan).logits); });
        std::size_t correct = 0;
        for (std::size_t i = 0; i < items.size(); ++i) correct += preds[i] == items[i].label;
        const double acc = items.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(items.size());
        json stage_dims = json::array();
        for (const auto& d : dims) stage_dims.push_back({d[0], d[1]});
        json plan_json = json::array();
        for (const auto& p : plan) {
            plan_json.push_back({{"stage", p.stage},
                                 {"drop_rows", p.drop_rows},
                                 {"drop_cols", p.drop_cols},
                                 {"mode", to_string(p.mode)}});
        }
        report["mode"] = plan.empty() ? "baseline" : "rep_shift";
        report.erase("attn_impl");
        report.update({{"architecture", "cnn"},
                       {"prune_plan", plan_json},
                       {"fixture_seed", cfg.fixture.seed},
                       {"items", items.size()},
                       {"accuracy", acc},
                       {"predictions", preds},
                       {"stage_dims", stage_dims}});
        out.summary = "run: accuracy " + fixed(acc) + " over " + std::to_string(items.size()) + " items, final grid " +
                      std::to_string(dims.back()[0]) + "x" + std::to_string(dims.back()[1]);
        if (o.format == "csv") {
            std::string grid;
            for (const auto& d : dims) grid += (grid.empty() ? "" : " ") + std::to_string(d[0]) + "x" + std::to_string(d[1]);
            out.body = "schema,architecture,mode,items,accuracy,stage_dims\n" +
                       csv_row({std::string(kRunSchema), "cnn", report["mode"].get<std::string>(),
                                std::to_string(items.size()), fixed(acc, 6), grid});
        }
    }
    if (o.format == "json") out.body = report.dump(2) + "\n";
    return out;
}

Output cmd_bench(const Options& o) {
    const RunConfig cfg = load_config(o);
    const LoadedModel loaded = load_model(cfg);
    const VitModel& model = require_vit(loaded, "bench");
    const PlantedFixture f = load_fixture(cfg, model.config);

    BenchOptions opt;
    opt.mode = cfg.effective_mode();
    opt.impl = cfg.impl;
    opt.tile_size = cfg.tile_size;
    opt.batch = cfg.bench.batch;
    opt.repeats = cfg.bench.repeats;
    opt.warmup = cfg.bench.warmup;
    opt.workers = o.workers;
    opt.seed = cfg.fixture.seed;

    std::vector<BenchReport> reports;
    std::optional<std::size_t> baseline_at;
    if (cfg.bench.compare_baseline && opt.mode != Mode::Baseline) {
        BenchOptions b = opt;
        b.mode = Mode::Baseline;
        b.impl = AttnImpl::Fused;
        b.name = "baseline-fused";
        reports.push_back(run_benchmark(model, {}, b, &f));
        baseline_at = 0;
    }
    opt.name = std::string(to_string(opt.mode)) + "-" + std::string(to_string(opt.impl));
    reports.push_back(run_benchmark(model, opt.mode == Mode::Baseline ? PruneSchedule{} : cfg.schedule, opt, &f));
    if (baseline_at) set_speedup(reports.back(), reports[*baseline_at]);

    Output out;
    if (o.format == "csv") {
        out.body = to_csv(reports);
    } else {
        json runs = json::array();
        for (const auto& r : reports) runs.push_back(to_json(r));
        out.body = json{{"schema", kBenchSchema}, {"model_digest", loaded.digest}, {"runs", runs}}.dump(2) + "\n";
    }
    const BenchReport& last = reports.back();
    for (const auto& r : reports) {
        if (!r.ok() && !out.failed) {
            out.failed = true;
            out.failure = r.error->message;
        }
    }
    if (last.ok()) {
        out.summary = "bench " + last.name + ": " + fixed(last.throughput) + " items/s, " +
                      fixed(last.gflops_estimated, 4) + " GFLOPs/item";
        if (last.speedup) out.summary += ", speedup " + fixed(*last.speedup, 2) + "x vs " + *last.baseline;
    } else {
        out.summary = "bench " + last.name + ": failed";
    }
    return out;
}

Output cmd_ablate(const Options& o) {
    RunConfig cfg = load_config(o);
    if (o.axis) cfg.ablation.axis = ablation_axis_from(*o.axis);
    const LoadedModel loaded = load_model(cfg);
    const VitModel& model = require_vit(loaded, "ablate");
    const PlantedFixture f = load_fixture(cfg, model.config);
    AblationOptions opt = cfg.ablation;
    opt.workers = o.workers;
    const AblationTable t = run_ablation(model, f, opt);
    Output out;
    if (o.format == "csv") {
        out.body = to_csv(t);
    } else {
        json j = to_json(t);
        j["model_digest"] = loaded.digest;
        j["fixture_seed"] = f.seed;
        out.body = j.dump(2) + "\n";
    }
    double lo = 1.0, hi = 0.0;
    for (const auto& r : t.rows) lo = std::min(lo, r.accuracy), hi = std::max(hi, r.accuracy);
    out.summary = "ablate " + std::string(to_string(t.axis)) + ": " + std::to_string(t.rows.size()) +
                  " rows, accuracy " + fixed(lo) + " to " + fixed(hi);
    return out;
}

Output cmd_reliability(const Options& o) {
    RunConfig cfg = load_config(o);
    if (o.fraction) cfg.reliability.fraction = *o.fraction;
    if (o.layer) cfg.reliability.layers = {*o.layer};
    const LoadedModel loaded = load_model(cfg);
    const VitModel& model = require_vit(loaded, "reliability");
    const PlantedFixture f = load_fixture(cfg, model.config);
    ReliabilityOptions opt;
    opt.op = cfg.schedule.op;
    opt.metric = cfg.schedule.metric;
    opt.impl = cfg.impl;
    opt.tile_size = cfg.tile_size;
    opt.workers = o.workers;
    std::vector<ReliabilityResult> results;
    for (std::size_t layer : cfg.reliability.layers) {
        results.push_back(run_reliability(model, f, layer, cfg.reliability.fraction, opt));
    }
    Output out;
    if (o.format == "csv") {
        out.body = to_csv(results);
    } else {
        json j = to_json(results);
        j["model_digest"] = loaded.digest;
        j["fixture_seed"] = f.seed;
        out.body = j.dump(2) + "\n";
    }
    out.summary = "reliability:";
    for (const auto& r : results) {
        out.summary += " layer " + std::to_string(r.layer) + " top " + fixed(r.top_acc) + " bottom " +
                       fixed(r.bottom_acc) + ";";
    }
    out.summary.pop_back();
    return out;
}

Output cmd_gen_fixture(const Options& o) {
    const RunConfig cfg = load_config(o);
    const auto* vit = std::get_if<VitConfig>(&cfg.model.synthetic.arch);
    VitConfig grid;
    if (cfg.model.bundle) {
        const ModelBundle b = load_bundle(*cfg.model.bundle);
        if (!b.is_vit()) detail::fail(ErrorCode::ConfigError, "gen-fixture writes vit fixtures; the model is a cnn");
        grid = b.vit();
    } else if (vit != nullptr) {
        grid = *vit;
    } else {
        detail::fail(ErrorCode::ConfigError, "gen-fixture writes vit fixtures; the model is a cnn");
    }
    RunConfig generated = cfg;
    generated.fixture.path.reset();
    const PlantedFixture f = load_fixture(generated, grid);
    const std::string digest = write_container(to_container(f), o.out);
    Output out;
    out.summary = "gen-fixture: " + std::to_string(f.size()) + " items, " + std::to_string(f.signal_patches) +
                  " signal patches, seed " + std::to_string(f.seed) + ", sha256 " + digest + " -> " + o.out;
    return out;
}

Output cmd_inspect(const Options& o) {
    const Container c = read_container(o.path);
    std::string manifest = "n/a";
    if (c.kind == "vit" || c.kind == "cnn") {
        bundle_from_container(c);
        manifest = "ok";
    } else if (c.kind == "fixture") {
        fixture_from_container(c);
        manifest = "ok";
    }
    json tensors = json::array();
    std::size_t total = 0;
    for (const auto& [name, t] : c.tensors) {
        tensors.push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape()}, {"numel", t.size()}});
        total += t.size();
    }
    Output out;
    if (o.format == "csv") {
        out.body = "name,dtype,shape,numel\n";
        for (const auto& [name, t] : c.tensors) {
            std::string shape;
            for (std::size_t i = 0; i < t.rank(); ++i) shape += (i ? "x" : "") + std::to_string(t.dim(i));
            out.body += csv_row({name, "f32", shape, std::to_string(t.size())});
        }
    } else {
        out.body = json{{"schema", kInspectSchema}, {"kind", c.kind},       {"version", c.version},
                        {"digest", c.digest},       {"config", c.config},   {"meta", c.meta},
                        {"manifest", manifest},     {"tensors", tensors},   {"total_elements", total}}
                       .dump(2) +
                   "\n";
    }
    out.summary = "inspect: " + c.kind + " container v" + std::to_string(c.version) + ", " +
                  std::to_string(c.tensors.size()) + " tensors, " + std::to_string(total) + " elements, manifest " +
                  manifest + ", sha256 " + c.digest;
    return out;
}

void add_common(CLI::App* sub, Options& o, bool with_config = true) {
    if (with_config) sub->add_option("--config", o.config, "Run configuration file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Write the report here instead of stdout");
    sub->add_option("--format", o.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
}

void add_run_flags(CLI::App* sub, Options& o) {
    add_common(sub, o);
    sub->add_option("--seed", o.seed, "Fixture seed (overrides the config)");
    sub->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"repshift: token pruning by representation shift"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "repshift 1.0.0");
    Options o;

    auto* run = app.add_subcommand("run", "Evaluate the configured model on its fixture");
    add_run_flags(run, o);
    auto* bench = app.add_subcommand("bench", "Time forward passes and report throughput and GFLOPs");
    add_run_flags(bench, o);
    auto* ablate = app.add_subcommand("ablate", "Sweep operation choice, distance metric or layer");
    add_run_flags(ablate, o);
    ablate->add_option("--axis", o.axis, "Ablation axis (overrides the config)")
        ->check(CLI::IsMember({"op", "metric", "layer", "full"}));
    auto* reliability = app.add_subcommand("reliability", "Top vs bottom retention accuracy");
    add_run_flags(reliability, o);
    reliability->add_option("--layer", o.layer, "Single layer to test (overrides the config)");
    reliability->add_option("--fraction", o.fraction, "Fraction of patch tokens retained (overrides the config)")
        ->check(CLI::Range(0.0, 1.0));
    auto* gen = app.add_subcommand("gen-fixture", "Write a planted fixture container");
    gen->add_option("--config", o.config, "Run configuration file")->check(CLI::ExistingFile);
    gen->add_option("--out", o.out, "Output container path")->required();
    gen->add_option("--seed", o.seed, "Fixture seed (overrides the config)");
    auto* inspect = app.add_subcommand("inspect", "Describe a container file");
    inspect->add_option("path", o.path, "Container file")->required()->check(CLI::ExistingFile);
    add_common(inspect, o, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        log().debug("repshift {}", app.get_subcommands().front()->get_name());
        Output out;
        if (run->parsed()) out = cmd_run(o);
        if (bench->parsed()) out = cmd_bench(o);
        if (ablate->parsed()) out = cmd_ablate(o);
        if (reliability->parsed()) out = cmd_reliability(o);
        if (gen->parsed()) out = cmd_gen_fixture(o);
        if (inspect->parsed()) out = cmd_inspect(o);

        if (!out.body.empty()) {
            if (o.out.empty()) {
                std::cout << out.body;
                std::cerr << out.summary << "\n";
            } else {
                std::ofstream file(o.out, std::ios::binary | std::ios::trunc);
                if (!file) detail::fail(ErrorCode::IoError, "cannot open '", o.out, "' for writing");
                file << out.body;
                if (!file) detail::fail(ErrorCode::IoError, "write to '", o.out, "' failed");
                std::cout << out.summary << "\n";
            }
        } else {
            std::cout << out.summary << "\n";
        }
        if (out.failed) {
            std::cerr << "error: " << out.failure << "\n";
            return 1;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: Internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
