// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Run configuration, YAML syntax. Every section is optional; unknown keys are
// errors. See configs/ for complete examples and docs/run_config.md for the keys.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "repshift/cnn_model.hpp"
#include "repshift/compression.hpp"
#include "repshift/error.hpp"
#include "repshift/harness.hpp"
#include "repshift/synthetic.hpp"
#include "repshift/vit_model.hpp"

namespace repshift {

struct SyntheticSpec {
    std::uint64_t seed = 0;
    SyntheticInit init = SyntheticInit::Planted;
    std::variant<VitConfig, CnnConfig> arch = VitConfig{32, 32, 4, 12, 64, 4, 2, 4, false};
};

struct ModelSource {
    std::optional<std::filesystem::path> bundle;  // otherwise synthetic
    SyntheticSpec synthetic;
};

struct FixtureSpec {
    std::optional<std::filesystem::path> path;  // otherwise generated
    std::uint64_t seed = 1;
    std::size_t items = 64;
    std::size_t signal_patches = 0;  // 0 means num_patches / 8
    std::size_t blob = 3;            // cnn fixtures: blob side
};

struct BenchSpec {
    std::size_t batch = 8;
    std::size_t repeats = 5;
    std::size_t warmup = 2;
    bool compare_baseline = true;
};

struct ReliabilitySpec {
    std::vector<std::size_t> layers{0, 2, 4, 6, 8};
    double fraction = 0.5;
};

struct RunConfig {
    std::filesystem::path source;  // file the config was read from
    ModelSource model;
    Mode mode = Mode::RepShift;
    AttnImpl impl = AttnImpl::Fused;
    std::size_t tile_size = kDefaultTileSize;
    PruneSchedule schedule;
    FixtureSpec fixture;
    BenchSpec bench;
    AblationOptions ablation;
    ReliabilitySpec reliability;
    std::optional<CnnPrunePlan> cnn_plan;  // overrides the bundle's plan

    /// An empty schedule always means a baseline run.
    Mode effective_mode() const { return schedule.empty() ? Mode::Baseline : mode; }
};

namespace detail {

class ConfigReader {
public:
    explicit ConfigReader(std::string file) : m_file(std::move(file)) {}

    [[noreturn]] void error(const YAML::Node& at, const std::string& msg) const {
        const auto mark = at.Mark();
        if (mark.line >= 0) fail(ErrorCode::ConfigError, m_file, ":", mark.line + 1, ": ", msg);
        fail(ErrorCode::ConfigError, m_file, ": ", msg);
    }

    void require_map(const YAML::Node& n, const std::string& what) const {
        if (!n.IsMap()) error(n, what + " must be a mapping");
    }

    void check_keys(const YAML::Node& n, const std::string& section, std::initializer_list<const char*> allowed) const {
        require_map(n, "section '" + section + "'");
        std::set<std::string> ok(allowed.begin(), allowed.end());
        for (const auto& kv : n) {
            const auto key = kv.first.as<std::string>();
            if (!ok.count(key)) error(kv.first, "unknown key '" + key + "' in section '" + section + "'");
        }
    }

    template <class T>
    T get(const YAML::Node& n, const std::string& key) const {
        try {
            return n.as<T>();
        } catch (const YAML::Exception&) {
            error(n, "bad value for '" + key + "'");
        }
    }

    std::size_t positive(const YAML::Node& n, const std::string& key) const {
        const auto v = get<long long>(n, key);
        if (v <= 0) error(n, "'" + key + "' must be positive");
        return static_cast<std::size_t>(v);
    }

    std::size_t natural(const YAML::Node& n, const std::string& key) const {
        const auto v = get<long long>(n, key);
        if (v < 0) error(n, "'" + key + "' must be non-negative");
        return static_cast<std::size_t>(v);
    }

    std::vector<std::size_t> naturals(const YAML::Node& n, const std::string& key) const {
        if (!n.IsSequence()) error(n, "'" + key + "' must be a list");
        std::vector<std::size_t> out;
        for (const auto& v : n) out.push_back(natural(v, key));
        return out;
    }

    template <class E>
    E choice(const YAML::Node& n, const std::string& key, std::initializer_list<std::pair<const char*, E>> options) const {
        const auto s = get<std::string>(n, key);
        std::string names;
        for (const auto& [name, value] : options) {
            if (s == name) return value;
            names += names.empty() ? name : std::string(", ") + name;
        }
        error(n, "'" + key + "' must be one of " + names + " (got '" + s + "')");
    }

private:
    std::string m_file;
};

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base.parent_path() / path;
}

inline VitConfig parse_vit(const ConfigReader& r, const YAML::Node& n) {
    r.check_keys(n, "model.synthetic", {"seed", "init", "architecture", "image_size", "patch_size", "depth", "width",
                                        "heads", "num_classes", "mlp_ratio", "class_token"});
    VitConfig c{32, 32, 4, 12, 64, 4, 2, 4, false};
    if (n["image_size"]) {
        const auto s = r.naturals(n["image_size"], "image_size");
        if (s.size() != 2) r.error(n["image_size"], "'image_size' must be [height, width]");
        c.image_h = s[0];
        c.image_w = s[1];
    }
    if (n["patch_size"]) c.patch = r.positive(n["patch_size"], "patch_size");
    if (n["depth"]) c.depth = r.positive(n["depth"], "depth");
    if (n["width"]) c.width = r.positive(n["width"], "width");
    if (n["heads"]) c.heads = r.positive(n["heads"], "heads");
    if (n["num_classes"]) c.num_classes = r.positive(n["num_classes"], "num_classes");
    if (n["mlp_ratio"]) c.mlp_ratio = r.positive(n["mlp_ratio"], "mlp_ratio");
    if (n["class_token"]) c.use_class_token = r.get<bool>(n["class_token"], "class_token");
    try {
        c.validate();
    } catch (const Error& e) {
        r.error(n, e.what());
    }
    return c;
}

inline CnnPrunePlan parse_cnn_plan(const ConfigReader& r, const YAML::Node& n) {
    if (!n.IsSequence()) r.error(n, "'prune_plan' must be a list");
    CnnPrunePlan plan;
    for (const auto& e : n) {
        r.check_keys(e, "prune_plan entry", {"stage", "drop_rows", "drop_cols", "mode"});
        StagePrune p;
        if (!e["stage"]) r.error(e, "prune_plan entry needs 'stage'");
        p.stage = r.natural(e["stage"], "stage");
        if (e["drop_rows"]) p.drop_rows = r.natural(e["drop_rows"], "drop_rows");
        if (e["drop_cols"]) p.drop_cols = r.natural(e["drop_cols"], "drop_cols");
        if (e["mode"]) {
            p.mode = r.choice<GridPruneMode>(e["mode"], "mode",
                                             {{"line", GridPruneMode::LineWise}, {"token", GridPruneMode::TokenWise}});
        }
        plan.push_back(p);
    }
    return plan;
}

inline CnnConfig parse_cnn(const ConfigReader& r, const YAML::Node& n) {
    r.check_keys(n, "model.synthetic",
                 {"seed", "init", "architecture", "image_size", "in_channels", "stages", "num_classes", "prune_plan"});
    CnnConfig c;
    c.stages = {{8, 1, 1}, {16, 2, 2}};
    if (n["image_size"]) {
        const auto s = r.naturals(n["image_size"], "image_size");
        if (s.size() != 2) r.error(n["image_size"], "'image_size' must be [height, width]");
        c.image_h = s[0];
        c.image_w = s[1];
    }
    if (n["in_channels"]) c.in_channels = r.positive(n["in_channels"], "in_channels");
    if (n["num_classes"]) c.num_classes = r.positive(n["num_classes"], "num_classes");
    if (n["stages"]) {
        if (!n["stages"].IsSequence()) r.error(n["stages"], "'stages' must be a list");
        c.stages.clear();
        for (const auto& s : n["stages"]) {
            r.check_keys(s, "stages entry", {"channels", "blocks", "stride"});
            CnnStage st;
            if (s["channels"]) st.channels = r.positive(s["channels"], "channels");
            if (s["blocks"]) st.blocks = r.positive(s["blocks"], "blocks");
            if (s["stride"]) st.stride = r.positive(s["stride"], "stride");
            c.stages.push_back(st);
        }
    }
    if (n["prune_plan"]) c.prune_plan = parse_cnn_plan(r, n["prune_plan"]);
    try {
        c.validate();
    } catch (const Error& e) {
        r.error(n, e.what());
    }
    return c;
}

inline void parse_model(const ConfigReader& r, const YAML::Node& n, const std::filesystem::path& file, ModelSource& m) {
    r.check_keys(n, "model", {"bundle", "synthetic"});
    if (n["bundle"] && n["synthetic"]) r.error(n, "'model' takes either 'bundle' or 'synthetic', not both");
    if (n["bundle"]) {
        m.bundle = resolve(file, r.get<std::string>(n["bundle"], "bundle"));
        return;
    }
    if (!n["synthetic"]) return;
    const auto& s = n["synthetic"];
    r.require_map(s, "section 'model.synthetic'");
    if (s["seed"]) m.synthetic.seed = r.get<std::uint64_t>(s["seed"], "seed");
    if (s["init"]) {
        m.synthetic.init = r.choice<SyntheticInit>(
            s["init"], "init",
            {{"planted", SyntheticInit::Planted}, {"random", SyntheticInit::Random}, {"zero", SyntheticInit::Zero}});
    }
    const std::string arch = s["architecture"] ? r.get<std::string>(s["architecture"], "architecture") : "vit";
    if (arch == "vit") {
        m.synthetic.arch = parse_vit(r, s);
    } else if (arch == "cnn") {
        m.synthetic.arch = parse_cnn(r, s);
    } else {
        r.error(s["architecture"], "'architecture' must be vit or cnn");
    }
}

inline void parse_schedule(const ConfigReader& r, const YAML::Node& n, PruneSchedule& s) {
    if (n.IsNull()) return;
    r.check_keys(n, "schedule", {"layers", "ratio", "count", "entries", "ratio_base", "scorer", "metric", "op"});
    if (n["scorer"]) {
        s.scorer = r.choice<Scorer>(n["scorer"], "scorer",
                                    {{"rep_shift", Scorer::RepShift},
                                     {"cls_attention", Scorer::ClsAttention},
                                     {"mean_attention", Scorer::MeanAttention}});
    }
    if (n["metric"]) {
        s.metric = r.choice<Metric>(n["metric"], "metric", {{"l1", Metric::L1}, {"l2", Metric::L2}, {"cosine", Metric::Cosine}});
    }
    if (n["op"]) {
        s.op = r.choice<OpChoice>(n["op"], "op",
                                  {{"attn", OpChoice::AttnBranch}, {"mlp", OpChoice::MlpBranch}, {"block", OpChoice::FullBlock}});
    }
    if (n["ratio_base"]) {
        s.ratio_base = r.choice<RatioBase>(n["ratio_base"], "ratio_base",
                                           {{"current", RatioBase::Current}, {"original", RatioBase::Original}});
    }
    auto reduction = [&](const YAML::Node& at, const YAML::Node& ratio, const YAML::Node& count) -> Reduction {
        if (ratio && count) r.error(at, "give either 'ratio' or 'count', not both");
        if (count) return PruneCount{r.natural(count, "count")};
        if (!ratio) r.error(at, "pruning needs 'ratio' or 'count'");
        const double f = r.get<double>(ratio, "ratio");
        if (!(f > 0.0 && f < 1.0)) r.error(ratio, "'ratio' must be in (0, 1), got " + std::to_string(f));
        return PruneRatio{f};
    };
    if (n["entries"]) {
        if (n["layers"] || n["ratio"] || n["count"]) {
            r.error(n, "'entries' cannot be combined with 'layers', 'ratio' or 'count'");
        }
        if (!n["entries"].IsSequence()) r.error(n["entries"], "'entries' must be a list");
        for (const auto& e : n["entries"]) {
            r.check_keys(e, "schedule entry", {"layer", "ratio", "count"});
            if (!e["layer"]) r.error(e, "schedule entry needs 'layer'");
            s.entries.push_back({r.natural(e["layer"], "layer"), reduction(e, e["ratio"], e["count"])});
        }
    } else if (n["layers"]) {
        const auto red = reduction(n, n["ratio"], n["count"]);
        for (std::size_t l : r.naturals(n["layers"], "layers")) s.entries.push_back({l, red});
    } else if (n["ratio"] || n["count"]) {
        r.error(n, "'ratio' or 'count' needs 'layers'");
    }
    for (std::size_t i = 1; i < s.entries.size(); ++i) {
        if (s.entries[i].layer <= s.entries[i - 1].layer) r.error(n, "schedule layers must be strictly increasing");
    }
}

}  // namespace detail

/// Parses a run configuration from YAML text. `file` names the source in errors
/// and anchors relative paths.
inline RunConfig parse_run_config_text(const std::string& text, const std::filesystem::path& file = "<config>") {
    const std::string name = file.string();
    detail::ConfigReader r(name);
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        detail::fail(ErrorCode::ConfigError, name, ":", e.mark.line + 1, ": ", e.msg);
    }
    RunConfig cfg;
    cfg.source = file;
    if (root.IsNull()) return cfg;
    r.check_keys(root, "<top level>", {"model", "run", "schedule", "fixture", "bench", "ablation", "reliability", "cnn_plan"});

    if (root["model"]) detail::parse_model(r, root["model"], file, cfg.model);

    if (const auto n = root["run"]) {
        r.check_keys(n, "run", {"mode", "attn_impl", "tile_size"});
        if (n["mode"]) {
            cfg.mode = r.choice<Mode>(n["mode"], "mode",
                                      {{"baseline", Mode::Baseline}, {"attn_score", Mode::AttnScore}, {"rep_shift", Mode::RepShift}});
        }
        if (n["attn_impl"]) {
            cfg.impl = r.choice<AttnImpl>(n["attn_impl"], "attn_impl", {{"naive", AttnImpl::Naive}, {"fused", AttnImpl::Fused}});
        }
        if (n["tile_size"]) cfg.tile_size = r.positive(n["tile_size"], "tile_size");
    }

    if (root["schedule"]) detail::parse_schedule(r, root["schedule"], cfg.schedule);
    if (cfg.mode == Mode::AttnScore && !cfg.schedule.empty() && cfg.schedule.scorer == Scorer::RepShift) {
        r.error(root["schedule"], "mode attn_score needs scorer cls_attention or mean_attention");
    }
    if (cfg.mode == Mode::RepShift && !cfg.schedule.empty() && cfg.schedule.scorer != Scorer::RepShift) {
        r.error(root["schedule"], "mode rep_shift needs scorer rep_shift");
    }

    if (const auto n = root["fixture"]) {
        r.check_keys(n, "fixture", {"path", "seed", "items", "signal_patches", "blob"});
        if (n["path"]) cfg.fixture.path = detail::resolve(file, r.get<std::string>(n["path"], "path"));
        if (n["seed"]) cfg.fixture.seed = r.get<std::uint64_t>(n["seed"], "seed");
        if (n["items"]) cfg.fixture.items = r.positive(n["items"], "items");
        if (n["signal_patches"]) cfg.fixture.signal_patches = r.positive(n["signal_patches"], "signal_patches");
        if (n["blob"]) cfg.fixture.blob = r.positive(n["blob"], "blob");
    }

    if (const auto n = root["bench"]) {
        r.check_keys(n, "bench", {"batch", "repeats", "warmup", "compare_baseline"});
        if (n["batch"]) cfg.bench.batch = r.positive(n["batch"], "batch");
        if (n["repeats"]) cfg.bench.repeats = r.positive(n["repeats"], "repeats");
        if (n["warmup"]) cfg.bench.warmup = r.natural(n["warmup"], "warmup");
        if (n["compare_baseline"]) cfg.bench.compare_baseline = r.get<bool>(n["compare_baseline"], "compare_baseline");
    }

    if (const auto n = root["ablation"]) {
        r.check_keys(n, "ablation", {"axis", "layers", "prune_count"});
        if (n["axis"]) {
            try {
                cfg.ablation.axis = ablation_axis_from(r.get<std::string>(n["axis"], "axis"));
            } catch (const Error& e) {
                r.error(n["axis"], e.what());
            }
        }
        if (n["layers"]) cfg.ablation.layers = r.naturals(n["layers"], "layers");
        if (n["prune_count"]) cfg.ablation.prune_count = r.positive(n["prune_count"], "prune_count");
    }

    if (const auto n = root["reliability"]) {
        r.check_keys(n, "reliability", {"layers", "fraction"});
        if (n["layers"]) cfg.reliability.layers = r.naturals(n["layers"], "layers");
        if (n["fraction"]) {
            cfg.reliability.fraction = r.get<double>(n["fraction"], "fraction");
            if (!(cfg.reliability.fraction > 0.0 && cfg.reliability.fraction < 1.0)) {
                r.error(n["fraction"], "'fraction' must be in (0, 1)");
            }
        }
    }

    if (root["cnn_plan"]) cfg.cnn_plan = detail::parse_cnn_plan(r, root["cnn_plan"]);
    cfg.ablation.impl = cfg.impl;
    cfg.ablation.tile_size = cfg.tile_size;
    return cfg;
}

inline RunConfig parse_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) detail::fail(ErrorCode::IoError, "cannot open config ", path.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_run_config_text(text, path);
}

}  // namespace repshift
