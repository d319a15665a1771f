#include "seedstab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "seedstab/ablation.hpp"
#include "seedstab/cka.hpp"
#include "seedstab/metasne.hpp"
#include "seedstab/optim.hpp"
#include "seedstab/stability.hpp"
#include "seedstab/svg.hpp"
#include "seedstab/toml.hpp"

namespace fs = std::filesystem;

namespace seedstab {

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    const toml::Table t = toml::parse_file(path);
    ExperimentConfig cfg;
    for (int64_t v : t.get_int_array("depths")) cfg.depths.push_back(static_cast<int>(v));
    for (int64_t v : t.get_int_array("heads")) cfg.heads.push_back(static_cast<int>(v));
    cfg.attn_only_variants = t.has("attn_only")
                                 ? t.get_bool_array("attn_only")
                                 : std::vector<bool>{false};
    for (int64_t v : t.get_int_array("seeds")) cfg.seeds.push_back(static_cast<uint64_t>(v));
    for (const std::string& name : t.get_string_array("optimizers"))
        cfg.optimizers.push_back(optimizer_from_name(name));
    cfg.weight_decay = t.get_double_or("weight_decay", 0.1);

    cfg.d_head = static_cast<int>(t.get_int_or("d_head", 8));
    cfg.mlp_ratio = static_cast<int>(t.get_int_or("mlp_ratio", 4));
    cfg.n_ctx = static_cast<int>(t.get_int_or("n_ctx", 512));
    cfg.d_vocab = static_cast<int>(t.get_int_or("d_vocab", 257));

    cfg.lr = t.get_double_or("lr", 1e-3);
    cfg.batch_size = static_cast<int>(t.get_int_or("batch_size", 8));
    cfg.max_steps = static_cast<int>(t.get_int_or("max_steps", 2000));
    cfg.checkpoint_every = static_cast<int>(t.get_int_or("checkpoint_every", 500));
    cfg.n_ctx_train = static_cast<int>(t.get_int_or("n_ctx_train", 128));
    cfg.val_fraction = t.get_double_or("val_fraction", 0.05);
    cfg.val_windows = static_cast<int>(t.get_int_or("val_windows", 32));

    cfg.corpus_path = t.get_string("corpus");
    cfg.prompts_primary = t.get_string("prompts_primary");
    cfg.prompts_sweep = t.get_string_or("prompts_sweep", "");
    cfg.out_root = t.get_string_or("out_root", "out");
    cfg.workers = static_cast<int>(t.get_int_or("workers", 2));
    cfg.tsne_seed = static_cast<uint64_t>(t.get_int_or("tsne_seed", 1));
    cfg.validate();
    return cfg;
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("experiment config: " + m); };
    if (depths.empty()) fail("depths must be nonempty");
    if (heads.empty()) fail("heads must be nonempty");
    if (seeds.empty()) fail("seeds must be nonempty");
    if (optimizers.empty()) fail("optimizers must be nonempty");
    std::set<uint64_t> uniq(seeds.begin(), seeds.end());
    if (uniq.size() != seeds.size()) fail("seeds must be distinct");
    if (workers <= 0) fail("workers must be positive");
    if (corpus_path.empty()) fail("corpus path is required");
    if (prompts_primary.empty()) fail("prompts_primary is required");
    // Every arch must produce a valid ModelConfig.
    for (int depth : depths)
        for (int h : heads)
            for (bool attn_only : attn_only_variants)
                ModelConfig::make(depth, h, h * d_head, mlp_ratio * h * d_head,
                                  attn_only, n_ctx, d_vocab, seeds.front());
}

std::vector<ArchGroup> enumerate_groups(const ExperimentConfig& cfg) {
    std::vector<ArchGroup> groups;
    std::vector<uint64_t> seeds = cfg.seeds;
    std::sort(seeds.begin(), seeds.end());
    for (int depth : cfg.depths) {
        for (int heads : cfg.heads) {
            for (bool attn_only : cfg.attn_only_variants) {
                for (OptimizerKind opt : cfg.optimizers) {
                    ArchGroup g;
                    g.base_cfg = ModelConfig::make(
                        depth, heads, heads * cfg.d_head,
                        cfg.mlp_ratio * heads * cfg.d_head, attn_only, cfg.n_ctx,
                        cfg.d_vocab, seeds.front());
                    g.train_cfg.optimizer = opt;
                    g.train_cfg.lr = cfg.lr;
                    if (opt == OptimizerKind::adamw)
                        g.train_cfg.weight_decay = cfg.weight_decay;
                    g.train_cfg.batch_size = cfg.batch_size;
                    g.train_cfg.max_steps = cfg.max_steps;
                    g.train_cfg.checkpoint_every = cfg.checkpoint_every;
                    g.train_cfg.n_ctx_train = cfg.n_ctx_train;
                    g.seeds = seeds;
                    g.arch_id = g.base_cfg.arch_id();
                    g.tag = "L" + std::to_string(depth) + "H" + std::to_string(heads) +
                            (attn_only ? "-attn-" : "-mlp-") + optimizer_name(opt) +
                            "-" + hex64(g.arch_id).substr(8);
                    groups.push_back(std::move(g));
                }
            }
        }
    }
    std::sort(groups.begin(), groups.end(),
              [](const ArchGroup& a, const ArchGroup& b) { return a.tag < b.tag; });
    return groups;
}

std::string refit_dir(const ExperimentConfig& cfg, const ArchGroup& group,
                      uint64_t seed) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "seed%04llu", static_cast<unsigned long long>(seed));
    return cfg.out_root + "/refits/" + group.tag + "/" + buf;
}

// ---------------------------------------------------------------------------
// CSV / manifest helpers
// ---------------------------------------------------------------------------

CsvWriter::CsvWriter(std::vector<std::string> columns)
    : columns_(std::move(columns)) {}

void CsvWriter::add_row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_.size())
        throw UsageError("CSV row arity does not match header");
    rows_.push_back(cells);
}

std::string CsvWriter::text() const {
    std::string out;
    for (size_t i = 0; i < columns_.size(); ++i) {
        if (i) out += ",";
        out += columns_[i];
    }
    out += "\n";
    for (const auto& row : rows_) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out += ",";
            out += row[i];
        }
        out += "\n";
    }
    return out;
}

void CsvWriter::write(const std::string& path) const {
    svg::write_file(path, text());
}

std::string CsvWriter::num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

uint64_t file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for digest: " + path);
    Fnv1a64 h;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        h.update(buf, static_cast<size_t>(in.gcount()));
    }
    return h.digest();
}

nlohmann::json manifest_inputs(const std::vector<std::string>& paths,
                               const std::string& base_dir) {
    nlohmann::json j = nlohmann::json::object();
    for (const std::string& rel : paths)
        j[rel] = hex64(file_digest(base_dir.empty() ? rel : base_dir + "/" + rel));
    return j;
}

bool manifest_up_to_date(const std::string& manifest_path,
                         const nlohmann::json& inputs,
                         const std::vector<std::string>& outputs,
                         const std::string& base_dir) {
    std::ifstream in(manifest_path);
    if (!in) return false;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error&) {
        return false;
    }
    if (!j.contains("inputs") || j["inputs"] != inputs) return false;
    for (const std::string& rel : outputs) {
        if (!fs::exists(base_dir.empty() ? rel : base_dir + "/" + rel)) return false;
    }
    return true;
}

void write_manifest(const std::string& manifest_path, const std::string& kind,
                    const nlohmann::json& inputs,
                    const std::vector<std::string>& outputs,
                    const nlohmann::json& params) {
    nlohmann::json j{
        {"kind", kind},
        {"inputs", inputs},
        {"outputs", outputs},
        {"params", params},
    };
    svg::write_file(manifest_path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// cmd_train: the refit farm
// ---------------------------------------------------------------------------

namespace {

struct Job {
    ModelConfig mcfg;
    TrainConfig tcfg;
    std::string dir;
    std::string tag;
};

bool checkpoint_matches(const std::string& path, const Job& job) {
    if (!fs::exists(path)) return false;
    try {
        const Checkpoint ckpt = load_checkpoint(path);
        return ckpt.model_cfg.to_json() == job.mcfg.to_json() &&
               ckpt.train_cfg.to_json() == job.tcfg.to_json() && !ckpt.diverged;
    } catch (const Error&) {
        return false;
    }
}

}  // namespace

int cmd_train(const ExperimentConfig& cfg) {
    cfg.validate();
    const TokenCorpus corpus = TokenCorpus::load(cfg.corpus_path, cfg.val_fraction);

    std::vector<Job> jobs;
    for (const ArchGroup& group : enumerate_groups(cfg)) {
        for (uint64_t seed : group.seeds) {
            Job job;
            job.mcfg = group.base_cfg;
            job.mcfg.seed = seed;
            job.tcfg = group.train_cfg;
            job.dir = refit_dir(cfg, group, seed);
            job.tag = group.tag;
            jobs.push_back(std::move(job));
        }
    }

    std::vector<int> trained(jobs.size(), 0);
    std::vector<std::string> failures(jobs.size());
#pragma omp parallel for schedule(dynamic) num_threads(cfg.workers)
    for (size_t i = 0; i < jobs.size(); ++i) {
        const Job& job = jobs[i];
        const std::string ckpt_path = job.dir + "/ckpt.bin";
        if (checkpoint_matches(ckpt_path, job)) continue;
        try {
            fs::create_directories(job.dir);
            const Checkpoint ckpt = train_refit(
                job.mcfg, job.tcfg, corpus, [&](int step, double loss) {
#pragma omp critical(seedstab_log)
                    std::cerr << "[train] " << job.tag << " seed " << job.mcfg.seed
                              << " step " << step << " loss " << loss << "\n";
                });
            if (ckpt.diverged)
                throw DivergenceError(job.tag + " seed " +
                                      std::to_string(job.mcfg.seed) +
                                      " diverged at step " + std::to_string(ckpt.step));
            save_checkpoint(ckpt_path, ckpt);
            trained[i] = 1;
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    }

    int total = 0;
    std::string first_failure;
    for (size_t i = 0; i < jobs.size(); ++i) {
        total += trained[i];
        if (!failures[i].empty() && first_failure.empty()) first_failure = failures[i];
    }
    if (!first_failure.empty()) throw Error("refit failed: " + first_failure);
    return total;
}

// ---------------------------------------------------------------------------
// cmd_dump
// ---------------------------------------------------------------------------

namespace {

std::vector<PromptSet> load_all_prompt_sets(const ExperimentConfig& cfg) {
    std::vector<PromptSet> sets;
    sets.push_back(load_prompts(cfg.prompts_primary));
    if (!cfg.prompts_sweep.empty()) {
        for (PromptSet& s : load_sweep_prompts(cfg.prompts_sweep))
            sets.push_back(std::move(s));
    }
    return sets;
}

}  // namespace

int cmd_dump(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::vector<PromptSet> sets = load_all_prompt_sets(cfg);
    const PromptSet& primary = sets.front();

    struct DumpJob {
        std::string dir;
        std::string ckpt;
    };
    std::vector<DumpJob> jobs;
    for (const ArchGroup& group : enumerate_groups(cfg)) {
        for (uint64_t seed : group.seeds) {
            const std::string dir = refit_dir(cfg, group, seed);
            jobs.push_back({dir, dir + "/ckpt.bin"});
        }
    }

    std::vector<int> produced(jobs.size(), 0);
    std::vector<std::string> failures(jobs.size());
#pragma omp parallel for schedule(dynamic) num_threads(cfg.workers)
    for (size_t i = 0; i < jobs.size(); ++i) {
        const DumpJob& job = jobs[i];
        try {
            if (!fs::exists(job.ckpt))
                throw UsageError(job.ckpt + " is missing; run the train command first");
            const std::string manifest = job.dir + "/dumps.manifest.json";
            nlohmann::json inputs = nlohmann::json::object();
            inputs["ckpt.bin"] = hex64(file_digest(job.ckpt));
            inputs[cfg.prompts_primary] = hex64(file_digest(cfg.prompts_primary));
            if (!cfg.prompts_sweep.empty())
                inputs[cfg.prompts_sweep] = hex64(file_digest(cfg.prompts_sweep));

            std::vector<std::string> outputs;
            outputs.push_back("attn__" + primary.name + ".bin");
            outputs.push_back("resid__" + primary.name + ".bin");
            outputs.push_back("sig__" + primary.name + ".bin");
            for (size_t s = 1; s < sets.size(); ++s)
                outputs.push_back("attn__" + sets[s].name + ".bin");
            if (manifest_up_to_date(manifest, inputs, outputs, job.dir)) continue;

            const Checkpoint ckpt = load_checkpoint(job.ckpt);
            const TraceDumps primary_dumps = dump_traces(ckpt, primary);
            save_attention_dump(job.dir + "/attn__" + primary.name + ".bin",
                                primary_dumps.attention);
            save_residual_dump(job.dir + "/resid__" + primary.name + ".bin",
                               primary_dumps.residual);
            save_signature_dump(job.dir + "/sig__" + primary.name + ".bin",
                                primary_dumps.signatures);
            // Sweep sets only feed the attention-based length analysis.
            for (size_t s = 1; s < sets.size(); ++s) {
                const TraceDumps d = dump_traces(ckpt, sets[s]);
                save_attention_dump(job.dir + "/attn__" + sets[s].name + ".bin",
                                    d.attention);
            }
            write_manifest(manifest, "dumps", inputs, outputs,
                           {{"prompt_sets", static_cast<int>(sets.size())}});
            produced[i] = 1;
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    }

    int total = 0;
    std::string first_failure;
    for (size_t i = 0; i < jobs.size(); ++i) {
        total += produced[i];
        if (!failures[i].empty() && first_failure.empty()) first_failure = failures[i];
    }
    if (!first_failure.empty()) throw Error("dump failed: " + first_failure);
    return total;
}

// ---------------------------------------------------------------------------
// cmd_analyze
// ---------------------------------------------------------------------------

namespace {

struct GroupContext {
    const ExperimentConfig* cfg = nullptr;
    const ArchGroup* group = nullptr;
    std::string analysis_dir;
    uint64_t anchor_seed = 0;
    std::vector<uint64_t> pair_seeds;
    std::string primary_name;

    std::string refit_rel(uint64_t seed, const std::string& file) const {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "seed%04llu", static_cast<unsigned long long>(seed));
        return "refits/" + group->tag + "/" + buf + "/" + file;
    }
    std::string abs_path(const std::string& rel) const {
        return cfg->out_root + "/" + rel;
    }
};

uint64_t pick_anchor(const std::vector<uint64_t>& seeds,
                     const std::optional<uint64_t>& flag) {
    if (flag.has_value()) {
        if (std::find(seeds.begin(), seeds.end(), *flag) == seeds.end())
            throw UsageError("anchor seed " + std::to_string(*flag) +
                             " is not in the configured seed list");
        return *flag;
    }
    return *std::min_element(seeds.begin(), seeds.end());
}

void require_exists(const std::string& path, const std::string& producer) {
    if (!fs::exists(path))
        throw UsageError(path + " is missing; produce it with '" + producer + "'");
}

nlohmann::json stability_to_json(const GroupContext& ctx,
                                 const std::vector<HeadStability>& heads,
                                 MatchMode mode) {
    nlohmann::json out{
        {"arch_id", hex64(ctx.group->arch_id)},
        {"optimizer", optimizer_name(ctx.group->train_cfg.optimizer)},
        {"anchor_seed", ctx.anchor_seed},
        {"pair_seeds", ctx.pair_seeds},
        {"mode", mode == MatchMode::same_layer ? "same_layer" : "cross_layer"},
    };
    nlohmann::json arr = nlohmann::json::array();
    for (const HeadStability& hs : heads) {
        nlohmann::json pairs = nlohmann::json::array();
        for (size_t i = 0; i < hs.per_pair.size(); ++i) {
            pairs.push_back({{"seed", hs.pair_seeds[i]},
                             {"s", hs.per_pair[i]},
                             {"best_layer", hs.best_match[i].layer},
                             {"best_head", hs.best_match[i].head}});
        }
        arr.push_back({{"layer", hs.head.layer},
                       {"head", hs.head.head},
                       {"S", hs.overall},
                       {"per_pair", pairs}});
    }
    out["heads"] = arr;
    return out;
}

std::vector<HeadStability> stability_from_json(const nlohmann::json& j) {
    std::vector<HeadStability> out;
    for (const auto& h : j.at("heads")) {
        HeadStability hs;
        hs.head.layer = h.at("layer").get<int>();
        hs.head.head = h.at("head").get<int>();
        hs.overall = h.at("S").get<double>();
        hs.mode = j.at("mode").get<std::string>() == "cross_layer"
                      ? MatchMode::cross_layer
                      : MatchMode::same_layer;
        for (const auto& p : h.at("per_pair")) {
            hs.pair_seeds.push_back(p.at("seed").get<uint64_t>());
            hs.per_pair.push_back(p.at("s").get<double>());
            hs.best_match.push_back(
                {p.at("best_layer").get<int>(), p.at("best_head").get<int>()});
        }
        out.push_back(std::move(hs));
    }
    return out;
}

nlohmann::json profile_to_json(const LayerStabilityProfile& prof) {
    return nlohmann::json{
        {"layer_stability", prof.layer_stability},
        {"l_max", prof.l_max},
        {"l_min", prof.l_min},
        {"delta_s", prof.delta_s},
        {"r_lmax", prof.r_lmax},
        {"r_lmin", prof.r_lmin},
    };
}

LayerStabilityProfile profile_from_json(const nlohmann::json& j) {
    LayerStabilityProfile prof;
    prof.layer_stability = j.at("layer_stability").get<std::vector<double>>();
    prof.l_max = j.at("l_max").get<int>();
    prof.l_min = j.at("l_min").get<int>();
    prof.delta_s = j.at("delta_s").get<double>();
    prof.r_lmax = j.at("r_lmax").get<double>();
    prof.r_lmin = j.at("r_lmin").get<double>();
    return prof;
}

void write_stability_csv(const GroupContext& ctx, const std::string& path,
                         const std::vector<HeadStability>& heads) {
    CsvWriter csv({"arch_id", "anchor_seed", "layer", "head", "S", "s_min", "s_max"});
    for (const HeadStability& hs : heads) {
        const auto [mn, mx] =
            std::minmax_element(hs.per_pair.begin(), hs.per_pair.end());
        csv.add_row({hex64(ctx.group->arch_id), std::to_string(ctx.anchor_seed),
                     std::to_string(hs.head.layer + 1), std::to_string(hs.head.head),
                     CsvWriter::num(hs.overall), CsvWriter::num(*mn),
                     CsvWriter::num(*mx)});
    }
    csv.write(path);
}

// Loads the anchor dump plus pair dumps in ascending seed order.
struct LoadedAttention {
    AttentionDump anchor;
    std::vector<AttentionDump> pairs;
    std::vector<const AttentionDump*> pair_ptrs() const {
        std::vector<const AttentionDump*> out;
        for (const auto& d : pairs) out.push_back(&d);
        return out;
    }
};

LoadedAttention load_attention_set(const GroupContext& ctx,
                                   const std::string& set_name) {
    LoadedAttention out;
    const std::string anchor_rel = ctx.refit_rel(ctx.anchor_seed, "attn__" + set_name + ".bin");
    require_exists(ctx.abs_path(anchor_rel), "seedstab dump --config <config>");
    out.anchor = load_attention_dump(ctx.abs_path(anchor_rel));
    for (uint64_t seed : ctx.pair_seeds) {
        const std::string rel = ctx.refit_rel(seed, "attn__" + set_name + ".bin");
        require_exists(ctx.abs_path(rel), "seedstab dump --config <config>");
        out.pairs.push_back(load_attention_dump(ctx.abs_path(rel)));
    }
    return out;
}

std::vector<std::string> attention_inputs(const GroupContext& ctx,
                                          const std::string& set_name) {
    std::vector<std::string> rels;
    rels.push_back(ctx.refit_rel(ctx.anchor_seed, "attn__" + set_name + ".bin"));
    for (uint64_t seed : ctx.pair_seeds)
        rels.push_back(ctx.refit_rel(seed, "attn__" + set_name + ".bin"));
    return rels;
}

// --- individual analyses ---------------------------------------------------

bool run_stability(const GroupContext& ctx) {
    const auto inputs_rel = attention_inputs(ctx, ctx.primary_name);
    for (const auto& rel : inputs_rel)
        require_exists(ctx.abs_path(rel), "seedstab dump --config <config>");
    const nlohmann::json inputs = manifest_inputs(inputs_rel, ctx.cfg->out_root);
    const std::string manifest = ctx.analysis_dir + "/stability.manifest.json";
    const std::vector<std::string> outputs = {"stability.csv", "stability.json",
                                              "profile.json"};
    std::vector<std::string> output_abs;
    for (const auto& o : outputs) output_abs.push_back(ctx.analysis_dir + "/" + o);
    if (manifest_up_to_date(manifest, inputs, output_abs, "")) return false;

    const LoadedAttention dumps = load_attention_set(ctx, ctx.primary_name);
    const auto heads = all_head_stabilities(dumps.anchor, dumps.pair_ptrs(),
                                            MatchMode::same_layer);
    const LayerStabilityProfile prof =
        layer_profile(heads, dumps.anchor.n_layers, dumps.anchor.n_heads);

    write_stability_csv(ctx, ctx.analysis_dir + "/stability.csv", heads);
    svg::write_file(ctx.analysis_dir + "/stability.json",
                    stability_to_json(ctx, heads, MatchMode::same_layer).dump(2) + "\n");
    svg::write_file(ctx.analysis_dir + "/profile.json",
                    profile_to_json(prof).dump(2) + "\n");
    write_manifest(manifest, "stability", inputs, outputs,
                   {{"anchor_seed", ctx.anchor_seed}});
    return true;
}

bool run_cross_layer(const GroupContext& ctx) {
    const auto inputs_rel = attention_inputs(ctx, ctx.primary_name);
    for (const auto& rel : inputs_rel)
        require_exists(ctx.abs_path(rel), "seedstab dump --config <config>");
    const nlohmann::json inputs = manifest_inputs(inputs_rel, ctx.cfg->out_root);
    const std::string manifest = ctx.analysis_dir + "/cross_layer.manifest.json";
    const std::vector<std::string> outputs = {"cross_layer.csv", "cross_layer.json",
                                              "alignment.json"};
    std::vector<std::string> output_abs;
    for (const auto& o : outputs) output_abs.push_back(ctx.analysis_dir + "/" + o);
    if (manifest_up_to_date(manifest, inputs, output_abs, "")) return false;

    const LoadedAttention dumps = load_attention_set(ctx, ctx.primary_name);
    const auto heads = all_head_stabilities(dumps.anchor, dumps.pair_ptrs(),
                                            MatchMode::cross_layer);
    const AlignmentMap map = alignment_map(heads, dumps.anchor.n_layers);

    write_stability_csv(ctx, ctx.analysis_dir + "/cross_layer.csv", heads);
    svg::write_file(ctx.analysis_dir + "/cross_layer.json",
                    stability_to_json(ctx, heads, MatchMode::cross_layer).dump(2) + "\n");
    nlohmann::json alignment{
        {"arch_id", hex64(ctx.group->arch_id)},
        {"anchor_seed", ctx.anchor_seed},
        {"n_layers", map.n_layers},
    };
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < map.n_layers; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < map.n_layers; ++j) row.push_back(map.at(i, j));
        rows.push_back(row);
    }
    alignment["rows"] = rows;
    svg::write_file(ctx.analysis_dir + "/alignment.json", alignment.dump(2) + "\n");
    write_manifest(manifest, "cross_layer", inputs, outputs,
                   {{"anchor_seed", ctx.anchor_seed}});
    return true;
}

bool run_uniqueness(const GroupContext& ctx) {
    const std::string anchor_rel =
        ctx.refit_rel(ctx.anchor_seed, "attn__" + ctx.primary_name + ".bin");
    require_exists(ctx.abs_path(anchor_rel), "seedstab dump --config <config>");
    const nlohmann::json inputs = manifest_inputs({anchor_rel}, ctx.cfg->out_root);
    const std::string manifest = ctx.analysis_dir + "/uniqueness.manifest.json";
    const std::vector<std::string> outputs = {"uniqueness.csv", "uniqueness_layers.csv"};
    std::vector<std::string> output_abs;
    for (const auto& o : outputs) output_abs.push_back(ctx.analysis_dir + "/" + o);
    if (manifest_up_to_date(manifest, inputs, output_abs, "")) return false;

    const AttentionDump anchor = load_attention_dump(ctx.abs_path(anchor_rel));
    CsvWriter per_head({"arch_id", "anchor_seed", "layer", "head", "commonness"});
    CsvWriter per_layer({"arch_id", "anchor_seed", "layer", "commonness"});
    // Commonness excludes the self pair and divides by H-1; recorded here so
    // downstream consumers know the convention.
    for (int l = 0; l < anchor.n_layers; ++l) {
        const CommonnessProfile prof = commonness(anchor, l);
        for (int h = 0; h < anchor.n_heads; ++h) {
            per_head.add_row({hex64(ctx.group->arch_id), std::to_string(ctx.anchor_seed),
                              std::to_string(l + 1), std::to_string(h),
                              CsvWriter::num(prof.per_head[static_cast<size_t>(h)])});
        }
        per_layer.add_row({hex64(ctx.group->arch_id), std::to_string(ctx.anchor_seed),
                           std::to_string(l + 1), CsvWriter::num(prof.layer_mean)});
    }
    per_head.write(ctx.analysis_dir + "/uniqueness.csv");
    per_layer.write(ctx.analysis_dir + "/uniqueness_layers.csv");
    write_manifest(manifest, "uniqueness", inputs, outputs,
                   {{"anchor_seed", ctx.anchor_seed}, {"self_excluded", true}});
    return true;
}

bool run_cka(const GroupContext& ctx) {
    std::vector<std::string> inputs_rel;
    inputs_rel.push_back(ctx.refit_rel(ctx.anchor_seed, "resid__" + ctx.primary_name + ".bin"));
    for (uint64_t seed : ctx.pair_seeds)
        inputs_rel.push_back(ctx.refit_rel(seed, "resid__" + ctx.primary_name + ".bin"));
    for (const auto& rel : inputs_rel)
        require_exists(ctx.abs_path(rel), "seedstab dump --config <config>");
    const std::string profile_path = ctx.analysis_dir + "/profile.json";
    require_exists(profile_path, "seedstab analyze --which stability --config <config>");

    nlohmann::json inputs = manifest_inputs(inputs_rel, ctx.cfg->out_root);
    inputs["profile.json"] = hex64(file_digest(profile_path));
    const std::string manifest = ctx.analysis_dir + "/cka.manifest.json";
    const std::vector<std::string> outputs = {"cka.csv", "cka_overlay.csv"};
    std::vector<std::string> output_abs;
    for (const auto& o : outputs) output_abs.push_back(ctx.analysis_dir + "/" + o);
    if (manifest_up_to_date(manifest, inputs, output_abs, "")) return false;

    const ResidualDump anchor = load_residual_dump(
        ctx.abs_path(ctx.refit_rel(ctx.anchor_seed, "resid__" + ctx.primary_name + ".bin")));
    std::vector<ResidualDump> pairs;
    for (uint64_t seed : ctx.pair_seeds)
        pairs.push_back(load_residual_dump(
            ctx.abs_path(ctx.refit_rel(seed, "resid__" + ctx.primary_name + ".bin"))));
    std::vector<const ResidualDump*> pair_ptrs;
    for (const auto& p : pairs) pair_ptrs.push_back(&p);

    const std::vector<double> layer_cka = residual_stability(anchor, pair_ptrs, 1.0);

    std::ifstream prof_in(profile_path);
    const LayerStabilityProfile prof =
        profile_from_json(nlohmann::json::parse(prof_in));

    CsvWriter csv({"arch_id", "anchor_seed", "layer", "cka"});
    CsvWriter overlay({"arch_id", "anchor_seed", "layer", "cka", "head_stability"});
    for (int l = 0; l < anchor.n_layers; ++l) {
        csv.add_row({hex64(ctx.group->arch_id), std::to_string(ctx.anchor_seed),
                     std::to_string(l + 1), CsvWriter::num(layer_cka[static_cast<size_t>(l)])});
        overlay.add_row({hex64(ctx.group->arch_id), std::to_string(ctx.anchor_seed),
                         std::to_string(l + 1),
                         CsvWriter::num(layer_cka[static_cast<size_t>(l)]),
                         CsvWriter::num(prof.layer_stability[static_cast<size_t>(l)])});
    }
    csv.write(ctx.analysis_dir + "/cka.csv");
    overlay.write(ctx.analysis_dir + "/cka_overlay.csv");
    write_manifest(manifest, "cka", inputs, outputs,
                   {{"anchor_seed", ctx.anchor_seed},
                    {"rbf_threshold", 1.0},
                    {"bandwidth", "threshold times median pairwise distance"},
                    {"position_pooling", "mean"}});
    return true;
}

bool run_ablate(const GroupContext& ctx) {
    const std::string ckpt_rel = ctx.refit_rel(ctx.anchor_seed, "ckpt.bin");
    require_exists(ctx.abs_path(ckpt_rel), "seedstab train --config <config>");
    const std::string stability_path = ctx.analysis_dir + "/stability.json";
    require_exists(stability_path,
                   "seedstab analyze --which stability --config <config>");

    nlohmann::json inputs = manifest_inputs({ckpt_rel}, ctx.cfg->out_root);
    inputs[ctx.cfg->prompts_primary] = hex64(file_digest(ctx.cfg->prompts_primary));
    inputs["stability.json"] = hex64(file_digest(stability_path));
    const std::string manifest = ctx.analysis_dir + "/ablate.manifest.json";
    const std::vector<std::string> outputs = {"ablation.csv", "ablation_corr.json"};
    std::vector<std::string> output_abs;
    for (const auto& o : outputs) output_abs.push_back(ctx.analysis_dir + "/" + o);
    if (manifest_up_to_date(manifest, inputs, output_abs, "")) return false;

    const Checkpoint ckpt = load_checkpoint(ctx.abs_path(ckpt_rel));
    const PromptSet prompts = load_prompts(ctx.cfg->prompts_primary);
    const auto records = ablate_all_heads(ckpt.params, prompts);

    std::ifstream stab_in(stability_path);
    const auto stabilities = stability_from_json(nlohmann::json::parse(stab_in));
    std::map<std::pair<int, int>, double> s_by_head;
    for (const auto& hs : stabilities)
        s_by_head[{hs.head.layer, hs.head.head}] = hs.overall;

    CsvWriter csv({"layer", "head", "S", "delta_ppl"});
    for (const auto& r : records) {
        csv.add_row({std::to_string(r.layer + 1), std::to_string(r.head),
                     CsvWriter::num(s_by_head.at({r.layer, r.head})),
                     CsvWriter::num(r.delta_ppl)});
    }
    csv.write(ctx.analysis_dir + "/ablation.csv");

    const auto corr = stability_ablation_correlation(
        records, stabilities, ckpt.model_cfg.n_layers, ckpt.model_cfg.n_heads);
    nlohmann::json layers = nlohmann::json::array();
    for (size_t l = 0; l < corr.size(); ++l) {
        nlohmann::json entry{{"layer", l + 1}};
        if (corr[l].has_value())
            entry["r"] = *corr[l];
        else
            entry["r"] = nullptr;
        layers.push_back(entry);
    }
    nlohmann::json corr_json{
        {"arch_id", hex64(ctx.group->arch_id)},
        {"anchor_seed", ctx.anchor_seed},
        {"ppl_baseline", records.front().ppl_baseline},
        {"layers", layers},
    };
    svg::write_file(ctx.analysis_dir + "/ablation_corr.json", corr_json.dump(2) + "\n");
    write_manifest(manifest, "ablate", inputs, outputs,
                   {{"anchor_seed", ctx.anchor_seed}});
    return true;
}

bool run_sweep(const GroupContext& ctx) {
    if (ctx.cfg->prompts_sweep.empty())
        throw UsageError("sweep analysis requested but the config sets no prompts_sweep");
    const auto sweep_sets = load_sweep_prompts(ctx.cfg->prompts_sweep);

    std::vector<std::string> inputs_rel;
    for (const PromptSet& set : sweep_sets) {
        inputs_rel.push_back(ctx.refit_rel(ctx.anchor_seed, "attn__" + set.name + ".bin"));
        for (uint64_t seed : ctx.pair_seeds)
            inputs_rel.push_back(ctx.refit_rel(seed, "attn__" + set.name + ".bin"));
    }
    for (const auto& rel : inputs_rel)
        require_exists(ctx.abs_path(rel), "seedstab dump --config <config>");
    const nlohmann::json inputs = manifest_inputs(inputs_rel, ctx.cfg->out_root);
    const std::string manifest = ctx.analysis_dir + "/sweep.manifest.json";
    const std::vector<std::string> outputs = {"sweep.csv"};
    if (manifest_up_to_date(manifest, inputs, {ctx.analysis_dir + "/sweep.csv"}, ""))
        return false;

    std::map<int, AttentionDump> anchors;
    std::map<int, std::vector<AttentionDump>> pairs;
    for (const PromptSet& set : sweep_sets) {
        const int len = *set.nominal_length;
        anchors.emplace(len, load_attention_dump(ctx.abs_path(
                                 ctx.refit_rel(ctx.anchor_seed, "attn__" + set.name + ".bin"))));
        auto& vec = pairs[len];
        for (uint64_t seed : ctx.pair_seeds)
            vec.push_back(load_attention_dump(
                ctx.abs_path(ctx.refit_rel(seed, "attn__" + set.name + ".bin"))));
    }
    std::map<int, const AttentionDump*> anchor_ptrs;
    std::map<int, std::vector<const AttentionDump*>> pair_ptrs;
    for (const auto& [len, dump] : anchors) anchor_ptrs[len] = &dump;
    for (const auto& [len, vec] : pairs) {
        for (const auto& d : vec) pair_ptrs[len].push_back(&d);
    }

    const auto table = prompt_length_sweep(anchor_ptrs, pair_ptrs);
    CsvWriter csv({"arch_id", "anchor_seed", "length", "layer", "S_l", "delta_s"});
    for (const auto& [len, prof] : table) {
        for (size_t l = 0; l < prof.layer_stability.size(); ++l) {
            csv.add_row({hex64(ctx.group->arch_id), std::to_string(ctx.anchor_seed),
                         std::to_string(len), std::to_string(l + 1),
                         CsvWriter::num(prof.layer_stability[l]),
                         CsvWriter::num(prof.delta_s)});
        }
    }
    csv.write(ctx.analysis_dir + "/sweep.csv");
    write_manifest(manifest, "sweep", inputs, outputs,
                   {{"anchor_seed", ctx.anchor_seed},
                    {"note", "monotonicity reported, not asserted"}});
    return true;
}

bool run_norms(const GroupContext& ctx, const TokenCorpus& corpus) {
    std::vector<std::string> inputs_rel;
    inputs_rel.push_back(ctx.refit_rel(ctx.anchor_seed, "ckpt.bin"));
    for (uint64_t seed : ctx.pair_seeds)
        inputs_rel.push_back(ctx.refit_rel(seed, "ckpt.bin"));
    for (const auto& rel : inputs_rel)
        require_exists(ctx.abs_path(rel), "seedstab train --config <config>");
    const std::string profile_path = ctx.analysis_dir + "/profile.json";
    require_exists(profile_path,
                   "seedstab analyze --which stability --config <config>");

    nlohmann::json inputs = manifest_inputs(inputs_rel, ctx.cfg->out_root);
    inputs[ctx.cfg->prompts_primary] = hex64(file_digest(ctx.cfg->prompts_primary));
    inputs["profile.json"] = hex64(file_digest(profile_path));
    const std::string manifest = ctx.analysis_dir + "/norms.manifest.json";
    const std::vector<std::string> outputs = {"norms.csv", "parity.csv",
                                              "norms_corr.json"};
    std::vector<std::string> output_abs;
    for (const auto& o : outputs) output_abs.push_back(ctx.analysis_dir + "/" + o);
    if (manifest_up_to_date(manifest, inputs, output_abs, "")) return false;

    const PromptSet prompts = load_prompts(ctx.cfg->prompts_primary);

    std::vector<uint64_t> all_seeds = ctx.pair_seeds;
    all_seeds.push_back(ctx.anchor_seed);
    std::sort(all_seeds.begin(), all_seeds.end());

    // Validation windows from the held-out split.
    std::vector<std::vector<int>> val_seqs;
    const size_t available = corpus.val_window_count(ctx.cfg->n_ctx_train);
    const size_t use = std::min<size_t>(static_cast<size_t>(ctx.cfg->val_windows), available);
    if (use == 0) throw UsageError("norms: corpus has no validation windows");
    for (size_t w = 0; w < use; ++w)
        val_seqs.push_back(corpus.val_window(static_cast<uint32_t>(w), ctx.cfg->n_ctx_train));

    CsvWriter norms_csv({"arch_id", "optimizer", "seed", "layer", "head",
                         "query_norm", "head_output_norm"});
    CsvWriter parity_csv({"arch_id", "optimizer", "seed", "val_ppl",
                          "mean_query_norm", "mean_head_output_norm"});
    std::vector<double> anchor_qnorms;
    const int L = ctx.group->base_cfg.n_layers;
    const int H = ctx.group->base_cfg.n_heads;
    for (uint64_t seed : all_seeds) {
        const Checkpoint ckpt =
            load_checkpoint(ctx.abs_path(ctx.refit_rel(seed, "ckpt.bin")));
        const auto qn = query_norms(ckpt.params);
        const auto on = head_output_norms(ckpt.params, prompts);
        if (seed == ctx.anchor_seed) anchor_qnorms = qn;
        double q_acc = 0.0, o_acc = 0.0;
        for (int l = 0; l < L; ++l) {
            for (int h = 0; h < H; ++h) {
                const size_t idx = static_cast<size_t>(l) * H + static_cast<size_t>(h);
                norms_csv.add_row({hex64(ctx.group->arch_id),
                                   optimizer_name(ctx.group->train_cfg.optimizer),
                                   std::to_string(seed), std::to_string(l + 1),
                                   std::to_string(h), CsvWriter::num(qn[idx]),
                                   CsvWriter::num(on[idx])});
                q_acc += qn[idx];
                o_acc += on[idx];
            }
        }
        const double val_ppl = perplexity_tokens(
            ckpt.params, val_seqs, HeadMask::all_active(ckpt.model_cfg));
        parity_csv.add_row({hex64(ctx.group->arch_id),
                            optimizer_name(ctx.group->train_cfg.optimizer),
                            std::to_string(seed), CsvWriter::num(val_ppl),
                            CsvWriter::num(q_acc / (L * H)),
                            CsvWriter::num(o_acc / (L * H))});
    }
    norms_csv.write(ctx.analysis_dir + "/norms.csv");
    parity_csv.write(ctx.analysis_dir + "/parity.csv");

    std::ifstream prof_in(profile_path);
    const LayerStabilityProfile prof =
        profile_from_json(nlohmann::json::parse(prof_in));
    nlohmann::json corr_json{
        {"arch_id", hex64(ctx.group->arch_id)},
        {"anchor_seed", ctx.anchor_seed},
        {"weights_only", true},
    };
    if (L >= 3) {
        try {
            corr_json["pearson_qnorm_vs_stability"] =
                norm_stability_correlation(prof, anchor_qnorms, L, H);
        } catch (const DegenerateError&) {
            corr_json["pearson_qnorm_vs_stability"] = nullptr;
            corr_json["note"] = "degenerate variance; reported as missing";
        }
    } else {
        corr_json["pearson_qnorm_vs_stability"] = nullptr;
        corr_json["note"] = "needs at least 3 layers";
    }
    svg::write_file(ctx.analysis_dir + "/norms_corr.json", corr_json.dump(2) + "\n");
    write_manifest(manifest, "norms", inputs, outputs,
                   {{"anchor_seed", ctx.anchor_seed},
                    {"val_windows", static_cast<int>(use)}});
    return true;
}

bool run_metasne(const ExperimentConfig& cfg,
                 const std::vector<ArchGroup>& groups,
                 const std::string& primary_name) {
    const std::string dir = cfg.out_root + "/analysis/metasne";
    fs::create_directories(dir);

    std::vector<std::string> inputs_rel;
    for (const ArchGroup& group : groups) {
        for (uint64_t seed : group.seeds) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "seed%04llu",
                          static_cast<unsigned long long>(seed));
            inputs_rel.push_back("refits/" + group.tag + "/" + std::string(buf) +
                                 "/sig__" + primary_name + ".bin");
        }
    }
    for (const auto& rel : inputs_rel)
        require_exists(cfg.out_root + "/" + rel, "seedstab dump --config <config>");
    const nlohmann::json inputs = manifest_inputs(inputs_rel, cfg.out_root);
    const std::string manifest = dir + "/metasne.manifest.json";
    const std::vector<std::string> outputs = {"points.csv", "metasne.svg"};
    std::vector<std::string> output_abs;
    for (const auto& o : outputs) output_abs.push_back(dir + "/" + o);
    if (manifest_up_to_date(manifest, inputs, output_abs, "")) return false;

    struct PointMeta {
        std::string arch_id;
        std::string optimizer;
        uint64_t seed;
        int layer;
        int head;
        double r_l;
    };
    std::vector<PointMeta> meta;
    std::vector<std::vector<double>> features;
    size_t rel_idx = 0;
    for (const ArchGroup& group : groups) {
        for (uint64_t seed : group.seeds) {
            const HeadSignatureDump sig =
                load_signature_dump(cfg.out_root + "/" + inputs_rel[rel_idx++]);
            for (int l = 0; l < sig.n_layers; ++l) {
                for (int h = 0; h < sig.n_heads; ++h) {
                    const HeadGeometry geom = head_distance_matrix(sig, l, h);
                    features.push_back(meta_feature(geom));
                    meta.push_back({hex64(group.arch_id),
                                    optimizer_name(group.train_cfg.optimizer), seed,
                                    l, h, geom.relative_depth});
                }
            }
        }
    }

    const int n = static_cast<int>(features.size());
    const double perplexity =
        std::min(30.0, (static_cast<double>(n) - 1.0) / 3.0 * (1.0 - 1e-9));
    const Embedding2D emb = tsne(features, perplexity, 1000, cfg.tsne_seed);

    CsvWriter csv({"arch_id", "optimizer", "seed", "layer", "head", "r_l", "x", "y"});
    std::vector<svg::ScatterPoint> points;
    for (size_t i = 0; i < meta.size(); ++i) {
        csv.add_row({meta[i].arch_id, meta[i].optimizer, std::to_string(meta[i].seed),
                     std::to_string(meta[i].layer + 1), std::to_string(meta[i].head),
                     CsvWriter::num(meta[i].r_l), CsvWriter::num(emb.points[i][0]),
                     CsvWriter::num(emb.points[i][1])});
        points.push_back({emb.points[i][0], emb.points[i][1],
                          svg::ramp_color(meta[i].r_l)});
    }
    csv.write(dir + "/points.csv");
    svg::write_file(dir + "/metasne.svg",
                    svg::scatter_chart("meta-SNE of attention heads (color = relative depth)",
                                       "x", "y", points,
                                       {{"shallow", svg::ramp_color(0.0)},
                                        {"mid", svg::ramp_color(0.5)},
                                        {"deep", svg::ramp_color(1.0)}}));
    write_manifest(manifest, "metasne", inputs, outputs,
                   {{"perplexity", perplexity},
                    {"iters", 1000},
                    {"seed", cfg.tsne_seed}});
    return true;
}

}  // namespace

const std::set<std::string>& all_analyses() {
    static const std::set<std::string> kAll = {
        "stability", "cross_layer", "uniqueness", "cka",
        "ablate",    "metasne",     "sweep",      "norms"};
    return kAll;
}

int cmd_analyze(const ExperimentConfig& cfg, const AnalyzeOptions& opts) {
    cfg.validate();
    std::set<std::string> which = opts.which.empty() ? all_analyses() : opts.which;
    for (const std::string& w : which) {
        if (!all_analyses().count(w))
            throw UsageError("unknown analysis '" + w + "'");
    }
    if (which.count("sweep") && cfg.prompts_sweep.empty()) {
        if (!opts.which.empty())
            throw UsageError("sweep analysis requested but the config sets no prompts_sweep");
        which.erase("sweep");
    }

    const PromptSet primary = load_prompts(cfg.prompts_primary);
    const std::vector<ArchGroup> groups = enumerate_groups(cfg);

    // The corpus is only needed for the norms/parity analysis.
    std::optional<TokenCorpus> corpus;
    if (which.count("norms"))
        corpus = TokenCorpus::load(cfg.corpus_path, cfg.val_fraction);

    int produced = 0;
    for (const ArchGroup& group : groups) {
        GroupContext ctx;
        ctx.cfg = &cfg;
        ctx.group = &group;
        ctx.analysis_dir = cfg.out_root + "/analysis/" + group.tag;
        ctx.anchor_seed = pick_anchor(group.seeds, opts.anchor_seed);
        for (uint64_t s : group.seeds)
            if (s != ctx.anchor_seed) ctx.pair_seeds.push_back(s);
        std::sort(ctx.pair_seeds.begin(), ctx.pair_seeds.end());
        ctx.primary_name = primary.name;
        fs::create_directories(ctx.analysis_dir);

        // stability first: cka/ablate/norms consume its outputs.
        if (which.count("stability")) produced += run_stability(ctx) ? 1 : 0;
        if (which.count("cross_layer")) produced += run_cross_layer(ctx) ? 1 : 0;
        if (which.count("uniqueness")) produced += run_uniqueness(ctx) ? 1 : 0;
        if (which.count("cka")) produced += run_cka(ctx) ? 1 : 0;
        if (which.count("ablate")) produced += run_ablate(ctx) ? 1 : 0;
        if (which.count("sweep")) produced += run_sweep(ctx) ? 1 : 0;
        if (which.count("norms")) produced += run_norms(ctx, *corpus) ? 1 : 0;
    }
    if (which.count("metasne"))
        produced += run_metasne(cfg, groups, primary.name) ? 1 : 0;
    return produced;
}

}  // namespace seedstab
