#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "seedstab/config.hpp"
#include "seedstab/corpus.hpp"
#include "seedstab/store.hpp"

namespace seedstab {

// Experiment description parsed from a TOML config: the architecture matrix
// (depths x heads x attn_only), the seed list, the optimizer variants and the
// shared training/data knobs.
struct ExperimentConfig {
    std::vector<int> depths;
    std::vector<int> heads;
    std::vector<bool> attn_only_variants;
    std::vector<uint64_t> seeds;
    std::vector<OptimizerKind> optimizers;
    double weight_decay = 0.1;

    int d_head = 8;
    int mlp_ratio = 4;  // d_mlp = mlp_ratio * d_model
    int n_ctx = 512;
    int d_vocab = 257;

    double lr = 1e-3;
    int batch_size = 8;
    int max_steps = 2000;
    int checkpoint_every = 500;
    int n_ctx_train = 128;
    double val_fraction = 0.05;
    int val_windows = 32;

    std::string corpus_path;
    std::string prompts_primary;
    std::string prompts_sweep;  // optional; empty disables sweep dumps
    std::string out_root = "out";
    int workers = 2;
    uint64_t tsne_seed = 1;

    static ExperimentConfig from_file(const std::string& path);
    void validate() const;
};

// One (architecture, optimizer) combination and its seeds.
struct ArchGroup {
    ModelConfig base_cfg;  // seed field is a placeholder
    TrainConfig train_cfg;
    std::vector<uint64_t> seeds;
    std::string tag;      // e.g. L4H4-mlp-adamw-1a2b3c4d
    uint64_t arch_id = 0;
};

std::vector<ArchGroup> enumerate_groups(const ExperimentConfig& cfg);

std::string refit_dir(const ExperimentConfig& cfg, const ArchGroup& group,
                      uint64_t seed);

struct AnalyzeOptions {
    std::set<std::string> which;  // empty means everything
    std::optional<uint64_t> anchor_seed;
};

const std::set<std::string>& all_analyses();

// Pipeline commands. All are idempotent: completed work is detected through
// digest manifests and skipped. Each returns the number of newly produced
// units (refits trained, dumps written, analyses run).
int cmd_train(const ExperimentConfig& cfg);
int cmd_dump(const ExperimentConfig& cfg);
int cmd_analyze(const ExperimentConfig& cfg, const AnalyzeOptions& opts);
int cmd_report(const ExperimentConfig& cfg);

// CSV helper shared by the analysis and report writers: UTF-8, header row,
// '\n' line endings, %.17g numbers.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> columns);
    void add_row(const std::vector<std::string>& cells);
    std::string text() const;
    void write(const std::string& path) const;

    static std::string num(double v);

private:
    std::vector<std::string> columns_;
    std::vector<std::vector<std::string>> rows_;
};

// Digest-based manifest used for idempotency and reproducibility tracking.
nlohmann::json manifest_inputs(const std::vector<std::string>& paths,
                               const std::string& base_dir);
bool manifest_up_to_date(const std::string& manifest_path,
                         const nlohmann::json& inputs,
                         const std::vector<std::string>& outputs,
                         const std::string& base_dir);
void write_manifest(const std::string& manifest_path, const std::string& kind,
                    const nlohmann::json& inputs,
                    const std::vector<std::string>& outputs,
                    const nlohmann::json& params);

uint64_t file_digest(const std::string& path);

}  // namespace seedstab
