#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "seedstab/model.hpp"
#include "seedstab/optim.hpp"

namespace seedstab {

// ---------------------------------------------------------------------------
// TensorFile: a little-endian binary container.
//
//   [u64 header byte count][header JSON, UTF-8][payload: packed f32 blobs]
//
// The header maps tensor names to {dtype, shape, offset, length} plus a
// "__metadata__" object; offsets are payload-relative, assigned in header
// (lexicographic) order and contiguous.
// ---------------------------------------------------------------------------

namespace tensorfile {

constexpr int kFormatVersion = 1;

void write(const std::string& path, const std::map<std::string, Tensor>& tensors,
           const nlohmann::json& metadata);

struct Loaded {
    std::map<std::string, Tensor> tensors;
    nlohmann::json metadata;
};

// Throws StoreError with code corrupt_header / truncated_payload /
// version_mismatch, IoError when the file cannot be opened.
Loaded read(const std::string& path);

}  // namespace tensorfile

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Post-softmax attention score matrices for every (prompt, layer, head).
struct AttentionDump {
    int n_layers = 0;
    int n_heads = 0;
    uint64_t seed = 0;
    uint64_t arch_id = 0;
    std::string prompt_set;
    std::vector<uint64_t> prompt_digests;
    std::vector<int> seq_lens;
    std::vector<Tensor> scores;  // per prompt [L, H, T, T]

    const float* matrix(int prompt, int layer, int head) const {
        const int T = seq_lens[static_cast<size_t>(prompt)];
        return scores[static_cast<size_t>(prompt)].ptr() +
               ((static_cast<int64_t>(layer) * n_heads + head) *
                static_cast<int64_t>(T) * T);
    }
};

// Residual stream right after the attention addition, per prompt and layer.
struct ResidualDump {
    int n_layers = 0;
    int d_model = 0;
    uint64_t seed = 0;
    uint64_t arch_id = 0;
    std::string prompt_set;
    std::vector<uint64_t> prompt_digests;
    std::vector<int> seq_lens;
    std::vector<Tensor> resid;  // per prompt [L, T, D]
};

// Mean-pooled-over-positions head output vectors, one row per prompt.
struct HeadSignatureDump {
    int n_layers = 0;
    int n_heads = 0;
    int d_head = 0;
    uint64_t seed = 0;
    uint64_t arch_id = 0;
    std::string prompt_set;
    std::vector<uint64_t> prompt_digests;
    Tensor signatures;  // [L, H, P, d_head]

    const float* signature(int layer, int head, int prompt) const {
        return signatures.ptr() +
               (((static_cast<int64_t>(layer) * n_heads + head) *
                     static_cast<int64_t>(prompt_digests.size()) +
                 prompt) *
                d_head);
    }
};

struct TraceDumps {
    AttentionDump attention;
    ResidualDump residual;
    HeadSignatureDump signatures;
};

// One all-heads-active forward per prompt, recorded into the three dump kinds.
TraceDumps dump_traces(const Checkpoint& ckpt, const PromptSet& prompts);

void save_attention_dump(const std::string& path, const AttentionDump& dump);
AttentionDump load_attention_dump(const std::string& path);
void save_residual_dump(const std::string& path, const ResidualDump& dump);
ResidualDump load_residual_dump(const std::string& path);
void save_signature_dump(const std::string& path, const HeadSignatureDump& dump);
HeadSignatureDump load_signature_dump(const std::string& path);

}  // namespace seedstab
