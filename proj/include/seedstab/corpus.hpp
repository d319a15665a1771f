#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seedstab/common.hpp"

namespace seedstab {

// Byte-level tokenizer: token ids 0..255 are raw byte values and the last
// vocabulary slot is BOS. The standard vocabulary is 257 (256 bytes + BOS).
struct Tokenizer {
    int d_vocab = 257;

    int bos_id() const { return d_vocab - 1; }

    // Throws UsageError if a byte value does not fit the vocabulary.
    std::vector<int> encode(std::string_view text, bool prepend_bos) const;
    std::string decode(const std::vector<int>& tokens) const;
};

// A byte-tokenized training corpus with a train/val boundary.
struct TokenCorpus {
    std::vector<uint8_t> tokens;
    uint64_t source_digest = 0;
    size_t split = 0;  // train = tokens[0, split), val = tokens[split, end)

    static TokenCorpus load(const std::string& path, double val_fraction);
    static TokenCorpus from_bytes(std::string bytes, double val_fraction);

    size_t train_window_count(int window_len) const;
    size_t val_window_count(int window_len) const;

    // Deterministic shuffled order of the non-overlapping train windows;
    // a pure function of (source_digest, seed).
    std::vector<uint32_t> shuffled_train_windows(uint64_t seed,
                                                 int window_len) const;

    std::vector<int> train_window(uint32_t index, int window_len) const;
    std::vector<int> val_window(uint32_t index, int window_len) const;

    // Batch for one optimizer step: a pure function of
    // (source_digest, seed, step). Throws UsageError when the corpus cannot
    // supply max-step batches without reuse.
    std::vector<std::vector<int>> batch(uint64_t seed, int step, int batch_size,
                                        int window_len) const;
};

// An ordered prompt list; sweep sets carry their nominal whitespace-token
// length and are validated against it.
struct PromptSet {
    std::vector<std::string> prompts;
    std::string name;
    std::optional<int> nominal_length;

    size_t size() const { return prompts.size(); }
};

// Loads a JSON array of strings.
PromptSet load_prompts(const std::string& path);

// Loads a sweep file: a JSON object mapping integer-string keys to arrays of
// strings. Validates per-prompt whitespace token counts and the truncation
// prefix property across lengths. Returned sets are sorted by length.
std::vector<PromptSet> load_sweep_prompts(const std::string& path);

int whitespace_token_count(std::string_view text);

}  // namespace seedstab
