#include "seedstab/store.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace seedstab {

namespace tensorfile {

namespace {

void put_u64_le(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64_le(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

// Payload floats are serialized little-endian explicitly; on the usual
// little-endian hosts this is a straight memcpy.
void append_f32_le(std::string& out, const float* data, int64_t n) {
    static_assert(sizeof(float) == 4);
    const size_t bytes = static_cast<size_t>(n) * 4;
    const size_t base = out.size();
    out.resize(base + bytes);
    std::memcpy(&out[base], data, bytes);
}

}  // namespace

void write(const std::string& path, const std::map<std::string, Tensor>& tensors,
           const nlohmann::json& metadata) {
    nlohmann::json header;
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        const uint64_t length = static_cast<uint64_t>(t.numel()) * 4;
        header[name] = {
            {"dtype", "f32"},
            {"shape", t.shape},
            {"offset", offset},
            {"length", length},
        };
        offset += length;
    }
    nlohmann::json meta = metadata;
    meta["format_version"] = kFormatVersion;
    header["__metadata__"] = meta;

    std::string blob;
    const std::string header_text = header.dump();
    blob.reserve(8 + header_text.size() + offset);
    put_u64_le(blob, header_text.size());
    blob += header_text;
    for (const auto& [name, t] : tensors) append_f32_le(blob, t.ptr(), t.numel());

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for write: " + tmp);
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!out) throw IoError("short write: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw IoError("cannot move " + tmp + " into place");
}

Loaded read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    if (bytes.size() < 8)
        throw StoreError(StoreError::Code::corrupt_header,
                         path + ": file shorter than the header length prefix");
    const uint64_t header_len =
        get_u64_le(reinterpret_cast<const unsigned char*>(bytes.data()));
    if (8 + header_len > bytes.size())
        throw StoreError(StoreError::Code::corrupt_header,
                         path + ": header length exceeds file size");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 8,
                                       bytes.begin() + 8 + static_cast<ptrdiff_t>(header_len));
    } catch (const nlohmann::json::parse_error& e) {
        throw StoreError(StoreError::Code::corrupt_header,
                         path + ": header is not valid JSON: " + e.what());
    }
    if (!header.is_object())
        throw StoreError(StoreError::Code::corrupt_header,
                         path + ": header is not a JSON object");

    Loaded loaded;
    if (header.contains("__metadata__")) {
        loaded.metadata = header["__metadata__"];
        header.erase("__metadata__");
    }
    const int version = loaded.metadata.value("format_version", -1);
    if (version != kFormatVersion)
        throw StoreError(StoreError::Code::version_mismatch,
                         path + ": format version " + std::to_string(version) +
                             " (expected " + std::to_string(kFormatVersion) + ")");

    const size_t payload_base = 8 + header_len;
    const size_t payload_size = bytes.size() - payload_base;
    uint64_t expected_offset = 0;
    for (auto it = header.begin(); it != header.end(); ++it) {
        const auto& entry = it.value();
        if (!entry.is_object() || !entry.contains("shape") ||
            !entry.contains("offset") || !entry.contains("length") ||
            entry.value("dtype", "") != "f32")
            throw StoreError(StoreError::Code::corrupt_header,
                             path + ": malformed entry for tensor '" + it.key() + "'");
        const auto shape = entry["shape"].get<std::vector<int64_t>>();
        const uint64_t offset = entry["offset"].get<uint64_t>();
        const uint64_t length = entry["length"].get<uint64_t>();
        if (offset != expected_offset)
            throw StoreError(StoreError::Code::corrupt_header,
                             path + ": tensor '" + it.key() +
                                 "' offset out of order or overlapping");
        const int64_t numel = Tensor::product(shape);
        if (numel < 0 || static_cast<uint64_t>(numel) * 4 != length)
            throw StoreError(StoreError::Code::corrupt_header,
                             path + ": tensor '" + it.key() +
                                 "' shape does not match byte length");
        if (offset + length > payload_size)
            throw StoreError(StoreError::Code::truncated_payload,
                             path + ": payload truncated at tensor '" + it.key() + "'");
        Tensor t = Tensor::zeros(shape);
        std::memcpy(t.ptr(), bytes.data() + payload_base + offset, length);
        loaded.tensors.emplace(it.key(), std::move(t));
        expected_offset = offset + length;
    }
    if (expected_offset != payload_size)
        throw StoreError(StoreError::Code::truncated_payload,
                         path + ": payload size does not match header total");
    return loaded;
}

}  // namespace tensorfile

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::map<std::string, Tensor> tensors;
    ckpt.params.for_each([&](const std::string& name, const Tensor& t) {
        tensors.emplace("params." + name, t);
    });
    nlohmann::json meta{
        {"kind", "checkpoint"},
        {"model_cfg", ckpt.model_cfg.to_json()},
        {"train_cfg", ckpt.train_cfg.to_json()},
        {"seed", ckpt.seed},
        {"step", ckpt.step},
        {"loss_history", ckpt.loss_history},
        {"diverged", ckpt.diverged},
        {"arch_id", hex64(ckpt.model_cfg.arch_id())},
    };
    tensorfile::write(path, tensors, meta);
}

Checkpoint load_checkpoint(const std::string& path) {
    tensorfile::Loaded loaded = tensorfile::read(path);
    if (loaded.metadata.value("kind", "") != "checkpoint")
        throw StoreError(StoreError::Code::corrupt_header,
                         path + ": not a checkpoint file");
    Checkpoint ckpt;
    ckpt.model_cfg = ModelConfig::from_json(loaded.metadata.at("model_cfg"));
    ckpt.train_cfg = TrainConfig::from_json(loaded.metadata.at("train_cfg"));
    ckpt.seed = loaded.metadata.at("seed").get<uint64_t>();
    ckpt.step = loaded.metadata.at("step").get<int64_t>();
    ckpt.loss_history = loaded.metadata.at("loss_history").get<std::vector<double>>();
    ckpt.diverged = loaded.metadata.value("diverged", false);
    ckpt.params = Parameters::zeros_like(ckpt.model_cfg);
    ckpt.params.for_each([&](const std::string& name, Tensor& t) {
        auto it = loaded.tensors.find("params." + name);
        if (it == loaded.tensors.end())
            throw StoreError(StoreError::Code::corrupt_header,
                             path + ": missing tensor params." + name);
        if (it->second.shape != t.shape)
            throw StoreError(StoreError::Code::corrupt_header,
                             path + ": shape mismatch for params." + name);
        t = std::move(it->second);
    });
    return ckpt;
}

namespace {

std::string prompt_key(size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%05zu", index);
    return buf;
}

nlohmann::json dump_meta(const char* kind, uint64_t seed, uint64_t arch_id,
                         const std::string& prompt_set,
                         const std::vector<uint64_t>& digests,
                         const std::vector<int>& seq_lens) {
    nlohmann::json meta{
        {"kind", kind},
        {"seed", seed},
        {"arch_id", hex64(arch_id)},
        {"prompt_set", prompt_set},
    };
    std::vector<std::string> dig;
    dig.reserve(digests.size());
    for (uint64_t d : digests) dig.push_back(hex64(d));
    meta["prompt_digests"] = dig;
    if (!seq_lens.empty()) meta["seq_lens"] = seq_lens;
    return meta;
}

std::vector<uint64_t> parse_digests(const nlohmann::json& meta) {
    std::vector<uint64_t> out;
    for (const auto& s : meta.at("prompt_digests"))
        out.push_back(std::stoull(s.get<std::string>(), nullptr, 16));
    return out;
}

void validate_attention_matrices(const std::string& path, const AttentionDump& d) {
    for (size_t p = 0; p < d.scores.size(); ++p) {
        const int T = d.seq_lens[p];
        for (int l = 0; l < d.n_layers; ++l) {
            for (int h = 0; h < d.n_heads; ++h) {
                const float* m = d.matrix(static_cast<int>(p), l, h);
                for (int i = 0; i < T; ++i) {
                    double row_sum = 0.0;
                    for (int j = 0; j < T; ++j) {
                        const float v = m[static_cast<int64_t>(i) * T + j];
                        if (j > i && v != 0.0f)
                            throw StoreError(StoreError::Code::corrupt_header,
                                             path + ": attention matrix violates causal mask");
                        if (v < 0.0f)
                            throw StoreError(StoreError::Code::corrupt_header,
                                             path + ": negative attention score");
                        row_sum += v;
                    }
                    if (std::fabs(row_sum - 1.0) >= 1e-5)
                        throw StoreError(StoreError::Code::corrupt_header,
                                         path + ": attention row does not sum to 1");
                }
            }
        }
    }
}

}  // namespace

TraceDumps dump_traces(const Checkpoint& ckpt, const PromptSet& prompts) {
    if (prompts.prompts.empty()) throw UsageError("dump_traces: empty prompt set");
    const ModelConfig& cfg = ckpt.model_cfg;
    const HeadMask mask = HeadMask::all_active(cfg);
    const size_t P = prompts.size();

    TraceDumps out;
    out.attention.n_layers = cfg.n_layers;
    out.attention.n_heads = cfg.n_heads;
    out.attention.seed = ckpt.seed;
    out.attention.arch_id = cfg.arch_id();
    out.attention.prompt_set = prompts.name;
    out.residual.n_layers = cfg.n_layers;
    out.residual.d_model = cfg.d_model;
    out.residual.seed = ckpt.seed;
    out.residual.arch_id = cfg.arch_id();
    out.residual.prompt_set = prompts.name;
    out.signatures.n_layers = cfg.n_layers;
    out.signatures.n_heads = cfg.n_heads;
    out.signatures.d_head = cfg.d_head;
    out.signatures.seed = ckpt.seed;
    out.signatures.arch_id = cfg.arch_id();
    out.signatures.prompt_set = prompts.name;
    out.signatures.signatures = Tensor::zeros(
        {cfg.n_layers, cfg.n_heads, static_cast<int64_t>(P), cfg.d_head});

    for (size_t p = 0; p < P; ++p) {
        const std::string& text = prompts.prompts[p];
        const uint64_t digest = fnv1a64(text);
        const auto tokens = tokenize_prompt(cfg, text);
        const ForwardTrace trace = forward(ckpt.params, tokens, mask);
        const int T = trace.seq_len;

        out.attention.prompt_digests.push_back(digest);
        out.attention.seq_lens.push_back(T);
        Tensor att = Tensor::zeros({cfg.n_layers, cfg.n_heads, T, T});
        for (int l = 0; l < cfg.n_layers; ++l) {
            std::memcpy(att.ptr() + static_cast<int64_t>(l) * cfg.n_heads * T * T,
                        trace.attention[static_cast<size_t>(l)].ptr(),
                        static_cast<size_t>(cfg.n_heads) * T * T * 4);
        }
        out.attention.scores.push_back(std::move(att));

        out.residual.prompt_digests.push_back(digest);
        out.residual.seq_lens.push_back(T);
        Tensor resid = Tensor::zeros({cfg.n_layers, T, cfg.d_model});
        for (int l = 0; l < cfg.n_layers; ++l) {
            std::memcpy(resid.ptr() + static_cast<int64_t>(l) * T * cfg.d_model,
                        trace.resid_post_attn[static_cast<size_t>(l)].ptr(),
                        static_cast<size_t>(T) * cfg.d_model * 4);
        }
        out.residual.resid.push_back(std::move(resid));

        out.signatures.prompt_digests.push_back(digest);
        for (int l = 0; l < cfg.n_layers; ++l) {
            const Tensor& ho = trace.head_outputs[static_cast<size_t>(l)];
            for (int h = 0; h < cfg.n_heads; ++h) {
                float* sig = out.signatures.signatures.ptr() +
                             (((static_cast<int64_t>(l) * cfg.n_heads + h) *
                                   static_cast<int64_t>(P) +
                               static_cast<int64_t>(p)) *
                              cfg.d_head);
                const float* base = ho.ptr() + static_cast<int64_t>(h) * T * cfg.d_head;
                for (int d = 0; d < cfg.d_head; ++d) {
                    double acc = 0.0;
                    for (int t = 0; t < T; ++t)
                        acc += base[static_cast<int64_t>(t) * cfg.d_head + d];
                    sig[d] = static_cast<float>(acc / static_cast<double>(T));
                }
            }
        }
    }
    return out;
}

void save_attention_dump(const std::string& path, const AttentionDump& dump) {
    std::map<std::string, Tensor> tensors;
    for (size_t p = 0; p < dump.scores.size(); ++p)
        tensors.emplace(prompt_key(p), dump.scores[p]);
    nlohmann::json meta = dump_meta("attention", dump.seed, dump.arch_id,
                                    dump.prompt_set, dump.prompt_digests,
                                    dump.seq_lens);
    meta["n_layers"] = dump.n_layers;
    meta["n_heads"] = dump.n_heads;
    tensorfile::write(path, tensors, meta);
}

AttentionDump load_attention_dump(const std::string& path) {
    tensorfile::Loaded loaded = tensorfile::read(path);
    if (loaded.metadata.value("kind", "") != "attention")
        throw StoreError(StoreError::Code::corrupt_header,
                         path + ": not an attention dump");
    AttentionDump d;
    d.n_layers = loaded.metadata.at("n_layers").get<int>();
    d.n_heads = loaded.metadata.at("n_heads").get<int>();
    d.seed = loaded.metadata.at("seed").get<uint64_t>();
    d.arch_id = std::stoull(loaded.metadata.at("arch_id").get<std::string>(), nullptr, 16);
    d.prompt_set = loaded.metadata.value("prompt_set", "");
    d.prompt_digests = parse_digests(loaded.metadata);
    d.seq_lens = loaded.metadata.at("seq_lens").get<std::vector<int>>();
    d.scores.reserve(d.prompt_digests.size());
    for (size_t p = 0; p < d.prompt_digests.size(); ++p) {
        auto it = loaded.tensors.find(prompt_key(p));
        if (it == loaded.tensors.end())
            throw StoreError(StoreError::Code::corrupt_header,
                             path + ": missing prompt tensor " + prompt_key(p));
        d.scores.push_back(std::move(it->second));
    }
    validate_attention_matrices(path, d);
    return d;
}

void save_residual_dump(const std::string& path, const ResidualDump& dump) {
    std::map<std::string, Tensor> tensors;
    for (size_t p = 0; p < dump.resid.size(); ++p)
        tensors.emplace(prompt_key(p), dump.resid[p]);
    nlohmann::json meta = dump_meta("residual", dump.seed, dump.arch_id,
                                    dump.prompt_set, dump.prompt_digests,
                                    dump.seq_lens);
    meta["n_layers"] = dump.n_layers;
    meta["d_model"] = dump.d_model;
    tensorfile::write(path, tensors, meta);
}

ResidualDump load_residual_dump(const std::string& path) {
    tensorfile::Loaded loaded = tensorfile::read(path);
    if (loaded.metadata.value("kind", "") != "residual")
        throw StoreError(StoreError::Code::corrupt_header,
                         path + ": not a residual dump");
    ResidualDump d;
    d.n_layers = loaded.metadata.at("n_layers").get<int>();
    d.d_model = loaded.metadata.at("d_model").get<int>();
    d.seed = loaded.metadata.at("seed").get<uint64_t>();
    d.arch_id = std::stoull(loaded.metadata.at("arch_id").get<std::string>(), nullptr, 16);
    d.prompt_set = loaded.metadata.value("prompt_set", "");
    d.prompt_digests = parse_digests(loaded.metadata);
    d.seq_lens = loaded.metadata.at("seq_lens").get<std::vector<int>>();
    for (size_t p = 0; p < d.prompt_digests.size(); ++p) {
        auto it = loaded.tensors.find(prompt_key(p));
        if (it == loaded.tensors.end())
            throw StoreError(StoreError::Code::corrupt_header,
                             path + ": missing prompt tensor " + prompt_key(p));
        d.resid.push_back(std::move(it->second));
    }
    return d;
}

void save_signature_dump(const std::string& path, const HeadSignatureDump& dump) {
    std::map<std::string, Tensor> tensors;
    tensors.emplace("signatures", dump.signatures);
    nlohmann::json meta = dump_meta("signatures", dump.seed, dump.arch_id,
                                    dump.prompt_set, dump.prompt_digests, {});
    meta["n_layers"] = dump.n_layers;
    meta["n_heads"] = dump.n_heads;
    meta["d_head"] = dump.d_head;
    tensorfile::write(path, tensors, meta);
}

HeadSignatureDump load_signature_dump(const std::string& path) {
    tensorfile::Loaded loaded = tensorfile::read(path);
    if (loaded.metadata.value("kind", "") != "signatures")
        throw StoreError(StoreError::Code::corrupt_header,
                         path + ": not a signature dump");
    HeadSignatureDump d;
    d.n_layers = loaded.metadata.at("n_layers").get<int>();
    d.n_heads = loaded.metadata.at("n_heads").get<int>();
    d.d_head = loaded.metadata.at("d_head").get<int>();
    d.seed = loaded.metadata.at("seed").get<uint64_t>();
    d.arch_id = std::stoull(loaded.metadata.at("arch_id").get<std::string>(), nullptr, 16);
    d.prompt_set = loaded.metadata.value("prompt_set", "");
    d.prompt_digests = parse_digests(loaded.metadata);
    auto it = loaded.tensors.find("signatures");
    if (it == loaded.tensors.end())
        throw StoreError(StoreError::Code::corrupt_header,
                         path + ": missing signatures tensor");
    d.signatures = std::move(it->second);
    return d;
}

}  // namespace seedstab
