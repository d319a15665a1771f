#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "seedstab/store.hpp"

using namespace seedstab;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() : path("/tmp/seedstab_store_test") {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

Checkpoint tiny_checkpoint(uint64_t seed) {
    const ModelConfig cfg = ModelConfig::make(2, 2, 8, 32, false, 64, 257, seed);
    Checkpoint ckpt;
    ckpt.model_cfg = cfg;
    ckpt.train_cfg.optimizer = OptimizerKind::adam;
    ckpt.train_cfg.lr = 1e-3;
    ckpt.train_cfg.batch_size = 2;
    ckpt.train_cfg.max_steps = 0;
    ckpt.train_cfg.checkpoint_every = 1;
    ckpt.train_cfg.n_ctx_train = 16;
    ckpt.seed = seed;
    ckpt.step = 0;
    ckpt.params = init_params(cfg);
    ckpt.loss_history = {5.5, 5.25};
    return ckpt;
}

PromptSet tiny_prompts() {
    PromptSet p;
    p.name = "tiny";
    p.prompts = {"ab", "the cat", "xyz!"};
    return p;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_SUITE("store") {

TEST_CASE("checkpoint round-trip is bit-exact") {
    TempDir dir;
    const Checkpoint ckpt = tiny_checkpoint(3);
    save_checkpoint(dir.file("ckpt.bin"), ckpt);
    const Checkpoint loaded = load_checkpoint(dir.file("ckpt.bin"));

    CHECK(loaded.seed == ckpt.seed);
    CHECK(loaded.loss_history == ckpt.loss_history);
    bool same = true;
    std::vector<const Tensor*> ts;
    ckpt.params.for_each([&](const std::string&, const Tensor& t) { ts.push_back(&t); });
    size_t i = 0;
    loaded.params.for_each([&](const std::string&, const Tensor& t) {
        if (t.data != ts[i++]->data) same = false;
    });
    CHECK(same);

    // Reload produces bit-identical logits on a probe prompt.
    const auto tokens = tokenize_prompt(ckpt.model_cfg, "probe");
    const ForwardTrace a = forward(ckpt.params, tokens);
    const ForwardTrace b = forward(loaded.params, tokens);
    CHECK(a.logits.data == b.logits.data);
}

TEST_CASE("truncated payload and corrupt header raise distinct codes") {
    TempDir dir;
    save_checkpoint(dir.file("ckpt.bin"), tiny_checkpoint(4));
    std::string bytes = read_file(dir.file("ckpt.bin"));

    write_file(dir.file("trunc.bin"), bytes.substr(0, bytes.size() - 1));
    try {
        load_checkpoint(dir.file("trunc.bin"));
        FAIL("expected StoreError");
    } catch (const StoreError& e) {
        CHECK(e.code == StoreError::Code::truncated_payload);
    }

    // Corrupt the header: flip a shape digit inside the JSON region.
    std::string corrupted = bytes;
    const size_t pos = corrupted.find("\"shape\":[");
    REQUIRE(pos != std::string::npos);
    corrupted[pos + 9] = corrupted[pos + 9] == '9' ? '8' : '9';
    write_file(dir.file("corrupt.bin"), corrupted);
    try {
        load_checkpoint(dir.file("corrupt.bin"));
        FAIL("expected StoreError");
    } catch (const StoreError& e) {
        CHECK(e.code == StoreError::Code::corrupt_header);
    }
}

TEST_CASE("version mismatch is its own error code") {
    TempDir dir;
    save_checkpoint(dir.file("ckpt.bin"), tiny_checkpoint(5));
    std::string bytes = read_file(dir.file("ckpt.bin"));
    const std::string needle = "\"format_version\":1";
    const size_t pos = bytes.find(needle);
    REQUIRE(pos != std::string::npos);
    bytes[pos + needle.size() - 1] = '7';
    write_file(dir.file("vers.bin"), bytes);
    try {
        load_checkpoint(dir.file("vers.bin"));
        FAIL("expected StoreError");
    } catch (const StoreError& e) {
        CHECK(e.code == StoreError::Code::version_mismatch);
    }
}

TEST_CASE("dump_traces shapes and determinism") {
    TempDir dir;
    const Checkpoint ckpt = tiny_checkpoint(6);
    PromptSet one;
    one.name = "one";
    one.prompts = {"ab"};  // BOS + 2 bytes -> T = 3
    const TraceDumps d = dump_traces(ckpt, one);
    CHECK(d.attention.scores.size() == 1);
    CHECK(d.attention.scores[0].shape == std::vector<int64_t>{2, 2, 3, 3});
    CHECK(d.residual.resid[0].shape == std::vector<int64_t>{2, 3, 8});
    CHECK(d.signatures.signatures.shape == std::vector<int64_t>{2, 2, 1, 4});

    save_attention_dump(dir.file("a1.bin"), d.attention);
    const TraceDumps d2 = dump_traces(ckpt, one);
    save_attention_dump(dir.file("a2.bin"), d2.attention);
    CHECK(read_file(dir.file("a1.bin")) == read_file(dir.file("a2.bin")));
}

TEST_CASE("signatures of a zero-parameter model are all zero") {
    Checkpoint ckpt = tiny_checkpoint(7);
    ckpt.params = Parameters::zeros_like(ckpt.model_cfg);
    for (auto& l : ckpt.params.layers) {
        std::fill(l.ln1_w.data.begin(), l.ln1_w.data.end(), 1.0f);
        std::fill(l.ln2_w.data.begin(), l.ln2_w.data.end(), 1.0f);
    }
    std::fill(ckpt.params.lnf_w.data.begin(), ckpt.params.lnf_w.data.end(), 1.0f);
    const TraceDumps d = dump_traces(ckpt, tiny_prompts());
    for (float v : d.signatures.signatures.data) CHECK(v == 0.0f);
}

TEST_CASE("attention dumps round-trip and validate on load") {
    TempDir dir;
    const Checkpoint ckpt = tiny_checkpoint(8);
    const TraceDumps d = dump_traces(ckpt, tiny_prompts());

    save_attention_dump(dir.file("attn.bin"), d.attention);
    const AttentionDump loaded = load_attention_dump(dir.file("attn.bin"));
    CHECK(loaded.prompt_digests == d.attention.prompt_digests);
    CHECK(loaded.seq_lens == d.attention.seq_lens);
    for (size_t p = 0; p < loaded.scores.size(); ++p)
        CHECK(loaded.scores[p].data == d.attention.scores[p].data);

    save_residual_dump(dir.file("resid.bin"), d.residual);
    const ResidualDump resid = load_residual_dump(dir.file("resid.bin"));
    CHECK(resid.resid[0].data == d.residual.resid[0].data);

    save_signature_dump(dir.file("sig.bin"), d.signatures);
    const HeadSignatureDump sig = load_signature_dump(dir.file("sig.bin"));
    CHECK(sig.signatures.data == d.signatures.signatures.data);

    // A dump violating row-stochasticity is rejected by the mandatory check.
    AttentionDump bad = d.attention;
    bad.scores[0].data[0] = 0.5f;
    save_attention_dump(dir.file("bad.bin"), bad);
    CHECK_THROWS_AS(load_attention_dump(dir.file("bad.bin")), StoreError);
}

}  // TEST_SUITE
