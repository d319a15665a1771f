#include "seedstab/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace seedstab {

std::vector<int> Tokenizer::encode(std::string_view text, bool prepend_bos) const {
    std::vector<int> out;
    out.reserve(text.size() + 1);
    if (prepend_bos) out.push_back(bos_id());
    for (unsigned char c : text) {
        const int id = static_cast<int>(c);
        if (id >= d_vocab)
            throw UsageError("byte value " + std::to_string(id) +
                             " does not fit vocabulary of size " +
                             std::to_string(d_vocab));
        out.push_back(id);
    }
    return out;
}

std::string Tokenizer::decode(const std::vector<int>& tokens) const {
    std::string out;
    out.reserve(tokens.size());
    for (int id : tokens) {
        if (id == bos_id()) continue;
        out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
}

TokenCorpus TokenCorpus::load(const std::string& path, double val_fraction) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_bytes(ss.str(), val_fraction);
}

TokenCorpus TokenCorpus::from_bytes(std::string bytes, double val_fraction) {
    if (bytes.empty()) throw UsageError("corpus is empty");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw UsageError("val_fraction must lie in (0,1)");
    TokenCorpus c;
    c.tokens.assign(bytes.begin(), bytes.end());
    c.source_digest = fnv1a64(bytes);
    c.split = static_cast<size_t>((1.0 - val_fraction) *
                                  static_cast<double>(c.tokens.size()));
    return c;
}

size_t TokenCorpus::train_window_count(int window_len) const {
    return split / static_cast<size_t>(window_len);
}

size_t TokenCorpus::val_window_count(int window_len) const {
    return (tokens.size() - split) / static_cast<size_t>(window_len);
}

std::vector<uint32_t> TokenCorpus::shuffled_train_windows(uint64_t seed,
                                                          int window_len) const {
    const size_t n = train_window_count(window_len);
    std::vector<uint32_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = static_cast<uint32_t>(i);
    std::mt19937_64 gen(source_digest ^ (seed * 0x9e3779b97f4a7c15ull));
    // Fisher-Yates with explicit modulo draw; std::shuffle's draw pattern is
    // implementation-defined and this order must be stable.
    for (size_t i = n; i > 1; --i) {
        const size_t j = static_cast<size_t>(gen() % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

std::vector<int> TokenCorpus::train_window(uint32_t index, int window_len) const {
    const size_t base = static_cast<size_t>(index) * static_cast<size_t>(window_len);
    std::vector<int> w(static_cast<size_t>(window_len));
    for (int i = 0; i < window_len; ++i) w[static_cast<size_t>(i)] = tokens[base + static_cast<size_t>(i)];
    return w;
}

std::vector<int> TokenCorpus::val_window(uint32_t index, int window_len) const {
    const size_t base = split + static_cast<size_t>(index) * static_cast<size_t>(window_len);
    std::vector<int> w(static_cast<size_t>(window_len));
    for (int i = 0; i < window_len; ++i) w[static_cast<size_t>(i)] = tokens[base + static_cast<size_t>(i)];
    return w;
}

std::vector<std::vector<int>> TokenCorpus::batch(uint64_t seed, int step,
                                                 int batch_size,
                                                 int window_len) const {
    const auto order = shuffled_train_windows(seed, window_len);
    const size_t begin = static_cast<size_t>(step) * static_cast<size_t>(batch_size);
    if (begin + static_cast<size_t>(batch_size) > order.size())
        throw UsageError("corpus exhausted: step " + std::to_string(step) +
                         " needs windows beyond the " +
                         std::to_string(order.size()) + " available");
    std::vector<std::vector<int>> out;
    out.reserve(static_cast<size_t>(batch_size));
    for (int b = 0; b < batch_size; ++b)
        out.push_back(train_window(order[begin + static_cast<size_t>(b)], window_len));
    return out;
}

int whitespace_token_count(std::string_view text) {
    int count = 0;
    bool in_token = false;
    for (char c : text) {
        const bool ws = (c == ' ' || c == '\t' || c == '\n' || c == '\r');
        if (!ws && !in_token) ++count;
        in_token = !ws;
    }
    return count;
}

namespace {

nlohmann::json parse_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open prompt file: " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        // nlohmann reports the byte offset; recover line/column for the message.
        std::ifstream again(path, std::ios::binary);
        std::string text((std::istreambuf_iterator<char>(again)),
                         std::istreambuf_iterator<char>());
        size_t line = 1, col = 1;
        for (size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ParseError(path + ":" + std::to_string(line) + ":" +
                         std::to_string(col) + ": " + e.what());
    }
}

std::string stem_of(const std::string& path) {
    const size_t slash = path.find_last_of("/\\");
    const std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    const size_t dot = base.find_last_of('.');
    return dot == std::string::npos ? base : base.substr(0, dot);
}

}  // namespace

PromptSet load_prompts(const std::string& path) {
    const nlohmann::json j = parse_json_file(path);
    if (!j.is_array())
        throw ParseError(path + ": expected a JSON array of strings");
    PromptSet set;
    set.name = stem_of(path);
    for (const auto& item : j) {
        if (!item.is_string())
            throw ParseError(path + ": prompt entries must be strings");
        set.prompts.push_back(item.get<std::string>());
    }
    if (set.prompts.empty()) throw UsageError(path + ": prompt set is empty");
    return set;
}

std::vector<PromptSet> load_sweep_prompts(const std::string& path) {
    const nlohmann::json j = parse_json_file(path);
    if (!j.is_object())
        throw ParseError(path + ": expected a JSON object mapping length to prompts");
    struct Entry {
        int length;
        std::vector<std::string> prompts;
    };
    std::vector<Entry> entries;
    for (auto it = j.begin(); it != j.end(); ++it) {
        int length = 0;
        try {
            size_t pos = 0;
            length = std::stoi(it.key(), &pos);
            if (pos != it.key().size()) throw std::invalid_argument(it.key());
        } catch (const std::exception&) {
            throw ParseError(path + ": sweep keys must be integer strings, got '" +
                             it.key() + "'");
        }
        if (!it.value().is_array())
            throw ParseError(path + ": sweep values must be arrays of strings");
        Entry e;
        e.length = length;
        for (const auto& item : it.value()) {
            if (!item.is_string())
                throw ParseError(path + ": prompt entries must be strings");
            e.prompts.push_back(item.get<std::string>());
        }
        if (e.prompts.empty())
            throw UsageError(path + ": sweep length " + std::to_string(length) +
                             " has no prompts");
        entries.push_back(std::move(e));
    }
    if (entries.empty()) throw UsageError(path + ": sweep file is empty");
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.length < b.length; });

    const size_t count = entries.front().prompts.size();
    for (const auto& e : entries) {
        if (e.prompts.size() != count)
            throw ParseError(path + ": all sweep lengths must list the same number of prompts");
        for (size_t k = 0; k < e.prompts.size(); ++k) {
            const int got = whitespace_token_count(e.prompts[k]);
            if (got != e.length)
                throw ParseError(path + ": prompt " + std::to_string(k) +
                                 " of length set " + std::to_string(e.length) +
                                 " has " + std::to_string(got) +
                                 " whitespace tokens");
        }
    }
    // Truncation property: each shorter prompt must be a whitespace-prefix of
    // the corresponding prompt in every longer set.
    for (size_t a = 0; a + 1 < entries.size(); ++a) {
        const auto& shorter = entries[a];
        const auto& longer = entries[a + 1];
        for (size_t k = 0; k < count; ++k) {
            const std::string& s = shorter.prompts[k];
            const std::string& l = longer.prompts[k];
            const bool prefix = l.size() > s.size() && l.compare(0, s.size(), s) == 0 &&
                                l[s.size()] == ' ';
            if (!prefix)
                throw ParseError(path + ": prompt " + std::to_string(k) +
                                 " of length " + std::to_string(shorter.length) +
                                 " is not a whitespace-prefix of the length-" +
                                 std::to_string(longer.length) + " version");
        }
    }

    std::vector<PromptSet> sets;
    const std::string stem = stem_of(path);
    for (auto& e : entries) {
        PromptSet set;
        set.name = stem + "_len" + std::to_string(e.length);
        set.nominal_length = e.length;
        set.prompts = std::move(e.prompts);
        sets.push_back(std::move(set));
    }
    return sets;
}

}  // namespace seedstab
