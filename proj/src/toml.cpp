#include "seedstab/toml.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace seedstab::toml {

namespace {

struct Cursor {
    const std::string& text;
    size_t pos = 0;
    int line = 1;
    const std::string& origin;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError(origin + ":" + std::to_string(line) + ": " + msg);
    }
    bool done() const { return pos >= text.size(); }
    char peek() const { return text[pos]; }
    void advance() {
        if (text[pos] == '\n') ++line;
        ++pos;
    }
    void skip_inline_ws() {
        while (!done() && (peek() == ' ' || peek() == '\t')) advance();
    }
};

void skip_to_eol(Cursor& c) {
    while (!c.done() && c.peek() != '\n') c.advance();
}

std::string parse_basic_string(Cursor& c) {
    c.advance();  // opening quote
    std::string out;
    while (true) {
        if (c.done() || c.peek() == '\n') c.fail("unterminated string");
        const char ch = c.peek();
        c.advance();
        if (ch == '"') break;
        if (ch == '\\') {
            if (c.done()) c.fail("dangling escape");
            const char esc = c.peek();
            c.advance();
            switch (esc) {
                case 'n': out.push_back('\n'); break;
                case 't': out.push_back('\t'); break;
                case 'r': out.push_back('\r'); break;
                case '"': out.push_back('"'); break;
                case '\\': out.push_back('\\'); break;
                default: c.fail("unsupported escape sequence");
            }
        } else {
            out.push_back(ch);
        }
    }
    return out;
}

Value parse_scalar(Cursor& c);

Value parse_array(Cursor& c) {
    c.advance();  // '['
    Value v;
    v.kind = Value::Kind::array;
    while (true) {
        c.skip_inline_ws();
        while (!c.done() && c.peek() == '\n') {
            c.advance();
            c.skip_inline_ws();
        }
        if (c.done()) c.fail("unterminated array");
        if (c.peek() == '#') {
            skip_to_eol(c);
            continue;
        }
        if (c.peek() == ']') {
            c.advance();
            break;
        }
        v.array.push_back(parse_scalar(c));
        c.skip_inline_ws();
        while (!c.done() && c.peek() == '\n') {
            c.advance();
            c.skip_inline_ws();
        }
        if (!c.done() && c.peek() == ',') {
            c.advance();
        } else if (!c.done() && c.peek() == ']') {
            c.advance();
            break;
        } else if (c.done()) {
            c.fail("unterminated array");
        } else {
            c.fail("expected ',' or ']' in array");
        }
    }
    if (!v.array.empty()) {
        const Value::Kind k = v.array.front().kind;
        for (const auto& e : v.array) {
            if (e.kind != k) c.fail("arrays must be homogeneous");
        }
    }
    return v;
}

Value parse_scalar(Cursor& c) {
    const char ch = c.peek();
    if (ch == '"') {
        Value v;
        v.kind = Value::Kind::string;
        v.str = parse_basic_string(c);
        return v;
    }
    if (ch == '[') return parse_array(c);

    std::string token;
    while (!c.done()) {
        const char t = c.peek();
        if (t == ',' || t == ']' || t == '#' || t == '\n' || t == ' ' || t == '\t')
            break;
        token.push_back(t);
        c.advance();
    }
    if (token.empty()) c.fail("expected a value");
    if (token == "true" || token == "false") {
        Value v;
        v.kind = Value::Kind::boolean;
        v.boolean = token == "true";
        return v;
    }
    const bool looks_float = token.find_first_of(".eE") != std::string::npos &&
                             token.find("0x") != 0;
    if (!looks_float) {
        int64_t iv = 0;
        auto res = std::from_chars(token.data(), token.data() + token.size(), iv);
        if (res.ec == std::errc{} && res.ptr == token.data() + token.size()) {
            Value v;
            v.kind = Value::Kind::integer;
            v.integer = iv;
            return v;
        }
    }
    try {
        size_t used = 0;
        const double dv = std::stod(token, &used);
        if (used == token.size()) {
            Value v;
            v.kind = Value::Kind::floating;
            v.floating = dv;
            return v;
        }
    } catch (const std::exception&) {
    }
    c.fail("cannot parse value '" + token + "'");
}

}  // namespace

Table parse(const std::string& text, const std::string& origin) {
    Cursor c{text, 0, 1, origin};
    Table table;
    while (!c.done()) {
        c.skip_inline_ws();
        if (c.done()) break;
        const char ch = c.peek();
        if (ch == '\n') {
            c.advance();
            continue;
        }
        if (ch == '#') {
            skip_to_eol(c);
            continue;
        }
        if (ch == '[') c.fail("tables are not supported in this config dialect");

        std::string key;
        while (!c.done()) {
            const char k = c.peek();
            if (std::isalnum(static_cast<unsigned char>(k)) || k == '_' || k == '-' ||
                k == '.') {
                key.push_back(k);
                c.advance();
            } else {
                break;
            }
        }
        if (key.empty()) c.fail("expected a key");
        c.skip_inline_ws();
        if (c.done() || c.peek() != '=') c.fail("expected '=' after key '" + key + "'");
        c.advance();
        c.skip_inline_ws();
        if (c.done()) c.fail("expected a value for key '" + key + "'");
        Value v = parse_scalar(c);
        c.skip_inline_ws();
        if (!c.done() && c.peek() == '#') skip_to_eol(c);
        if (!c.done() && c.peek() != '\n') c.fail("trailing characters after value");
        if (table.values.count(key)) c.fail("duplicate key '" + key + "'");
        table.values.emplace(std::move(key), std::move(v));
    }
    return table;
}

Table parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

const Value& Table::get(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
}

std::string Table::get_string(const std::string& key) const {
    const Value& v = get(key);
    if (v.kind != Value::Kind::string)
        throw ConfigError("config key '" + key + "' must be a string");
    return v.str;
}

std::string Table::get_string_or(const std::string& key,
                                 const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
}

int64_t Table::get_int(const std::string& key) const {
    const Value& v = get(key);
    if (v.kind != Value::Kind::integer)
        throw ConfigError("config key '" + key + "' must be an integer");
    return v.integer;
}

int64_t Table::get_int_or(const std::string& key, int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
}

double Table::get_double(const std::string& key) const {
    const Value& v = get(key);
    if (v.kind == Value::Kind::floating) return v.floating;
    if (v.kind == Value::Kind::integer) return static_cast<double>(v.integer);
    throw ConfigError("config key '" + key + "' must be a number");
}

double Table::get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

bool Table::get_bool_or(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const Value& v = get(key);
    if (v.kind != Value::Kind::boolean)
        throw ConfigError("config key '" + key + "' must be a boolean");
    return v.boolean;
}

std::vector<int64_t> Table::get_int_array(const std::string& key) const {
    const Value& v = get(key);
    if (v.kind != Value::Kind::array)
        throw ConfigError("config key '" + key + "' must be an array");
    std::vector<int64_t> out;
    for (const auto& e : v.array) {
        if (e.kind != Value::Kind::integer)
            throw ConfigError("config key '" + key + "' must hold integers");
        out.push_back(e.integer);
    }
    return out;
}

std::vector<bool> Table::get_bool_array(const std::string& key) const {
    const Value& v = get(key);
    if (v.kind != Value::Kind::array)
        throw ConfigError("config key '" + key + "' must be an array");
    std::vector<bool> out;
    for (const auto& e : v.array) {
        if (e.kind != Value::Kind::boolean)
            throw ConfigError("config key '" + key + "' must hold booleans");
        out.push_back(e.boolean);
    }
    return out;
}

std::vector<std::string> Table::get_string_array(const std::string& key) const {
    const Value& v = get(key);
    if (v.kind != Value::Kind::array)
        throw ConfigError("config key '" + key + "' must be an array");
    std::vector<std::string> out;
    for (const auto& e : v.array) {
        if (e.kind != Value::Kind::string)
            throw ConfigError("config key '" + key + "' must hold strings");
        out.push_back(e.str);
    }
    return out;
}

}  // namespace seedstab::toml
