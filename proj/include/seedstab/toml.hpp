#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "seedstab/common.hpp"

namespace seedstab::toml {

// Minimal TOML reader covering the flat experiment-config dialect this
// project uses: top-level `key = value` lines, # comments, strings, integers,
// floats, booleans and homogeneous arrays of those. Nested tables and
// multi-line values are rejected with a ParseError carrying the line number.

struct Value {
    enum class Kind { string, integer, floating, boolean, array };
    Kind kind = Kind::string;
    std::string str;
    int64_t integer = 0;
    double floating = 0.0;
    bool boolean = false;
    std::vector<Value> array;
};

struct Table {
    std::map<std::string, Value> values;

    bool has(const std::string& key) const { return values.count(key) != 0; }

    const Value& get(const std::string& key) const;
    std::string get_string(const std::string& key) const;
    std::string get_string_or(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key) const;
    int64_t get_int_or(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;
    bool get_bool_or(const std::string& key, bool fallback) const;
    std::vector<int64_t> get_int_array(const std::string& key) const;
    std::vector<bool> get_bool_array(const std::string& key) const;
    std::vector<std::string> get_string_array(const std::string& key) const;
};

Table parse(const std::string& text, const std::string& origin);
Table parse_file(const std::string& path);

}  // namespace seedstab::toml
