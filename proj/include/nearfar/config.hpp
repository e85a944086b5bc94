#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace nearfar {

/// Flat `key = value` config text with `#` comments. Keys are unique;
/// serialization emits keys in sorted order so files diff cleanly.
class KeyValueConfig {
  public:
    KeyValueConfig() = default;

    static KeyValueConfig parse_file(const std::string& path);
    static KeyValueConfig parse_string(std::string_view text, std::string_view origin = "<string>");

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get(const std::string& key) const;
    std::string get_or(const std::string& key, std::string fallback) const;
    std::uint64_t get_u64(const std::string& key) const;
    std::uint64_t get_u64_or(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key) const;
    bool get_bool_or(const std::string& key, bool fallback) const;

    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
    void set(const std::string& key, const char* value) { values_[key] = value; }
    void set(const std::string& key, std::uint64_t value);
    void set(const std::string& key, double value);
    void set(const std::string& key, bool value);

    /// Throws ConfigError naming every key not in `allowed`.
    void require_known_keys(const std::vector<std::string>& allowed) const;

    std::string to_string() const;

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace nearfar
