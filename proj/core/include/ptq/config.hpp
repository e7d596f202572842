#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ptq {

// Flat INI-style key-value config:
//   [section]
//   key = value        # trailing comments allowed
//   list = a, b, c
// '#' and ';' start comments; keys before any section live in section "".
class ConfigFile {
  public:
    static ConfigFile parse_file(const std::string & path);
    static ConfigFile parse_string(const std::string & text);

    bool has(const std::string & section, const std::string & key) const;

    // throwing accessors (missing key -> invalid_argument naming section.key)
    std::string get_str(const std::string & section, const std::string & key) const;
    int64_t get_int(const std::string & section, const std::string & key) const;
    double get_real(const std::string & section, const std::string & key) const;
    bool get_bool(const std::string & section, const std::string & key) const;

    // defaulted accessors
    std::string get_str(const std::string & section, const std::string & key,
                        const std::string & fallback) const;
    int64_t get_int(const std::string & section, const std::string & key, int64_t fallback) const;
    double get_real(const std::string & section, const std::string & key, double fallback) const;
    bool get_bool(const std::string & section, const std::string & key, bool fallback) const;

    std::vector<std::string> get_list(const std::string & section, const std::string & key) const;
    std::vector<int64_t> get_int_list(const std::string & section, const std::string & key) const;
    std::vector<double> get_real_list(const std::string & section, const std::string & key) const;

    const std::map<std::string, std::map<std::string, std::string>> & sections() const {
        return sections_;
    }

    // command-line overrides: "section.key=value"
    void set(const std::string & section, const std::string & key, const std::string & value);

  private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

} // namespace ptq
