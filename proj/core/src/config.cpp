#include "ptq/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ptq {

namespace {

std::string trim(const std::string & s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) {
        return "";
    }
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::string strip_comment(const std::string & line) {
    const auto pos = line.find_first_of("#;");
    return pos == std::string::npos ? line : line.substr(0, pos);
}

[[noreturn]] void missing(const std::string & section, const std::string & key) {
    throw std::invalid_argument("config: missing key [" + section + "] " + key);
}

[[noreturn]] void bad_value(const std::string & section, const std::string & key,
                            const std::string & value, const char * want) {
    throw std::invalid_argument("config: [" + section + "] " + key + " = '" + value +
                                "' is not a valid " + want);
}

} // namespace

ConfigFile ConfigFile::parse_string(const std::string & text) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        line_no++;
        line = trim(strip_comment(line));
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw std::invalid_argument("config: unterminated section header at line " +
                                            std::to_string(line_no));
            }
            section = trim(line.substr(1, line.size() - 2));
            cfg.sections_[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config: expected 'key = value' at line " +
                                        std::to_string(line_no));
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw std::invalid_argument("config: empty key at line " + std::to_string(line_no));
        }
        cfg.sections_[section][key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw std::invalid_argument("config: cannot open " + path);
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str());
}

bool ConfigFile::has(const std::string & section, const std::string & key) const {
    const auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
}

std::string ConfigFile::get_str(const std::string & section, const std::string & key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) {
        missing(section, key);
    }
    const auto k = s->second.find(key);
    if (k == s->second.end()) {
        missing(section, key);
    }
    return k->second;
}

int64_t ConfigFile::get_int(const std::string & section, const std::string & key) const {
    const std::string v = get_str(section, key);
    try {
        size_t used = 0;
        const int64_t out = std::stoll(v, &used);
        if (used != v.size()) {
            bad_value(section, key, v, "integer");
        }
        return out;
    } catch (const std::invalid_argument &) {
        bad_value(section, key, v, "integer");
    } catch (const std::out_of_range &) {
        bad_value(section, key, v, "integer");
    }
}

double ConfigFile::get_real(const std::string & section, const std::string & key) const {
    const std::string v = get_str(section, key);
    try {
        size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) {
            bad_value(section, key, v, "real");
        }
        return out;
    } catch (const std::invalid_argument &) {
        bad_value(section, key, v, "real");
    } catch (const std::out_of_range &) {
        bad_value(section, key, v, "real");
    }
}

bool ConfigFile::get_bool(const std::string & section, const std::string & key) const {
    const std::string v = get_str(section, key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        return false;
    }
    bad_value(section, key, v, "boolean");
}

std::string ConfigFile::get_str(const std::string & section, const std::string & key,
                                const std::string & fallback) const {
    return has(section, key) ? get_str(section, key) : fallback;
}

int64_t ConfigFile::get_int(const std::string & section, const std::string & key,
                            int64_t fallback) const {
    return has(section, key) ? get_int(section, key) : fallback;
}

double ConfigFile::get_real(const std::string & section, const std::string & key,
                            double fallback) const {
    return has(section, key) ? get_real(section, key) : fallback;
}

bool ConfigFile::get_bool(const std::string & section, const std::string & key,
                          bool fallback) const {
    return has(section, key) ? get_bool(section, key) : fallback;
}

std::vector<std::string> ConfigFile::get_list(const std::string & section,
                                              const std::string & key) const {
    const std::string v = get_str(section, key);
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

std::vector<int64_t> ConfigFile::get_int_list(const std::string & section,
                                              const std::string & key) const {
    std::vector<int64_t> out;
    for (const std::string & item : get_list(section, key)) {
        try {
            size_t used = 0;
            const int64_t v = std::stoll(item, &used);
            if (used != item.size()) {
                bad_value(section, key, item, "integer list entry");
            }
            out.push_back(v);
        } catch (const std::invalid_argument &) {
            bad_value(section, key, item, "integer list entry");
        } catch (const std::out_of_range &) {
            bad_value(section, key, item, "integer list entry");
        }
    }
    return out;
}

std::vector<double> ConfigFile::get_real_list(const std::string & section,
                                              const std::string & key) const {
    std::vector<double> out;
    for (const std::string & item : get_list(section, key)) {
        try {
            size_t used = 0;
            const double v = std::stod(item, &used);
            if (used != item.size()) {
                bad_value(section, key, item, "real list entry");
            }
            out.push_back(v);
        } catch (const std::invalid_argument &) {
            bad_value(section, key, item, "real list entry");
        } catch (const std::out_of_range &) {
            bad_value(section, key, item, "real list entry");
        }
    }
    return out;
}

void ConfigFile::set(const std::string & section, const std::string & key,
                     const std::string & value) {
    sections_[section][key] = value;
}

} // namespace ptq
