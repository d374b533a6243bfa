#pragma once

// Plain-text configuration sections.
//
//   # comment
//   [premetric]
//   column=hour kind=numeric weight=0.1 period=24
//
// A section holds an ordered list of entries; an entry is one line of
// whitespace-separated key=value tokens. Keys and values may not contain
// whitespace, '=' or '#'.

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace locex {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ConfigEntry {
    std::vector<std::pair<std::string, std::string>> fields;
    std::size_t line = 0;

    [[nodiscard]] const std::string* find(std::string_view key) const {
        for (const auto& [k, v] : fields) {
            if (k == key) return &v;
        }
        return nullptr;
    }
    [[nodiscard]] const std::string& at(std::string_view key) const {
        if (const auto* v = find(key)) return *v;
        throw ConfigError("line " + std::to_string(line) + ": missing key '" + std::string(key) + "'");
    }
    void set(std::string key, std::string value) { fields.emplace_back(std::move(key), std::move(value)); }
};

struct ConfigSection {
    std::string name;
    std::vector<ConfigEntry> entries;
};

class ConfigDocument {
public:
    static ConfigDocument parse(std::string_view text) {
        ConfigDocument doc;
        std::istringstream in{std::string(text)};
        std::string raw;
        std::size_t lineno = 0;
        ConfigSection* current = nullptr;
        while (std::getline(in, raw)) {
            ++lineno;
            std::string_view line = raw;
            if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
                doc.sections_.push_back({std::string(trim(line.substr(1, line.size() - 2))), {}});
                current = &doc.sections_.back();
                continue;
            }
            if (current == nullptr) throw ConfigError("line " + std::to_string(lineno) + ": entry outside of any section");
            ConfigEntry entry;
            entry.line = lineno;
            std::istringstream tokens{std::string(line)};
            std::string token;
            while (tokens >> token) {
                auto eq = token.find('=');
                if (eq == std::string::npos || eq == 0) {
                    throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + token + "'");
                }
                entry.set(token.substr(0, eq), token.substr(eq + 1));
            }
            current->entries.push_back(std::move(entry));
        }
        return doc;
    }

    [[nodiscard]] const ConfigSection* section(std::string_view name) const {
        for (const auto& s : sections_) {
            if (s.name == name) return &s;
        }
        return nullptr;
    }
    [[nodiscard]] const ConfigSection& require(std::string_view name) const {
        if (const auto* s = section(name)) return *s;
        throw ConfigError("missing section [" + std::string(name) + "]");
    }

    ConfigSection& add_section(std::string name) {
        sections_.push_back({std::move(name), {}});
        return sections_.back();
    }

    [[nodiscard]] std::string to_string() const {
        std::string out;
        for (const auto& s : sections_) {
            out += "[" + s.name + "]\n";
            for (const auto& e : s.entries) {
                bool first = true;
                for (const auto& [k, v] : e.fields) {
                    if (!first) out += ' ';
                    out += k + "=" + v;
                    first = false;
                }
                out += '\n';
            }
        }
        return out;
    }

    [[nodiscard]] const std::vector<ConfigSection>& sections() const { return sections_; }

private:
    static std::string_view trim(std::string_view s) {
        while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
        while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
        return s;
    }

    std::vector<ConfigSection> sections_;
};

inline bool is_config_token(std::string_view s) {
    return !s.empty() && std::none_of(s.begin(), s.end(), [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '=' || c == '#' || c == '[' || c == ']';
    });
}

}  // namespace locex
