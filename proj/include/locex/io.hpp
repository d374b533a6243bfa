#pragma once

// Dataset schemas and CSV ingestion/emission.
//
// Schema file layout (plain-text config):
//
//   [covariates]
//   column=hour kind=numeric weight=0.1 period=24
//   column=sex kind=categorical weight=hard
//   [observation]
//   column=severity kind=categorical
//   [test_function]                 # optional, used by `estimate`
//   kind=indicator equals=major,killed
//   [statistic]                     # optional, used by `test`
//   group=intoxicated treated=yes outcome=major,killed
//   [realization]                   # optional, multi-realization files
//   column=rep

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/tokenizer.hpp>

#include "locex/config.hpp"
#include "locex/local_empirical.hpp"
#include "locex/numeric.hpp"
#include "locex/premetric.hpp"

namespace locex {

class IngestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::vector<std::string> split_list(const std::string& text, char sep = ',') {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(item);
    return out;
}

inline std::string join_list(const std::vector<std::string>& items, char sep = ',') {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

struct TestFunctionConfig {
    TestFunctionKind kind = TestFunctionKind::indicator;
    std::vector<std::string> equals;  // indicator of a set of symbols
    std::optional<double> above;      // indicator of value > threshold

    [[nodiscard]] TestFunction<std::string> build() const {
        if (kind == TestFunctionKind::general) {
            return TestFunction<std::string>::general([](const std::string& s) {
                auto v = parse_double(s);
                if (!v) throw std::domain_error("general test function: observation '" + s + "' is not numeric");
                return *v;
            });
        }
        if (above) {
            const double threshold = *above;
            return TestFunction<std::string>::indicator([threshold](const std::string& s) {
                auto v = parse_double(s);
                if (!v) throw std::domain_error("indicator test function: observation '" + s + "' is not numeric");
                return *v > threshold;
            });
        }
        auto set = equals;
        std::sort(set.begin(), set.end());
        return TestFunction<std::string>::indicator(
            [set](const std::string& s) { return std::binary_search(set.begin(), set.end(), s); });
    }
};

struct StatisticConfig {
    std::string group_column;
    std::string treated_value;
    std::vector<std::string> outcome_values;
    std::optional<double> outcome_above;

    [[nodiscard]] bool outcome(const std::string& value) const {
        if (outcome_above) {
            auto v = parse_double(value);
            return v && *v > *outcome_above;
        }
        return std::find(outcome_values.begin(), outcome_values.end(), value) != outcome_values.end();
    }
};

struct DatasetSchema {
    PremetricSpec covariates;
    std::string observation_column;
    ColumnKind observation_kind = ColumnKind::categorical;
    std::optional<TestFunctionConfig> test_function;
    std::optional<StatisticConfig> statistic;
    std::optional<std::string> realization_column;

    static DatasetSchema from_config(std::string_view text) {
        const auto doc = ConfigDocument::parse(text);
        DatasetSchema s;
        if (const auto* cov = doc.section("covariates")) s.covariates = PremetricSpec::from_section(*cov);
        if (const auto* obs = doc.section("observation")) {
            if (obs->entries.size() != 1) throw ConfigError("[observation] must hold exactly one entry");
            const auto& e = obs->entries.front();
            s.observation_column = e.at("column");
            const std::string* kind = e.find("kind");
            if (kind == nullptr || *kind == "categorical") s.observation_kind = ColumnKind::categorical;
            else if (*kind == "numeric") s.observation_kind = ColumnKind::numeric;
            else throw ConfigError("[observation]: unknown kind '" + *kind + "'");
        }
        if (const auto* tf = doc.section("test_function")) {
            if (tf->entries.size() != 1) throw ConfigError("[test_function] must hold exactly one entry");
            const auto& e = tf->entries.front();
            TestFunctionConfig c;
            const std::string* kind = e.find("kind");
            if (kind == nullptr || *kind == "indicator") c.kind = TestFunctionKind::indicator;
            else if (*kind == "general") c.kind = TestFunctionKind::general;
            else throw ConfigError("[test_function]: unknown kind '" + *kind + "'");
            if (const auto* eq = e.find("equals")) c.equals = split_list(*eq);
            if (const auto* ab = e.find("above")) {
                c.above = parse_double(*ab);
                if (!c.above) throw ConfigError("[test_function]: unparseable threshold");
            }
            if (c.kind == TestFunctionKind::indicator && c.equals.empty() && !c.above) {
                throw ConfigError("[test_function]: indicator needs equals= or above=");
            }
            s.test_function = c;
        }
        if (const auto* st = doc.section("statistic")) {
            if (st->entries.size() != 1) throw ConfigError("[statistic] must hold exactly one entry");
            const auto& e = st->entries.front();
            StatisticConfig c;
            c.group_column = e.at("group");
            c.treated_value = e.at("treated");
            if (const auto* out = e.find("outcome")) c.outcome_values = split_list(*out);
            if (const auto* ab = e.find("outcome_above")) {
                c.outcome_above = parse_double(*ab);
                if (!c.outcome_above) throw ConfigError("[statistic]: unparseable outcome_above");
            }
            if (c.outcome_values.empty() && !c.outcome_above) throw ConfigError("[statistic]: needs outcome= or outcome_above=");
            s.statistic = c;
        }
        if (const auto* rz = doc.section("realization")) {
            if (rz->entries.size() != 1) throw ConfigError("[realization] must hold exactly one entry");
            s.realization_column = rz->entries.front().at("column");
        }
        s.check_unique();
        return s;
    }

    [[nodiscard]] std::string to_config() const {
        ConfigDocument doc;
        covariates.append_to(doc, "covariates");
        if (!observation_column.empty()) {
            ConfigEntry e;
            e.set("column", observation_column);
            e.set("kind", observation_kind == ColumnKind::numeric ? "numeric" : "categorical");
            doc.add_section("observation").entries.push_back(std::move(e));
        }
        if (test_function) {
            ConfigEntry e;
            e.set("kind", test_function->kind == TestFunctionKind::general ? "general" : "indicator");
            if (!test_function->equals.empty()) e.set("equals", join_list(test_function->equals));
            if (test_function->above) e.set("above", format_double(*test_function->above));
            doc.add_section("test_function").entries.push_back(std::move(e));
        }
        if (statistic) {
            ConfigEntry e;
            e.set("group", statistic->group_column);
            e.set("treated", statistic->treated_value);
            if (!statistic->outcome_values.empty()) e.set("outcome", join_list(statistic->outcome_values));
            if (statistic->outcome_above) e.set("outcome_above", format_double(*statistic->outcome_above));
            doc.add_section("statistic").entries.push_back(std::move(e));
        }
        if (realization_column) {
            ConfigEntry e;
            e.set("column", *realization_column);
            doc.add_section("realization").entries.push_back(std::move(e));
        }
        return doc.to_string();
    }

    [[nodiscard]] std::uint64_t hash() const { return fnv1a64(to_config()); }

    /// Columns in emission order: realization, covariates, observation, group.
    [[nodiscard]] std::vector<std::string> columns() const {
        std::vector<std::string> out;
        if (realization_column) out.push_back(*realization_column);
        for (const auto& t : covariates.terms()) out.push_back(t.column);
        if (!observation_column.empty()) out.push_back(observation_column);
        if (statistic && std::find(out.begin(), out.end(), statistic->group_column) == out.end()) {
            out.push_back(statistic->group_column);
        }
        return out;
    }

private:
    void check_unique() const {
        std::vector<std::string> names;
        if (realization_column) names.push_back(*realization_column);
        for (const auto& t : covariates.terms()) names.push_back(t.column);
        if (!observation_column.empty()) names.push_back(observation_column);
        auto sorted = names;
        std::sort(sorted.begin(), sorted.end());
        if (auto it = std::adjacent_find(sorted.begin(), sorted.end()); it != sorted.end()) {
            throw ConfigError("schema: column '" + *it + "' declared twice");
        }
    }
};

/// Typed contents of a CSV file. Observation values are kept as text; the
/// schema's observation kind only controls validation at ingest.
struct Dataset {
    ObservationSet<std::string> records;
    std::vector<bool> treated;                // present when the schema has a statistic
    std::vector<std::string> group_values;
    std::vector<std::string> realization;     // per record; empty without a realization column
};

namespace detail {
inline std::vector<std::string> parse_csv_line(const std::string& line) {
    using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;
    Tokenizer tok(line, boost::escaped_list_separator<char>('\\', ',', '"'));
    return {tok.begin(), tok.end()};
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\\") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}
}  // namespace detail

/// Parses CSV text against the schema. Errors carry 1-based line numbers.
inline Dataset ingest_text(const std::string& text, const DatasetSchema& schema, bool require_observation = true) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        header = detail::parse_csv_line(line);
        break;
    }
    if (header.empty()) throw IngestError("ingest: missing header row");
    std::map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < header.size(); ++i) position[header[i]] = i;
    const auto column = [&](const std::string& name) -> std::optional<std::size_t> {
        auto it = position.find(name);
        if (it == position.end()) return std::nullopt;
        return it->second;
    };
    const auto required = [&](const std::string& name) {
        auto c = column(name);
        if (!c) throw IngestError("ingest: header is missing column '" + name + "'");
        return *c;
    };

    const auto& spec = schema.covariates;
    std::vector<std::size_t> cat_cols, num_cols;
    for (std::size_t i = 0; i < spec.categorical_arity(); ++i) cat_cols.push_back(required(spec.categorical_term(i).column));
    for (std::size_t j = 0; j < spec.numeric_arity(); ++j) num_cols.push_back(required(spec.numeric_term(j).column));
    std::optional<std::size_t> obs_col;
    if (!schema.observation_column.empty()) {
        if (require_observation) obs_col = required(schema.observation_column);
        else obs_col = column(schema.observation_column);
    } else if (require_observation) {
        throw IngestError("ingest: schema declares no observation column");
    }
    std::optional<std::size_t> group_col;
    if (schema.statistic) group_col = column(schema.statistic->group_column);
    std::optional<std::size_t> rz_col;
    if (schema.realization_column) rz_col = required(*schema.realization_column);

    Dataset data;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = detail::parse_csv_line(line);
        if (cells.size() != header.size()) {
            throw IngestError("ingest: line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                              " fields, found " + std::to_string(cells.size()));
        }
        Record<std::string> rec;
        for (auto c : cat_cols) rec.covariate.categorical.push_back(cells[c]);
        for (std::size_t j = 0; j < num_cols.size(); ++j) {
            auto v = parse_double(cells[num_cols[j]]);
            if (!v || !std::isfinite(*v)) {
                throw IngestError("ingest: line " + std::to_string(lineno) + ": column '" + spec.numeric_term(j).column +
                                  "': cannot parse '" + cells[num_cols[j]] + "' as a number");
            }
            const auto& period = spec.numeric_term(j).period;
            rec.covariate.numeric.push_back(period ? reduce_mod(*v, *period) : *v);
        }
        if (obs_col) {
            rec.value = cells[*obs_col];
            if (schema.observation_kind == ColumnKind::numeric && !parse_double(rec.value)) {
                throw IngestError("ingest: line " + std::to_string(lineno) + ": column '" + schema.observation_column +
                                  "': cannot parse '" + rec.value + "' as a number");
            }
        }
        if (group_col) {
            data.group_values.push_back(cells[*group_col]);
            data.treated.push_back(cells[*group_col] == schema.statistic->treated_value);
        }
        if (rz_col) data.realization.push_back(cells[*rz_col]);
        data.records.push_back(std::move(rec));
    }
    if (data.records.empty()) throw IngestError("ingest: no data rows");
    return data;
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IngestError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline Dataset ingest(const std::string& path, const DatasetSchema& schema, bool require_observation = true) {
    return ingest_text(read_file(path), schema, require_observation);
}

/// Emits the dataset in the schema's canonical column order.
inline std::string emit_csv(const Dataset& data, const DatasetSchema& schema) {
    std::string out;
    const auto cols = schema.columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + detail::csv_field(cols[i]);
    out += '\n';
    const auto& spec = schema.covariates;
    for (std::size_t r = 0; r < data.records.size(); ++r) {
        const auto& rec = data.records[r];
        std::vector<std::string> row;
        if (schema.realization_column) row.push_back(data.realization.at(r));
        std::size_t ci = 0, ni = 0;
        for (const auto& t : spec.terms()) {
            if (t.kind == ColumnKind::categorical) row.push_back(rec.covariate.categorical.at(ci++));
            else row.push_back(format_double(rec.covariate.numeric.at(ni++)));
        }
        if (!schema.observation_column.empty()) row.push_back(rec.value);
        if (schema.statistic && cols.size() > row.size()) row.push_back(data.group_values.at(r));
        for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + detail::csv_field(row[i]);
        out += '\n';
    }
    return out;
}

/// Splits a multi-realization dataset by realization id, in first-appearance order.
inline std::vector<ObservationSet<std::string>> split_realizations(const Dataset& data,
                                                                   std::vector<std::string>* ids = nullptr) {
    if (data.realization.size() != data.records.size()) throw IngestError("dataset has no realization column");
    std::vector<std::string> order;
    std::map<std::string, std::size_t> slot;
    std::vector<ObservationSet<std::string>> out;
    for (std::size_t i = 0; i < data.records.size(); ++i) {
        auto [it, inserted] = slot.emplace(data.realization[i], out.size());
        if (inserted) {
            out.emplace_back();
            order.push_back(data.realization[i]);
        }
        out[it->second].push_back(data.records[i]);
    }
    if (ids) *ids = std::move(order);
    return out;
}

}  // namespace locex
