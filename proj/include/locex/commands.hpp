#pragma once

// Command implementations behind the `locex` CLI. Each returns one JSON
// document (keys sorted) and is a pure function of its inputs and seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "locex/generators.hpp"
#include "locex/io.hpp"
#include "locex/local_empirical.hpp"
#include "locex/premetric.hpp"
#include "locex/premetric_estimation.hpp"
#include "locex/randomization.hpp"

namespace locex {

inline constexpr const char* kVersion = "0.1.0";

using Json = nlohmann::json;

/// Parses "col=value,col=value" into a covariate over `spec`'s columns.
inline Covariate parse_query(const std::string& text, const PremetricSpec& spec) {
    std::map<std::string, std::string> fields;
    for (const auto& part : split_list(text)) {
        auto eq = part.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("query: expected column=value, got '" + part + "'");
        fields[part.substr(0, eq)] = part.substr(eq + 1);
    }
    Covariate c;
    for (std::size_t i = 0; i < spec.categorical_arity(); ++i) {
        const auto& name = spec.categorical_term(i).column;
        auto it = fields.find(name);
        if (it == fields.end()) throw std::invalid_argument("query: missing column '" + name + "'");
        c.categorical.push_back(it->second);
        fields.erase(it);
    }
    for (std::size_t j = 0; j < spec.numeric_arity(); ++j) {
        const auto& term = spec.numeric_term(j);
        auto it = fields.find(term.column);
        if (it == fields.end()) throw std::invalid_argument("query: missing column '" + term.column + "'");
        auto v = parse_double(it->second);
        if (!v || !std::isfinite(*v)) throw std::invalid_argument("query: column '" + term.column + "' is not numeric");
        c.numeric.push_back(term.period ? reduce_mod(*v, *term.period) : *v);
        fields.erase(it);
    }
    if (!fields.empty()) throw std::invalid_argument("query: unknown column '" + fields.begin()->first + "'");
    return c;
}

/// Expands "col:lo:hi:count" over a base query. Cyclic columns exclude hi.
inline std::vector<Covariate> expand_query_grid(const std::string& grid, const Covariate& base, const PremetricSpec& spec) {
    const auto parts = split_list(grid, ':');
    if (parts.size() != 4) throw std::invalid_argument("query grid: expected column:lo:hi:count");
    std::optional<std::size_t> slot;
    for (std::size_t j = 0; j < spec.numeric_arity(); ++j) {
        if (spec.numeric_term(j).column == parts[0]) slot = j;
    }
    if (!slot) throw std::invalid_argument("query grid: '" + parts[0] + "' is not a numeric covariate");
    auto lo = parse_double(parts[1]);
    auto hi = parse_double(parts[2]);
    auto count = parse_double(parts[3]);
    if (!lo || !hi || !count || *count < 1 || std::floor(*count) != *count) {
        throw std::invalid_argument("query grid: malformed bounds or count");
    }
    const auto n = static_cast<std::size_t>(*count);
    const auto& period = spec.numeric_term(*slot).period;
    const double denom = period ? static_cast<double>(n) : static_cast<double>(std::max<std::size_t>(n - 1, 1));
    std::vector<Covariate> out;
    for (std::size_t i = 0; i < n; ++i) {
        Covariate c = base;
        const double v = *lo + (*hi - *lo) * static_cast<double>(i) / denom;
        c.numeric.at(*slot) = period ? reduce_mod(v, *period) : v;
        out.push_back(std::move(c));
    }
    return out;
}

inline Json covariate_json(const Covariate& c, const PremetricSpec& spec) {
    Json j = Json::object();
    for (std::size_t i = 0; i < spec.categorical_arity(); ++i) j[spec.categorical_term(i).column] = c.categorical.at(i);
    for (std::size_t k = 0; k < spec.numeric_arity(); ++k) j[spec.numeric_term(k).column] = c.numeric.at(k);
    return j;
}

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

struct Manifest {
    std::string command;
    std::uint64_t schema_hash = 0;
    std::string premetric;
    std::optional<std::uint64_t> seed;
    Json parameters = Json::object();

    [[nodiscard]] Json to_json() const {
        Json j;
        j["command"] = command;
        j["schema_hash"] = hex64(schema_hash);
        j["premetric"] = premetric;
        j["seed"] = seed ? Json(*seed) : Json(nullptr);
        j["parameters"] = parameters;
        j["version"] = kVersion;
        return j;
    }
};

// ---------------------------------------------------------------------------
// estimate

struct EstimateOptions {
    std::vector<Covariate> queries;
    double alpha = 0.05;
    double delta = 0.1;
    bool include_atoms = false;
    std::optional<TestFunctionConfig> test_function;  // overrides the schema's
};

struct EstimateRow {
    Covariate query;
    double estimate = 0.0;
    std::size_t active_count = 0;
    QueryBounds bounds;
};

inline std::vector<EstimateRow> estimate_rows(const ObservationSet<std::string>& records, const PremetricSpec& spec,
                                              const TestFunction<std::string>& h, const EstimateOptions& opt,
                                              std::vector<LocalEmpiricalMeasure<std::string>>* measures = nullptr) {
    std::vector<EstimateRow> rows;
    rows.reserve(opt.queries.size());
    for (const auto& q : opt.queries) {
        auto m = local_empirical_measure(records, q, spec, h);
        EstimateRow row;
        row.query = q;
        row.estimate = estimate(m, h);
        row.active_count = m.active_count;
        row.bounds = bounds_for(m, opt.delta, opt.alpha);
        rows.push_back(std::move(row));
        if (measures) measures->push_back(std::move(m));
    }
    return rows;
}

inline Json run_estimate(const Dataset& data, const DatasetSchema& schema, const EstimateOptions& opt) {
    const auto& spec = schema.covariates;
    const auto tf = opt.test_function ? opt.test_function : schema.test_function;
    if (!tf) throw std::invalid_argument("estimate: no test function configured ([test_function] or --indicator)");
    if (opt.queries.empty()) throw std::invalid_argument("estimate: at least one query is required");
    const auto h = tf->build();
    std::vector<LocalEmpiricalMeasure<std::string>> measures;
    const auto rows = estimate_rows(data.records, spec, h, opt, opt.include_atoms ? &measures : nullptr);

    Manifest man{"estimate", schema.hash(), spec.to_config(), std::nullopt, Json::object()};
    man.parameters["alpha"] = opt.alpha;
    man.parameters["delta"] = opt.delta;
    Json queries = Json::array();
    for (const auto& q : opt.queries) queries.push_back(covariate_json(q, spec));
    man.parameters["queries"] = queries;

    Json out;
    out["manifest"] = man.to_json();
    out["n_records"] = data.records.size();
    Json results = Json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        Json j;
        j["tau"] = covariate_json(r.query, spec);
        j["estimate"] = r.estimate;
        j["M"] = r.active_count;
        j["sq_bound"] = r.bounds.squared_error;
        j["tail_bound"] = r.bounds.tail;
        j["delta"] = opt.delta;
        j["ci"] = number_or_null(r.bounds.radius);
        j["alpha"] = opt.alpha;
        if (opt.include_atoms) {
            Json atoms = Json::array();
            for (const auto& a : measures[i].atoms) atoms.push_back({{"weight", a.weight}, {"value", a.value}, {"index", a.index}});
            j["atoms"] = atoms;
        }
        results.push_back(std::move(j));
    }
    out["results"] = results;
    return out;
}

/// Plot-ready table for `estimate` output.
inline std::string estimate_table(const Json& report) {
    std::ostringstream os;
    const auto& results = report.at("results");
    std::vector<std::string> tau_cols;
    if (!results.empty()) {
        for (const auto& [k, v] : results.front().at("tau").items()) tau_cols.push_back(k);
    }
    for (const auto& c : tau_cols) os << c << ',';
    os << "estimate,M,sq_bound,tail_bound,ci\n";
    for (const auto& r : results) {
        for (const auto& c : tau_cols) {
            const auto& v = r.at("tau").at(c);
            if (v.is_string()) os << v.get<std::string>() << ',';
            else os << format_double(v.get<double>()) << ',';
        }
        os << format_double(r.at("estimate").get<double>()) << ',' << r.at("M").get<std::size_t>() << ','
           << format_double(r.at("sq_bound").get<double>()) << ',' << format_double(r.at("tail_bound").get<double>())
           << ',';
        if (r.at("ci").is_null()) os << "inf";
        else os << format_double(r.at("ci").get<double>());
        os << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// test / design

/// matched-pairs | none | max-size=K
inline BlockConstraint parse_constraint(const std::string& text, const std::vector<bool>& treated) {
    if (text == "none") return unconstrained();
    if (text == "matched-pairs") {
        if (treated.empty()) throw std::invalid_argument("constraint matched-pairs needs group flags ([statistic] group=)");
        return matched_pairs(treated);
    }
    if (text.rfind("max-size=", 0) == 0) {
        auto v = parse_double(text.substr(9));
        if (!v || *v < 1 || std::floor(*v) != *v) throw std::invalid_argument("constraint: malformed max-size");
        return max_block_size(static_cast<std::size_t>(*v));
    }
    throw std::invalid_argument("unknown constraint '" + text + "'");
}

inline Json partition_json(const BlockPartition& p) {
    Json blocks = Json::array();
    for (const auto& b : p.blocks()) blocks.push_back(b);
    return blocks;
}

inline Json test_result_json(const TestResult& r) {
    Json j;
    j["statistic"] = r.statistic;
    j["frac_exceed"] = r.frac_exceed;
    j["penalty"] = r.penalty;
    j["threshold"] = r.threshold;
    j["reject"] = r.reject;
    j["n_samples"] = r.n_samples ? Json(*r.n_samples) : Json("exact");
    if (!r.n_samples) j["group_size"] = r.group_size;
    j["alpha"] = r.alpha;
    j["alpha_n"] = r.alpha_n ? Json(*r.alpha_n) : Json(nullptr);
    j["group_max"] = r.group_max;
    j["seed"] = r.seed;
    return j;
}

/// null when the count does not fit in 64 bits.
inline Json required_samples_json(double alpha, double M) {
    try {
        return required_samples(alpha, M);
    } catch (const std::overflow_error&) {
        return nullptr;
    }
}

struct TestOptions {
    double alpha = 0.05;
    std::uint64_t n_perms = 100'000;
    std::uint64_t seed = 0;
    std::string constraint = "matched-pairs";
    std::uint64_t enumeration_budget = kDefaultEnumerationBudget;
    bool force_subsampled = false;
    std::size_t threads = 1;
};

inline Json run_test(const Dataset& data, const DatasetSchema& schema, const TestOptions& opt) {
    if (!schema.statistic) throw std::invalid_argument("test: schema has no [statistic] section");
    if (data.treated.size() != data.records.size()) {
        throw std::invalid_argument("test: data lacks the group column '" + schema.statistic->group_column + "'");
    }
    const auto& spec = schema.covariates;
    const auto covariates = covariates_of(data.records);
    const auto values = values_of(data.records);
    const auto constraint = parse_constraint(opt.constraint, data.treated);
    const auto partition = build_partition(std::span<const Covariate>(covariates), spec, opt.alpha, constraint);
    const auto stat_cfg = *schema.statistic;
    const auto stat = difference_in_proportions<std::string>(
        data.treated, [stat_cfg](const std::string& v) { return stat_cfg.outcome(v); });

    Manifest man{"test", schema.hash(), spec.to_config(), opt.seed, Json::object()};
    man.parameters["alpha"] = opt.alpha;
    man.parameters["n_perms"] = opt.n_perms;
    man.parameters["constraint"] = opt.constraint;
    man.parameters["enumeration_budget"] = opt.enumeration_budget;

    Json out;
    out["manifest"] = man.to_json();
    out["partition"] = partition_json(partition);
    out["premetric_hash"] = hex64(spec.hash());
    out["matched_pairs"] = pair_count(partition);
    out["blocks"] = partition.block_count();
    const double pen = penalty(partition, spec, std::span<const Covariate>(covariates));
    const double M = group_max(partition, spec, std::span<const Covariate>(covariates));
    out["design_penalty"] = pen;
    out["group_max"] = M;

    const std::span<const std::string> vs(values);
    const std::span<const Covariate> cs(covariates);
    const bool enumerable = partition.group_order(opt.enumeration_budget) <= opt.enumeration_budget;
    if (enumerable && !opt.force_subsampled) {
        auto r = exact_test(vs, cs, partition, spec, stat, opt.alpha, opt.enumeration_budget);
        r.seed = opt.seed;
        out["mode"] = "exact";
        out["result"] = test_result_json(r);
        out["decision"] = r.reject ? "reject" : "retain";
        return out;
    }
    out["mode"] = "subsampled";
    if (!alpha_n_valid(opt.alpha, M, opt.n_perms)) {
        out["alpha_n"] = alpha_n(opt.alpha, M, opt.n_perms);
        out["required_samples"] = required_samples_json(opt.alpha, M);
        out["result"] = nullptr;
        out["decision"] = nullptr;
        return out;
    }
    const auto r = subsampled_test(vs, cs, partition, spec, stat, opt.alpha, opt.n_perms, opt.seed, {opt.threads, 1024});
    out["alpha_n"] = *r.alpha_n;
    out["required_samples"] = required_samples_json(opt.alpha, M);
    out["result"] = test_result_json(r);
    out["decision"] = r.reject ? "reject" : "retain";
    return out;
}

struct DesignOptions {
    double alpha = 0.05;
    double delta = 0.1;
    std::string constraint = "none";
    std::vector<Covariate> queries;
    TestFunctionKind kind = TestFunctionKind::indicator;
};

/// Everything computable from covariates alone.
inline Json run_design(const Dataset& data, const DatasetSchema& schema, const DesignOptions& opt) {
    const auto& spec = schema.covariates;
    const auto covariates = covariates_of(data.records);
    const std::span<const Covariate> cs(covariates);
    const auto constraint = parse_constraint(opt.constraint, data.treated);
    const auto partition = build_partition(cs, spec, opt.alpha, constraint);
    const double pen = penalty(partition, spec, cs);
    const double M = group_max(partition, spec, cs);

    Manifest man{"design", schema.hash(), spec.to_config(), std::nullopt, Json::object()};
    man.parameters["alpha"] = opt.alpha;
    man.parameters["delta"] = opt.delta;
    man.parameters["constraint"] = opt.constraint;

    Json out;
    out["manifest"] = man.to_json();
    out["partition"] = partition_json(partition);
    out["blocks"] = partition.block_count();
    out["matched_pairs"] = pair_count(partition);
    out["penalty"] = pen;
    out["group_max"] = M;
    out["required_samples"] = required_samples_json(opt.alpha, M);
    out["log_group_order"] = partition.log_group_order();
    const auto defect = sufficiency_defect_bound(spec, partition, cs);
    out["sufficiency_defect"] = {{"weighted", defect.weighted}, {"coarse", defect.coarse}};

    Json profiles = Json::array();
    for (const auto& q : opt.queries) {
        std::vector<double> b;
        b.reserve(covariates.size());
        for (const auto& c : covariates) b.push_back(b_coefficient(opt.kind, spec.distance(c, q)));
        const auto w = optimal_weights(b);
        Json j;
        j["tau"] = covariate_json(q, spec);
        j["M"] = w.active_count;
        Json weights = Json::array();
        for (std::size_t k = 0; k < w.active_count; ++k) {
            weights.push_back({{"index", w.order[k]}, {"weight", w.weights[w.order[k]]}});
        }
        j["weights"] = weights;
        j["sq_bound"] = squared_error_bound(w.weights, b);
        j["tail_bound"] = tail_bound(w.weights, b, opt.delta);
        j["ci"] = number_or_null(confidence_radius(w.weights, b, opt.alpha));
        profiles.push_back(std::move(j));
    }
    out["profiles"] = profiles;
    return out;
}

// ---------------------------------------------------------------------------
// estimate-premetric

inline Json run_estimate_premetric(const Dataset& data, const DatasetSchema& schema, const Covariate& t,
                                   const Covariate& t_prime) {
    if (schema.observation_kind != ColumnKind::categorical) {
        throw std::invalid_argument("estimate-premetric: the observation column must be categorical (finite alphabet)");
    }
    const auto bundle = split_realizations(data);
    const auto& spec = schema.covariates;
    const auto est = estimate_dsc(bundle, t, t_prime, spec);
    Manifest man{"estimate-premetric", schema.hash(), spec.to_config(), std::nullopt, Json::object()};
    Json out;
    out["manifest"] = man.to_json();
    out["t"] = covariate_json(t, spec);
    out["t_prime"] = covariate_json(t_prime, spec);
    out["estimate"] = est.estimate;
    out["N"] = est.realizations;
    out["alphabet_size"] = est.alphabet_size;
    out["standard_error"] = est.standard_error;
    out["max_min_distance"] = est.max_min_distance;
    out["caveat"] =
        "consistency assumes the premetric dominates the strong canonical premetric and that max_min_distance "
        "vanishes as realizations accumulate; neither can be verified from a finite bundle";
    return out;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
    double lo = 0.0;
    double hi = 1.0;
    std::size_t count = 101;
    std::size_t replicates = 1;
    std::size_t realizations = 1;
    std::string covariate_column = "t";
    std::string value_column = "x";
    std::string realization_column = "realization";
};

inline std::vector<Covariate> grid_covariates(const SimulateOptions& opt) {
    if (opt.count == 0 || opt.replicates == 0) throw std::invalid_argument("simulate: grid count and replicates must be >= 1");
    std::vector<Covariate> out;
    for (std::size_t i = 0; i < opt.count; ++i) {
        const double t = opt.count == 1 ? opt.lo
                                        : opt.lo + (opt.hi - opt.lo) * static_cast<double>(i) / static_cast<double>(opt.count - 1);
        for (std::size_t r = 0; r < opt.replicates; ++r) out.push_back(at(t));
    }
    return out;
}

/// Schema describing files written by `simulate`.
inline DatasetSchema simulate_schema(const GeneratorSpec& gen, const SimulateOptions& opt) {
    DatasetSchema s;
    s.covariates = gen.matching_premetric(opt.covariate_column);
    s.observation_column = opt.value_column;
    const bool continuous = gen.kind == GeneratorKind::latent_gaussian && !gen.quantizer;
    s.observation_kind = continuous ? ColumnKind::numeric : ColumnKind::categorical;
    s.realization_column = opt.realization_column;
    return s;
}

inline Dataset simulate_dataset(const GeneratorSpec& gen, const SimulateOptions& opt) {
    const auto covariates = grid_covariates(opt);
    const auto bundle = gen.simulate(covariates, opt.realizations);
    Dataset data;
    for (std::size_t r = 0; r < bundle.size(); ++r) {
        for (const auto& rec : bundle[r]) {
            data.records.push_back({rec.covariate, format_double(rec.value)});
            data.realization.push_back(std::to_string(r));
        }
    }
    return data;
}

inline Json simulate_manifest(const GeneratorSpec& gen, const SimulateOptions& opt) {
    const auto schema = simulate_schema(gen, opt);
    Manifest man{"simulate", schema.hash(), schema.covariates.to_config(), gen.seed, Json::object()};
    man.parameters["generator"] = gen.to_config();
    man.parameters["grid"] = {{"lo", opt.lo}, {"hi", opt.hi}, {"count", opt.count}};
    man.parameters["replicates"] = opt.replicates;
    man.parameters["realizations"] = opt.realizations;
    Json out;
    out["manifest"] = man.to_json();
    out["schema"] = schema.to_config();
    out["rows"] = opt.count * opt.replicates * opt.realizations;
    return out;
}

// ---------------------------------------------------------------------------
// validate-premetric

template <Premetric P>
Json validation_json(const P& d, std::span<const Covariate> sample) {
    const auto report = validate(d, sample);
    Json out;
    out["passed"] = report.passed();
    out["pairs_checked"] = report.pairs_checked;
    Json v = Json::array();
    for (const auto& x : report.violations) {
        v.push_back({{"first", x.first}, {"second", x.second}, {"kind", to_string(x.kind)}, {"value", x.value},
                     {"mirrored", x.mirrored}});
    }
    out["violations"] = v;
    return out;
}

inline Json run_validate_premetric(const Dataset& data, const DatasetSchema& schema, std::size_t max_sample) {
    auto covariates = covariates_of(data.records);
    if (covariates.size() > max_sample) covariates.resize(max_sample);
    Json out = validation_json(schema.covariates, std::span<const Covariate>(covariates));
    Manifest man{"validate-premetric", schema.hash(), schema.covariates.to_config(), std::nullopt, Json::object()};
    man.parameters["max_sample"] = max_sample;
    out["manifest"] = man.to_json();
    out["sample_size"] = covariates.size();
    return out;
}

/// Square distance table (CSV, no header) aligned with the first n data rows.
inline TablePremetric read_table_premetric(const std::string& text, std::vector<Covariate> keys) {
    std::istringstream in(text);
    std::string line;
    std::vector<double> table;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        for (const auto& cell : split_list(line)) {
            auto v = parse_double(cell);
            if (!v) throw IngestError("table: line " + std::to_string(lineno) + ": cannot parse '" + cell + "'");
            table.push_back(*v);
        }
    }
    const auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(table.size()))));
    if (n * n != table.size()) throw IngestError("table: not a square matrix");
    if (keys.size() < n) throw IngestError("table: more rows than data records");
    keys.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (keys[i] == keys[j]) {
                throw IngestError("table: data rows " + std::to_string(j + 1) + " and " + std::to_string(i + 1) +
                                  " share a covariate; table rows must be distinct covariates");
            }
        }
    }
    return TablePremetric(std::move(keys), std::move(table));
}

}  // namespace locex
