#pragma once

// Argument handling for the `locex` executable.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "locex/commands.hpp"

namespace locex {

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << text;
    if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

inline DatasetSchema load_schema(const std::string& schema_path, const std::string& premetric_path) {
    auto schema = DatasetSchema::from_config(read_file(schema_path));
    if (!premetric_path.empty()) schema.covariates = PremetricSpec::from_config(read_file(premetric_path));
    return schema;
}

inline std::vector<Covariate> build_queries(const std::vector<std::string>& queries, const std::string& grid,
                                            const PremetricSpec& spec) {
    std::vector<Covariate> out;
    for (const auto& q : queries) out.push_back(parse_query(q, spec));
    if (!grid.empty()) {
        Covariate base;
        if (!out.empty()) {
            base = out.back();
            out.pop_back();
        } else if (spec.categorical_arity() == 0 && spec.numeric_arity() == 1) {
            base.numeric.push_back(0.0);
        } else {
            throw std::invalid_argument("--query-grid needs a base --query for the other columns");
        }
        for (auto& c : expand_query_grid(grid, base, spec)) out.push_back(std::move(c));
    }
    return out;
}

inline void emit(const Json& j, const std::string& out_path, std::ostream& out) {
    const std::string text = j.dump(2) + "\n";
    if (out_path.empty() || out_path == "-") out << text;
    else write_text(out_path, text);
}

}  // namespace detail

inline constexpr int kExitValidationFailed = 3;

/// Runs one CLI invocation; returns the process exit code.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"locex: local exchangeability estimation and randomization tests"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    std::string data, schema_path, premetric, out_path, query_grid, constraint, table_out, generator, table_path;
    std::vector<std::string> queries;
    double alpha = 0.05;
    double delta = 0.1;
    std::uint64_t n_perms = 100'000;
    std::uint64_t seed = 0;
    std::uint64_t budget = kDefaultEnumerationBudget;
    std::size_t threads = 1;
    std::size_t max_sample = 500;
    bool atoms = false, force_subsampled = false;
    std::string kind = "indicator";
    SimulateOptions sim;
    std::string grid = "0:1:101";

    auto add_common = [&](CLI::App* c, bool needs_data = true) {
        auto* d = c->add_option("--data", data, "CSV input");
        if (needs_data) d->required()->check(CLI::ExistingFile);
        c->add_option("--schema", schema_path, "schema file")->required()->check(CLI::ExistingFile);
        c->add_option("--premetric", premetric, "premetric file overriding the schema's [covariates]")
            ->check(CLI::ExistingFile);
        c->add_option("--out", out_path, "output path (default stdout)");
    };

    auto* est = app.add_subcommand("estimate", "local empirical estimates with error bounds");
    add_common(est);
    est->add_option("--query", queries, "query covariate, col=value[,col=value]");
    est->add_option("--query-grid", query_grid, "col:lo:hi:count sweep");
    est->add_option("--alpha", alpha, "confidence level")->check(CLI::Range(0.0, 1.0));
    est->add_option("--delta", delta, "tail-bound deviation")->check(CLI::Range(0.0, 1.0));
    est->add_flag("--atoms", atoms, "include the weighted atoms");
    est->add_option("--table", table_out, "also write a CSV table here");

    auto* tst = app.add_subcommand("test", "local randomization test");
    add_common(tst);
    tst->add_option("--alpha", alpha, "level")->check(CLI::Range(0.0, 1.0));
    tst->add_option("--n-perms", n_perms, "Monte Carlo permutations");
    tst->add_option("--seed", seed, "RNG seed")->required();
    tst->add_option("--constraint", constraint, "matched-pairs | none | max-size=K")->default_str("matched-pairs");
    tst->add_option("--budget", budget, "largest group enumerated exactly");
    tst->add_flag("--subsampled", force_subsampled, "skip exact enumeration");
    tst->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

    auto* des = app.add_subcommand("design", "partition, penalty and weight profiles from covariates alone");
    add_common(des);
    des->add_option("--alpha", alpha, "level")->check(CLI::Range(0.0, 1.0));
    des->add_option("--delta", delta, "tail-bound deviation")->check(CLI::Range(0.0, 1.0));
    des->add_option("--constraint", constraint, "matched-pairs | none | max-size=K")->default_str("none");
    des->add_option("--query", queries, "query covariate");
    des->add_option("--query-grid", query_grid, "col:lo:hi:count sweep");
    des->add_option("--kind", kind, "indicator | general")->check(CLI::IsMember({"indicator", "general"}));

    auto* ep = app.add_subcommand("estimate-premetric", "estimate the strong canonical premetric from realizations");
    add_common(ep);
    ep->add_option("--query", queries, "the two covariates t and t'")->expected(2)->required();

    auto* simc = app.add_subcommand("simulate", "write realizations of a synthetic process as CSV");
    simc->add_option("--generator", generator, "generator file ([generator] section)")->required()->check(
        CLI::ExistingFile);
    simc->add_option("--seed", seed, "RNG seed")->required();
    simc->add_option("--grid", grid, "lo:hi:count covariate grid");
    simc->add_option("--replicates", sim.replicates, "observations per grid point")->check(CLI::PositiveNumber);
    simc->add_option("--realizations", sim.realizations, "independent realizations")->check(CLI::PositiveNumber);
    simc->add_option("--out", out_path, "CSV output path")->required();
    simc->add_option("--schema-out", schema_path, "also write the matching schema here");

    auto* val = app.add_subcommand("validate-premetric", "check premetric axioms on the data's covariates");
    add_common(val);
    val->add_option("--table", table_path, "square CSV distance table aligned with the data rows")
        ->check(CLI::ExistingFile);
    val->add_option("--max-sample", max_sample, "covariates checked")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*simc) {
            auto gen = GeneratorSpec::from_config(read_file(generator));
            gen.seed = seed;
            const auto parts = split_list(grid, ':');
            std::vector<double> nums;
            for (const auto& p : parts) {
                if (auto v = parse_double(p)) nums.push_back(*v);
            }
            if (parts.size() != 3 || nums.size() != 3 || nums[2] < 1 || std::floor(nums[2]) != nums[2]) {
                throw std::invalid_argument("--grid: expected lo:hi:count");
            }
            sim.lo = nums[0];
            sim.hi = nums[1];
            sim.count = static_cast<std::size_t>(nums[2]);
            const auto schema = simulate_schema(gen, sim);
            detail::write_text(out_path, emit_csv(simulate_dataset(gen, sim), schema));
            if (!schema_path.empty()) detail::write_text(schema_path, schema.to_config());
            out << simulate_manifest(gen, sim).dump(2) << "\n";
            return 0;
        }

        const auto schema = detail::load_schema(schema_path, premetric);
        if (*est) {
            const auto dataset = ingest(data, schema);
            EstimateOptions opt;
            opt.queries = detail::build_queries(queries, query_grid, schema.covariates);
            opt.alpha = alpha;
            opt.delta = delta;
            opt.include_atoms = atoms;
            const auto report = run_estimate(dataset, schema, opt);
            if (!table_out.empty()) detail::write_text(table_out, estimate_table(report));
            detail::emit(report, out_path, out);
        } else if (*tst) {
            const auto dataset = ingest(data, schema);
            TestOptions opt;
            opt.alpha = alpha;
            opt.n_perms = n_perms;
            opt.seed = seed;
            if (!constraint.empty()) opt.constraint = constraint;
            opt.enumeration_budget = budget;
            opt.force_subsampled = force_subsampled;
            opt.threads = threads;
            detail::emit(run_test(dataset, schema, opt), out_path, out);
        } else if (*des) {
            const auto dataset = ingest(data, schema, false);
            DesignOptions opt;
            opt.alpha = alpha;
            opt.delta = delta;
            if (!constraint.empty()) opt.constraint = constraint;
            opt.queries = detail::build_queries(queries, query_grid, schema.covariates);
            opt.kind = kind == "general" ? TestFunctionKind::general : TestFunctionKind::indicator;
            detail::emit(run_design(dataset, schema, opt), out_path, out);
        } else if (*ep) {
            const auto dataset = ingest(data, schema);
            const auto t = parse_query(queries.at(0), schema.covariates);
            const auto u = parse_query(queries.at(1), schema.covariates);
            detail::emit(run_estimate_premetric(dataset, schema, t, u), out_path, out);
        } else if (*val) {
            const auto dataset = ingest(data, schema, false);
            Json report;
            if (!table_path.empty()) {
                const auto d = read_table_premetric(read_file(table_path), covariates_of(dataset.records));
                const auto keys = d.keys();
                report = validation_json(d, std::span<const Covariate>(keys));
                report["sample_size"] = keys.size();
                report["source"] = "table";
            } else {
                report = run_validate_premetric(dataset, schema, max_sample);
                report["source"] = "schema";
            }
            detail::emit(report, out_path, out);
            return report.at("passed").get<bool>() ? 0 : kExitValidationFailed;
        }
        return 0;
    } catch (const std::exception& e) {
        err << "locex: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace locex
