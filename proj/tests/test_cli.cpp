#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "locex/cli.hpp"

using namespace locex;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "locex");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

class Workspace : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("locex_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string file(const std::string& name, const std::string& content) {
        const auto p = (dir_ / name).string();
        std::ofstream(p) << content;
        return p;
    }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    fs::path dir_;
};

std::string hours_schema(double weight) {
    return "[covariates]\ncolumn=hour kind=numeric weight=" + format_double(weight) +
           " period=24\n[observation]\ncolumn=severity\n[test_function]\nkind=indicator equals=1\n"
           "[statistic]\ngroup=drunk treated=yes outcome=1\n";
}

std::string hours_csv(std::size_t n, std::uint64_t seed) {
    Stream rng(seed);
    std::string s = "hour,severity,drunk\n";
    for (std::size_t i = 0; i < n; ++i) {
        s += format_double(std::floor(24 * rng.uniform() * 4) / 4) + "," + std::to_string(rng.below(2)) + "," +
             (i % 2 ? "yes" : "no") + "\n";
    }
    return s;
}

}  // namespace

TEST_F(Workspace, EstimateExchangeableLimitIsTheGlobalProportion) {
    const auto data = file("d.csv", hours_csv(200, 1));
    const auto schema = file("s.cfg", hours_schema(0.0));
    const auto r = cli({"estimate", "--data", data, "--schema", schema, "--query-grid", "hour:0:24:6"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = Json::parse(r.out);
    const auto dataset = ingest_text(hours_csv(200, 1), DatasetSchema::from_config(hours_schema(0.0)));
    double ones = 0;
    for (const auto& rec : dataset.records) ones += rec.value == "1";
    for (const auto& q : j.at("results")) {
        EXPECT_EQ(q.at("M").get<std::size_t>(), 200u);
        EXPECT_NEAR(q.at("estimate").get<double>(), ones / 200.0, 1e-12);
    }
}

TEST_F(Workspace, EstimateAtomCountsShrinkWithLambda) {
    const auto data = file("d.csv", hours_csv(500, 2));
    std::vector<std::size_t> previous;
    for (double lambda : {0.0, 1e-4, 1e-2, 1.0, 100.0}) {
        const auto schema = file("s.cfg", hours_schema(lambda));
        const auto r = cli({"estimate", "--data", data, "--schema", schema, "--query-grid", "hour:0:24:12"});
        ASSERT_EQ(r.code, 0) << r.err;
        std::vector<std::size_t> counts;
        for (const auto& q : Json::parse(r.out).at("results")) counts.push_back(q.at("M").get<std::size_t>());
        if (!previous.empty()) {
            for (std::size_t i = 0; i < counts.size(); ++i) EXPECT_LE(counts[i], previous[i]);
        }
        previous = counts;
    }
    // With a huge lambda only records at the query hour itself survive.
    const auto dataset = ingest_text(hours_csv(500, 2), DatasetSchema::from_config(hours_schema(1.0)));
    for (std::size_t i = 0; i < previous.size(); ++i) {
        std::size_t at_hour = 0;
        for (const auto& rec : dataset.records) at_hour += rec.covariate.numeric[0] == 2.0 * static_cast<double>(i);
        EXPECT_EQ(previous[i], std::max<std::size_t>(at_hour, 1));
    }
}

TEST_F(Workspace, EstimateTracksJumpProcessTruth) {
    const auto gen = file("g.cfg", "[generator]\nkind=jump\n");
    const auto csv = path("sim.csv");
    const auto schema_path = path("sim.schema");
    ASSERT_EQ(cli({"simulate", "--generator", gen, "--seed", "5", "--grid", "0:1:41", "--replicates", "60",
                   "--realizations", "20", "--out", csv, "--schema-out", schema_path})
                  .code,
              0);
    auto schema = DatasetSchema::from_config(read_file(schema_path));
    schema.test_function = TestFunctionConfig{TestFunctionKind::indicator, {"1"}, std::nullopt};
    const auto all = ingest(csv, schema);
    const auto bundle = split_realizations(all);
    EstimateOptions opt;
    for (int i = 0; i <= 10; ++i) opt.queries.push_back(at(i / 10.0));
    int covered = 0, finite = 0, total = 0;
    for (std::size_t r = 0; r < bundle.size(); ++r) {
        Dataset one;
        one.records = bundle[r];
        // per-realization truth 1(tau >= U): U lies between the last 0 and the first 1
        double first_one = 2.0;
        for (const auto& rec : one.records) {
            if (rec.value == "1") first_one = std::min(first_one, rec.covariate.numeric[0]);
        }
        const auto report = run_estimate(one, schema, opt);
        for (const auto& q : report.at("results")) {
            const double tau = q.at("tau").at("t").get<double>();
            if (std::abs(tau - first_one) <= 0.025 + 1e-12) continue;  // U is only known to grid resolution
            const double truth = tau >= first_one ? 1.0 : 0.0;
            ++total;
            if (q.at("ci").is_null()) continue;
            ++finite;
            covered += std::abs(q.at("estimate").get<double>() - truth) <= q.at("ci").get<double>();
        }
    }
    EXPECT_GT(finite, total / 2);
    EXPECT_GE(covered, static_cast<int>(0.95 * finite) - 3 * static_cast<int>(std::sqrt(0.05 * 0.95 * finite)) - 1);
}

TEST_F(Workspace, TestCommandRequiresSeed) {
    const auto data = file("d.csv", hours_csv(10, 3));
    const auto schema = file("s.cfg", hours_schema(0.1));
    const auto r = cli({"test", "--data", data, "--schema", schema});
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.err.find("seed"), std::string::npos);
}

TEST_F(Workspace, TestCommandExactPathAndReplay) {
    const auto data = file("d.csv", hours_csv(12, 4));
    const auto schema = file("s.cfg", hours_schema(0.001));
    const auto a = cli({"test", "--data", data, "--schema", schema, "--seed", "7", "--alpha", "0.2"});
    ASSERT_EQ(a.code, 0) << a.err;
    const auto j = Json::parse(a.out);
    EXPECT_EQ(j.at("mode"), "exact");
    EXPECT_EQ(j.at("result").at("n_samples"), "exact");
    EXPECT_TRUE(j.contains("partition"));
    EXPECT_TRUE(j.contains("premetric_hash"));
    EXPECT_EQ(j.at("manifest").at("seed"), 7);
    const auto b = cli({"test", "--data", data, "--schema", schema, "--seed", "7", "--alpha", "0.2"});
    EXPECT_EQ(a.out, b.out);
}

TEST_F(Workspace, TestCommandReportsRequiredSamples) {
    const auto data = file("d.csv", hours_csv(60, 5));
    const auto schema = file("s.cfg", hours_schema(0.0));
    const auto r = cli({"test", "--data", data, "--schema", schema, "--seed", "1", "--n-perms", "100", "--subsampled"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = Json::parse(r.out);
    EXPECT_TRUE(j.at("decision").is_null());
    EXPECT_EQ(j.at("required_samples"), 7716);
}

TEST_F(Workspace, OutputKeysAreSorted) {
    const auto data = file("d.csv", hours_csv(12, 4));
    const auto schema = file("s.cfg", hours_schema(0.001));
    const auto r = cli({"design", "--data", data, "--schema", schema, "--query", "hour=3"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = Json::parse(r.out);
    std::vector<std::string> keys;
    for (const auto& [k, v] : j.items()) keys.push_back(k);
    EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
    const auto pos_blocks = r.out.find("\"blocks\"");
    const auto pos_partition = r.out.find("\"partition\"");
    EXPECT_LT(pos_blocks, pos_partition);
}

TEST_F(Workspace, DesignSingletonsPairAndProfiles) {
    const auto schema = file("s.cfg", "[covariates]\ncolumn=x kind=numeric weight=1\n");
    const auto pair = file("pair.csv", "x\n0\n0.3\n");
    auto r = cli({"design", "--data", pair, "--schema", schema, "--alpha", "0.7"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto j = Json::parse(r.out);
    EXPECT_NEAR(j.at("penalty").get<double>(), 0.3, 1e-15);
    EXPECT_EQ(j.at("blocks"), 1);

    r = cli({"design", "--data", pair, "--schema", schema, "--alpha", "1e-6"});
    ASSERT_EQ(r.code, 0) << r.err;
    j = Json::parse(r.out);
    EXPECT_EQ(j.at("penalty").get<double>(), 0.0);
    EXPECT_EQ(j.at("blocks"), 2);
    EXPECT_EQ(j.at("group_max").get<double>(), 1.0);
    EXPECT_EQ(j.at("required_samples").get<std::uint64_t>(), required_samples(1e-6, 1.0));

    // far beyond 2^64 permutations
    r = cli({"design", "--data", pair, "--schema", schema, "--alpha", "1e-9"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(Json::parse(r.out).at("required_samples").is_null());

    const auto clusters = file("c.csv", "x\n0\n0.02\n0.05\n0.9\n0.93\n");
    r = cli({"design", "--data", clusters, "--schema", schema, "--query", "x=0.45"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto profile = Json::parse(r.out).at("profiles").at(0);
    const std::vector<double> xs{0, 0.02, 0.05, 0.9, 0.93};
    std::vector<double> b;
    for (double x : xs) b.push_back(std::abs(x - 0.45));
    const auto w = optimal_weights(b);
    EXPECT_EQ(profile.at("M").get<std::size_t>(), w.active_count);
    for (const auto& entry : profile.at("weights")) {
        EXPECT_EQ(entry.at("weight").get<double>(), w.weights[entry.at("index").get<std::size_t>()]);
    }
}

TEST_F(Workspace, EstimatePremetricFromSimulation) {
    const auto gen = file("g.cfg", "[generator]\nkind=switching_mixture mu0=1,0 mu1=0.5,0.5\n");
    const auto csv = path("sim.csv");
    const auto schema = path("sim.schema");
    ASSERT_EQ(cli({"simulate", "--generator", gen, "--seed", "3", "--grid", "0:1:101", "--realizations", "200", "--out",
                   csv, "--schema-out", schema})
                  .code,
              0);
    const auto r = cli({"estimate-premetric", "--data", csv, "--schema", schema, "--query", "t=0.3", "--query", "t=0.5"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = Json::parse(r.out);
    EXPECT_EQ(j.at("N"), 200);
    EXPECT_EQ(j.at("alphabet_size"), 2);
    EXPECT_GE(j.at("estimate").get<double>(), 0.0);
    EXPECT_TRUE(j.contains("caveat"));
}

TEST_F(Workspace, SimulateIsReproducibleAndRoundTrips) {
    const auto gen = file("g.cfg", "[generator]\nkind=latent_gaussian width=0.5 noise_variance=0.1\n");
    ASSERT_EQ(cli({"simulate", "--generator", gen, "--seed", "9", "--grid", "0:1:11", "--realizations", "3", "--out",
                   path("a.csv"), "--schema-out", path("a.schema")})
                  .code,
              0);
    ASSERT_EQ(cli({"simulate", "--generator", gen, "--seed", "9", "--grid", "0:1:11", "--realizations", "3", "--out",
                   path("b.csv")})
                  .code,
              0);
    const auto text = read_file(path("a.csv"));
    EXPECT_EQ(text, read_file(path("b.csv")));
    const auto schema = DatasetSchema::from_config(read_file(path("a.schema")));
    EXPECT_EQ(emit_csv(ingest(path("a.csv"), schema), schema), text);
    EXPECT_NE(cli({"simulate", "--generator", gen, "--out", path("c.csv")}).code, 0);
}

TEST_F(Workspace, ValidatePremetric) {
    const auto data = file("d.csv", hours_csv(30, 6));
    const auto schema = file("s.cfg", hours_schema(0.1));
    auto r = cli({"validate-premetric", "--data", data, "--schema", schema});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(Json::parse(r.out).at("passed").get<bool>());

    const auto small = file("small.csv", "hour,severity\n1,0\n2,0\n3,1\n");
    const auto table = file("t.csv", "0,0.2,0.3\n0.2,0,0.5\n0.3,0.4,0\n");
    r = cli({"validate-premetric", "--data", small, "--schema", schema, "--table", table});
    EXPECT_EQ(r.code, kExitValidationFailed);
    const auto j = Json::parse(r.out);
    EXPECT_FALSE(j.at("passed").get<bool>());
    EXPECT_EQ(j.at("violations").size(), 1u);
}

TEST_F(Workspace, PremetricOverride) {
    const auto data = file("d.csv", hours_csv(40, 7));
    const auto schema = file("s.cfg", hours_schema(0.0));
    const auto premetric = file("p.cfg", "[premetric]\ncolumn=hour kind=numeric weight=0.5 period=24\n");
    const auto r = cli({"estimate", "--data", data, "--schema", schema, "--premetric", premetric, "--query", "hour=0"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_LT(Json::parse(r.out).at("results").at(0).at("M").get<std::size_t>(), 40u);
}

TEST_F(Workspace, ErrorsAreReported) {
    const auto schema = file("s.cfg", hours_schema(0.1));
    const auto bad = file("bad.csv", "hour,severity\n1,0\nnoon,1\n");
    const auto r = cli({"estimate", "--data", bad, "--schema", schema, "--query", "hour=1"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("line 3"), std::string::npos);
    EXPECT_NE(cli({"estimate", "--data", path("nope.csv"), "--schema", schema}).code, 0);
    EXPECT_NE(cli({}).code, 0);
}

namespace {

// In-memory null/alternative data for the `test` command.
Dataset paired_dataset(std::size_t pairs, double p_treated, double p_control, Stream rng) {
    Dataset d;
    for (std::size_t k = 0; k < pairs; ++k) {
        const double hour = static_cast<double>(k % 24);
        d.records.push_back({Covariate{{}, {hour}}, rng.uniform() < p_treated ? "1" : "0"});
        d.treated.push_back(true);
        d.group_values.push_back("yes");
        d.records.push_back({Covariate{{}, {hour}}, rng.uniform() < p_control ? "1" : "0"});
        d.treated.push_back(false);
        d.group_values.push_back("no");
    }
    return d;
}

}  // namespace

TEST(RunTest, NullRejectionRate) {
    const auto schema = DatasetSchema::from_config(hours_schema(0.0));
    TestOptions opt;
    opt.n_perms = 8000;
    int rejections = 0;
    const int trials = 1000;
    for (int i = 0; i < trials; ++i) {
        opt.seed = static_cast<std::uint64_t>(i);
        const auto d = paired_dataset(12, 0.4, 0.4, Stream(1000 + static_cast<std::uint64_t>(i)));
        const auto j = run_test(d, schema, opt);
        rejections += j.at("decision") == "reject";
    }
    EXPECT_LE(rejections / double(trials), 0.05 + 3 * std::sqrt(0.05 * 0.95 / trials));
}

TEST(RunTest, PowerAgainstAStrongAlternative) {
    const auto schema = DatasetSchema::from_config(hours_schema(0.0));
    TestOptions opt;
    opt.n_perms = 8000;
    int rejections = 0;
    const int trials = 100;
    for (int i = 0; i < trials; ++i) {
        opt.seed = static_cast<std::uint64_t>(i);
        const auto d = paired_dataset(24, 0.9, 0.1, Stream(5000 + static_cast<std::uint64_t>(i)));
        const auto j = run_test(d, schema, opt);
        EXPECT_EQ(j.at("mode"), "subsampled");
        rejections += j.at("decision") == "reject";
    }
    EXPECT_GT(rejections / double(trials), 0.9);
}

TEST(RunTest, MatchedPairsShrinkWithLambda) {
    Stream rng(77);
    Dataset d;
    for (int i = 0; i < 80; ++i) {
        d.records.push_back({Covariate{{}, {24 * rng.uniform()}}, "0"});
        d.treated.push_back(i % 3 == 0);
        d.group_values.push_back(i % 3 == 0 ? "yes" : "no");
    }
    std::size_t previous = d.records.size();
    std::size_t first = 0;
    for (double lambda : {0.0, 1e-4, 1e-2, 1.0}) {
        const auto schema = DatasetSchema::from_config(hours_schema(lambda));
        DesignOptions opt;
        opt.constraint = "matched-pairs";
        const auto j = run_design(d, schema, opt);
        const auto pairs = j.at("matched_pairs").get<std::size_t>();
        EXPECT_LE(pairs, previous);
        if (lambda == 0.0) first = pairs;
        previous = pairs;
    }
    EXPECT_GT(first, 0u);
    EXPECT_LT(previous, first);
}
