#include "catch_amalgamated.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "hkflow/experiment.hpp"
#include "hkflow/export.hpp"
#include "hkflow/rng.hpp"

using namespace hkflow;
using Catch::Approx;
using nlohmann::json;

namespace {

ExperimentSpec two_agent_spec() {
    ExperimentSpec s;
    s.n = 2;
    s.d = 1;
    Opinions<double> x(2, 1);
    x << 0.0, 0.8;
    s.initial = x;
    s.integrator.t_max = 20.0;
    return s;
}

bool same_bits(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

json valid_config() {
    return json::parse(R"({
        "n": 5, "d": 2, "radius": 2.0,
        "kernel": {"family": "indicator", "q": 1},
        "weights": {"mode": "uniform"},
        "seed": 3, "runs": 2,
        "integrator": {"rel_tol": 1e-9, "stepper": "auto"},
        "analyses": {"pairwise_scmc": true}
    })");
}

} // namespace

TEST_CASE("mix64 is the SplitMix64 finalizer", "[harness][rng]") {
    // first outputs of SplitMix64 seeded with 0
    CHECK(mix64(0x9E3779B97F4A7C15ULL) == 0xE220A8397B1DCDAFULL);
    CHECK(mix64(2 * 0x9E3779B97F4A7C15ULL) == 0x6E789E6AA1B965F4ULL);
}

TEST_CASE("counter generator is reproducible and addressable", "[harness][rng]") {
    CounterRng a(42), b(42);
    std::vector<std::uint64_t> first;
    for (int i = 0; i < 100; ++i) {
        first.push_back(a.next_u64());
        REQUIRE(first.back() == b.next_u64());
    }
    CHECK(a.counter() == 100);
    // draw c depends only on (key, stream, c)
    const std::uint64_t golden = 0x9E3779B97F4A7C15ULL;
    const std::uint64_t base = mix64(42 ^ mix64(0 + golden));
    for (std::uint64_t c = 0; c < 100; ++c) REQUIRE(first[c] == mix64(base + (c + 1) * golden));

    CounterRng s1 = a.substream(1), s1b = CounterRng(42, 1);
    CHECK(s1.next_u64() == s1b.next_u64());
    CHECK(CounterRng(42, 1).next_u64() != CounterRng(42, 0).next_u64());
    CHECK(run_seed(5, 0) != run_seed(5, 1));
    CHECK(run_seed(5, 3) == mix64(5 ^ mix64(3)));

    double lo = 1.0, hi = 0.0, sum = 0.0, sum2 = 0.0;
    CounterRng u(9);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double v = u.uniform();
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        const double z = u.normal();
        sum += z;
        sum2 += z * z;
    }
    CHECK(lo >= 0.0);
    CHECK(hi < 1.0);
    CHECK(std::abs(sum / n) < 3.0 / std::sqrt(double(n)) * 1.5);
    CHECK(sum2 / n == Approx(1.0).margin(0.02));
}

TEST_CASE("sample_initial", "[harness]") {
    SECTION("inside the ball, centered") {
        CounterRng rng(1);
        const auto s = sample_initial(100000, 2, 5.0, rng);
        CHECK(s.opinions.rowwise().norm().maxCoeff() <= 5.0);
        CHECK((s.weights.array() == 1.0).all());
        // per-coordinate variance r^2 / 4 in the disc
        const double sigma = 5.0 / 2.0 / std::sqrt(100000.0);
        const Eigen::RowVectorXd mean = s.opinions.colwise().mean();
        CHECK(std::abs(mean[0]) <= 3.0 * sigma);
        CHECK(std::abs(mean[1]) <= 3.0 * sigma);
    }
    SECTION("deterministic") {
        CounterRng a(42), b(42);
        const auto x = sample_initial(3, 2, 5.0, a), y = sample_initial(3, 2, 5.0, b);
        CHECK(same_bits(x.opinions, y.opinions));
    }
    SECTION("log-uniform weights") {
        CounterRng rng(3);
        WeightSpec w;
        w.mode = WeightMode::LogUniform;
        w.lo = 0.1;
        w.hi = 10.0;
        const auto s = sample_initial(2000, 1, 1.0, w, rng);
        CHECK(s.weights.minCoeff() >= 0.1);
        CHECK(s.weights.maxCoeff() <= 10.0);
        // median of a log-uniform on [0.1, 10] is 1
        const double below = (s.weights.array() < 1.0).cast<double>().mean();
        CHECK(below == Approx(0.5).margin(0.05));
    }
    SECTION("listed weights") {
        CounterRng rng(3);
        WeightSpec w;
        w.mode = WeightMode::List;
        w.values = {1.0, 2.0, 3.0};
        CHECK(sample_initial(3, 1, 1.0, w, rng).weights[2] == 3.0);
        CHECK_THROWS_AS(sample_initial(4, 1, 1.0, w, rng), InvalidArgument);
    }
}

TEST_CASE("two-agent experiment converges to one cluster", "[harness]") {
    const auto records = run_experiment(two_agent_spec());
    REQUIRE(records.size() == 1);
    const auto& r = records[0];
    REQUIRE(r.ok);
    REQUIRE(r.clusters);
    CHECK(r.clusters->partition.size() == 1);
    CHECK(r.clusters->centers(0, 0) == Approx(0.4).margin(1e-6));
    CHECK(r.equilibrium_class == EquilibriumVerdict::InteriorF);
    // monitors hold along the run
    for (std::size_t i = 1; i < r.monitor_trace.size(); ++i) {
        REQUIRE(r.monitor_trace[i].m2 <= r.monitor_trace[i - 1].m2 + 1e-12);
        REQUIRE(r.monitor_trace[i].weighted_mean[0] == Approx(0.4).margin(1e-12));
    }
    const auto stats = summarize(records);
    CHECK(stats.runs == 1);
    CHECK(stats.cluster_histogram.at(1) == 1);
    CHECK_FALSE(stats.categorized);
    CHECK_THROWS_AS(table1_stats(records), InvalidArgument);
}

TEST_CASE("batches are deterministic and independent of the worker count", "[harness]") {
    ExperimentSpec spec;
    spec.n = 30;
    spec.d = 2;
    spec.radius = 2.5;
    spec.runs = 10;
    spec.seed = 2024;
    spec.analyses.pairwise_scmc = true;
    spec.analyses.genericity = spec.analyses.sqrt2 = spec.analyses.scmc = true;
    const auto a = run_experiment(spec, 1), b = run_experiment(spec, 3);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < a.size(); ++i) {
        INFO("run " << i);
        REQUIRE(a[i].ok);
        CHECK(a[i].seed_used == run_seed(spec.seed, i));
        CHECK(same_bits(a[i].final_state.opinions, b[i].final_state.opinions));
        CHECK(to_json(a[i]).dump() == to_json(b[i]).dump());
    }
    const auto sa = table1_stats(a), sb = table1_stats(b);
    CHECK(to_json(sa).dump() == to_json(sb).dump());
    CHECK(sa.count_pairwise_scmc + sa.count_sufficient_hypotheses + sa.count_neither == sa.runs);
    CHECK(summary_json(spec, a, sa).dump() == summary_json(spec, b, sb).dump());

    spec.seed = 2025;
    const auto c = run_experiment(spec, 1);
    CHECK_FALSE(same_bits(a[0].initial_state.opinions, c[0].initial_state.opinions));
}

TEST_CASE("a 400-agent run ends in separated clusters", "[harness][slow]") {
    ExperimentSpec spec;
    spec.n = 400;
    spec.d = 2;
    spec.radius = 5.0;
    spec.seed = 1;
    spec.keep_trajectory = false;
    spec.analyses.pairwise_scmc = true;
    const auto r = run_single(spec, 0);
    REQUIRE(r.ok);
    REQUIRE(r.clusters);
    const auto& c = *r.clusters;
    CHECK(c.partition.size() > 1);
    for (Index i = 0; i < c.centers.rows(); ++i)
        for (Index j = i + 1; j < c.centers.rows(); ++j) REQUIRE(pair_distance(c.centers, i, j) >= 1.0 - 1e-3);
    REQUIRE(r.category);
}

TEST_CASE("failed runs are kept out of the denominators", "[harness]") {
    std::vector<RunRecord> recs(3);
    recs[0].ok = true;
    recs[0].category = Table1Category::PairwiseScmc;
    recs[0].clusters = ClusterSet<double>{};
    recs[1].ok = false;
    recs[1].numerical_failure = true;
    recs[2].ok = true;
    recs[2].category = Table1Category::Neither;
    recs[2].clusters = ClusterSet<double>{};
    const auto s = table1_stats(recs);
    CHECK(s.runs == 2);
    CHECK(s.failed == 1);
    CHECK(s.count_pairwise_scmc == 1);
    CHECK(s.count_neither == 1);
    CHECK(s.categorized);
    recs[2].category.reset();
    CHECK_THROWS_AS(table1_stats(recs), InvalidArgument);
}

TEST_CASE("table1_category precedence", "[harness]") {
    Opinions<double> c(2, 1);
    Weights<double> w(2);
    c << 0.0, 1.5;
    w << 1.0, 1.0;
    CHECK(table1_category({c, w, 1.0}) == Table1Category::PairwiseScmc);
    c << 0.0, 1.7;
    w << 10.0, 1.0;
    CHECK(table1_category({c, w, 1.0}) == Table1Category::SufficientHypotheses);
    c << 0.0, 2.5;
    w << 1.0, 1.0;
    CHECK(table1_category({c, w, 1.0}) == Table1Category::Neither);
}

TEST_CASE("trajectory CSV", "[harness][export]") {
    std::vector<SystemState<double>> samples;
    for (double t : {0.0, 0.5}) {
        Opinions<double> x(1, 1);
        x << 0.1 + t;
        SystemState<double> s = SystemState<double>::equal_weights(x);
        s.time = t;
        samples.push_back(s);
    }
    std::ostringstream out;
    write_trajectory_csv(out, samples);
    CHECK(out.str() == "t,agent,comp_1\n0,0,0.1\n0.5,0,0.6\n");

    // round trip on awkward values
    CounterRng rng(17);
    std::vector<SystemState<double>> many;
    for (int k = 0; k < 5; ++k) {
        Opinions<double> x(4, 3);
        for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal() * std::pow(10.0, rng.uniform(-20.0, 20.0));
        SystemState<double> s = SystemState<double>::equal_weights(x);
        s.time = k * 0.1;
        many.push_back(s);
    }
    std::ostringstream first;
    write_trajectory_csv(first, many);
    std::istringstream in(first.str());
    const auto parsed = read_trajectory_csv(in);
    REQUIRE(parsed.size() == many.size());
    for (std::size_t k = 0; k < many.size(); ++k) CHECK(same_bits(parsed[k].opinions, many[k].opinions));
    std::ostringstream second;
    write_trajectory_csv(second, parsed);
    CHECK(second.str() == first.str());

    std::istringstream bad("t,agent,comp_1\n0,0,abc\n");
    CHECK_THROWS(read_trajectory_csv(bad));
}

TEST_CASE("monitor CSV header", "[harness][export]") {
    const auto records = run_experiment(two_agent_spec());
    std::ostringstream out;
    write_monitor_csv(out, records[0].monitor_trace);
    const std::string header = out.str().substr(0, out.str().find('\n'));
    CHECK(header.rfind("t,mean_1,m2,M2_k1,", 0) == 0);
    CHECK(out.str().find('\r') == std::string::npos);
}

TEST_CASE("config parsing", "[harness][config]") {
    const auto spec = ExperimentSpec::from_json(valid_config());
    CHECK(spec.n == 5);
    CHECK(spec.integrator.rel_tol == 1e-9);
    CHECK(spec.analyses.pairwise_scmc);
    // to_json and back is stable
    CHECK(ExperimentSpec::from_json(spec.to_json()).to_json() == spec.to_json());

    const auto rejects = [](const std::function<void(json&)>& edit) {
        json j = valid_config();
        edit(j);
        try {
            ExperimentSpec::from_json(j);
        } catch (const ConfigError&) {
            return true;
        }
        return false;
    };
    CHECK(rejects([](json& j) { j["unknown"] = 1; }));
    CHECK(rejects([](json& j) { j["n"] = 0; }));
    CHECK(rejects([](json& j) { j["radius"] = -1.0; }));
    CHECK(rejects([](json& j) { j["runs"] = 0; }));
    CHECK(rejects([](json& j) { j["n"] = "five"; }));
    CHECK(rejects([](json& j) { j["kernel"]["family"] = "gaussian"; }));
    CHECK(rejects([](json& j) { j["integrator"]["stepper"] = "euler"; }));
    CHECK(rejects([](json& j) { j["integrator"]["rel_tol"] = 0.0; }));
    CHECK(rejects([](json& j) { j["weights"] = {{"mode", "list"}, {"values", {1.0, 2.0}}}; }));
    CHECK(rejects([](json& j) { j["initial"] = {{0.0, 0.0}}; }));
    CHECK(rejects([](json& j) {
        j["kernel"]["family"] = "tent";
        j["analyses"]["genericity"] = true;
    }));
    CHECK(rejects([](json& j) { j["analyses"]["sweep"] = {{"deltas", {1e-3, 1e-2}}}; }));
    CHECK_FALSE(rejects([](json& j) { j["analyses"]["sweep"] = {{"deltas", {1e-2, 1e-3}}}; }));
}

TEST_CASE("summary files", "[harness][export]") {
    const auto dir = std::filesystem::temp_directory_path() / "hkflow_test_export";
    std::filesystem::remove_all(dir);
    auto spec = two_agent_spec();
    const auto records = run_experiment(spec);
    export_results(dir, spec, records, summarize(records));
    CHECK(std::filesystem::exists(dir / "summary.json"));
    CHECK(std::filesystem::exists(dir / "run_0000_trajectory.csv"));
    CHECK(std::filesystem::exists(dir / "run_0000_monitors.csv"));
    const auto j = json::parse(read_text_file(dir / "summary.json"));
    CHECK(j["format_version"] == 1);
    CHECK(j["runs"][0]["clusters"]["count"] == 1);
    // same spec, same bytes
    const auto again = std::filesystem::temp_directory_path() / "hkflow_test_export_2";
    std::filesystem::remove_all(again);
    export_results(again, spec, run_experiment(spec), summarize(records));
    CHECK(read_text_file(dir / "summary.json") == read_text_file(again / "summary.json"));
    CHECK(read_text_file(dir / "run_0000_trajectory.csv") == read_text_file(again / "run_0000_trajectory.csv"));
    CHECK_THROWS_AS(read_text_file(dir / "missing.json"), IoError);
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(again);
}
