#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hkflow/equilibrium.hpp"
#include "hkflow/experiment.hpp"
#include "hkflow/export.hpp"
#include "hkflow/robustness.hpp"

using namespace hkflow;
using nlohmann::json;

namespace {

constexpr int exit_config = 2;
constexpr int exit_numerical = 3;

std::vector<double> parse_csv_vector(const std::string& text, const std::string& what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(cell, &used));
            if (used != cell.size() && cell.find_first_not_of(" \t", used) != std::string::npos) throw 0;
        } catch (...) {
            throw ConfigError(what + ": '" + cell + "' is not a number");
        }
    }
    if (out.empty()) throw ConfigError(what + " is empty");
    return out;
}

Point<double> to_point(const std::vector<double>& v) {
    return Eigen::Map<const Point<double>>(v.data(), static_cast<Index>(v.size()));
}

json load_json(const std::string& path) {
    const std::string text = read_text_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::optional<std::uint64_t> env_seed() {
    const char* s = std::getenv("HKFLOW_SEED");
    if (s == nullptr || *s == '\0') return std::nullopt;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (*end != '\0') throw ConfigError(std::string("HKFLOW_SEED is not an unsigned integer: ") + s);
    return v;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const std::string& config, const std::string& out_dir, unsigned workers) {
    ExperimentSpec spec = ExperimentSpec::from_json(load_json(config));
    if (auto s = env_seed()) spec.seed = *s;
    const auto records = run_experiment(spec, workers);
    const SummaryStats stats = summarize(records);
    if (!out_dir.empty()) export_results(out_dir, spec, records, stats);
    for (const auto& r : records) {
        std::cout << "run " << r.run_index << ": ";
        if (r.ok)
            std::cout << to_string(r.equilibrium_class) << ", " << r.clusters->partition.size() << " clusters, t="
                      << r.final_state.time << ", " << r.event_count << " events";
        else
            std::cout << "failed: " << r.error;
        if (r.category) std::cout << ", " << to_string(*r.category);
        std::cout << "\n";
    }
    std::cout << to_json(stats).dump() << "\n";
    bool all_numerical = true;
    for (const auto& r : records) all_numerical = all_numerical && !r.ok && r.numerical_failure;
    if (all_numerical) return exit_numerical;
    for (const auto& r : records)
        if (!r.ok && !r.numerical_failure) return exit_config;
    return 0;
}

int cmd_robustness(const std::string& config, const std::string& x0_text, const std::string& deltas_text,
                   unsigned workers) {
    const json j = load_json(config);
    ClusteredEquilibrium<double> eq;
    IntegratorConfig cfg;
    DeltaOptions opts;
    try {
        for (const auto& [key, _] : j.items())
            if (key != "centers" && key != "weights" && key != "q" && key != "integrator" && key != "horizon" &&
                key != "branch_cap")
                throw ConfigError("unknown key '" + key + "' in robustness config");
        const auto rows = j.at("centers").get<std::vector<std::vector<double>>>();
        if (rows.empty()) throw ConfigError("centers is empty");
        Opinions<double> c(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows[0].size()) throw ConfigError("centers rows differ in length");
            for (std::size_t k = 0; k < rows[i].size(); ++k) c(static_cast<Index>(i), static_cast<Index>(k)) = rows[i][k];
        }
        Weights<double> w = Weights<double>::Ones(c.rows());
        if (j.contains("weights")) {
            const auto wv = j.at("weights").get<std::vector<double>>();
            if (static_cast<Index>(wv.size()) != c.rows()) throw ConfigError("one weight per center is required");
            w = Eigen::Map<const Weights<double>>(wv.data(), c.rows());
        }
        eq = ClusteredEquilibrium<double>(c, w, j.value("q", 1.0));
        if (j.contains("integrator")) cfg = integrator_config_from_json(j.at("integrator"));
        if (j.contains("horizon")) opts.horizon = j.at("horizon").get<double>();
        if (j.contains("branch_cap")) opts.branch_cap = j.at("branch_cap").get<int>();
    } catch (const json::exception& e) {
        throw ConfigError(config + ": " + e.what());
    }
    const Point<double> x0 = to_point(parse_csv_vector(x0_text, "--x0"));
    const std::vector<double> deltas = parse_csv_vector(deltas_text, "--deltas");

    RobustnessReport report = theorem_verdicts(eq);
    const TrajectoryType type = classify_zero_trajectory(eq, x0);
    const DeltaSweep sweep = delta_sweep(eq, x0, deltas, cfg, opts, workers);
    report.delta_sweep = sweep.points;

    json type_json = {{"kind", to_string(type.kind)}, {"switches", type.switches}};
    if (type.irregular_event) type_json["irregular_event"] = to_string(*type.irregular_event);
    json out = {{"verdicts", to_json(report)}, {"zero_trajectory", type_json}, {"sweep", to_json(sweep)}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_classify(const std::string& state_path, double q, double eps) {
    std::ifstream f(state_path);
    if (!f) throw IoError("cannot open " + state_path);
    std::string first;
    std::getline(f, first);
    f.clear();
    f.seekg(0);
    SystemState<double> state;
    if (first.rfind("t,agent", 0) == 0) {
        const auto samples = read_trajectory_csv(f);
        if (samples.empty()) throw ConfigError(state_path + " holds no samples");
        state = samples.back();
    } else {
        std::vector<std::vector<double>> rows;
        std::string line;
        while (std::getline(f, line))
            if (!line.empty()) rows.push_back(parse_csv_vector(line, state_path));
        if (rows.empty()) throw ConfigError(state_path + " holds no opinions");
        Opinions<double> x(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows[0].size()) throw ConfigError(state_path + ": ragged rows");
            for (std::size_t c = 0; c < rows[i].size(); ++c) x(static_cast<Index>(i), static_cast<Index>(c)) = rows[i][c];
        }
        state = SystemState<double>::equal_weights(std::move(x));
    }
    if (!(q > 0.0)) throw ConfigError("--q must be positive");
    const auto kernels = KernelMatrix<double>::uniform(state.n(), KernelSpec<double>::indicator(q));
    const EquilibriumClass cls = classify_state(state, kernels, eps);
    json out = {{"verdict", to_string(cls.verdict)}, {"n", state.n()}, {"d", state.d()}, {"time", state.time}};
    if (cls.partition) {
        const auto cs = cluster_set(state, *cls.partition);
        json blocks = json::array(), centers = json::array();
        for (const auto& b : cls.partition->blocks()) blocks.push_back(std::vector<long long>(b.begin(), b.end()));
        for (Index i = 0; i < cs.centers.rows(); ++i) {
            json row = json::array();
            for (Index c = 0; c < cs.centers.cols(); ++c) row.push_back(cs.centers(i, c));
            centers.push_back(row);
        }
        out["clusters"] = {{"count", cls.partition->size()}, {"blocks", blocks}, {"centers", centers}};
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_table1(Index n, Index d, double radius, int runs, std::uint64_t seed, unsigned workers,
               const std::string& out_dir) {
    ExperimentSpec spec;
    spec.n = n;
    spec.d = d;
    spec.radius = radius;
    spec.runs = runs;
    spec.seed = env_seed().value_or(seed);
    spec.kernel = KernelSpec<double>::indicator(1.0);
    spec.analyses.scmc = spec.analyses.pairwise_scmc = spec.analyses.genericity = spec.analyses.sqrt2 = true;
    spec.keep_trajectory = false;
    spec.validate();
    const auto records = run_experiment(spec, workers);
    const SummaryStats stats = table1_stats(records);
    if (!out_dir.empty()) export_results(out_dir, spec, records, stats);
    for (const auto& r : records) {
        std::cout << "run " << r.run_index << ": ";
        if (r.ok)
            std::cout << r.clusters->partition.size() << " clusters, " << to_string(*r.category);
        else
            std::cout << "failed: " << r.error;
        std::cout << "\n";
    }
    const auto frac = [&](int c) { return stats.runs > 0 ? double(c) / stats.runs : 0.0; };
    std::cout << "n=" << n << " runs=" << stats.runs << " failed=" << stats.failed
              << " pairwise_scmc=" << stats.count_pairwise_scmc << " (" << frac(stats.count_pairwise_scmc) << ")"
              << " sufficient=" << stats.count_sufficient_hypotheses << " ("
              << frac(stats.count_sufficient_hypotheses) << ")"
              << " neither=" << stats.count_neither << " (" << frac(stats.count_neither) << ")\n";
    return stats.runs == 0 ? exit_numerical : 0;
}

int cmd_geometry(const std::string& x2_text, int samples, std::uint64_t seed) {
    const Point<double> x2 = to_point(parse_csv_vector(x2_text, "--x2"));
    if (samples < 1) throw ConfigError("--samples must be >= 1");
    const Index d = x2.size();
    const Point<double> x1 = Point<double>::Zero(d);
    CounterRng rng(env_seed().value_or(seed));
    int max_count = 0, twos = 0;
    for (int s = 0; s < samples; ++s) {
        Point<double> lambda(d);
        do {
            for (Index c = 0; c < d; ++c) lambda[c] = rng.normal();
        } while (lambda.norm() == 0.0);
        lambda.normalize();
        const int c = radius_intersections(x1, x2, lambda);
        max_count = std::max(max_count, c);
        twos += c == 2;
    }
    const double dist = x2.norm();
    json out = {{"distance", dist},
                {"samples", samples},
                {"max_intersections", max_count},
                {"fraction_two", double(twos) / samples},
                {"at_most_once_predicted", dist >= std::sqrt(2.0)},
                {"at_most_once_observed", max_count <= 1}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bounded-confidence opinion dynamics: simulation, equilibria and robustness"};
    app.require_subcommand(1);

    std::string config, out_dir, x0, deltas, state_path, x2;
    unsigned workers = 1;
    double q = 1.0, eps = 1e-4, radius = 5.0;
    Index n = 400, d = 2;
    int runs = 10, samples = 10000;
    std::uint64_t seed = 0;
    bool lemma44 = false;

    auto* sim = app.add_subcommand("simulate", "run a batch described by a JSON config");
    sim->add_option("--config", config, "experiment JSON")->required();
    sim->add_option("--out", out_dir, "output directory");
    sim->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);

    auto* rob = app.add_subcommand("robustness", "verdicts and perturbation sweep for a clustered equilibrium");
    rob->add_option("--config", config, "JSON with centers, weights, q")->required();
    rob->add_option("--x0", x0, "initial zero opinion, comma separated")->required();
    rob->add_option("--deltas", deltas, "decreasing zero-agent weights")->required();
    rob->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);

    auto* cls = app.add_subcommand("classify", "equilibrium taxonomy of a saved state");
    cls->add_option("--state", state_path, "trajectory CSV (last sample) or one opinion per line")->required();
    cls->add_option("--q", q, "confidence bound")->required();
    cls->add_option("--eps", eps, "coincidence tolerance");

    auto* t1 = app.add_subcommand("table1", "random equilibria sorted by robustness condition");
    t1->add_option("--n", n, "agents");
    t1->add_option("--d", d, "dimension");
    t1->add_option("--radius", radius, "initial ball radius");
    t1->add_option("--runs", runs, "runs");
    t1->add_option("--seed", seed, "batch seed");
    t1->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    t1->add_option("--out", out_dir, "output directory");

    auto* geo = app.add_subcommand("geometry", "sampled checks of sphere-crossing geometry");
    geo->add_flag("--lemma44", lemma44, "count crossings of |x1 + t lambda - x2| = 1, x1 = 0")->required();
    geo->add_option("--x2", x2, "second center, comma separated")->required();
    geo->add_option("--samples", samples, "random directions");
    geo->add_option("--seed", seed, "direction seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_config;
    }

    try {
        if (*sim) return cmd_simulate(config, out_dir, workers);
        if (*rob) return cmd_robustness(config, x0, deltas, workers);
        if (*cls) return cmd_classify(state_path, q, eps);
        if (*t1) return cmd_table1(n, d, radius, runs, seed, workers, out_dir);
        if (*geo) return cmd_geometry(x2, samples, seed);
    } catch (const IntegrationError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return exit_numerical;
    } catch (const BranchExplosion& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return exit_numerical;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_config;
    } catch (const InvalidArgument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const Error& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return exit_numerical;
    }
    return 0;
}
