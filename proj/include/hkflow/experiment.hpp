#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hkflow/equilibrium.hpp"
#include "hkflow/integrator.hpp"
#include "hkflow/monitors.hpp"
#include "hkflow/rng.hpp"
#include "hkflow/robustness.hpp"

namespace hkflow {

/// Malformed or inconsistent experiment configuration.
class ConfigError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

enum class WeightMode { Uniform, List, LogUniform };

struct WeightSpec {
    WeightMode mode = WeightMode::Uniform;
    std::vector<double> values; ///< List
    double lo = 1.0, hi = 1.0;  ///< LogUniform range
};

enum class X0Policy {
    ClosestPairMidpoint, ///< midpoint of the two closest cluster centers
    Explicit,
};

struct SweepSpec {
    std::vector<double> deltas;
    X0Policy x0_policy = X0Policy::ClosestPairMidpoint;
    Point<double> x0; ///< Explicit
};

struct Analyses {
    bool scmc = false;
    bool pairwise_scmc = false;
    bool genericity = false;
    bool sqrt2 = false;
    std::optional<SweepSpec> sweep;

    bool any_verdicts() const { return scmc || pairwise_scmc || genericity || sqrt2; }
};

/// Shifted moments recorded with every sample: each order r gets `shifts` random k in the initial ball.
struct MonitorSpec {
    std::vector<int> orders{1, 2, 3};
    int shifts = 3;
};

struct ExperimentSpec {
    Index n = 1;
    Index d = 1;
    double radius = 1.0;
    KernelSpec<double> kernel = KernelSpec<double>::indicator(1.0);
    WeightSpec weights;
    /// Fixed initial opinions for every run (n x d); replaces sampling.
    std::optional<Opinions<double>> initial;
    std::uint64_t seed = 0;
    int runs = 1;
    IntegratorConfig integrator;
    Analyses analyses;
    MonitorSpec monitors;
    /// Coincidence tolerance for the equilibrium taxonomy and cluster merging.
    double cluster_eps = 1e-4;
    bool keep_trajectory = true;

    void validate() const;

    /// Throws ConfigError on unknown keys, wrong types or violated invariants.
    static ExperimentSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

IntegratorConfig integrator_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const IntegratorConfig& cfg);

enum class Table1Category { PairwiseScmc, SufficientHypotheses, Neither };

std::string_view to_string(Table1Category c);

struct RunRecord {
    int run_index = 0;
    std::uint64_t seed_used = 0;
    bool ok = false;
    std::string error;
    /// True when the failure came from the integrator (as opposed to bad input).
    bool numerical_failure = false;

    SystemState<double> initial_state;
    SystemState<double> final_state;
    Termination terminated_by = Termination::TMax;
    std::size_t event_count = 0;
    std::size_t accepted_steps = 0;

    EquilibriumVerdict equilibrium_class = EquilibriumVerdict::NotEquilibrium;
    std::optional<ClusterSet<double>> clusters;

    std::vector<MomentProbe<double>> probes;
    std::vector<MonitorSample<double>> monitor_trace;
    std::vector<SystemState<double>> trajectory; ///< empty unless keep_trajectory

    std::optional<ScmcResult> pairwise_scmc;
    std::optional<RobustnessReport> verdicts;
    std::optional<Table1Category> category;
    std::optional<Point<double>> sweep_x0;
    std::optional<DeltaSweep> sweep;
    /// A failed sweep does not fail the run.
    std::string sweep_error;

    double wall_time = 0.0; ///< seconds; never written to files
};

struct SummaryStats {
    int runs = 0; ///< successful runs, the denominator of every count
    int failed = 0;
    int count_pairwise_scmc = 0;
    int count_sufficient_hypotheses = 0;
    int count_neither = 0;
    std::map<Index, int> cluster_histogram;
    /// Every successful run carried a category, so the three counts sum to `runs`.
    bool categorized = false;
};

/// n opinions uniform in the d-ball of the given radius (rejection from the bounding
/// cube), weights per `weights`. Opinions use `rng`, log-uniform weights its substream 1.
SystemState<double> sample_initial(Index n, Index d, double radius, const WeightSpec& weights, CounterRng& rng);
SystemState<double> sample_initial(Index n, Index d, double radius, CounterRng& rng);

/// Runs one member of the batch; failures are captured in the record.
RunRecord run_single(const ExperimentSpec& spec, int run_index);

/// All runs of the batch on up to `workers` threads. Run r uses seed run_seed(spec.seed, r).
std::vector<RunRecord> run_experiment(const ExperimentSpec& spec, unsigned workers = 1);

/// Run, failure and cluster counts; category counts only when every successful run has one.
SummaryStats summarize(const std::vector<RunRecord>& records);

/// Throws InvalidArgument if a successful record carries no category.
SummaryStats table1_stats(const std::vector<RunRecord>& records);

/// Precedence: pairwise SCMC, then the sufficient-condition hypotheses, else neither.
Table1Category table1_category(const ClusteredEquilibrium<double>& eq);

} // namespace hkflow
