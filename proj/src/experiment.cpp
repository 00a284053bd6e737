#include "hkflow/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>
#include <thread>

namespace hkflow {

using nlohmann::json;

std::string_view to_string(Table1Category c) {
    switch (c) {
    case Table1Category::PairwiseScmc: return "pairwise_scmc";
    case Table1Category::SufficientHypotheses: return "sufficient_hypotheses";
    case Table1Category::Neither: return "neither";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// configuration

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
T value_or(const json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

Opinions<double> matrix_from_json(const json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw ConfigError(what + " must be a nonempty array of rows");
    const Index rows = static_cast<Index>(j.size());
    const Index cols = j[0].is_array() ? static_cast<Index>(j[0].size()) : 1;
    Opinions<double> m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        const json& row = j[static_cast<std::size_t>(i)];
        if (row.is_number()) {
            if (cols != 1) throw ConfigError(what + ": ragged rows");
            m(i, 0) = row.get<double>();
            continue;
        }
        if (!row.is_array() || static_cast<Index>(row.size()) != cols) throw ConfigError(what + ": ragged rows");
        for (Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

json matrix_to_json(const Opinions<double>& m) {
    json out = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
        out.push_back(std::move(row));
    }
    return out;
}

std::string_view to_string(Stepper s) {
    switch (s) {
    case Stepper::Auto: return "auto";
    case Stepper::DormandPrince: return "dormand_prince";
    case Stepper::AffineExact: return "affine_exact";
    }
    return "auto";
}

std::string_view to_string(SurfaceBranch b) {
    switch (b) {
    case SurfaceBranch::EdgeInactive: return "edge_inactive";
    case SurfaceBranch::EdgeActive: return "edge_active";
    case SurfaceBranch::Reject: return "reject";
    }
    return "edge_inactive";
}

Stepper stepper_from_string(const std::string& s) {
    if (s == "auto") return Stepper::Auto;
    if (s == "dormand_prince") return Stepper::DormandPrince;
    if (s == "affine_exact") return Stepper::AffineExact;
    throw ConfigError("unknown stepper '" + s + "'");
}

SurfaceBranch branch_from_string(const std::string& s) {
    if (s == "edge_inactive") return SurfaceBranch::EdgeInactive;
    if (s == "edge_active") return SurfaceBranch::EdgeActive;
    if (s == "reject") return SurfaceBranch::Reject;
    throw ConfigError("unknown surface_branch '" + s + "'");
}

} // namespace

IntegratorConfig integrator_config_from_json(const json& j) {
    check_keys(j,
               {"rel_tol", "abs_tol", "event_time_tol", "max_step", "t_max", "max_switches", "stepper",
                "affine_max_n", "surface_branch", "equilibrium_field_tol", "equilibrium_eps", "tangency_rel_tol",
                "surface_tol", "sample_interval", "record_event_states"},
               "integrator");
    IntegratorConfig c;
    c.rel_tol = value_or(j, "rel_tol", c.rel_tol);
    c.abs_tol = value_or(j, "abs_tol", c.abs_tol);
    c.event_time_tol = value_or(j, "event_time_tol", c.event_time_tol);
    if (j.contains("max_step") && !j.at("max_step").is_null()) c.max_step = j.at("max_step").get<double>();
    c.t_max = value_or(j, "t_max", c.t_max);
    c.max_switches = value_or(j, "max_switches", c.max_switches);
    if (j.contains("stepper")) c.stepper = stepper_from_string(j.at("stepper").get<std::string>());
    c.affine_max_n = value_or<Index>(j, "affine_max_n", c.affine_max_n);
    if (j.contains("surface_branch")) c.surface_branch = branch_from_string(j.at("surface_branch").get<std::string>());
    c.equilibrium_field_tol = value_or(j, "equilibrium_field_tol", c.equilibrium_field_tol);
    c.equilibrium_eps = value_or(j, "equilibrium_eps", c.equilibrium_eps);
    c.tangency_rel_tol = value_or(j, "tangency_rel_tol", c.tangency_rel_tol);
    c.surface_tol = value_or(j, "surface_tol", c.surface_tol);
    c.sample_interval = value_or(j, "sample_interval", c.sample_interval);
    c.record_event_states = value_or(j, "record_event_states", c.record_event_states);
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("integrator: ") + e.what());
    }
    return c;
}

json to_json(const IntegratorConfig& c) {
    return {{"rel_tol", c.rel_tol},
            {"abs_tol", c.abs_tol},
            {"event_time_tol", c.event_time_tol},
            {"max_step", std::isfinite(c.max_step) ? json(c.max_step) : json(nullptr)},
            {"t_max", c.t_max},
            {"max_switches", c.max_switches},
            {"stepper", to_string(c.stepper)},
            {"affine_max_n", c.affine_max_n},
            {"surface_branch", to_string(c.surface_branch)},
            {"equilibrium_field_tol", c.equilibrium_field_tol},
            {"equilibrium_eps", c.equilibrium_eps},
            {"tangency_rel_tol", c.tangency_rel_tol},
            {"surface_tol", c.surface_tol},
            {"sample_interval", c.sample_interval},
            {"record_event_states", c.record_event_states}};
}

void ExperimentSpec::validate() const {
    if (n < 1) throw ConfigError("n must be >= 1");
    if (d < 1) throw ConfigError("d must be >= 1");
    if (!(radius > 0.0) || !std::isfinite(radius)) throw ConfigError("radius must be positive");
    if (runs < 1) throw ConfigError("runs must be >= 1");
    if (!(cluster_eps > 0.0)) throw ConfigError("cluster_eps must be positive");
    switch (weights.mode) {
    case WeightMode::Uniform: break;
    case WeightMode::List:
        if (static_cast<Index>(weights.values.size()) != n) throw ConfigError("weights list needs n entries");
        for (double w : weights.values)
            if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("weights must be positive and finite");
        break;
    case WeightMode::LogUniform:
        if (!(weights.lo > 0.0) || !(weights.hi >= weights.lo) || !std::isfinite(weights.hi))
            throw ConfigError("log-uniform weight range must satisfy 0 < lo <= hi");
        break;
    }
    if (initial) {
        if (initial->rows() != n || initial->cols() != d) throw ConfigError("initial opinions must be n x d");
        if (!initial->allFinite()) throw ConfigError("initial opinions must be finite");
    }
    for (int r : monitors.orders)
        if (r < 1) throw ConfigError("monitor orders must be >= 1");
    if (monitors.shifts < 0) throw ConfigError("monitor shifts must be >= 0");
    try {
        integrator.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("integrator: ") + e.what());
    }
    const bool robustness = analyses.any_verdicts() || analyses.sweep.has_value();
    if (robustness && kernel.family() != KernelFamily::Indicator)
        throw ConfigError("robustness analyses need the indicator kernel");
    if (analyses.sweep) {
        const auto& dl = analyses.sweep->deltas;
        if (dl.empty()) throw ConfigError("sweep needs at least one delta");
        for (std::size_t i = 0; i < dl.size(); ++i)
            if (!(dl[i] > 0.0) || (i > 0 && !(dl[i] < dl[i - 1])))
                throw ConfigError("sweep deltas must be positive and strictly decreasing");
        if (analyses.sweep->x0_policy == X0Policy::Explicit && analyses.sweep->x0.size() != d)
            throw ConfigError("explicit sweep x0 must have d components");
    }
}

ExperimentSpec ExperimentSpec::from_json(const json& j) {
    ExperimentSpec s;
    try {
        check_keys(j,
                   {"n", "d", "radius", "kernel", "weights", "initial", "seed", "runs", "integrator", "analyses",
                    "monitors", "cluster_eps", "keep_trajectory"},
                   "experiment");
        s.n = value_or<Index>(j, "n", 0);
        s.d = value_or<Index>(j, "d", 1);
        s.radius = value_or(j, "radius", s.radius);
        s.seed = value_or<std::uint64_t>(j, "seed", s.seed);
        s.runs = value_or(j, "runs", s.runs);
        s.cluster_eps = value_or(j, "cluster_eps", s.cluster_eps);
        s.keep_trajectory = value_or(j, "keep_trajectory", s.keep_trajectory);

        if (j.contains("kernel")) {
            const json& k = j.at("kernel");
            check_keys(k, {"family", "q", "coeffs"}, "kernel");
            const KernelFamily fam = kernel_family_from_string(value_or<std::string>(k, "family", "indicator"));
            s.kernel = KernelSpec<double>::from_parts(fam, value_or(k, "q", 1.0),
                                                      value_or(k, "coeffs", std::vector<double>{}));
        }
        if (j.contains("weights")) {
            const json& w = j.at("weights");
            check_keys(w, {"mode", "values", "range"}, "weights");
            const auto mode = value_or<std::string>(w, "mode", "uniform");
            if (mode == "uniform") {
                s.weights.mode = WeightMode::Uniform;
            } else if (mode == "list") {
                s.weights.mode = WeightMode::List;
                s.weights.values = w.at("values").get<std::vector<double>>();
            } else if (mode == "log_uniform") {
                s.weights.mode = WeightMode::LogUniform;
                const auto range = w.at("range").get<std::vector<double>>();
                if (range.size() != 2) throw ConfigError("weights.range must be [lo, hi]");
                s.weights.lo = range[0];
                s.weights.hi = range[1];
            } else {
                throw ConfigError("unknown weights mode '" + mode + "'");
            }
        }
        if (j.contains("initial")) {
            s.initial = matrix_from_json(j.at("initial"), "initial");
            if (!j.contains("n")) s.n = s.initial->rows();
            if (!j.contains("d")) s.d = s.initial->cols();
        }
        if (j.contains("integrator")) s.integrator = integrator_config_from_json(j.at("integrator"));
        if (j.contains("analyses")) {
            const json& a = j.at("analyses");
            check_keys(a, {"scmc", "pairwise_scmc", "genericity", "sqrt2", "sweep"}, "analyses");
            s.analyses.scmc = value_or(a, "scmc", false);
            s.analyses.pairwise_scmc = value_or(a, "pairwise_scmc", false);
            s.analyses.genericity = value_or(a, "genericity", false);
            s.analyses.sqrt2 = value_or(a, "sqrt2", false);
            if (a.contains("sweep") && !a.at("sweep").is_null()) {
                const json& sw = a.at("sweep");
                check_keys(sw, {"deltas", "x0_policy", "x0"}, "analyses.sweep");
                SweepSpec sp;
                sp.deltas = sw.at("deltas").get<std::vector<double>>();
                const auto pol = value_or<std::string>(sw, "x0_policy", "closest_pair_midpoint");
                if (pol == "closest_pair_midpoint") {
                    sp.x0_policy = X0Policy::ClosestPairMidpoint;
                } else if (pol == "explicit") {
                    sp.x0_policy = X0Policy::Explicit;
                    const auto v = sw.at("x0").get<std::vector<double>>();
                    sp.x0 = Eigen::Map<const Point<double>>(v.data(), static_cast<Index>(v.size()));
                } else {
                    throw ConfigError("unknown x0_policy '" + pol + "'");
                }
                s.analyses.sweep = std::move(sp);
            }
        }
        if (j.contains("monitors")) {
            const json& m = j.at("monitors");
            check_keys(m, {"orders", "shifts"}, "monitors");
            s.monitors.orders = value_or(m, "orders", s.monitors.orders);
            s.monitors.shifts = value_or(m, "shifts", s.monitors.shifts);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad configuration: ") + e.what());
    } catch (const ConfigError&) {
        throw;
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    s.validate();
    return s;
}

json ExperimentSpec::to_json() const {
    json j;
    j["n"] = n;
    j["d"] = d;
    j["radius"] = radius;
    j["kernel"] = {{"family", to_string(kernel.family())}, {"q", kernel.q()}, {"coeffs", kernel.coeffs()}};
    switch (weights.mode) {
    case WeightMode::Uniform: j["weights"] = {{"mode", "uniform"}}; break;
    case WeightMode::List: j["weights"] = {{"mode", "list"}, {"values", weights.values}}; break;
    case WeightMode::LogUniform:
        j["weights"] = {{"mode", "log_uniform"}, {"range", {weights.lo, weights.hi}}};
        break;
    }
    if (initial) j["initial"] = matrix_to_json(*initial);
    j["seed"] = seed;
    j["runs"] = runs;
    j["integrator"] = hkflow::to_json(integrator);
    json a = {{"scmc", analyses.scmc},
              {"pairwise_scmc", analyses.pairwise_scmc},
              {"genericity", analyses.genericity},
              {"sqrt2", analyses.sqrt2}};
    if (analyses.sweep) {
        json sw = {{"deltas", analyses.sweep->deltas}};
        if (analyses.sweep->x0_policy == X0Policy::Explicit) {
            sw["x0_policy"] = "explicit";
            sw["x0"] = std::vector<double>(analyses.sweep->x0.data(),
                                           analyses.sweep->x0.data() + analyses.sweep->x0.size());
        } else {
            sw["x0_policy"] = "closest_pair_midpoint";
        }
        a["sweep"] = std::move(sw);
    }
    j["analyses"] = std::move(a);
    j["monitors"] = {{"orders", monitors.orders}, {"shifts", monitors.shifts}};
    j["cluster_eps"] = cluster_eps;
    j["keep_trajectory"] = keep_trajectory;
    return j;
}

// ---------------------------------------------------------------------------
// sampling

namespace {

Point<double> sample_ball_point(Index d, double radius, CounterRng& rng) {
    Point<double> p(d);
    while (true) {
        for (Index c = 0; c < d; ++c) p[c] = radius * (2.0 * rng.uniform() - 1.0);
        if (p.squaredNorm() <= radius * radius) return p;
    }
}

Weights<double> sample_weights(Index n, const WeightSpec& spec, CounterRng& rng) {
    switch (spec.mode) {
    case WeightMode::Uniform: return Weights<double>::Ones(n);
    case WeightMode::List:
        if (static_cast<Index>(spec.values.size()) != n) throw InvalidArgument("weights list needs n entries");
        return Eigen::Map<const Weights<double>>(spec.values.data(), n);
    case WeightMode::LogUniform: {
        CounterRng sub = rng.substream(1);
        const double a = std::log(spec.lo), b = std::log(spec.hi);
        Weights<double> w(n);
        for (Index i = 0; i < n; ++i) w[i] = std::exp(sub.uniform(a, b));
        return w;
    }
    }
    return Weights<double>::Ones(n);
}

} // namespace

SystemState<double> sample_initial(Index n, Index d, double radius, const WeightSpec& weights, CounterRng& rng) {
    if (n < 1 || d < 1 || !(radius > 0.0)) throw InvalidArgument("sample_initial: need n, d >= 1 and radius > 0");
    Opinions<double> x(n, d);
    for (Index i = 0; i < n; ++i) x.row(i) = sample_ball_point(d, radius, rng).transpose();
    return SystemState<double>(std::move(x), sample_weights(n, weights, rng));
}

SystemState<double> sample_initial(Index n, Index d, double radius, CounterRng& rng) {
    return sample_initial(n, d, radius, WeightSpec{}, rng);
}

// ---------------------------------------------------------------------------
// runs

Table1Category table1_category(const ClusteredEquilibrium<double>& eq) {
    if (scmc_check(eq, Index(0)).holds) return Table1Category::PairwiseScmc;
    if (theorem_verdicts(eq).sufficient_verdict == SufficientVerdict::Robust_Thm)
        return Table1Category::SufficientHypotheses;
    return Table1Category::Neither;
}

namespace {

Point<double> closest_pair_midpoint(const ClusteredEquilibrium<double>& eq) {
    if (eq.k() < 2) {
        Point<double> x0 = eq.centers.row(0).transpose();
        x0[0] += 0.5 * eq.q;
        return x0;
    }
    double best = std::numeric_limits<double>::infinity();
    Point<double> out;
    for (Index i = 0; i < eq.k(); ++i)
        for (Index j = i + 1; j < eq.k(); ++j) {
            const double dist = pair_distance(eq.centers, i, j);
            if (dist < best) {
                best = dist;
                out = 0.5 * (eq.centers.row(i) + eq.centers.row(j)).transpose();
            }
        }
    return out;
}

void analyse(const ExperimentSpec& spec, const ClusterSet<double>& cs, RunRecord& rec) {
    const auto& an = spec.analyses;
    if (!an.any_verdicts() && !an.sweep) return;
    const auto eq = ClusteredEquilibrium<double>::from_clusters(cs, spec.kernel.q());
    if (an.any_verdicts()) {
        rec.pairwise_scmc = scmc_check(eq, Index(0));
        rec.verdicts = theorem_verdicts(eq);
        if (rec.pairwise_scmc->holds)
            rec.category = Table1Category::PairwiseScmc;
        else if (rec.verdicts->sufficient_verdict == SufficientVerdict::Robust_Thm)
            rec.category = Table1Category::SufficientHypotheses;
        else
            rec.category = Table1Category::Neither;
    }
    if (an.sweep) {
        rec.sweep_x0 = an.sweep->x0_policy == X0Policy::Explicit ? an.sweep->x0 : closest_pair_midpoint(eq);
        try {
            IntegratorConfig cfg = spec.integrator;
            cfg.record_event_states = true;
            rec.sweep = delta_sweep(eq, *rec.sweep_x0, an.sweep->deltas, cfg);
            if (rec.verdicts) {
                for (const auto& p : rec.sweep->points) rec.verdicts->delta_sweep.push_back(p);
            }
        } catch (const Error& e) {
            rec.sweep.reset();
            rec.sweep_error = e.what();
        }
    }
}

} // namespace

RunRecord run_single(const ExperimentSpec& spec, int run_index) {
    const auto start = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.run_index = run_index;
    rec.seed_used = run_seed(spec.seed, static_cast<std::uint64_t>(run_index));
    try {
        CounterRng rng(rec.seed_used);
        if (spec.initial) {
            rec.initial_state = SystemState<double>(*spec.initial, sample_weights(spec.n, spec.weights, rng));
        } else {
            rec.initial_state = sample_initial(spec.n, spec.d, spec.radius, spec.weights, rng);
        }
        CounterRng probe_rng = rng.substream(2);
        for (int r : spec.monitors.orders)
            for (int s = 0; s < spec.monitors.shifts; ++s)
                rec.probes.push_back({r, sample_ball_point(spec.d, spec.radius, probe_rng)});

        const auto kernels = KernelMatrix<double>::uniform(spec.n, spec.kernel);
        IntegratorConfig cfg = spec.integrator;
        cfg.record_event_states = false; // the harness never reads them
        Trajectory traj = integrate(rec.initial_state, kernels, cfg);
        rec.terminated_by = traj.terminated_by;
        rec.event_count = traj.events.size();
        rec.accepted_steps = traj.accepted_steps;
        rec.final_state = traj.final_state();
        rec.monitor_trace.reserve(traj.samples.size());
        for (const auto& s : traj.samples) rec.monitor_trace.push_back(monitors(s, rec.probes));
        if (spec.keep_trajectory) rec.trajectory = std::move(traj.samples);

        if (rec.terminated_by == Termination::NonUnique || rec.terminated_by == Termination::SwitchCap) {
            rec.numerical_failure = true;
            throw Error("integration stopped: " + std::string(to_string(rec.terminated_by)));
        }
        const EquilibriumClass cls = classify_state(rec.final_state, kernels, spec.cluster_eps);
        rec.equilibrium_class = cls.verdict;
        if (cls.verdict == EquilibriumVerdict::NotEquilibrium) {
            rec.numerical_failure = true;
            throw Error("final state is not an equilibrium (t=" + std::to_string(rec.final_state.time) + ")");
        }
        rec.clusters = cluster_set(rec.final_state, *cls.partition);
        analyse(spec, *rec.clusters, rec);
        rec.ok = true;
    } catch (const IntegrationError& e) {
        rec.ok = false;
        rec.numerical_failure = true;
        rec.error = e.what();
    } catch (const Error& e) {
        rec.ok = false;
        rec.error = e.what();
    }
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

std::vector<RunRecord> run_experiment(const ExperimentSpec& spec, unsigned workers) {
    spec.validate();
    std::vector<RunRecord> records(static_cast<std::size_t>(spec.runs));
    std::atomic<int> next{0};
    const auto work = [&] {
        for (int r = next++; r < spec.runs; r = next++) records[static_cast<std::size_t>(r)] = run_single(spec, r);
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(spec.runs)));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    return records;
}

SummaryStats summarize(const std::vector<RunRecord>& records) {
    SummaryStats s;
    s.categorized = true;
    for (const auto& r : records) {
        if (!r.ok) {
            ++s.failed;
            continue;
        }
        ++s.runs;
        if (r.clusters) ++s.cluster_histogram[static_cast<Index>(r.clusters->partition.size())];
        if (!r.category) {
            s.categorized = false;
            continue;
        }
        switch (*r.category) {
        case Table1Category::PairwiseScmc: ++s.count_pairwise_scmc; break;
        case Table1Category::SufficientHypotheses: ++s.count_sufficient_hypotheses; break;
        case Table1Category::Neither: ++s.count_neither; break;
        }
    }
    if (!s.categorized) s.count_pairwise_scmc = s.count_sufficient_hypotheses = s.count_neither = 0;
    return s;
}

SummaryStats table1_stats(const std::vector<RunRecord>& records) {
    for (const auto& r : records)
        if (r.ok && !r.category)
            throw InvalidArgument("table1_stats: run " + std::to_string(r.run_index) + " has no verdicts");
    return summarize(records);
}

} // namespace hkflow
