#include "hkflow/robustness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace hkflow {

std::string_view to_string(NecessaryVerdict v) {
    return v == NecessaryVerdict::NotRobust_SCMC ? "not_robust_scmc" : "inconclusive";
}

std::string_view to_string(SufficientVerdict v) {
    return v == SufficientVerdict::Robust_Thm ? "robust_thm" : "inconclusive";
}

std::string_view to_string(TrajectoryKind k) {
    switch (k) {
    case TrajectoryKind::Type1: return "type1";
    case TrajectoryKind::Type2Suspected: return "type2_suspected";
    case TrajectoryKind::Irregular: return "irregular";
    }
    return "unknown";
}

void ZeroAgentScenario::validate() const {
    equilibrium.validate();
    if (x0.size() != equilibrium.d()) throw InvalidArgument("zero agent opinion has the wrong dimension");
    if (!x0.allFinite()) throw InvalidArgument("zero agent opinion must be finite");
    if (!(delta >= 0.0)) throw InvalidArgument("zero agent weight must be nonnegative");
    if (!q0.empty()) {
        if (static_cast<Index>(q0.size()) != equilibrium.k())
            throw InvalidArgument("q0 needs one bound per cluster");
        for (double v : q0)
            if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument("q0 bounds must be positive");
    }
}

// ---------------------------------------------------------------------------
// weightless zero agent

namespace {

struct ActiveSet {
    std::vector<char> member;
    double weight = 0.0;
    Point<double> mean;
};

ActiveSet active_set(const ClusteredEquilibrium<double>& eq, const std::vector<char>& member) {
    ActiveSet s;
    s.member = member;
    s.mean = Point<double>::Zero(eq.d());
    for (Index i = 0; i < eq.k(); ++i)
        if (member[static_cast<std::size_t>(i)]) {
            s.weight += eq.weights[i];
            s.mean += eq.weights[i] * eq.centers.row(i).transpose();
        }
    if (s.weight > 0.0) s.mean /= s.weight;
    return s;
}

} // namespace

TrajectoryType classify_zero_trajectory(const ClusteredEquilibrium<double>& eq, const Point<double>& x0,
                                        int max_switches, double surface_tol) {
    eq.validate();
    if (x0.size() != eq.d()) throw InvalidArgument("zero agent opinion has the wrong dimension");
    const Index k = eq.k();
    const double q = eq.q;
    std::vector<char> member(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < k; ++i) {
        const double dist = (x0 - eq.centers.row(i).transpose()).norm();
        if (std::abs(dist - q) <= surface_tol)
            throw InitialOnSurface("initial zero opinion lies on the sphere around cluster " + std::to_string(i));
        member[static_cast<std::size_t>(i)] = dist < q;
    }

    TrajectoryType out;
    Point<double> y = x0;
    Index last_sphere = -1;
    while (true) {
        const ActiveSet s = active_set(eq, member);
        if (s.weight == 0.0) break; // zero field: every point is at rest
        const Point<double> v = s.mean - y;
        // first sphere met on the segment y + u v, u in (0, 1)
        double best_u = std::numeric_limits<double>::infinity();
        Index best = -1;
        for (Index i = 0; i < k; ++i) {
            const Point<double> rel = y - eq.centers.row(i).transpose();
            const double a = v.squaredNorm(), b = 2.0 * rel.dot(v), c = rel.squaredNorm() - q * q;
            if (a == 0.0) continue;
            const double disc = b * b - 4.0 * a * c;
            if (disc < 0.0) continue;
            const double root = std::sqrt(disc);
            for (double u : {(-b - root) / (2.0 * a), (-b + root) / (2.0 * a)}) {
                const double floor = i == last_sphere ? 1e-10 : 0.0;
                if (u > floor && u < 1.0 && u < best_u) {
                    best_u = u;
                    best = i;
                }
            }
        }
        if (best < 0) {
            // runs into m_S
            for (Index i = 0; i < k; ++i)
                if (std::abs((s.mean - eq.centers.row(i).transpose()).norm() - q) <= surface_tol) {
                    out.kind = TrajectoryKind::Irregular;
                    out.irregular_event = EventKind::TangentialGraze;
                    y = s.mean;
                    out.final_point = y;
                    return out;
                }
            y = s.mean;
            break;
        }
        y = y + best_u * v;
        for (Index i = 0; i < k; ++i)
            if (i != best && std::abs((y - eq.centers.row(i).transpose()).norm() - q) <= surface_tol) {
                out.kind = TrajectoryKind::Irregular;
                out.irregular_event = EventKind::MultiSurface;
                out.final_point = y;
                return out;
            }
        std::vector<char> without = member, with = member;
        without[static_cast<std::size_t>(best)] = 0;
        with[static_cast<std::size_t>(best)] = 1;
        const ActiveSet s1 = active_set(eq, without), s2 = active_set(eq, with);
        const Point<double> normal = 2.0 * (y - eq.centers.row(best).transpose());
        const Point<double> f_in = s2.weight * (s2.mean - y);
        const Point<double> f_out = s1.weight > 0.0 ? Point<double>(s1.weight * (s1.mean - y))
                                                    : Point<double>::Zero(eq.d());
        const double s_in = normal.dot(f_in), s_out = normal.dot(f_out);
        const double scale = normal.norm() * (f_in.norm() + f_out.norm());
        const EventKind kind = classify_normal_speeds(s_in, s_out, 1e-8 * scale);
        const bool inside = member[static_cast<std::size_t>(best)];
        const EventKind expected = inside ? EventKind::LeaveBall : EventKind::EnterBall;
        if (kind != expected) {
            out.kind = TrajectoryKind::Irregular;
            out.irregular_event = kind;
            out.final_point = y;
            return out;
        }
        out.events.emplace_back(best, kind);
        member[static_cast<std::size_t>(best)] = !inside;
        last_sphere = best;
        if (++out.switches > max_switches) {
            out.kind = TrajectoryKind::Type2Suspected;
            out.final_point = y;
            return out;
        }
    }
    out.kind = TrajectoryKind::Type1;
    out.final_point = y;
    return out;
}

// ---------------------------------------------------------------------------
// perturbation size

namespace {

double displacement(const SystemState<double>& s, const Opinions<double>& centers) {
    double best = 0.0;
    for (Index i = 0; i < centers.rows(); ++i)
        best = std::max(best, (s.opinions.row(i + 1) - centers.row(i)).norm());
    return best;
}

} // namespace

DeltaMeasurement measure_delta(const ZeroAgentScenario& scn, const IntegratorConfig& cfg, const DeltaOptions& opts) {
    scn.validate();
    if (!(scn.delta > 0.0)) throw InvalidArgument("measure_delta: delta must be positive");
    if (opts.branch_cap < 1) throw InvalidArgument("measure_delta: branch cap must be >= 1");
    const auto& eq = scn.equilibrium;
    const Index k = eq.k(), n = k + 1;

    Opinions<double> x(n, eq.d());
    x.row(0) = scn.x0.transpose();
    x.bottomRows(k) = eq.centers;
    Weights<double> w(n);
    w[0] = scn.delta;
    w.tail(k) = eq.weights;
    const SystemState<double> initial(x, w, 0.0);
    const KernelMatrix<double> kernels = KernelMatrix<double>::from_function(n, [&](Index i, Index j) {
        return KernelSpec<double>::indicator(i == 0 ? scn.q0_of(j - 1) : eq.q);
    });

    IntegratorConfig run_cfg = cfg;
    run_cfg.t_max = opts.horizon.value_or(std::max(50.0, 20.0 / scn.delta));
    run_cfg.record_event_states = true;

    struct Pending {
        SystemState<double> state;
        std::optional<InteractionGraph> graph;
    };
    std::vector<Pending> stack{{initial, std::nullopt}};
    DeltaMeasurement out;
    out.branch_count = 0;
    bool first = true;
    while (!stack.empty()) {
        Pending job = std::move(stack.back());
        stack.pop_back();
        const Trajectory traj = integrate(job.state, kernels, run_cfg, job.graph ? &*job.graph : nullptr);
        for (const auto& s : traj.samples) out.Delta = std::max(out.Delta, displacement(s, eq.centers));
        for (const auto& ev : traj.events) {
            if (ev.pre_state) out.Delta = std::max(out.Delta, displacement(*ev.pre_state, eq.centers));
            if (ev.post_state) out.Delta = std::max(out.Delta, displacement(*ev.post_state, eq.centers));
        }
        if (first) {
            out.events = traj.events;
            out.terminated_by = traj.terminated_by;
            first = false;
        }
        if (traj.terminated_by != Termination::NonUnique) {
            ++out.branch_count;
            continue;
        }
        const EventRecord& ev = traj.events.back();
        const std::size_t m = ev.group.size();
        if (m >= 4 || out.branch_count + stack.size() + (std::size_t{1} << m) > std::size_t(opts.branch_cap))
            throw BranchExplosion("measure_delta: more than " + std::to_string(opts.branch_cap) +
                                  " solution branches");
        for (std::size_t mask = 0; mask < (std::size_t{1} << m); ++mask) {
            InteractionGraph g = traj.final_graph;
            for (std::size_t b = 0; b < m; ++b) g.set(ev.group[b].first, ev.group[b].second, (mask >> b) & 1U);
            stack.push_back({*ev.post_state, std::move(g)});
        }
    }
    return out;
}

DeltaSweep delta_sweep(const ClusteredEquilibrium<double>& eq, const Point<double>& x0,
                       const std::vector<double>& deltas, const IntegratorConfig& cfg, const DeltaOptions& opts,
                       unsigned workers) {
    if (deltas.empty()) throw InvalidArgument("delta_sweep: no deltas given");
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        if (!(deltas[i] > 0.0)) throw InvalidArgument("delta_sweep: deltas must be positive");
        if (i > 0 && !(deltas[i] < deltas[i - 1])) throw InvalidArgument("delta_sweep: deltas must be decreasing");
    }
    DeltaSweep out;
    out.points.resize(deltas.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto work = [&] {
        for (std::size_t i = next++; i < deltas.size(); i = next++) {
            try {
                ZeroAgentScenario scn{eq, x0, deltas[i], {}};
                const DeltaMeasurement m = measure_delta(scn, cfg, opts);
                out.points[i] = {deltas[i], m.Delta, m.branch_count};
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(deltas.size())));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);

    out.strictly_decreasing = true;
    for (std::size_t i = 1; i < out.points.size(); ++i)
        out.strictly_decreasing = out.strictly_decreasing && out.points[i].Delta < out.points[i - 1].Delta;
    for (const auto& p : out.points) out.ratios.push_back(p.Delta / p.delta);
    if (out.points.size() == 1) {
        out.extrapolated_limit = out.points[0].Delta;
    } else {
        const auto& a = out.points[out.points.size() - 2];
        const auto& b = out.points.back();
        out.extrapolated_limit = b.Delta - b.delta * (a.Delta - b.Delta) / (a.delta - b.delta);
    }
    return out;
}

} // namespace hkflow
