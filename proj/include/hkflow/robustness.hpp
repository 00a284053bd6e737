#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/QR>

#include "hkflow/equilibrium.hpp"
#include "hkflow/integrator.hpp"

namespace hkflow {

class InitialOnSurface : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class BranchExplosion : public Error {
public:
    using Error::Error;
};

/// k clusters x_i* with weights w_i and a common confidence bound q.
template <typename Scalar>
struct ClusteredEquilibrium {
    Opinions<Scalar> centers;
    Weights<Scalar> weights;
    Scalar q = Scalar(1);

    ClusteredEquilibrium() = default;
    ClusteredEquilibrium(Opinions<Scalar> c, Weights<Scalar> w, Scalar q_ = Scalar(1))
        : centers(std::move(c)), weights(std::move(w)), q(q_) {
        validate();
    }

    static ClusteredEquilibrium from_clusters(const ClusterSet<Scalar>& cs, Scalar q_) {
        return ClusteredEquilibrium(cs.centers, cs.block_weights, q_);
    }

    Index k() const noexcept { return centers.rows(); }
    Index d() const noexcept { return centers.cols(); }

    /// Centers may sit on each other's boundary up to 1e-3 q: converged runs stop
    /// within the equilibrium tolerance of the closure of F.
    void validate() const {
        if (centers.rows() < 1) throw InvalidArgument("equilibrium needs at least one cluster");
        if (weights.size() != centers.rows()) throw InvalidArgument("one weight per cluster is required");
        if (!(q > Scalar(0))) throw InvalidArgument("confidence bound must be positive");
        if (!centers.allFinite() || !weights.allFinite()) throw InvalidArgument("equilibrium data must be finite");
        if ((weights.array() <= Scalar(0)).any()) throw InvalidArgument("cluster weights must be positive");
        for (Index i = 0; i < k(); ++i)
            for (Index j = i + 1; j < k(); ++j)
                if (pair_distance(centers, i, j) < q * Scalar(1 - 1e-3))
                    throw InvalidArgument("cluster centers must be at least q apart");
    }
};

/// Sum_{i in S} w_i x_i* / Sum_{i in S} w_i.
template <typename Scalar>
Point<Scalar> center_of_mass(const ClusteredEquilibrium<Scalar>& eq, const std::vector<Index>& s) {
    if (s.empty()) throw InvalidArgument("center_of_mass: empty cluster set");
    Point<Scalar> m = Point<Scalar>::Zero(eq.d());
    Scalar total(0);
    for (Index i : s) {
        if (i < 0 || i >= eq.k()) throw InvalidArgument("center_of_mass: cluster index out of range");
        m += eq.weights[i] * eq.centers.row(i).transpose();
        total += eq.weights[i];
    }
    return m / total;
}

namespace detail {

/// Calls `visit` on every clique of size >= 2 (indices ascending) in the graph
/// i ~ j iff |x_i - x_j| < reach, smallest cliques first. Stops when `visit` returns true.
template <typename Scalar>
bool for_each_clique(const Opinions<Scalar>& x, Scalar reach, std::size_t max_size,
                     const std::function<bool(const std::vector<Index>&)>& visit) {
    const Index k = x.rows();
    std::vector<std::vector<char>> adj(static_cast<std::size_t>(k), std::vector<char>(static_cast<std::size_t>(k), 0));
    std::vector<std::vector<Index>> level;
    for (Index i = 0; i < k; ++i)
        for (Index j = i + 1; j < k; ++j)
            if (pair_distance(x, i, j) < reach) {
                adj[i][j] = adj[j][i] = 1;
                level.push_back({i, j});
            }
    for (std::size_t size = 2; !level.empty() && size <= max_size; ++size) {
        for (const auto& c : level)
            if (visit(c)) return true;
        std::vector<std::vector<Index>> next;
        for (const auto& c : level)
            for (Index v = c.back() + 1; v < k; ++v) {
                bool ok = true;
                for (Index u : c) ok = ok && adj[u][v];
                if (!ok) continue;
                auto grown = c;
                grown.push_back(v);
                next.push_back(std::move(grown));
            }
        level = std::move(next);
    }
    return false;
}

template <typename Scalar>
bool in_shared_ball(const ClusteredEquilibrium<Scalar>& eq, const std::vector<Index>& s) {
    const Point<Scalar> m = center_of_mass(eq, s);
    for (Index i : s)
        if (!((m - eq.centers.row(i).transpose()).norm() < eq.q)) return false;
    return true;
}

} // namespace detail

struct ScmcResult {
    bool holds = false;
    std::vector<Index> witness; ///< empty when the condition fails
    bool pairwise_only = false; ///< only two-element sets were examined
};

/// Shared center of mass condition: some S with |S| >= 2 has m_S* strictly inside every ball B_i*, i in S.
///
/// Only sets whose centers are pairwise closer than 2q can qualify, so candidates are
/// enumerated as cliques of that graph. Above `max_k_exhaustive` clusters only pairs are checked.
template <typename Scalar>
ScmcResult scmc_check(const ClusteredEquilibrium<Scalar>& eq, Index max_k_exhaustive = 20) {
    ScmcResult r;
    r.pairwise_only = eq.k() > max_k_exhaustive;
    const std::size_t max_size = r.pairwise_only ? 2 : static_cast<std::size_t>(eq.k());
    detail::for_each_clique<Scalar>(eq.centers, Scalar(2) * eq.q, max_size, [&](const std::vector<Index>& s) {
        if (!detail::in_shared_ball(eq, s)) return false;
        r.holds = true;
        r.witness = s;
        return true;
    });
    return r;
}

struct GenericityViolation {
    int clause = 0;               ///< 1 tangent spheres, 2 triple intersection, 3 center of mass on a sphere
    std::vector<Index> clusters;  ///< the pair, the triple, or the set S
    Index sphere = -1;            ///< clause 3: the sphere m_S* lies on
    double residual = 0.0;
};

struct GenericityResult {
    bool generic = true;
    std::vector<GenericityViolation> violations;
    bool exhaustive = true; ///< clause 3 examined every subset (otherwise singletons and cliques only)
};

/// Whether the three spheres |y - x_a| = q (a in {i, j, l}) share a point, with the
/// residual radius rho^2 = q^2 - |z|^2 of the minimum-norm point of their radical plane.
template <typename Scalar>
std::pair<bool, Scalar> spheres_share_point(const Opinions<Scalar>& x, Index i, Index j, Index l, Scalar q,
                                            Scalar tol) {
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    const Index d = x.cols();
    Mat a(2, d);
    Vec c(2);
    // with y = x_i + z: |z|^2 = q^2 and (x_b - x_i).z = |x_b - x_i|^2 / 2
    a.row(0) = x.row(j) - x.row(i);
    a.row(1) = x.row(l) - x.row(i);
    c[0] = a.row(0).squaredNorm() / Scalar(2);
    c[1] = a.row(1).squaredNorm() / Scalar(2);
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(a);
    cod.setThreshold(Scalar(1e-12));
    const Vec z = cod.solve(c);
    using std::abs;
    const Scalar scale = Scalar(1) + c.cwiseAbs().maxCoeff();
    if ((a * z - c).cwiseAbs().maxCoeff() > Scalar(1e-9) * scale) return {false, Scalar(0)};
    const Scalar rho2 = q * q - z.squaredNorm();
    if (cod.rank() == d) return {abs(rho2) <= tol, rho2};
    return {rho2 >= -tol, rho2};
}

/// Genericity of the sphere arrangement {|y - x_i*| = q}. `tol` is in units of q.
template <typename Scalar>
GenericityResult genericity_check(const ClusteredEquilibrium<Scalar>& eq, Scalar tol = Scalar(1e-6),
                                  Index max_k_exhaustive = 20) {
    if (!(tol > Scalar(0))) throw InvalidArgument("genericity_check: tol must be positive");
    GenericityResult r;
    const Index k = eq.k();
    const Scalar q = eq.q, atol = tol * q;
    using std::abs;
    for (Index i = 0; i < k; ++i)
        for (Index j = i + 1; j < k; ++j) {
            const Scalar dij = pair_distance(eq.centers, i, j);
            if (abs(dij - Scalar(2) * q) <= atol || dij <= atol)
                r.violations.push_back({1, {i, j}, -1, double(dij - Scalar(2) * q)});
        }
    for (Index i = 0; i < k; ++i)
        for (Index j = i + 1; j < k; ++j) {
            if (!(pair_distance(eq.centers, i, j) <= Scalar(2) * q + atol)) continue;
            for (Index l = j + 1; l < k; ++l) {
                if (!(pair_distance(eq.centers, i, l) <= Scalar(2) * q + atol)) continue;
                if (!(pair_distance(eq.centers, j, l) <= Scalar(2) * q + atol)) continue;
                const auto [shared, rho2] = spheres_share_point(eq.centers, i, j, l, q, atol * q);
                if (shared) r.violations.push_back({2, {i, j, l}, -1, double(rho2)});
            }
        }
    const auto check_set = [&](const std::vector<Index>& s) {
        const Point<Scalar> m = center_of_mass(eq, s);
        for (Index a = 0; a < k; ++a) {
            const Scalar gap = (m - eq.centers.row(a).transpose()).norm() - q;
            if (abs(gap) <= atol) r.violations.push_back({3, s, a, double(gap)});
        }
    };
    if (k <= max_k_exhaustive && k < 63) {
        for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << k); ++mask) {
            std::vector<Index> s;
            for (Index b = 0; b < k; ++b)
                if (mask & (std::uint64_t{1} << b)) s.push_back(b);
            check_set(s);
        }
    } else {
        r.exhaustive = false;
        for (Index i = 0; i < k; ++i) check_set({i});
        detail::for_each_clique<Scalar>(eq.centers, Scalar(2) * q, static_cast<std::size_t>(k),
                                        [&](const std::vector<Index>& s) {
                                            check_set(s);
                                            return false;
                                        });
    }
    r.generic = r.violations.empty();
    return r;
}

/// Number of t in [0, 1] with |x1 + lambda t - x2| = 1 (a double root counts once).
template <typename Scalar>
int radius_intersections(const Point<Scalar>& x1, const Point<Scalar>& x2, const Point<Scalar>& lambda) {
    const Point<Scalar> diff = x2 - x1;
    const Scalar b = lambda.dot(diff);
    const Scalar disc = b * b - diff.squaredNorm() + Scalar(1);
    if (disc < Scalar(0)) return 0;
    const auto inside = [](Scalar t) { return t >= Scalar(0) && t <= Scalar(1); };
    if (disc == Scalar(0)) return inside(b) ? 1 : 0;
    using std::sqrt;
    const Scalar root = sqrt(disc);
    return int(inside(b - root)) + int(inside(b + root));
}

struct Sqrt2Result {
    bool holds = true;
    std::optional<AgentPair> violating_pair;
};

/// For every pair: |m_ij* - x_i*| > sqrt(2) q or |m_ij* - x_j*| > sqrt(2) q.
template <typename Scalar>
Sqrt2Result sqrt2_hypothesis(const ClusteredEquilibrium<Scalar>& eq) {
    using std::sqrt;
    const Scalar bound = sqrt(Scalar(2)) * eq.q;
    Sqrt2Result r;
    for (Index i = 0; i < eq.k(); ++i)
        for (Index j = i + 1; j < eq.k(); ++j) {
            const Point<Scalar> m = center_of_mass(eq, {i, j});
            const Scalar di = (m - eq.centers.row(i).transpose()).norm();
            const Scalar dj = (m - eq.centers.row(j).transpose()).norm();
            if (!(di > bound || dj > bound)) {
                r.holds = false;
                r.violating_pair = AgentPair{i, j};
                return r;
            }
        }
    return r;
}

/// No three open balls B_i* share a point: the smallest ball enclosing their centers has radius >= q.
template <typename Scalar>
bool triple_intersection_free(const ClusteredEquilibrium<Scalar>& eq) {
    const Index k = eq.k();
    const auto& x = eq.centers;
    for (Index i = 0; i < k; ++i)
        for (Index j = i + 1; j < k; ++j) {
            const Scalar a = pair_distance(x, i, j);
            if (!(a < Scalar(2) * eq.q)) continue;
            for (Index l = j + 1; l < k; ++l) {
                const Scalar b = pair_distance(x, i, l), c = pair_distance(x, j, l);
                if (!(b < Scalar(2) * eq.q && c < Scalar(2) * eq.q)) continue;
                Scalar sides[3] = {a, b, c};
                std::sort(sides, sides + 3);
                const Scalar s0 = sides[0], s1 = sides[1], s2 = sides[2];
                Scalar radius;
                if (s2 * s2 >= s0 * s0 + s1 * s1) {
                    radius = s2 / Scalar(2);
                } else {
                    using std::sqrt;
                    const Scalar p = (s0 + s1 + s2) / Scalar(2);
                    const Scalar area = sqrt(p * (p - s0) * (p - s1) * (p - s2));
                    radius = s0 * s1 * s2 / (Scalar(4) * area);
                }
                if (radius < eq.q) return false;
            }
        }
    return true;
}

/// Field of the zero agent at x0 when it has no weight: sum over i with |x0 - x_i*| < q of w_i (x_i* - x0).
template <typename Scalar>
Point<Scalar> zero_agent_reduced_field(const ClusteredEquilibrium<Scalar>& eq, const Point<Scalar>& x0) {
    Point<Scalar> f = Point<Scalar>::Zero(eq.d());
    for (Index i = 0; i < eq.k(); ++i) {
        const Point<Scalar> diff = eq.centers.row(i).transpose() - x0;
        if (diff.norm() < eq.q) f += eq.weights[i] * diff;
    }
    return f;
}

enum class NecessaryVerdict { NotRobust_SCMC, Inconclusive };
enum class SufficientVerdict { Robust_Thm, Inconclusive };

std::string_view to_string(NecessaryVerdict v);
std::string_view to_string(SufficientVerdict v);

struct DeltaPoint {
    double delta = 0.0;
    double Delta = 0.0;
    int branch_count = 1;
};

struct RobustnessReport {
    ScmcResult scmc;
    GenericityResult generic;
    Sqrt2Result sqrt2;
    bool triple_intersection_free = true;
    NecessaryVerdict necessary_verdict = NecessaryVerdict::Inconclusive;
    SufficientVerdict sufficient_verdict = SufficientVerdict::Inconclusive;
    std::vector<DeltaPoint> delta_sweep;
};

/// Analytic verdicts: not robust when generic with SCMC; robust when generic, without
/// SCMC, free of triple ball intersections and satisfying the sqrt(2) separation.
template <typename Scalar>
RobustnessReport theorem_verdicts(const ClusteredEquilibrium<Scalar>& eq, Index max_k_exhaustive = 20,
                                  Scalar generic_tol = Scalar(1e-6)) {
    RobustnessReport r;
    r.scmc = scmc_check(eq, max_k_exhaustive);
    r.generic = genericity_check(eq, generic_tol, max_k_exhaustive);
    r.sqrt2 = sqrt2_hypothesis(eq);
    r.triple_intersection_free = triple_intersection_free(eq);
    if (r.generic.generic && r.scmc.holds) r.necessary_verdict = NecessaryVerdict::NotRobust_SCMC;
    if (r.generic.generic && !r.scmc.holds && r.triple_intersection_free && r.sqrt2.holds)
        r.sufficient_verdict = SufficientVerdict::Robust_Thm;
    return r;
}

// ---------------------------------------------------------------------------
// Zero-agent dynamics

struct ZeroAgentScenario {
    ClusteredEquilibrium<double> equilibrium;
    Point<double> x0;
    double delta = 0.0;
    /// Per-cluster bound for the zero agent's interactions; empty means q of the equilibrium.
    std::vector<double> q0;

    void validate() const;
    double q0_of(Index cluster) const { return q0.empty() ? equilibrium.q : q0[static_cast<std::size_t>(cluster)]; }
};

enum class TrajectoryKind { Type1, Type2Suspected, Irregular };

std::string_view to_string(TrajectoryKind k);

struct TrajectoryType {
    TrajectoryKind kind = TrajectoryKind::Type1;
    int switches = 0;
    /// For Irregular: the crossing that broke uniqueness.
    std::optional<EventKind> irregular_event;
    /// Every switch: (sphere index, kind).
    std::vector<std::pair<Index, EventKind>> events;
    Point<double> final_point;
};

/// Follows the weightless zero agent (straight runs toward m_S*, switching on the spheres)
/// and types the trajectory. Throws InitialOnSurface when x0 is within `surface_tol` of a sphere.
TrajectoryType classify_zero_trajectory(const ClusteredEquilibrium<double>& eq, const Point<double>& x0,
                                        int max_switches = 1000, double surface_tol = 1e-9);

struct DeltaOptions {
    int branch_cap = 16;
    /// Time horizon; unset means max(50, 20 / delta).
    std::optional<double> horizon;
};

struct DeltaMeasurement {
    double Delta = 0.0;
    int branch_count = 1;
    /// Events of the first explored branch.
    std::vector<EventRecord> events;
    Termination terminated_by = Termination::TMax;
};

/// Builds the (k+1)-agent system (zero agent first, weight delta), integrates it and returns
/// sup_t max_i |x_i(t) - x_i*| over the clusters. Non-unique continuations are explored
/// branch by branch up to `branch_cap` leaves (else BranchExplosion).
DeltaMeasurement measure_delta(const ZeroAgentScenario& scn, const IntegratorConfig& cfg = {},
                               const DeltaOptions& opts = {});

struct DeltaSweep {
    std::vector<DeltaPoint> points;
    bool strictly_decreasing = false; ///< Delta decreases as delta decreases
    double extrapolated_limit = 0.0;  ///< linear extrapolation of the two smallest deltas to delta = 0
    std::vector<double> ratios;       ///< Delta / delta
};

/// measure_delta for each delta (given in decreasing order), on up to `workers` threads.
DeltaSweep delta_sweep(const ClusteredEquilibrium<double>& eq, const Point<double>& x0,
                       const std::vector<double>& deltas, const IntegratorConfig& cfg = {},
                       const DeltaOptions& opts = {}, unsigned workers = 1);

} // namespace hkflow
