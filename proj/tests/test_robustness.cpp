#include "catch_amalgamated.hpp"

#include <cmath>

#include "hkflow/robustness.hpp"
#include "support.hpp"

using namespace hkflow;
using Catch::Approx;

namespace {

ClusteredEquilibrium<double> pair1d(double dist, double w1, double w2) {
    Opinions<double> c(2, 1);
    c << 0.0, dist;
    Weights<double> w(2);
    w << w1, w2;
    return {c, w, 1.0};
}

Point<double> p1(double v) {
    Point<double> p(1);
    p << v;
    return p;
}

ClusteredEquilibrium<double> triangle(double side, Index d) {
    Opinions<double> c = Opinions<double>::Zero(3, d);
    c(1, 0) = side;
    c(2, 0) = side / 2.0;
    c(2, 1) = side * std::sqrt(3.0) / 2.0;
    return {c, Weights<double>::Ones(3), 1.0};
}

bool has_clause(const GenericityResult& g, int clause) {
    for (const auto& v : g.violations)
        if (v.clause == clause) return true;
    return false;
}

/// SCMC for one pair by direct membership of the center of mass in both open balls.
bool pair_scmc_oracle(double dist, double wi, double wj) {
    const double m = wj * dist / (wi + wj);
    return m < 1.0 && dist - m < 1.0;
}

ClusteredEquilibrium<double> moved(const ClusteredEquilibrium<double>& eq, const Eigen::MatrixXd& rot,
                                   const Eigen::RowVectorXd& shift) {
    Opinions<double> c = eq.centers * rot.transpose();
    c.rowwise() += shift;
    return {c, eq.weights, eq.q};
}

} // namespace

TEST_CASE("center_of_mass examples", "[robustness]") {
    const auto a = pair1d(1.5, 1.0, 1.0);
    CHECK(center_of_mass(a, {1})[0] == 1.5);
    CHECK(center_of_mass(a, {0, 1})[0] == Approx(0.75));
    CHECK(center_of_mass(pair1d(1.7, 10.0, 1.0), {0, 1})[0] == Approx(1.7 / 11.0));
    CHECK_THROWS_AS(center_of_mass(a, {}), InvalidArgument);
    CHECK_THROWS_AS(pair1d(0.5, 1.0, 1.0), InvalidArgument);
}

TEST_CASE("scmc_check examples", "[robustness][scmc]") {
    const auto a = scmc_check(pair1d(1.5, 1.0, 1.0));
    CHECK(a.holds);
    CHECK(a.witness == std::vector<Index>{0, 1});
    CHECK_FALSE(a.pairwise_only);
    CHECK_FALSE(scmc_check(pair1d(2.5, 1.0, 1.0)).holds);
    CHECK_FALSE(scmc_check(pair1d(1.7, 10.0, 1.0)).holds);
    CHECK(scmc_check(pair1d(1.5, 1.0, 1.0), 1).pairwise_only);

    // equal-weight pairs at 1.6 already qualify; the smallest witness is reported
    const auto tri = triangle(1.6, 2);
    const auto r = scmc_check(tri);
    CHECK(r.holds);
    CHECK(r.witness == std::vector<Index>{0, 1});
}

TEST_CASE("pairwise scmc matches the closed-form threshold", "[robustness][scmc][property]") {
    CounterRng rng(1000);
    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const double wi = std::exp(rng.uniform(-3.0, 3.0)), wj = std::exp(rng.uniform(-3.0, 3.0));
        const double dist = rng.uniform(1.0 + 1e-6, 3.0);
        const double threshold = 1.0 + std::min(wi, wj) / std::max(wi, wj);
        if (std::abs(dist - threshold) < 1e-12) continue;
        ++checked;
        const auto eq = pair1d(dist, wi, wj);
        INFO("trial " << trial << " D=" << dist << " w=(" << wi << ", " << wj << ")");
        REQUIRE(scmc_check(eq).holds == (dist < threshold));
        REQUIRE(scmc_check(eq).holds == pair_scmc_oracle(dist, wi, wj));
    }
    CHECK(checked > 990);
}

TEST_CASE("genericity_check examples", "[robustness][genericity]") {
    SECTION("tangent spheres") {
        const auto g = genericity_check(pair1d(2.0, 1.0, 1.0));
        CHECK_FALSE(g.generic);
        CHECK(has_clause(g, 1));
    }
    SECTION("unequal pair") { CHECK(genericity_check(pair1d(1.7, 10.0, 1.0)).generic); }
    SECTION("three circles through one point") {
        // side sqrt(3): circumradius exactly 1
        const auto g = genericity_check(triangle(std::sqrt(3.0), 2));
        CHECK(has_clause(g, 2));
    }
    SECTION("three circles without a common point") {
        CHECK_FALSE(has_clause(genericity_check(triangle(1.6, 2)), 2));
        // circumradius 1.9 / sqrt(3) > 1: no common point in any dimension
        CHECK_FALSE(has_clause(genericity_check(triangle(1.9, 2)), 2));
        CHECK_FALSE(has_clause(genericity_check(triangle(1.9, 3)), 2));
    }
    SECTION("three spheres sharing a circle") { CHECK(has_clause(genericity_check(triangle(1.6, 3)), 2)); }
    SECTION("center of mass on a sphere") {
        // w = (1, 3), D = 4/3 puts m_12 at 1, on the sphere around x_1 = 0
        const auto g = genericity_check(pair1d(4.0 / 3.0, 1.0, 3.0));
        CHECK(has_clause(g, 3));
    }
    CHECK_THROWS_AS(genericity_check(pair1d(1.5, 1.0, 1.0), 0.0), InvalidArgument);
}

TEST_CASE("radius_intersections examples", "[robustness][geometry]") {
    Point<double> x1 = Point<double>::Zero(2), x2(2), lambda(2);
    x2 << 0.7, std::sqrt(1.44 - 0.49);
    lambda << 1.0, 0.0;
    CHECK(radius_intersections(x1, x2, lambda) == 2);
    // roots of t^2 - 1.4 t + 0.44
    CHECK(0.7 - std::sqrt(0.05) == Approx(0.4764).margin(1e-4));
    CHECK(0.7 + std::sqrt(0.05) == Approx(0.9236).margin(1e-4));

    lambda << -1.0, 0.0;
    CHECK(radius_intersections(x1, x2, lambda) == 0);

    CounterRng rng(44);
    x2 << 2.0, 0.0;
    for (int s = 0; s < 2000; ++s) REQUIRE(radius_intersections(x1, x2, testgen::unit_vector(rng, 2)) <= 1);
}

TEST_CASE("unit segments cross a far sphere at most once", "[robustness][geometry][property]") {
    CounterRng rng(4404);
    for (int trial = 0; trial < 60; ++trial) {
        const Index d = 2 + static_cast<Index>(trial % 2);
        const double dist = rng.uniform(1.01, 3.0);
        // two crossings need a direction from a cap that shrinks to nothing as dist -> sqrt(2)
        if (dist > std::sqrt(2.0) - 0.05 && dist < std::sqrt(2.0) + 1e-3) continue;
        const Point<double> x1 = testgen::ball_opinions(rng, 1, d, 2.0).row(0).transpose();
        const Point<double> x2 = x1 + dist * testgen::unit_vector(rng, d);
        int max_count = 0;
        for (int s = 0; s < 10000; ++s)
            max_count = std::max(max_count, radius_intersections(x1, x2, testgen::unit_vector(rng, d)));
        INFO("trial " << trial << " distance " << dist);
        if (dist > std::sqrt(2.0)) REQUIRE(max_count <= 1);
        else REQUIRE(max_count == 2);
    }
}

TEST_CASE("sqrt2 hypothesis", "[robustness]") {
    CHECK(sqrt2_hypothesis(pair1d(1.7, 10.0, 1.0)).holds);
    const auto r = sqrt2_hypothesis(pair1d(2.5, 1.0, 1.0));
    CHECK_FALSE(r.holds);
    REQUIRE(r.violating_pair);
    CHECK(*r.violating_pair == AgentPair{0, 1});

    CounterRng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const double dist = rng.uniform(2.0 * std::sqrt(2.0) + 1e-9, 6.0);
        REQUIRE(sqrt2_hypothesis(pair1d(dist, rng.uniform(0.01, 100.0), rng.uniform(0.01, 100.0))).holds);
    }
}

TEST_CASE("triple_intersection_free", "[robustness]") {
    CHECK(triple_intersection_free(pair1d(1.5, 1.0, 1.0)));
    CHECK_FALSE(triple_intersection_free(triangle(1.6, 2)));
    CHECK(triple_intersection_free(triangle(1.9, 2)));
    // obtuse: the longest side decides
    Opinions<double> c(3, 2);
    c << 0.0, 0.0, 1.9, 0.0, 0.95, 0.4;
    CHECK_FALSE(triple_intersection_free(ClusteredEquilibrium<double>(c, Weights<double>::Ones(3))));
    c << 0.0, 0.0, 2.1, 0.0, 1.05, 0.4;
    CHECK(triple_intersection_free(ClusteredEquilibrium<double>(c, Weights<double>::Ones(3))));
}

TEST_CASE("zero agent reduced field", "[robustness]") {
    const auto eq = pair1d(1.7, 10.0, 1.0);
    CHECK(zero_agent_reduced_field(eq, p1(5.0))[0] == 0.0);
    CHECK(zero_agent_reduced_field(eq, p1(-0.5))[0] == Approx(10.0 * 0.5));
    // in B_12 the field is W_S (m_S - x0)
    const double x0 = 0.85, m = 1.7 / 11.0;
    CHECK(zero_agent_reduced_field(eq, p1(x0))[0] == Approx(11.0 * (m - x0)));
}

TEST_CASE("theorem_verdicts examples", "[robustness]") {
    const auto a = theorem_verdicts(pair1d(1.5, 1.0, 1.0));
    CHECK(a.necessary_verdict == NecessaryVerdict::NotRobust_SCMC);
    CHECK(a.sufficient_verdict == SufficientVerdict::Inconclusive);

    const auto b = theorem_verdicts(pair1d(1.7, 10.0, 1.0));
    CHECK(b.necessary_verdict == NecessaryVerdict::Inconclusive);
    CHECK(b.sufficient_verdict == SufficientVerdict::Robust_Thm);

    const auto c = theorem_verdicts(pair1d(2.5, 1.0, 1.0));
    CHECK(c.necessary_verdict == NecessaryVerdict::Inconclusive);
    CHECK(c.sufficient_verdict == SufficientVerdict::Inconclusive);
    CHECK_FALSE(c.sqrt2.holds);

    CHECK(to_string(NecessaryVerdict::NotRobust_SCMC) == "not_robust_scmc");
    CHECK(to_string(SufficientVerdict::Robust_Thm) == "robust_thm");
}

TEST_CASE("theorem verdicts are exclusive", "[robustness][property]") {
    CounterRng rng(4747);
    int robust = 0, not_robust = 0;
    for (int trial = 0; trial < 400; ++trial) {
        const Index k = 1 + static_cast<Index>(rng.next_u64() % 6);
        const Index d = 1 + static_cast<Index>(rng.next_u64() % 3);
        const auto eq = testgen::equilibrium(rng, k, d, d == 1 ? 2.0 * double(k) : 3.0, 1.0, 0.05, 20.0);
        const auto r = theorem_verdicts(eq);
        INFO("trial " << trial);
        REQUIRE_FALSE((r.necessary_verdict == NecessaryVerdict::NotRobust_SCMC &&
                       r.sufficient_verdict == SufficientVerdict::Robust_Thm));
        if (r.necessary_verdict == NecessaryVerdict::NotRobust_SCMC) {
            ++not_robust;
            REQUIRE((r.scmc.holds && r.generic.generic));
        }
        if (r.sufficient_verdict == SufficientVerdict::Robust_Thm) {
            ++robust;
            REQUIRE((!r.scmc.holds && r.generic.generic && r.triple_intersection_free && r.sqrt2.holds));
        }
    }
    // the generator reaches both verdicts
    CHECK(robust > 0);
    CHECK(not_robust > 0);
}

TEST_CASE("classify_zero_trajectory examples", "[robustness][zero]") {
    SECTION("outside every ball") {
        const auto t = classify_zero_trajectory(pair1d(1.7, 10.0, 1.0), p1(5.0));
        CHECK(t.kind == TrajectoryKind::Type1);
        CHECK(t.switches == 0);
        CHECK(t.final_point[0] == 5.0);
    }
    SECTION("one exit then convergence to the heavy cluster") {
        const auto t = classify_zero_trajectory(pair1d(1.7, 10.0, 1.0), p1(0.85));
        CHECK(t.kind == TrajectoryKind::Type1);
        CHECK(t.switches == 1);
        REQUIRE(t.events.size() == 1);
        CHECK(t.events[0].first == 1);
        CHECK(t.events[0].second == EventKind::LeaveBall);
        CHECK(t.final_point[0] == Approx(0.0).margin(1e-6));
    }
    SECTION("interior fixed point at the shared center of mass") {
        const auto t = classify_zero_trajectory(pair1d(1.5, 1.0, 1.0), p1(0.75));
        CHECK(t.kind == TrajectoryKind::Type1);
        CHECK(t.switches == 0);
        CHECK(t.final_point[0] == Approx(0.75));
    }
    SECTION("start on a sphere") {
        CHECK_THROWS_AS(classify_zero_trajectory(pair1d(1.7, 10.0, 1.0), p1(0.7)), InitialOnSurface);
    }
    CHECK(to_string(TrajectoryKind::Type2Suspected) == std::string_view("type2_suspected"));
}

TEST_CASE("verdicts are invariant under rigid motions", "[robustness][property]") {
    CounterRng rng(8080);
    for (int trial = 0; trial < 150; ++trial) {
        const Index k = 2 + static_cast<Index>(rng.next_u64() % 4);
        const Index d = 2 + static_cast<Index>(rng.next_u64() % 2);
        const auto eq = testgen::equilibrium(rng, k, d, 2.5, 1.05, 0.2, 5.0);
        const Eigen::MatrixXd rot = testgen::rotation(rng, d);
        const Eigen::RowVectorXd shift = testgen::ball_opinions(rng, 1, d, 10.0).row(0);
        const auto eq2 = moved(eq, rot, shift);
        const auto a = theorem_verdicts(eq), b = theorem_verdicts(eq2);
        INFO("trial " << trial);
        REQUIRE(a.scmc.holds == b.scmc.holds);
        REQUIRE(a.scmc.witness == b.scmc.witness);
        REQUIRE(a.generic.generic == b.generic.generic);
        REQUIRE(a.sqrt2.holds == b.sqrt2.holds);
        REQUIRE(a.triple_intersection_free == b.triple_intersection_free);

        const Point<double> x0 = testgen::ball_opinions(rng, 1, d, 2.5).row(0).transpose();
        const Point<double> x0m = rot * x0 + shift.transpose();
        TrajectoryType ta, tb;
        try {
            ta = classify_zero_trajectory(eq, x0);
        } catch (const InitialOnSurface&) {
            continue;
        }
        tb = classify_zero_trajectory(eq2, x0m);
        REQUIRE(ta.kind == tb.kind);
        REQUIRE(ta.switches == tb.switches);
        if (ta.kind == TrajectoryKind::Type1)
            REQUIRE((rot * ta.final_point + shift.transpose() - tb.final_point).norm() <= 1e-6);
    }
}

TEST_CASE("measure_delta examples", "[robustness][delta]") {
    SECTION("a far zero agent does not perturb") {
        for (double delta : {1e-1, 1e-3}) {
            const ZeroAgentScenario scn{pair1d(1.7, 10.0, 1.0), p1(-3.0), delta, {}};
            CHECK(measure_delta(scn).Delta == 0.0);
        }
    }
    SECTION("shared center of mass pulls the clusters together") {
        const ZeroAgentScenario scn{pair1d(1.5, 1.0, 1.0), p1(0.75), 1e-3, {}};
        const auto m = measure_delta(scn);
        CHECK(m.Delta >= 0.25 - 1e-3);
    }
    SECTION("a robust pair barely moves") {
        const ZeroAgentScenario scn{pair1d(1.7, 10.0, 1.0), p1(0.85), 1e-3, {}};
        const auto m = measure_delta(scn);
        CHECK(m.Delta < 0.01);
        CHECK(m.branch_count == 1);
        REQUIRE(m.events.size() == 1);
        CHECK(m.events[0].pair == AgentPair{0, 2});
    }
    SECTION("errors") {
        CHECK_THROWS_AS(measure_delta({pair1d(1.7, 10.0, 1.0), p1(0.85), 0.0, {}}), InvalidArgument);
        CHECK_THROWS_AS(measure_delta({pair1d(1.7, 10.0, 1.0), p1(0.85), 1e-3, {1.0}}), InvalidArgument);
        DeltaOptions opts;
        opts.branch_cap = 0;
        CHECK_THROWS_AS(measure_delta({pair1d(1.7, 10.0, 1.0), p1(0.85), 1e-3, {}}, {}, opts), InvalidArgument);
    }
}

TEST_CASE("delta sweeps", "[robustness][delta]") {
    const std::vector<double> deltas{1e-2, 1e-3, 1e-4};
    SECTION("robust pair: decreasing with linear scaling") {
        const auto s = delta_sweep(pair1d(1.7, 10.0, 1.0), p1(0.85), deltas);
        REQUIRE(s.points.size() == 3);
        CHECK(s.strictly_decreasing);
        REQUIRE(s.ratios.size() == 3);
        // Delta / delta settles as delta shrinks
        CHECK(s.ratios[2] == Approx(s.ratios[1]).epsilon(0.05));
        CHECK(std::abs(s.extrapolated_limit) < 1e-4);
    }
    SECTION("shared center of mass: no decrease") {
        const auto s = delta_sweep(pair1d(1.5, 1.0, 1.0), p1(0.75), deltas);
        for (const auto& p : s.points) CHECK(p.Delta >= 0.25 - 1e-3);
        CHECK_FALSE(s.strictly_decreasing);
    }
    CHECK_THROWS_AS(delta_sweep(pair1d(1.5, 1.0, 1.0), p1(0.75), {1e-3, 1e-2}), InvalidArgument);
    CHECK_THROWS_AS(delta_sweep(pair1d(1.5, 1.0, 1.0), p1(0.75), {}), InvalidArgument);
}

TEST_CASE("a light zero agent moves along the segment to the center of mass", "[robustness][zero][property]") {
    // weight 1e-9 approximates the weightless dynamics; clusters move by O(1e-9)
    CounterRng rng(42);
    int tested = 0;
    for (int trial = 0; trial < 40 && tested < 15; ++trial) {
        const Index d = 2;
        const auto eq = testgen::equilibrium(rng, 3, d, 1.2, 1.05, 0.5, 3.0);
        const Point<double> x0 = testgen::ball_opinions(rng, 1, d, 1.5).row(0).transpose();
        std::vector<Index> s;
        for (Index i = 0; i < eq.k(); ++i) {
            const double gap = (x0 - eq.centers.row(i).transpose()).norm() - 1.0;
            if (std::abs(gap) < 1e-3) s.clear(), i = eq.k();
            else if (gap < 0.0) s.push_back(i);
        }
        if (s.empty()) continue;
        ++tested;
        const Point<double> m = center_of_mass(eq, s);

        Opinions<double> x(eq.k() + 1, d);
        x.row(0) = x0.transpose();
        x.bottomRows(eq.k()) = eq.centers;
        Weights<double> w(eq.k() + 1);
        w << 1e-9, eq.weights;
        const auto k = KernelMatrix<double>::uniform(eq.k() + 1, KernelSpec<double>::indicator(1.0));
        IntegratorConfig cfg;
        cfg.t_max = 20.0;
        cfg.sample_interval = 0.01;
        const auto traj = integrate(SystemState<double>(x, w), k, cfg);
        const double t_first = traj.events.empty() ? traj.final_state().time : traj.events[0].time;
        const Point<double> seg = m - x0;
        for (const auto& smp : traj.samples) {
            if (smp.time > t_first) break;
            const Point<double> y = smp.opinions.row(0).transpose() - x0;
            const double t = std::clamp(y.dot(seg) / seg.squaredNorm(), 0.0, 1.0);
            INFO("trial " << trial << " t=" << smp.time);
            REQUIRE((y - t * seg).norm() <= 1e-8);
        }
    }
    CHECK(tested >= 10);
}
