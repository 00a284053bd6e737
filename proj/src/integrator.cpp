#include "hkflow/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace hkflow {

std::string_view to_string(EventKind k) {
    switch (k) {
    case EventKind::EnterBall: return "enter_ball";
    case EventKind::LeaveBall: return "leave_ball";
    case EventKind::AttractiveSliding: return "attractive_sliding";
    case EventKind::RepulsiveNonUnique: return "repulsive_non_unique";
    case EventKind::TangentialGraze: return "tangential_graze";
    case EventKind::MultiSurface: return "multi_surface";
    }
    return "unknown";
}

std::string_view to_string(Termination t) {
    switch (t) {
    case Termination::Equilibrium: return "equilibrium";
    case Termination::TMax: return "t_max";
    case Termination::SwitchCap: return "switch_cap";
    case Termination::NonUnique: return "non_unique";
    }
    return "unknown";
}

void IntegratorConfig::validate() const {
    if (!(rel_tol > 0) || !(abs_tol > 0) || !(event_time_tol > 0))
        throw InvalidArgument("integrator tolerances must be strictly positive");
    if (!(max_step > 0)) throw InvalidArgument("max_step must be positive");
    if (!(t_max > 0)) throw InvalidArgument("t_max must be positive");
    if (max_switches < 1) throw InvalidArgument("max_switches must be >= 1");
    if (!(equilibrium_field_tol > 0) || !(equilibrium_eps > 0))
        throw InvalidArgument("equilibrium tolerances must be strictly positive");
    if (!(tangency_rel_tol >= 0) || !(surface_tol >= 0) || !(sample_interval >= 0))
        throw InvalidArgument("tangency, surface and sampling tolerances must be nonnegative");
}

// ---------------------------------------------------------------------------
// Classification

namespace {

/// Rows i and j of f^G with the (i,j) edge left out.
void pair_rows_without_edge(const Opinions<double>& x, const Weights<double>& w, const KernelMatrix<double>& kernels,
                            const InteractionGraph& graph, Index i, Index j, Eigen::RowVectorXd& fi,
                            Eigen::RowVectorXd& fj) {
    fi.setZero(x.cols());
    fj.setZero(x.cols());
    for (Index k = 0; k < x.rows(); ++k) {
        if (k != j && k != i && graph.has(i, k)) {
            const Eigen::RowVectorXd diff = x.row(k) - x.row(i);
            fi += kernels(i, k).extended(diff.norm()) * w[k] * diff;
        }
        if (k != i && k != j && graph.has(j, k)) {
            const Eigen::RowVectorXd diff = x.row(k) - x.row(j);
            fj += kernels(j, k).extended(diff.norm()) * w[k] * diff;
        }
    }
}

} // namespace

NormalSpeeds normal_speeds(const SystemState<double>& state, AgentPair pair, const KernelMatrix<double>& kernels,
                           const InteractionGraph& graph) {
    const auto [i, j] = pair;
    const auto& x = state.opinions;
    const auto& w = state.weights;
    Eigen::RowVectorXd fi, fj;
    pair_rows_without_edge(x, w, kernels, graph, i, j, fi, fj);
    const Eigen::RowVectorXd dij = x.row(i) - x.row(j);
    const double dist = dij.norm();
    const double xi = kernels(i, j).extended(dist);
    NormalSpeeds s;
    s.out = 2.0 * dij.dot(fi - fj);
    // the edge adds xi*w_j*(x_j - x_i) to f_i and xi*w_i*(x_i - x_j) to f_j
    s.in = s.out - 2.0 * xi * (w[i] + w[j]) * dist * dist;
    s.scale = 2.0 * dist * (fi.norm() + fj.norm() + xi * (w[i] + w[j]) * dist);
    return s;
}

EventKind classify_normal_speeds(double s_in, double s_out, double tangency_tol) {
    if (std::abs(s_in) <= tangency_tol || std::abs(s_out) <= tangency_tol) return EventKind::TangentialGraze;
    if (s_in < 0 && s_out < 0) return EventKind::EnterBall;
    if (s_in > 0 && s_out > 0) return EventKind::LeaveBall;
    if (s_in > 0 && s_out < 0) return EventKind::AttractiveSliding;
    return EventKind::RepulsiveNonUnique;
}

EventKind classify_crossing(const SystemState<double>& state, AgentPair pair, const KernelMatrix<double>& kernels,
                            const InteractionGraph& graph, double tangency_rel_tol, double surface_tol) {
    const Index n = state.n();
    for (Index a = 0; a < n; ++a)
        for (Index b = a + 1; b < n; ++b) {
            if (AgentPair{a, b} == pair || AgentPair{b, a} == pair) continue;
            if (std::abs(pair_distance(state.opinions, a, b) - kernels(a, b).q()) <= surface_tol)
                return EventKind::MultiSurface;
        }
    const NormalSpeeds s = normal_speeds(state, pair, kernels, graph);
    return classify_normal_speeds(s.in, s.out, tangency_rel_tol * s.scale);
}

EventKind classify_crossing(const SystemState<double>& state, AgentPair pair, const KernelMatrix<double>& kernels) {
    return classify_crossing(state, pair, kernels, strict_graph(state.opinions, kernels));
}

double sliding_weight(double s_in, double s_out) {
    if (s_in == s_out) throw NoTangentCombination("normal speeds coincide; no tangent convex combination");
    const double alpha = s_in / (s_in - s_out);
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw NoTangentCombination("normal speeds share a sign; the convex hull misses the tangent plane");
    return alpha;
}

Opinions<double> sliding_field(const SystemState<double>& state, AgentPair pair, const KernelMatrix<double>& kernels,
                               const InteractionGraph& graph) {
    const NormalSpeeds s = normal_speeds(state, pair, kernels, graph);
    const double alpha = sliding_weight(s.in, s.out);
    InteractionGraph with = graph, without = graph;
    with.add(pair.first, pair.second);
    without.remove(pair.first, pair.second);
    return (1.0 - alpha) * graph_field(state, kernels, with) + alpha * graph_field(state, kernels, without);
}

// ---------------------------------------------------------------------------
// Root location

namespace {

double effective_tol(double tol, double t) {
    return std::max(tol, 8.0 * std::numeric_limits<double>::epsilon() * std::abs(t));
}

template <typename Fn>
std::pair<double, double> bisect_positive(Fn&& h, double lo, double hi, double tol) {
    // invariant: h(lo) <= 0 < h(hi)
    while (hi - lo > effective_tol(tol, hi)) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        (h(mid) > 0.0 ? hi : lo) = mid;
    }
    return {lo, hi};
}

} // namespace

double locate_event(const DenseSegment& seg, AgentPair pair, double q, double tol) {
    const auto g = [&](double t) {
        const Eigen::RowVectorXd diff = seg.row(t, pair.first) - seg.row(t, pair.second);
        return diff.squaredNorm() - q * q;
    };
    const double t0 = seg.t_begin(), t1 = seg.t_end();
    const double g0 = g(t0);
    if (g0 == 0.0) return t0;
    const double sign = g0 > 0 ? -1.0 : 1.0;
    const auto h = [&](double t) { return sign * g(t); };
    // refine the sampling grid until the first sign change is bracketed
    for (int cells = 32; cells <= 8192; cells *= 2) {
        double prev = t0;
        for (int k = 1; k <= cells; ++k) {
            const double t = k == cells ? t1 : t0 + (t1 - t0) * k / cells;
            if (h(t) >= 0.0) {
                if (h(t) == 0.0) return t;
                return bisect_positive(h, prev, t, tol).second;
            }
            prev = t;
        }
    }
    throw InvalidArgument("locate_event: |x_i - x_j|^2 - q^2 keeps one sign on the segment");
}

// ---------------------------------------------------------------------------
// Dense segments

namespace {

// Dormand–Prince 5(4) tableau and Hairer's dense-output coefficients.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784, a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200, e6 = 22.0 / 525,
                 e7 = -1.0 / 40;
constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                 d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                 d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;

class DopriSegment final : public DenseSegment {
public:
    DopriSegment(double t0, double h, const Opinions<double>& y0, const Opinions<double>& y1,
                 const Opinions<double>& k1, const Opinions<double>& k3, const Opinions<double>& k4,
                 const Opinions<double>& k5, const Opinions<double>& k6, const Opinions<double>& k7)
        : t0_(t0), h_(h) {
        r1_ = y0;
        r2_ = y1 - y0;
        r3_ = h * k1 - r2_;
        r4_ = r2_ - h * k7 - r3_;
        r5_ = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
    }
    double t_begin() const override { return t0_; }
    double t_end() const override { return t0_ + h_; }
    Opinions<double> state(double t) const override {
        const double th = (t - t0_) / h_, th1 = 1.0 - th;
        return r1_ + th * (r2_ + th1 * (r3_ + th * (r4_ + th1 * r5_)));
    }
    Eigen::RowVectorXd row(double t, Index a) const override {
        const double th = (t - t0_) / h_, th1 = 1.0 - th;
        return r1_.row(a) + th * (r2_.row(a) + th1 * (r3_.row(a) + th * (r4_.row(a) + th1 * r5_.row(a))));
    }

private:
    double t0_, h_;
    Opinions<double> r1_, r2_, r3_, r4_, r5_;
};

/// Exact flow of x' = -L x for a fixed graph with unit kernel values.
///
/// L = diag(A w) - A W is similar to the symmetric S = diag(A w) - W^{1/2} A W^{1/2},
/// so exp(-L t) = W^{-1/2} V exp(-Lambda t) V^T W^{1/2}.
class AffineSegment final : public DenseSegment {
public:
    AffineSegment(double t0, const Opinions<double>& x0, const Weights<double>& w, const InteractionGraph& graph)
        : t0_(t0) {
        const Index n = x0.rows();
        const Eigen::VectorXd sw = w.array().sqrt();
        Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
        for (const auto& [i, j] : graph.edges()) {
            s(i, i) += w[j];
            s(j, j) += w[i];
            s(i, j) -= sw[i] * sw[j];
            s(j, i) -= sw[i] * sw[j];
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
        lambda_ = es.eigenvalues();
        const double top = lambda_.size() ? lambda_.cwiseAbs().maxCoeff() : 0.0;
        for (Index k = 0; k < lambda_.size(); ++k)
            if (lambda_[k] <= 1e-13 * top) lambda_[k] = 0.0;
        p_ = sw.cwiseInverse().asDiagonal() * es.eigenvectors();
        c_ = es.eigenvectors().transpose() * (sw.asDiagonal() * x0);
    }
    double t_begin() const override { return t0_; }
    double t_end() const override { return std::numeric_limits<double>::infinity(); }
    Opinions<double> state(double t) const override {
        const Eigen::VectorXd decay = (-lambda_ * (t - t0_)).array().exp();
        return p_ * (decay.asDiagonal() * c_);
    }
    Eigen::RowVectorXd row(double t, Index a) const override {
        const Eigen::VectorXd decay = (-lambda_ * (t - t0_)).array().exp();
        return p_.row(a) * (decay.asDiagonal() * c_);
    }
    double fastest_rate() const { return lambda_.size() ? lambda_.maxCoeff() : 0.0; }
    double slowest_rate() const {
        double r = std::numeric_limits<double>::infinity();
        for (Index k = 0; k < lambda_.size(); ++k)
            if (lambda_[k] > 0.0) r = std::min(r, lambda_[k]);
        return r;
    }

private:
    double t0_;
    Eigen::VectorXd lambda_;
    Eigen::MatrixXd p_;
    Opinions<double> c_;
};

// ---------------------------------------------------------------------------
// Engine

struct Hit {
    AgentPair pair;
    double lo, hi;
};

class Engine {
public:
    Engine(const SystemState<double>& initial, const KernelMatrix<double>& kernels, const IntegratorConfig& cfg,
           const InteractionGraph* initial_graph)
        : k_(kernels), cfg_(cfg), w_(initial.weights), n_(initial.n()), t_(initial.time), x_(initial.opinions) {
        cfg_.validate();
        initial.validate();
        if (kernels.n() != n_) throw InvalidArgument("kernel matrix size does not match the agent count");
        const std::size_t np = n_ < 2 ? 0 : static_cast<std::size_t>(n_ * (n_ - 1) / 2);
        pairs_.reserve(np);
        q_.reserve(np);
        stiff_.reserve(np);
        std::vector<double> palette_stiffness;
        for (const auto& k : kernels.palette()) palette_stiffness.push_back(jacobian_factor(k));
        for (Index i = 0; i < n_; ++i)
            for (Index j = i + 1; j < n_; ++j) {
                pairs_.emplace_back(i, j);
                q_.push_back(kernels(i, j).q());
                stiff_.push_back(palette_stiffness[static_cast<std::size_t>(&kernels(i, j) - kernels.palette().data())]);
            }
        locked_.assign(np, 0);
        setup_graph(initial_graph);
    }

    Trajectory run() {
        const bool affine = cfg_.stepper == Stepper::AffineExact ||
                            (cfg_.stepper == Stepper::Auto && n_ <= cfg_.affine_max_n &&
                             k_.all_of_family(KernelFamily::Indicator));
        if (affine && !k_.all_of_family(KernelFamily::Indicator))
            throw InvalidArgument("the affine exact stepper requires indicator kernels");
        traj_.stepper_used = affine ? Stepper::AffineExact : Stepper::DormandPrince;
        push_sample(true);
        if (pairs_settled(x_) && field_small(graph_field(x_, w_, k_, graph_))) {
            finish(Termination::Equilibrium);
        } else if (affine) {
            run_affine();
        } else {
            run_dopri();
        }
        traj_.final_graph = graph_;
        return std::move(traj_);
    }

private:
    // -- setup ---------------------------------------------------------------

    void setup_graph(const InteractionGraph* initial_graph) {
        if (initial_graph) {
            if (initial_graph->n() != n_) throw InvalidArgument("initial graph size does not match the agent count");
            graph_ = *initial_graph;
            for (std::size_t p = 0; p < pairs_.size(); ++p) {
                const auto [i, j] = pairs_[p];
                const double gap = pair_distance(x_, i, j) - q_[p];
                const bool present = graph_.has(i, j);
                if ((present && gap > 0) || (!present && gap < 0)) {
                    if (std::abs(gap) > 1e-6 * q_[p])
                        throw InvalidArgument("initial graph disagrees with the state away from a switching surface");
                    locked_[p] = 1;
                }
            }
            return;
        }
        graph_ = strict_graph(x_, k_);
        const SystemState<double> s0(x_, w_, t_);
        for (std::size_t p = 0; p < pairs_.size(); ++p) {
            const auto [i, j] = pairs_[p];
            if (std::abs(pair_distance(x_, i, j) - q_[p]) > cfg_.surface_tol) continue;
            const NormalSpeeds s = normal_speeds(s0, pairs_[p], k_, graph_);
            const EventKind kind = classify_normal_speeds(s.in, s.out, cfg_.tangency_rel_tol * s.scale);
            bool present = false;
            switch (kind) {
            case EventKind::EnterBall: present = true; break;
            case EventKind::LeaveBall: present = false; break;
            default:
                if (cfg_.surface_branch == SurfaceBranch::Reject)
                    throw IntegrationError(IntegrationErrc::NonUniqueContinuation,
                                           "initial state lies on a switching surface with non-unique continuation "
                                           "(pair " + std::to_string(i) + "," + std::to_string(j) + ")");
                present = cfg_.surface_branch == SurfaceBranch::EdgeActive;
            }
            graph_.set(i, j, present);
            locked_[p] = 1;
            EventRecord ev;
            ev.time = t_;
            ev.pair = pairs_[p];
            ev.kind = kind;
            ev.group = {pairs_[p]};
            ev.edge_after = present;
            ev.normal_speed_in = s.in;
            ev.normal_speed_out = s.out;
            if (cfg_.record_event_states) {
                ev.pre_state = s0;
                ev.post_state = s0;
            }
            traj_.events.push_back(std::move(ev));
        }
    }

    /// sup over r in [0, q] of |xi(r)| + r |xi'(r)|: bounds one pair's entry in the Jacobian of f^G.
    static double jacobian_factor(const KernelSpec<double>& k) {
        if (k.family() == KernelFamily::Indicator) return 1.0;
        constexpr int kGrid = 256;
        const double q = k.q(), dr = q / kGrid;
        double best = 0.0;
        for (int m = 0; m <= kGrid; ++m) {
            const double r = q * m / kGrid;
            const double lo = std::max(0.0, r - dr), hi = r + dr;
            const double slope = (k.extended(hi) - k.extended(lo)) / (hi - lo);
            best = std::max(best, std::abs(k.extended(r)) + r * std::abs(slope));
        }
        return best;
    }

    /// Largest step keeping every eigenvalue of the current Jacobian inside the
    /// real stability interval of the 5(4) pair (Gershgorin bound).
    void refresh_step_cap() {
        std::vector<double> row(static_cast<std::size_t>(n_), 0.0);
        for (const auto& pr : graph_.edges()) {
            const double c = stiff_[pair_slot(pr)];
            row[static_cast<std::size_t>(pr.first)] += c * w_[pr.second];
            row[static_cast<std::size_t>(pr.second)] += c * w_[pr.first];
        }
        const double rho = 2.0 * *std::max_element(row.begin(), row.end());
        step_cap_ = rho > 0.0 ? 2.5 / rho : std::numeric_limits<double>::infinity();
    }

    // -- per-pair bookkeeping -------------------------------------------------

    double lock_margin(std::size_t p) const { return 1e-8 * q_[p] * q_[p]; }

    /// Positive when the pair sits on the wrong side of its surface for the current graph.
    double violation(std::size_t p, double sq) const {
        const auto [i, j] = pairs_[p];
        const double g = sq - q_[p] * q_[p];
        double h = graph_.has(i, j) ? g : -g;
        if (locked_[p]) h -= lock_margin(p);
        return h;
    }

    double violation_at(const DenseSegment& seg, std::size_t p, double t) const {
        const auto [i, j] = pairs_[p];
        return violation(p, (seg.row(t, i) - seg.row(t, j)).squaredNorm());
    }

    static double squared_distance(const Opinions<double>& x, Index i, Index j) {
        double acc = 0.0;
        for (Index k = 0; k < x.cols(); ++k) {
            const double diff = x(i, k) - x(j, k);
            acc += diff * diff;
        }
        return acc;
    }

    bool pair_settled(std::size_t p, double sq) const {
        const double eps = cfg_.equilibrium_eps, outer = q_[p] - eps;
        return sq <= eps * eps || outer <= 0.0 || sq >= outer * outer;
    }

    bool pairs_settled(const Opinions<double>& x) const {
        std::size_t p = 0;
        for (Index i = 0; i < n_; ++i)
            for (Index j = i + 1; j < n_; ++j, ++p)
                if (!pair_settled(p, squared_distance(x, i, j))) return false;
        return true;
    }

    bool field_small(const Opinions<double>& f) const {
        return n_ == 0 || f.cwiseAbs().maxCoeff() < cfg_.equilibrium_field_tol;
    }

    // -- scanning ------------------------------------------------------------

    /// Looks for the first pair leaving its consistent side on [ta, tb]. Also
    /// records whether every pair is settled at `xb` and which locks may be released there.
    std::optional<Hit> scan(const DenseSegment& seg, double ta, double tb, const Opinions<double>& xa,
                            const Opinions<double>& xb) {
        constexpr int kInterior = 8;
        const Eigen::VectorXd disp = (xb - xa).rowwise().norm();
        crossers_.clear();
        brackets_.clear();
        interior_.clear();
        releasable_.clear();
        settled_ = true;
        std::size_t p = 0;
        for (Index i = 0; i < n_; ++i) {
            for (Index j = i + 1; j < n_; ++j, ++p) {
                const double sb = squared_distance(xb, i, j);
                const double qq = q_[p] * q_[p];
                const double g = graph_.has(i, j) ? sb - qq : qq - sb;
                if (settled_ && !pair_settled(p, sb)) settled_ = false;
                double hb = g;
                if (locked_[p]) {
                    if (g <= 0.0) releasable_.push_back(p);
                    hb -= lock_margin(p);
                }
                // the path of either agent stays within roughly its chord of the end point,
                // so a pair farther than this from its surface cannot have crossed twice
                if (!(hb > 0.0)) {
                    const double margin = 2.0 * (disp[i] + disp[j]);
                    const double lo = std::max(0.0, q_[p] - margin), hi = q_[p] + margin;
                    if (sb < lo * lo || sb > hi * hi) continue;
                }
                if (interior_.empty())
                    for (int k = 1; k < kInterior; ++k) interior_.push_back(seg.state(ta + (tb - ta) * k / kInterior));
                for (int k = 1; k <= kInterior; ++k) {
                    const double hv = k == kInterior ? hb : violation(p, squared_distance(interior_[k - 1], i, j));
                    if (hv > 0.0) {
                        crossers_.push_back(p);
                        brackets_.push_back(k);
                        break;
                    }
                }
            }
        }
        if (crossers_.empty()) return std::nullopt;
        // only pairs whose coarse bracket holds the earliest crossing need refining
        const int first = *std::min_element(brackets_.begin(), brackets_.end());
        std::optional<Hit> best;
        for (std::size_t c = 0; c < crossers_.size(); ++c) {
            if (brackets_[c] != first) continue;
            const std::size_t pc = crossers_[c];
            const double lo0 = ta + (tb - ta) * (first - 1) / kInterior;
            const double hi0 = first == kInterior ? tb : ta + (tb - ta) * first / kInterior;
            const auto [lo, hi] =
                bisect_positive([&](double s) { return violation_at(seg, pc, s); }, lo0, hi0, cfg_.event_time_tol);
            if (!best || hi < best->hi) best = Hit{pairs_[pc], lo, hi};
        }
        return best;
    }

    /// Called after a step is accepted without a crossing.
    void release_locks() {
        for (std::size_t p : releasable_) locked_[p] = 0;
    }

    std::size_t pair_slot(AgentPair pr) const {
        auto [i, j] = pr;
        if (i > j) std::swap(i, j);
        return static_cast<std::size_t>(i * (2 * n_ - i - 1) / 2 + (j - i - 1));
    }

    // -- events --------------------------------------------------------------

    /// Applies the switch found by `scan`. Returns false when integration must stop.
    bool handle_event(const DenseSegment& seg, const Hit& hit) {
        const double te = hit.hi;
        Opinions<double> xe = seg.state(te);
        std::vector<AgentPair> group;
        for (std::size_t p : crossers_) {
            const auto [i, j] = pairs_[p];
            if (pairs_[p] == hit.pair || violation(p, squared_distance(xe, i, j)) > 0.0)
                group.push_back(pairs_[p]);
        }
        const SystemState<double> se(xe, w_, te);

        EventRecord ev;
        ev.time = te;
        ev.pair = hit.pair;
        ev.group = group;
        if (cfg_.record_event_states) {
            ev.pre_state = SystemState<double>(seg.state(hit.lo), w_, std::max(hit.lo, t_));
            ev.post_state = se;
        }

        bool proceed = true;
        InteractionGraph next = graph_;
        if (group.size() == 1) {
            const auto [i, j] = hit.pair;
            const NormalSpeeds s = normal_speeds(se, hit.pair, k_, graph_);
            ev.normal_speed_in = s.in;
            ev.normal_speed_out = s.out;
            EventKind kind = classify_normal_speeds(s.in, s.out, cfg_.tangency_rel_tol * s.scale);
            const bool was_present = graph_.has(i, j);
            const EventKind expected = was_present ? EventKind::LeaveBall : EventKind::EnterBall;
            const bool jump = k_(i, j).has_jump();
            if (kind == EventKind::EnterBall || kind == EventKind::LeaveBall) {
                // a clean crossing against the approach direction means the speeds are resolution-limited
                if (kind != expected) kind = EventKind::TangentialGraze;
            }
            ev.kind = kind;
            if (kind != expected && jump) proceed = false;
            next.set(i, j, !was_present);
        } else {
            ev.kind = EventKind::MultiSurface;
            for (const auto& pr : group) next.set(pr.first, pr.second, !graph_.has(pr.first, pr.second));
            for (const auto& pr : group) {
                if (!k_(pr.first, pr.second).has_jump()) continue;
                const NormalSpeeds s = normal_speeds(se, pr, k_, next);
                const bool present = next.has(pr.first, pr.second);
                const double speed = present ? s.in : s.out;
                const double tol = cfg_.tangency_rel_tol * s.scale;
                if ((present && !(speed < -tol)) || (!present && !(speed > tol))) {
                    proceed = false;
                    break;
                }
            }
        }
        ev.edge_after = next.has(hit.pair.first, hit.pair.second);

        t_ = te;
        x_ = std::move(xe);
        traj_.events.push_back(std::move(ev));
        if (!proceed) {
            push_sample(true);
            finish(Termination::NonUnique);
            return false;
        }
        graph_ = std::move(next);
        for (const auto& pr : group) locked_[pair_slot(pr)] = 0;
        push_sample(false);
        if (++switches_ >= cfg_.max_switches) {
            push_sample(true);
            finish(Termination::SwitchCap);
            return false;
        }
        return true;
    }

    // -- sampling ------------------------------------------------------------

    void push_sample(bool force) {
        if (!traj_.samples.empty()) {
            const double last = traj_.samples.back().time;
            if (t_ <= last) return;
            if (!force && t_ - last < cfg_.sample_interval) return;
        }
        SystemState<double> s;
        s.opinions = x_;
        s.weights = w_;
        s.time = t_;
        traj_.samples.push_back(std::move(s));
    }

    void finish(Termination why) {
        push_sample(true);
        traj_.terminated_by = why;
    }

    // -- Dormand–Prince -------------------------------------------------------

    Opinions<double> field(const Opinions<double>& x) const { return graph_field(x, w_, k_, graph_); }

    double error_norm(const Opinions<double>& err, const Opinions<double>& y0, const Opinions<double>& y1) const {
        const auto sk = (cfg_.abs_tol + cfg_.rel_tol * y0.cwiseAbs().cwiseMax(y1.cwiseAbs()).array());
        const double sum = (err.array() / sk).square().sum();
        return std::sqrt(sum / std::max<double>(1.0, double(err.size())));
    }

    double initial_step(const Opinions<double>& f0) const {
        const auto sk = (cfg_.abs_tol + cfg_.rel_tol * x_.cwiseAbs().array());
        const double size = std::max<double>(1.0, double(x_.size()));
        const double d0 = std::sqrt((x_.array() / sk).square().sum() / size);
        const double d1 = std::sqrt((f0.array() / sk).square().sum() / size);
        double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
        h0 = std::min(h0, cfg_.max_step);
        const Opinions<double> f1 = field(x_ + h0 * f0);
        const double d2 = std::sqrt(((f1 - f0).array() / sk).square().sum() / size) / h0;
        const double m = std::max(d1, d2);
        const double h1 = m <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / m, 1.0 / 5.0);
        return std::min({100.0 * h0, h1, cfg_.max_step});
    }

    void run_dopri() {
        Opinions<double> k1 = field(x_);
        refresh_step_cap();
        double h = std::min(initial_step(k1), step_cap_);
        while (true) {
            const double remaining = cfg_.t_max - t_;
            if (remaining <= 0.0) {
                finish(Termination::TMax);
                return;
            }
            double step = std::min({h, cfg_.max_step, step_cap_, remaining});
            const double floor = 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t_));
            if (step < floor)
                throw IntegrationError(IntegrationErrc::StepSizeUnderflow,
                                       "step size underflow at t=" + std::to_string(t_));
            const Opinions<double>& y = x_;
            const Opinions<double> k2 = field(y + step * (a21 * k1));
            const Opinions<double> k3 = field(y + step * (a31 * k1 + a32 * k2));
            const Opinions<double> k4 = field(y + step * (a41 * k1 + a42 * k2 + a43 * k3));
            const Opinions<double> k5 = field(y + step * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
            const Opinions<double> k6 = field(y + step * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
            Opinions<double> y1 = y + step * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
            Opinions<double> k7 = field(y1);
            const Opinions<double> err = step * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
            const double en = error_norm(err, y, y1);
            if (!(en <= 1.0)) {
                ++traj_.rejected_steps;
                const double fac = std::isfinite(en) ? std::max(0.2, 0.9 * std::pow(en, -0.2)) : 0.2;
                h = step * fac;
                continue;
            }
            ++traj_.accepted_steps;
            const double fac = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
            const double next_h = step * fac;
            const double t1 = step == remaining ? cfg_.t_max : t_ + step;

            const DopriSegment seg(t_, t1 - t_, y, y1, k1, k3, k4, k5, k6, k7);
            if (auto hit = scan(seg, t_, t1, y, y1)) {
                if (!handle_event(seg, *hit)) return;
                k1 = field(x_);
                refresh_step_cap();
                h = std::max(next_h, h);
                continue;
            }
            t_ = t1;
            x_ = std::move(y1);
            k1 = std::move(k7);
            release_locks();
            h = next_h;
            if (settled_ && field_small(k1)) {
                finish(Termination::Equilibrium);
                return;
            }
            push_sample(false);
        }
    }

    // -- affine exact ----------------------------------------------------------

    void run_affine() {
        constexpr double kGrowth = 1.1;
        while (true) {
            const AffineSegment seg(t_, x_, w_, graph_);
            const double fast = seg.fastest_rate();
            if (fast == 0.0) {
                // no interaction left: the state is frozen
                if (pairs_settled(x_)) {
                    finish(Termination::Equilibrium);
                } else {
                    t_ = cfg_.t_max;
                    finish(Termination::TMax);
                }
                return;
            }
            const double t_start = t_;
            double h = 0.05 / fast;
            double ta = t_start;
            Opinions<double> xa = x_;
            bool rebuilt = false;
            while (!rebuilt) {
                if (ta >= cfg_.t_max) {
                    finish(Termination::TMax);
                    return;
                }
                const double tb = std::min({ta + std::min(h, cfg_.max_step), cfg_.t_max});
                Opinions<double> xb = seg.state(tb);
                ++traj_.accepted_steps;
                if (auto hit = scan(seg, ta, tb, xa, xb)) {
                    if (!handle_event(seg, *hit)) return;
                    rebuilt = true;
                    continue;
                }
                t_ = tb;
                x_ = xb;
                    release_locks();
                if (settled_ && field_small(field(x_))) {
                    finish(Termination::Equilibrium);
                    return;
                }
                push_sample(false);
                ta = tb;
                xa = std::move(xb);
                h *= kGrowth;
            }
        }
    }

    const KernelMatrix<double>& k_;
    IntegratorConfig cfg_;
    Weights<double> w_;
    Index n_;
    double t_;
    Opinions<double> x_;
    InteractionGraph graph_;
    std::vector<AgentPair> pairs_;
    std::vector<double> q_;
    std::vector<double> stiff_;
    double step_cap_ = std::numeric_limits<double>::infinity();
    std::vector<char> locked_;
    bool settled_ = false;
    std::vector<std::size_t> releasable_;
    std::vector<std::size_t> crossers_;
    std::vector<int> brackets_;
    std::vector<Opinions<double>> interior_;
    int switches_ = 0;
    Trajectory traj_;
};

} // namespace

Trajectory integrate(const SystemState<double>& initial, const KernelMatrix<double>& kernels,
                     const IntegratorConfig& cfg, const InteractionGraph* initial_graph) {
    Engine engine(initial, kernels, cfg, initial_graph);
    return engine.run();
}

} // namespace hkflow
