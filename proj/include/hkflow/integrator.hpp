#pragma once

#include <limits>
#include <optional>
#include <string_view>
#include <vector>

#include "hkflow/field.hpp"

namespace hkflow {

enum class EventKind {
    EnterBall,
    LeaveBall,
    AttractiveSliding,
    RepulsiveNonUnique,
    TangentialGraze,
    MultiSurface,
};

std::string_view to_string(EventKind k);

enum class Termination { Equilibrium, TMax, SwitchCap, NonUnique };

std::string_view to_string(Termination t);

/// How the smooth segments between switching events are advanced.
enum class Stepper {
    Auto,          ///< AffineExact for all-indicator kernels with n <= affine_max_n, else DormandPrince
    DormandPrince, ///< adaptive embedded 5(4) pair with 4th-order dense output
    AffineExact,   ///< exact exponential of the fixed-graph Laplacian (indicator kernels only)
};

/// Edge state chosen for a pair that starts on its switching surface where the
/// continuation is not unique (repulsive or tangential).
enum class SurfaceBranch { EdgeInactive, EdgeActive, Reject };

struct IntegratorConfig {
    double rel_tol = 1e-10;
    double abs_tol = 1e-12;
    double event_time_tol = 1e-12;
    double max_step = std::numeric_limits<double>::infinity();
    double t_max = 500.0;
    int max_switches = 10000;

    Stepper stepper = Stepper::Auto;
    Index affine_max_n = 48;
    SurfaceBranch surface_branch = SurfaceBranch::EdgeInactive;

    /// Stop when ||f||_inf < equilibrium_field_tol and every pair is within
    /// equilibrium_eps of coincidence or beyond q - equilibrium_eps.
    double equilibrium_field_tol = 1e-10;
    double equilibrium_eps = 1e-4;

    /// Relative tolerance (times the field scale) under which a normal speed counts as zero.
    double tangency_rel_tol = 1e-8;
    /// Distance tolerance for "exactly on a surface" at the initial state.
    double surface_tol = 1e-12;

    /// Minimum time between stored samples; 0 stores every accepted step and event.
    double sample_interval = 0.0;
    bool record_event_states = true;

    void validate() const;
};

struct EventRecord {
    double time = 0.0;
    AgentPair pair{0, 0};
    EventKind kind = EventKind::EnterBall;
    /// Every pair switched at this instant (one entry unless kind == MultiSurface).
    std::vector<AgentPair> group;
    /// Edge state of `pair` after the event.
    bool edge_after = false;
    /// Normal speeds of |x_i - x_j|^2 with the edge present / absent.
    double normal_speed_in = 0.0;
    double normal_speed_out = 0.0;
    std::optional<SystemState<double>> pre_state;
    std::optional<SystemState<double>> post_state;
};

struct Trajectory {
    std::vector<SystemState<double>> samples;
    std::vector<EventRecord> events;
    Termination terminated_by = Termination::TMax;
    /// Active graph in force after the last processed event.
    InteractionGraph final_graph;
    std::size_t accepted_steps = 0;
    std::size_t rejected_steps = 0;
    Stepper stepper_used = Stepper::DormandPrince;

    const SystemState<double>& final_state() const { return samples.back(); }
};

/// Integrates the switching system from `initial` until an equilibrium, t_max,
/// the switch cap or a non-unique continuation.
///
/// `initial_graph` overrides the starting edge set; pairs whose edge state
/// disagrees with their side of the surface must lie on the surface and are
/// held there until the flow moves them to the consistent side.
Trajectory integrate(const SystemState<double>& initial, const KernelMatrix<double>& kernels,
                     const IntegratorConfig& cfg = {}, const InteractionGraph* initial_graph = nullptr);

/// Continuous extension of one integration step (or affine segment) on [t_begin, t_end].
class DenseSegment {
public:
    virtual ~DenseSegment() = default;
    virtual double t_begin() const = 0;
    virtual double t_end() const = 0;
    virtual Opinions<double> state(double t) const = 0;
    virtual Eigen::RowVectorXd row(double t, Index agent) const = 0;
};

/// Straight-line motion x(t) = x0 + t v on [t0, t1]; used by tests and the zero-agent geometry.
class LinearSegment final : public DenseSegment {
public:
    LinearSegment(Opinions<double> x0, Opinions<double> velocity, double t0, double t1)
        : x0_(std::move(x0)), v_(std::move(velocity)), t0_(t0), t1_(t1) {}
    double t_begin() const override { return t0_; }
    double t_end() const override { return t1_; }
    Opinions<double> state(double t) const override { return x0_ + (t - t0_) * v_; }
    Eigen::RowVectorXd row(double t, Index a) const override { return x0_.row(a) + (t - t0_) * v_.row(a); }

private:
    Opinions<double> x0_, v_;
    double t0_, t1_;
};

/// Earliest root of g(t) = |x_i(t) - x_j(t)|^2 - q^2 on the segment, to within `tol`
/// in time. Returns the bracket end on the far side of the root (or t_begin when g
/// vanishes there). Throws InvalidArgument when g keeps one strict sign.
double locate_event(const DenseSegment& segment, AgentPair pair, double q, double tol = 1e-12);

/// Decision table shared by every classifier: s_in / s_out are the normal speeds
/// d/dt |x_i - x_j|^2 under the field with the edge present / absent.
EventKind classify_normal_speeds(double s_in, double s_out, double tangency_tol);

struct NormalSpeeds {
    double in = 0.0;
    double out = 0.0;
    double scale = 0.0; ///< magnitude used for the tangency tolerance
};

NormalSpeeds normal_speeds(const SystemState<double>& state, AgentPair pair, const KernelMatrix<double>& kernels,
                           const InteractionGraph& graph);

/// Filippov classification of a state lying on the surface of `pair`. Other
/// edges follow `graph`. Returns MultiSurface if another pair is within
/// `surface_tol` of its own surface.
EventKind classify_crossing(const SystemState<double>& state, AgentPair pair, const KernelMatrix<double>& kernels,
                            const InteractionGraph& graph, double tangency_rel_tol = 1e-8, double surface_tol = 1e-9);

/// Same, with the graph of pairs strictly inside their support.
EventKind classify_crossing(const SystemState<double>& state, AgentPair pair, const KernelMatrix<double>& kernels);

class NoTangentCombination : public Error {
public:
    using Error::Error;
};

/// alpha in [0,1] with (1 - alpha) s_in + alpha s_out = 0.
double sliding_weight(double s_in, double s_out);

/// (1 - alpha) f_in + alpha f_out, the convex combination tangent to the surface of `pair`.
Opinions<double> sliding_field(const SystemState<double>& state, AgentPair pair, const KernelMatrix<double>& kernels,
                               const InteractionGraph& graph);

} // namespace hkflow
