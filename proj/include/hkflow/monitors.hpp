#pragma once

#include <vector>

#include "hkflow/state.hpp"

namespace hkflow {

/// Probe for the shifted even moment M_{2r,k}(x) = sum_{i,l} w_i (x_i^l - k^l)^{2r}.
template <typename Scalar>
struct MomentProbe {
    int r = 1;
    Point<Scalar> k;
};

template <typename Scalar>
struct MomentValue {
    int r = 1;
    Point<Scalar> k;
    Scalar value = Scalar(0);
};

template <typename Scalar>
struct MonitorSample {
    Scalar time = Scalar(0);
    Point<Scalar> weighted_mean;
    Scalar m2 = Scalar(0);
    std::vector<MomentValue<Scalar>> dissipative;
};

/// (1/n) sum_i w_i x_i. Conserved along every solution.
template <typename Scalar>
Point<Scalar> weighted_mean(const SystemState<Scalar>& s) {
    if (s.n() == 0) return Point<Scalar>::Zero(s.d());
    return (s.opinions.transpose() * s.weights) / Scalar(s.n());
}

template <typename Scalar>
Scalar second_moment(const SystemState<Scalar>& s) {
    return s.opinions.rowwise().squaredNorm().dot(s.weights);
}

template <typename Scalar>
Scalar dissipative_moment(const SystemState<Scalar>& s, int r, const Point<Scalar>& k) {
    if (r < 1) throw InvalidArgument("moment order r must be >= 1");
    if (k.size() != s.d()) throw InvalidArgument("moment shift k has the wrong dimension");
    const auto shifted = (s.opinions.rowwise() - k.transpose()).array();
    const Weights<Scalar> per_agent = shifted.pow(Scalar(2 * r)).rowwise().sum().matrix();
    return per_agent.dot(s.weights);
}

template <typename Scalar>
MonitorSample<Scalar> monitors(const SystemState<Scalar>& s, const std::vector<MomentProbe<Scalar>>& probes) {
    MonitorSample<Scalar> out;
    out.time = s.time;
    out.weighted_mean = weighted_mean(s);
    out.m2 = second_moment(s);
    out.dissipative.reserve(probes.size());
    for (const auto& p : probes) out.dissipative.push_back({p.r, p.k, dissipative_moment(s, p.r, p.k)});
    return out;
}

} // namespace hkflow
