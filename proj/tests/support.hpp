#pragma once

// Hand-rolled generators for the property tests. Everything is driven by
// CounterRng so a failing case can be replayed from its seed alone.

#include <cmath>
#include <cstdint>
#include <vector>

#include "hkflow/equilibrium.hpp"
#include "hkflow/field.hpp"
#include "hkflow/rng.hpp"
#include "hkflow/robustness.hpp"

namespace testgen {

using namespace hkflow;

inline Opinions<double> ball_opinions(CounterRng& rng, Index n, Index d, double radius) {
    Opinions<double> x(n, d);
    for (Index i = 0; i < n; ++i) {
        Eigen::RowVectorXd p(d);
        do {
            for (Index c = 0; c < d; ++c) p[c] = radius * (2.0 * rng.uniform() - 1.0);
        } while (p.norm() > radius);
        x.row(i) = p;
    }
    return x;
}

inline Weights<double> weights(CounterRng& rng, Index n, double lo = 0.5, double hi = 2.0) {
    Weights<double> w(n);
    for (Index i = 0; i < n; ++i) w[i] = rng.uniform(lo, hi);
    return w;
}

inline SystemState<double> state(CounterRng& rng, Index n, Index d, double radius) {
    return SystemState<double>(ball_opinions(rng, n, d, radius), weights(rng, n));
}

inline InteractionGraph graph(CounterRng& rng, Index n, double p = 0.5) {
    InteractionGraph g(n);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j)
            if (rng.uniform() < p) g.add(i, j);
    return g;
}

inline KernelSpec<double> kernel(CounterRng& rng, double q) {
    switch (rng.next_u64() % 4) {
    case 0: return KernelSpec<double>::indicator(q);
    case 1: return KernelSpec<double>::tent(q);
    case 2: return KernelSpec<double>::smooth_bump(q);
    default: return KernelSpec<double>::piecewise_poly(q, {1.0, 0.5, -0.25});
    }
}

inline Point<double> unit_vector(CounterRng& rng, Index d) {
    Point<double> v(d);
    do {
        for (Index c = 0; c < d; ++c) v[c] = rng.normal();
    } while (v.norm() < 1e-12);
    return v.normalized();
}

/// Random rotation (QR of a Gaussian matrix, sign-fixed).
inline Eigen::MatrixXd rotation(CounterRng& rng, Index d) {
    Eigen::MatrixXd a(d, d);
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j) a(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR();
    for (Index i = 0; i < d; ++i)
        if (r(i, i) < 0) q.col(i) *= -1.0;
    return q;
}

/// k centers at least `min_gap` apart (rejection), weights in [lo, hi].
inline ClusteredEquilibrium<double> equilibrium(CounterRng& rng, Index k, Index d, double radius, double min_gap,
                                                 double lo = 0.5, double hi = 2.0) {
    Opinions<double> c(k, d);
    for (Index i = 0; i < k; ++i) {
        bool ok = false;
        while (!ok) {
            c.row(i) = ball_opinions(rng, 1, d, radius).row(0);
            ok = true;
            for (Index j = 0; j < i && ok; ++j) ok = (c.row(i) - c.row(j)).norm() >= min_gap;
        }
    }
    return ClusteredEquilibrium<double>(c, weights(rng, k, lo, hi), 1.0);
}

} // namespace testgen
