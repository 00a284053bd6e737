#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hkflow/state.hpp"

namespace hkflow {

template <typename Scalar>
Scalar pair_distance(const Opinions<Scalar>& x, Index i, Index j) {
    Scalar acc(0);
    for (Index k = 0; k < x.cols(); ++k) {
        const Scalar diff = x(j, k) - x(i, k);
        acc += diff * diff;
    }
    using std::sqrt;
    return sqrt(acc);
}

/// The discontinuous field: f_i = sum_j xi_ij(|x_j - x_i|) w_j (x_j - x_i).
template <typename Scalar>
Opinions<Scalar> vector_field(const SystemState<Scalar>& state, const KernelMatrix<Scalar>& kernels) {
    const Index n = state.n();
    const auto& x = state.opinions;
    const auto& w = state.weights;
    Opinions<Scalar> f = Opinions<Scalar>::Zero(n, state.d());
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) {
            const auto diff = (x.row(j) - x.row(i)).eval();
            const Scalar xi = kernels(i, j)(diff.norm());
            if (xi == Scalar(0)) continue;
            f.row(i) += (xi * w[j]) * diff;
            f.row(j) -= (xi * w[i]) * diff;
        }
    return f;
}

/// Smooth field f^G: only edges of `graph` interact, through the C^1 extension of each kernel.
template <typename Scalar>
Opinions<Scalar> graph_field(const Opinions<Scalar>& x, const Weights<Scalar>& w, const KernelMatrix<Scalar>& kernels,
                             const InteractionGraph& graph) {
    Opinions<Scalar> f = Opinions<Scalar>::Zero(x.rows(), x.cols());
    const Index d = x.cols();
    for (const auto& [i, j] : graph.edges()) {
        const auto& k = kernels(i, j);
        const Scalar xi = k.family() == KernelFamily::Indicator ? Scalar(1) : k.extended(pair_distance(x, i, j));
        const Scalar ci = xi * w[j], cj = xi * w[i];
        for (Index c = 0; c < d; ++c) {
            const Scalar diff = x(j, c) - x(i, c);
            f(i, c) += ci * diff;
            f(j, c) -= cj * diff;
        }
    }
    return f;
}

template <typename Scalar>
Opinions<Scalar> graph_field(const SystemState<Scalar>& state, const KernelMatrix<Scalar>& kernels,
                             const InteractionGraph& graph) {
    return graph_field(state.opinions, state.weights, kernels, graph);
}

/// Graph of pairs strictly inside their support (d_ij < q_ij). Pairs exactly on
/// the surface are left out, matching the half-open support of the kernels.
template <typename Scalar>
InteractionGraph strict_graph(const Opinions<Scalar>& x, const KernelMatrix<Scalar>& kernels) {
    const Index n = x.rows();
    InteractionGraph g(n);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j)
            if (pair_distance(x, i, j) < kernels(i, j).q()) g.add(i, j);
    return g;
}

/// The graphs whose fields span the Filippov set at `state`.
///
/// Pairs within `tol` of their threshold appear both with and without their
/// edge; the result has 2^(#ambiguous pairs) members, edge-absent variant first.
template <typename Scalar>
std::vector<InteractionGraph> active_graph_set(const SystemState<Scalar>& state, const KernelMatrix<Scalar>& kernels,
                                               Scalar tol = Scalar(1e-9)) {
    if (tol < Scalar(0)) throw InvalidArgument("active_graph_set: tolerance must be nonnegative");
    const Index n = state.n();
    InteractionGraph base(n);
    std::vector<AgentPair> ambiguous;
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) {
            const Scalar gap = pair_distance(state.opinions, i, j) - kernels(i, j).q();
            using std::abs;
            if (abs(gap) <= tol)
                ambiguous.emplace_back(i, j);
            else if (gap < Scalar(0))
                base.add(i, j);
        }
    constexpr std::size_t kMaxAmbiguous = 30;
    if (ambiguous.size() > kMaxAmbiguous)
        throw InvalidArgument("active_graph_set: " + std::to_string(ambiguous.size()) +
                              " pairs lie on switching surfaces (limit " + std::to_string(kMaxAmbiguous) +
                              "); the Filippov hull is too large to enumerate");
    const std::size_t count = std::size_t{1} << ambiguous.size();
    std::vector<InteractionGraph> out;
    out.reserve(count);
    for (std::size_t mask = 0; mask < count; ++mask) {
        InteractionGraph g = base;
        for (std::size_t b = 0; b < ambiguous.size(); ++b)
            if (mask & (std::size_t{1} << b)) g.add(ambiguous[b].first, ambiguous[b].second);
        out.push_back(std::move(g));
    }
    return out;
}

} // namespace hkflow
