#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "hkflow/field.hpp"

namespace hkflow {

class HeterogeneousKernels : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

namespace detail {

class UnionFind {
public:
    explicit UnionFind(Index n) : parent_(static_cast<std::size_t>(n)), rank_(static_cast<std::size_t>(n), 0) {
        std::iota(parent_.begin(), parent_.end(), Index{0});
    }

    Index find(Index x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    void merge(Index a, Index b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (rank_[a] < rank_[b]) std::swap(a, b);
        parent_[b] = a;
        if (rank_[a] == rank_[b]) ++rank_[a];
    }

private:
    std::vector<Index> parent_;
    std::vector<int> rank_;
};

} // namespace detail

/// Disjoint nonempty blocks covering {0..n-1}, kept in canonical order
/// (indices ascending within a block, blocks ordered by their smallest index).
class Partition {
public:
    Partition() = default;
    explicit Partition(std::vector<std::vector<Index>> blocks) : blocks_(std::move(blocks)) {
        canonicalize();
        validate();
    }

    const std::vector<std::vector<Index>>& blocks() const noexcept { return blocks_; }
    std::size_t size() const noexcept { return blocks_.size(); }

    Index universe() const {
        Index total = 0;
        for (const auto& b : blocks_) total += static_cast<Index>(b.size());
        return total;
    }

    /// Block label of every agent.
    std::vector<Index> labels() const {
        std::vector<Index> lab(static_cast<std::size_t>(universe()), -1);
        for (std::size_t b = 0; b < blocks_.size(); ++b)
            for (Index i : blocks_[b]) lab[static_cast<std::size_t>(i)] = static_cast<Index>(b);
        return lab;
    }

    friend bool operator==(const Partition& a, const Partition& b) { return a.blocks_ == b.blocks_; }

private:
    void canonicalize() {
        for (auto& b : blocks_) {
            if (b.empty()) throw InvalidArgument("partition blocks must be nonempty");
            std::sort(b.begin(), b.end());
        }
        std::sort(blocks_.begin(), blocks_.end(),
                  [](const auto& a, const auto& b) { return a.front() < b.front(); });
    }

    void validate() const {
        const Index n = universe();
        std::vector<bool> seen(static_cast<std::size_t>(n), false);
        for (const auto& b : blocks_) {
            if (b.empty()) throw InvalidArgument("partition blocks must be nonempty");
            for (Index i : b) {
                if (i < 0 || i >= n || seen[static_cast<std::size_t>(i)])
                    throw InvalidArgument("partition blocks must be disjoint and cover 0..n-1");
                seen[static_cast<std::size_t>(i)] = true;
            }
        }
    }

    std::vector<std::vector<Index>> blocks_;
};

/// True iff the partitions differ; distinct partitions label separated closed equilibrium sets.
inline bool partitions_separated(const Partition& a, const Partition& b) {
    if (a.universe() != b.universe()) throw InvalidArgument("partitions are over different index sets");
    return !(a == b);
}

template <typename Scalar>
struct ClusterSet {
    Partition partition;
    Opinions<Scalar> centers;     ///< one row per block: weighted mean opinion
    Weights<Scalar> block_weights;
};

enum class EquilibriumVerdict { InteriorF, BoundaryFbarOnly, NotEquilibrium };

inline std::string_view to_string(EquilibriumVerdict v) {
    switch (v) {
    case EquilibriumVerdict::InteriorF: return "interior_F";
    case EquilibriumVerdict::BoundaryFbarOnly: return "boundary_Fbar_only";
    case EquilibriumVerdict::NotEquilibrium: return "not_equilibrium";
    }
    return "unknown";
}

struct EquilibriumClass {
    EquilibriumVerdict verdict = EquilibriumVerdict::NotEquilibrium;
    std::optional<Partition> partition;
};

/// Connected components of the relation d_ij <= eps.
template <typename Scalar>
Partition coincidence_partition(const Opinions<Scalar>& x, Scalar eps) {
    const Index n = x.rows();
    detail::UnionFind uf(n);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j)
            if (pair_distance(x, i, j) <= eps) uf.merge(i, j);
    std::vector<std::vector<Index>> blocks;
    std::vector<Index> slot(static_cast<std::size_t>(n), -1);
    for (Index i = 0; i < n; ++i) {
        const Index root = uf.find(i);
        if (slot[root] < 0) {
            slot[root] = static_cast<Index>(blocks.size());
            blocks.emplace_back();
        }
        blocks[static_cast<std::size_t>(slot[root])].push_back(i);
    }
    return Partition(std::move(blocks));
}

/// Places a state in the taxonomy F (interior), closure of F only, or neither.
template <typename Scalar>
EquilibriumClass classify_state(const SystemState<Scalar>& state, const KernelMatrix<Scalar>& kernels,
                                Scalar eps = Scalar(1e-4)) {
    if (!(eps > Scalar(0))) throw InvalidArgument("classify_state: eps must be positive");
    Partition p = coincidence_partition(state.opinions, eps);
    const auto lab = p.labels();
    bool on_boundary = false;
    const Index n = state.n();
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) {
            if (lab[static_cast<std::size_t>(i)] == lab[static_cast<std::size_t>(j)]) continue;
            const Scalar dij = pair_distance(state.opinions, i, j);
            const Scalar q = kernels(i, j).q();
            if (dij > q + eps) continue;
            if (dij >= q - eps) {
                on_boundary = true;
                continue;
            }
            return {EquilibriumVerdict::NotEquilibrium, std::nullopt};
        }
    return {on_boundary ? EquilibriumVerdict::BoundaryFbarOnly : EquilibriumVerdict::InteriorF, std::move(p)};
}

/// V(x) = sum_i w_i |x_i - x_i*|^2, weights taken from `state`.
template <typename Scalar>
Scalar lyapunov_value(const SystemState<Scalar>& state, const SystemState<Scalar>& reference) {
    if (state.n() != reference.n() || state.d() != reference.d())
        throw InvalidArgument("lyapunov_value: state and reference dimensions differ");
    return (state.opinions - reference.opinions).rowwise().squaredNorm().dot(state.weights);
}

template <typename Scalar>
ClusterSet<Scalar> cluster_set(const SystemState<Scalar>& state, const Partition& p) {
    ClusterSet<Scalar> cs;
    cs.partition = p;
    const auto k = static_cast<Index>(p.size());
    cs.centers = Opinions<Scalar>::Zero(k, state.d());
    cs.block_weights = Weights<Scalar>::Zero(k);
    for (Index b = 0; b < k; ++b) {
        for (Index i : p.blocks()[static_cast<std::size_t>(b)]) {
            cs.centers.row(b) += state.weights[i] * state.opinions.row(i);
            cs.block_weights[b] += state.weights[i];
        }
        cs.centers.row(b) /= cs.block_weights[b];
    }
    return cs;
}

/// Collapses each cluster into one agent carrying the cluster's total weight.
/// Requires an equilibrium (in the closure of F) and a kernel shared by all pairs.
template <typename Scalar>
std::pair<ClusterSet<Scalar>, SystemState<Scalar>> merge_clusters(const SystemState<Scalar>& state,
                                                                  const KernelMatrix<Scalar>& kernels,
                                                                  Scalar eps = Scalar(1e-4)) {
    if (state.n() > 1 && kernels.common() == nullptr)
        throw HeterogeneousKernels("merge_clusters: all pairs must share one interaction function");
    const EquilibriumClass cls = classify_state(state, kernels, eps);
    if (cls.verdict == EquilibriumVerdict::NotEquilibrium)
        throw InvalidArgument("merge_clusters: state is not an equilibrium");
    ClusterSet<Scalar> cs = cluster_set(state, *cls.partition);
    SystemState<Scalar> reduced(cs.centers, cs.block_weights, state.time);
    return {std::move(cs), std::move(reduced)};
}

} // namespace hkflow
