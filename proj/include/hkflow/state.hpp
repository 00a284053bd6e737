#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hkflow/error.hpp"
#include "hkflow/kernel.hpp"

namespace hkflow {

using Index = Eigen::Index;

template <typename Scalar>
using Opinions = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Weights = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Point = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// n opinions in R^d (row i is agent i), their weights and the current time.
template <typename Scalar>
struct SystemState {
    Opinions<Scalar> opinions;
    Weights<Scalar> weights;
    Scalar time = Scalar(0);

    SystemState() = default;
    SystemState(Opinions<Scalar> x, Weights<Scalar> w, Scalar t = Scalar(0))
        : opinions(std::move(x)), weights(std::move(w)), time(t) {
        validate();
    }

    static SystemState equal_weights(Opinions<Scalar> x, Scalar t = Scalar(0)) {
        Weights<Scalar> w = Weights<Scalar>::Ones(x.rows());
        return SystemState(std::move(x), std::move(w), t);
    }

    Index n() const noexcept { return opinions.rows(); }
    Index d() const noexcept { return opinions.cols(); }

    void validate() const {
        if (weights.size() != opinions.rows())
            throw InvalidArgument("state has " + std::to_string(opinions.rows()) + " opinions but " +
                                  std::to_string(weights.size()) + " weights");
        if (opinions.rows() > 0 && opinions.cols() < 1) throw InvalidArgument("opinion dimension must be >= 1");
        for (Index i = 0; i < weights.size(); ++i)
            if (!(weights[i] > Scalar(0)) || !std::isfinite(double(weights[i])))
                throw InvalidArgument("weight " + std::to_string(i) + " is not strictly positive");
        if (!opinions.allFinite()) throw InvalidArgument("opinions must be finite");
        if (!(time >= Scalar(0))) throw InvalidArgument("state time must be nonnegative");
    }

    template <typename To>
    SystemState<To> cast() const {
        SystemState<To> out;
        out.opinions = opinions.template cast<To>();
        out.weights = weights.template cast<To>();
        out.time = To(time);
        return out;
    }
};

/// Symmetric table of interaction functions over agent pairs.
///
/// Entries live in a small palette; the packed upper triangle stores palette
/// indices, so (i,j) and (j,i) resolve to the same object.
template <typename Scalar>
class KernelMatrix {
public:
    KernelMatrix() = default;

    static KernelMatrix uniform(Index n, KernelSpec<Scalar> spec) {
        KernelMatrix m;
        m.n_ = n;
        m.palette_.push_back(std::move(spec));
        m.index_.assign(packed_size(n), 0);
        return m;
    }

    /// Builds the matrix from `pick(i, j)` evaluated for i < j.
    static KernelMatrix from_function(Index n, const std::function<KernelSpec<Scalar>(Index, Index)>& pick) {
        KernelMatrix m;
        m.n_ = n;
        m.index_.resize(packed_size(n));
        for (Index i = 0; i < n; ++i)
            for (Index j = i + 1; j < n; ++j) {
                KernelSpec<Scalar> k = pick(i, j);
                auto it = std::find(m.palette_.begin(), m.palette_.end(), k);
                std::uint32_t idx;
                if (it == m.palette_.end()) {
                    idx = static_cast<std::uint32_t>(m.palette_.size());
                    m.palette_.push_back(std::move(k));
                } else {
                    idx = static_cast<std::uint32_t>(it - m.palette_.begin());
                }
                m.index_[m.slot(i, j)] = idx;
            }
        if (m.palette_.empty()) m.palette_.push_back(KernelSpec<Scalar>::indicator(Scalar(1)));
        return m;
    }

    Index n() const noexcept { return n_; }

    const KernelSpec<Scalar>& operator()(Index i, Index j) const {
        if (i == j) throw InvalidArgument("kernel matrix diagonal is unused");
        return palette_[index_[i < j ? slot(i, j) : slot(j, i)]];
    }

    const std::vector<KernelSpec<Scalar>>& palette() const noexcept { return palette_; }

    bool all_of_family(KernelFamily f) const {
        return std::all_of(palette_.begin(), palette_.end(), [f](const auto& k) { return k.family() == f; });
    }

    bool any_jump() const {
        return std::any_of(palette_.begin(), palette_.end(), [](const auto& k) { return k.has_jump(); });
    }

    /// The shared kernel when every pair uses the same one.
    const KernelSpec<Scalar>* common() const noexcept { return palette_.size() == 1 ? &palette_.front() : nullptr; }

    Scalar max_q() const {
        Scalar q(0);
        for (const auto& k : palette_) q = std::max(q, k.q());
        return q;
    }

    template <typename To>
    KernelMatrix<To> cast() const {
        return KernelMatrix<To>::from_function(n_, [this](Index i, Index j) { return (*this)(i, j).template cast<To>(); });
    }

private:
    static std::size_t packed_size(Index n) { return n < 2 ? 0 : static_cast<std::size_t>(n * (n - 1) / 2); }
    std::size_t slot(Index i, Index j) const {
        // row-major packed upper triangle, i < j
        return static_cast<std::size_t>(i * (2 * n_ - i - 1) / 2 + (j - i - 1));
    }

    Index n_ = 0;
    std::vector<KernelSpec<Scalar>> palette_;
    std::vector<std::uint32_t> index_;
};

using AgentPair = std::pair<Index, Index>;

/// Undirected simple graph on agents {0..n-1}. Edge insertion and removal are O(1).
class InteractionGraph {
public:
    InteractionGraph() = default;
    explicit InteractionGraph(Index n) : n_(n), slot_(static_cast<std::size_t>(n * n), -1) {}

    static InteractionGraph complete(Index n) {
        InteractionGraph g(n);
        for (Index i = 0; i < n; ++i)
            for (Index j = i + 1; j < n; ++j) g.add(i, j);
        return g;
    }

    Index n() const noexcept { return n_; }
    std::size_t size() const noexcept { return edges_.size(); }
    bool empty() const noexcept { return edges_.empty(); }

    bool has(Index i, Index j) const { return i != j && slot_[at(i, j)] >= 0; }

    void add(Index i, Index j) {
        if (i == j) throw InvalidArgument("interaction graph cannot contain self-loops");
        if (i > j) std::swap(i, j);
        if (slot_[at(i, j)] >= 0) return;
        slot_[at(i, j)] = static_cast<std::int32_t>(edges_.size());
        slot_[at(j, i)] = slot_[at(i, j)];
        edges_.emplace_back(i, j);
    }

    void remove(Index i, Index j) {
        if (i > j) std::swap(i, j);
        const std::int32_t s = i == j ? -1 : slot_[at(i, j)];
        if (s < 0) return;
        const AgentPair last = edges_.back();
        edges_[static_cast<std::size_t>(s)] = last;
        slot_[at(last.first, last.second)] = s;
        slot_[at(last.second, last.first)] = s;
        edges_.pop_back();
        slot_[at(i, j)] = -1;
        slot_[at(j, i)] = -1;
    }

    void set(Index i, Index j, bool present) { present ? add(i, j) : remove(i, j); }

    /// Edges as (i, j) with i < j, in insertion order.
    const std::vector<AgentPair>& edges() const noexcept { return edges_; }

    std::vector<AgentPair> sorted_edges() const {
        auto e = edges_;
        std::sort(e.begin(), e.end());
        return e;
    }

    friend bool operator==(const InteractionGraph& a, const InteractionGraph& b) {
        return a.n_ == b.n_ && a.sorted_edges() == b.sorted_edges();
    }

private:
    std::size_t at(Index i, Index j) const { return static_cast<std::size_t>(i * n_ + j); }

    Index n_ = 0;
    std::vector<std::int32_t> slot_;
    std::vector<AgentPair> edges_;
};

} // namespace hkflow
