#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hkflow/error.hpp"

namespace hkflow {

enum class KernelFamily {
    Indicator,     ///< 1 on [0,q), 0 beyond
    Tent,          ///< max(0, 1 - r/q)
    SmoothBump,    ///< (1 - (r/q)^2)^2 on [0,q)
    PiecewisePoly, ///< sum_k c_k (r/q)^k on [0,q)
};

inline std::string_view to_string(KernelFamily f) {
    switch (f) {
    case KernelFamily::Indicator: return "indicator";
    case KernelFamily::Tent: return "tent";
    case KernelFamily::SmoothBump: return "smooth_bump";
    case KernelFamily::PiecewisePoly: return "piecewise_poly";
    }
    return "unknown";
}

inline KernelFamily kernel_family_from_string(std::string_view s) {
    if (s == "indicator") return KernelFamily::Indicator;
    if (s == "tent") return KernelFamily::Tent;
    if (s == "smooth_bump") return KernelFamily::SmoothBump;
    if (s == "piecewise_poly") return KernelFamily::PiecewisePoly;
    throw InvalidArgument("unknown kernel family '" + std::string(s) + "'");
}

/// Interaction function with compact support [0, q).
///
/// Every family is nonnegative, vanishes for r >= q and is strictly positive on
/// [0, q). `extended()` is the C^1 continuation used inside graph-restricted
/// fields: it agrees with the kernel on [0, q) and takes the left limit at q.
template <typename Scalar>
class KernelSpec {
public:
    KernelSpec() = default;

    static KernelSpec indicator(Scalar q) { return KernelSpec(KernelFamily::Indicator, q, {}); }
    static KernelSpec tent(Scalar q) { return KernelSpec(KernelFamily::Tent, q, {}); }
    static KernelSpec smooth_bump(Scalar q) { return KernelSpec(KernelFamily::SmoothBump, q, {}); }

    /// Polynomial in s = r/q. Positivity on [0, 1) is checked on a fine grid.
    static KernelSpec piecewise_poly(Scalar q, std::vector<Scalar> coeffs) {
        if (coeffs.empty()) throw InvalidArgument("piecewise_poly kernel needs at least one coefficient");
        KernelSpec k(KernelFamily::PiecewisePoly, q, std::move(coeffs));
        constexpr int kGrid = 2048;
        for (int i = 0; i < kGrid; ++i) {
            const Scalar s = Scalar(i) / Scalar(kGrid);
            if (!(k.poly(s) > Scalar(0)))
                throw InvalidArgument("piecewise_poly kernel must be strictly positive on [0, q)");
        }
        if (k.poly(Scalar(1)) < Scalar(0))
            throw InvalidArgument("piecewise_poly kernel must have a nonnegative left limit at q");
        return k;
    }

    KernelFamily family() const noexcept { return family_; }
    Scalar q() const noexcept { return q_; }
    const std::vector<Scalar>& coeffs() const noexcept { return coeffs_; }

    Scalar operator()(Scalar r) const {
        if (!(r < q_)) return Scalar(0);
        return extended(r);
    }

    /// Nonnegative continuation past q: value v and slope m at q- are continued
    /// linearly when m >= 0, by v (1 - u/2)^2 with u = |m| (s - 1) / v (clamped at
    /// u = 2) when v > 0 > m, and by 0 when v = 0. Only the last case with m < 0
    /// (the tent) loses C^1 at q; no nonnegative C^1 continuation exists there.
    Scalar extended(Scalar r) const {
        const Scalar s = r / q_;
        if (s > Scalar(1)) {
            const Scalar v = closed_form(Scalar(1)), m = slope_at_bound();
            if (m >= Scalar(0)) return v + m * (s - Scalar(1));
            if (!(v > Scalar(0))) return Scalar(0);
            const Scalar u = -m * (s - Scalar(1)) / v;
            if (u >= Scalar(2)) return Scalar(0);
            const Scalar h = Scalar(1) - u / Scalar(2);
            return v * h * h;
        }
        return closed_form(s);
    }

    /// lim_{r -> q-} xi(r).
    Scalar left_limit() const { return closed_form(Scalar(1)); }

    /// True when the kernel is discontinuous at q, i.e. the field jumps across the surface.
    bool has_jump() const { return left_limit() > Scalar(0); }

    template <typename To>
    KernelSpec<To> cast() const {
        std::vector<To> c(coeffs_.begin(), coeffs_.end());
        KernelSpec<To> out;
        out = KernelSpec<To>::from_parts(family_, To(q_), std::move(c));
        return out;
    }

    static KernelSpec from_parts(KernelFamily family, Scalar q, std::vector<Scalar> coeffs) {
        if (family == KernelFamily::PiecewisePoly) return piecewise_poly(q, std::move(coeffs));
        return KernelSpec(family, q, {});
    }

    friend bool operator==(const KernelSpec& a, const KernelSpec& b) {
        return a.family_ == b.family_ && a.q_ == b.q_ && a.coeffs_ == b.coeffs_;
    }

private:
    KernelSpec(KernelFamily family, Scalar q, std::vector<Scalar> coeffs)
        : family_(family), q_(q), coeffs_(std::move(coeffs)) {
        using std::isfinite;
        if (!(q > Scalar(0)) || !isfinite(q)) throw InvalidArgument("kernel support bound q must be positive and finite");
    }

    /// d/ds of the closed form at s = 1.
    Scalar slope_at_bound() const {
        switch (family_) {
        case KernelFamily::Indicator: return Scalar(0);
        case KernelFamily::Tent: return Scalar(-1);
        case KernelFamily::SmoothBump: return Scalar(0);
        case KernelFamily::PiecewisePoly: {
            Scalar acc(0);
            for (std::size_t p = 1; p < coeffs_.size(); ++p) acc += Scalar(p) * coeffs_[p];
            return acc;
        }
        }
        return Scalar(0);
    }

    Scalar closed_form(Scalar s) const {
        switch (family_) {
        case KernelFamily::Indicator: return Scalar(1);
        case KernelFamily::Tent: return Scalar(1) - s;
        case KernelFamily::SmoothBump: {
            const Scalar u = Scalar(1) - s * s;
            return u * u;
        }
        case KernelFamily::PiecewisePoly: return poly(s);
        }
        return Scalar(0);
    }

    Scalar poly(Scalar s) const {
        Scalar acc(0);
        for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) acc = acc * s + *it;
        return acc;
    }

    KernelFamily family_ = KernelFamily::Indicator;
    Scalar q_ = Scalar(1);
    std::vector<Scalar> coeffs_;
};

template <typename Scalar>
Scalar eval_kernel(const KernelSpec<Scalar>& spec, Scalar r) {
    return spec(r);
}

} // namespace hkflow
