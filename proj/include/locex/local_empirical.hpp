#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "locex/numeric.hpp"
#include "locex/premetric.hpp"

namespace locex {

template <typename V>
struct Record {
    Covariate covariate;
    V value;
};

template <typename V>
using ObservationSet = std::vector<Record<V>>;

template <typename V>
std::vector<Covariate> covariates_of(const ObservationSet<V>& data) {
    std::vector<Covariate> out;
    out.reserve(data.size());
    for (const auto& r : data) out.push_back(r.covariate);
    return out;
}

template <typename V>
std::vector<V> values_of(const ObservationSet<V>& data) {
    std::vector<V> out;
    out.reserve(data.size());
    for (const auto& r : data) out.push_back(r.value);
    return out;
}

enum class TestFunctionKind { indicator, general };

/// A bounded test function h : X -> [0, 1].
///
/// The kind selects the bias coefficient: indicators of sets admit
/// b = d(t, tau), arbitrary bounded maps need b = 2 sqrt(d(t, tau)).
template <typename V>
struct TestFunction {
    TestFunctionKind kind = TestFunctionKind::indicator;
    std::function<double(const V&)> fn;

    double operator()(const V& x) const {
        const double v = fn(x);
        if (!(v >= 0.0 && v <= 1.0)) throw std::domain_error("test function value outside [0, 1]");
        return v;
    }

    template <typename Pred>
    static TestFunction indicator(Pred pred) {
        return {TestFunctionKind::indicator, [pred = std::move(pred)](const V& x) { return pred(x) ? 1.0 : 0.0; }};
    }
    template <typename Map>
    static TestFunction general(Map map) {
        return {TestFunctionKind::general, std::function<double(const V&)>(std::move(map))};
    }
    static TestFunction equals(V symbol) {
        return indicator([symbol = std::move(symbol)](const V& x) { return x == symbol; });
    }
    static TestFunction constant(double c) {
        return {TestFunctionKind::indicator, [c](const V&) { return c; }};
    }
};

inline double b_coefficient(TestFunctionKind kind, double distance) {
    if (!(distance >= 0.0 && distance <= 1.0)) throw std::domain_error("b_coefficient: distance must lie in [0, 1]");
    return kind == TestFunctionKind::indicator ? distance : 2.0 * std::sqrt(distance);
}

template <typename V>
double b_coefficient(const TestFunction<V>& h, double distance) {
    return b_coefficient(h.kind, distance);
}

/// Minimizer of (1/4) xi'xi + xi'b over the probability simplex.
struct WeightProfile {
    std::size_t active_count = 0;       // M: number of strictly positive weights
    std::vector<double> weights;        // in the caller's index order
    std::vector<std::size_t> order;     // indices sorted by (b, index) ascending
};

/// Simplex projection of -2b. Sorting dominates: O(n log n).
inline WeightProfile optimal_weights(std::span<const double> b) {
    if (b.empty()) throw std::invalid_argument("optimal_weights: b must be nonempty");
    for (double v : b) {
        if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("optimal_weights: entries must be finite and >= 0");
    }
    const std::size_t n = b.size();
    WeightProfile out;
    out.order.resize(n);
    std::iota(out.order.begin(), out.order.end(), std::size_t{0});
    std::stable_sort(out.order.begin(), out.order.end(), [&](std::size_t i, std::size_t j) { return b[i] < b[j]; });

    // M = max{J : (1 + sum_{i<=J} 2 b_i) / J > 2 b_J}; J = 1 always qualifies.
    CompensatedSum prefix;
    std::size_t active = 1;
    double level_at_active = 1.0 + 2.0 * b[out.order[0]];
    for (std::size_t j = 0; j < n; ++j) {
        prefix += 2.0 * b[out.order[j]];
        const double level = (1.0 + prefix.value()) / static_cast<double>(j + 1);
        if (level > 2.0 * b[out.order[j]]) {
            active = j + 1;
            level_at_active = level;
        }
    }
    out.active_count = active;
    out.weights.assign(n, 0.0);
    for (std::size_t j = 0; j < active; ++j) {
        const std::size_t idx = out.order[j];
        out.weights[idx] = level_at_active - 2.0 * b[idx];
    }
    return out;
}

/// Weighted atoms at a query covariate.
template <typename V>
struct LocalEmpiricalMeasure {
    Covariate query;
    struct Atom {
        double weight;
        V value;
        std::size_t index;  // position in the source observation set
    };
    std::vector<Atom> atoms;  // nonzero weights only, in sorted-b order
    std::size_t active_count = 0;
    std::vector<double> weights;       // all weights, source order
    std::vector<double> coefficients;  // b_t, source order
};

template <typename V, Premetric P>
std::vector<double> bias_coefficients(const ObservationSet<V>& data, const Covariate& query, const P& d,
                                      TestFunctionKind kind) {
    std::vector<double> b;
    b.reserve(data.size());
    for (const auto& r : data) b.push_back(b_coefficient(kind, d.distance(r.covariate, query)));
    return b;
}

template <typename V, Premetric P>
LocalEmpiricalMeasure<V> local_empirical_measure(const ObservationSet<V>& data, const Covariate& query, const P& d,
                                                 TestFunctionKind kind) {
    if (data.empty()) throw std::invalid_argument("local_empirical_measure: data must be nonempty");
    LocalEmpiricalMeasure<V> m;
    m.query = query;
    m.coefficients = bias_coefficients(data, query, d, kind);
    auto profile = optimal_weights(m.coefficients);
    m.active_count = profile.active_count;
    m.atoms.reserve(profile.active_count);
    for (std::size_t j = 0; j < profile.active_count; ++j) {
        const auto idx = profile.order[j];
        m.atoms.push_back({profile.weights[idx], data[idx].value, idx});
    }
    m.weights = std::move(profile.weights);
    return m;
}

template <typename V, Premetric P>
LocalEmpiricalMeasure<V> local_empirical_measure(const ObservationSet<V>& data, const Covariate& query, const P& d,
                                                 const TestFunction<V>& h) {
    return local_empirical_measure(data, query, d, h.kind);
}

/// Sum of xi_t h(X_t). Also the posterior-predictive surrogate for h at the
/// query; that reading is only justified for queries outside the data's
/// covariates, though the value is the same either way.
template <typename V>
double estimate(const LocalEmpiricalMeasure<V>& m, const TestFunction<V>& h) {
    CompensatedSum s;
    for (const auto& a : m.atoms) s += a.weight * h(a.value);
    return std::clamp(s.value(), 0.0, 1.0);
}

namespace detail {
inline void check_same_length(std::span<const double> xi, std::span<const double> b, const char* what) {
    if (xi.size() != b.size()) throw std::invalid_argument(std::string(what) + ": weights and coefficients differ in length");
}
inline double sum_squares(std::span<const double> xi) {
    CompensatedSum s;
    for (double v : xi) s += v * v;
    return s.value();
}
inline double bias_mass(std::span<const double> xi, std::span<const double> b) {
    CompensatedSum s;
    for (std::size_t i = 0; i < xi.size(); ++i) s += xi[i] * b[i];
    return s.value();
}
}  // namespace detail

/// (1/4) sum xi^2 + sum xi b : expected squared error bound.
inline double squared_error_bound(std::span<const double> xi, std::span<const double> b) {
    detail::check_same_length(xi, b, "squared_error_bound");
    return 0.25 * detail::sum_squares(xi) + detail::bias_mass(xi, b);
}

/// inf over eps in (0, delta) of 2 exp(-2 eps^2 / sum xi^2) + (delta - eps)^-1 sum xi b,
/// clamped to [0, 1]. The infimum is taken over a fixed 101-point grid whose
/// endpoints sit one part in 1e9 inside the interval, then refined by a
/// golden-section search around the best grid point. Every evaluated point
/// is itself a valid bound.
inline double tail_bound(std::span<const double> xi, std::span<const double> b, double delta) {
    detail::check_same_length(xi, b, "tail_bound");
    if (!(delta > 0.0)) throw std::invalid_argument("tail_bound: delta must be > 0");
    const double variance = detail::sum_squares(xi);
    const double bias = detail::bias_mass(xi, b);
    const auto infimand = [&](double eps) {
        const double hoeffding = variance > 0.0 ? 2.0 * std::exp(-2.0 * eps * eps / variance) : 0.0;
        return hoeffding + bias / (delta - eps);
    };
    constexpr int kGrid = 101;
    constexpr double kInset = 1e-9;
    const auto grid = [&](int i) { return delta * (kInset + (1.0 - 2.0 * kInset) * i / (kGrid - 1)); };
    int best_i = 0;
    double best = infimand(grid(0));
    for (int i = 1; i < kGrid; ++i) {
        const double v = infimand(grid(i));
        if (v < best) {
            best = v;
            best_i = i;
        }
    }
    // Golden-section refinement on the bracketing grid cells.
    double lo = grid(std::max(0, best_i - 1));
    double hi = grid(std::min(kGrid - 1, best_i + 1));
    constexpr double kPhi = 0.6180339887498949;
    double x1 = hi - kPhi * (hi - lo);
    double x2 = lo + kPhi * (hi - lo);
    double f1 = infimand(x1);
    double f2 = infimand(x2);
    for (int it = 0; it < 60; ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - kPhi * (hi - lo);
            f1 = infimand(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + kPhi * (hi - lo);
            f2 = infimand(x2);
        }
    }
    best = std::min({best, f1, f2});
    return std::clamp(best, 0.0, 1.0);
}

/// Smallest delta (bisection to 1e-6) with tail_bound <= alpha, or +inf when
/// no delta <= 1 achieves it. The returned delta always satisfies the bound.
inline double confidence_radius(std::span<const double> xi, std::span<const double> b, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("confidence_radius: alpha must lie in (0, 1)");
    detail::check_same_length(xi, b, "confidence_radius");
    double hi = 1.0;
    if (tail_bound(xi, b, hi) > alpha) return std::numeric_limits<double>::infinity();
    double lo = 0.0;
    while (hi - lo > 1e-6) {
        const double mid = 0.5 * (lo + hi);
        if (tail_bound(xi, b, mid) <= alpha) hi = mid;
        else lo = mid;
    }
    return hi;
}

/// Bounds bundled for one query.
struct QueryBounds {
    double squared_error = 0.0;
    double tail = 0.0;
    double radius = 0.0;
};

template <typename V>
QueryBounds bounds_for(const LocalEmpiricalMeasure<V>& m, double delta, double alpha) {
    return {squared_error_bound(m.weights, m.coefficients), tail_bound(m.weights, m.coefficients, delta),
            confidence_radius(m.weights, m.coefficients, alpha)};
}

}  // namespace locex
