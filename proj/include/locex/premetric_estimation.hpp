#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "locex/local_empirical.hpp"
#include "locex/numeric.hpp"
#include "locex/premetric.hpp"

namespace locex {

/// Observation types admissible as a finite alphabet. Floating-point values
/// are rejected: quantize them first.
template <typename V>
concept FiniteSymbol = (std::integral<V> || std::same_as<V, std::string>) && std::totally_ordered<V>;

template <FiniteSymbol V>
struct FiniteAlphabetMeasure {
    std::vector<V> alphabet;  // strictly increasing
    std::vector<double> mass;

    FiniteAlphabetMeasure() = default;
    FiniteAlphabetMeasure(std::vector<V> symbols, std::vector<double> weights)
        : alphabet(std::move(symbols)), mass(std::move(weights)) {
        if (alphabet.size() != mass.size()) throw std::invalid_argument("alphabet measure: size mismatch");
        if (!std::is_sorted(alphabet.begin(), alphabet.end()) ||
            std::adjacent_find(alphabet.begin(), alphabet.end()) != alphabet.end()) {
            throw std::invalid_argument("alphabet measure: symbols must be strictly increasing");
        }
        CompensatedSum total;
        for (double m : mass) {
            if (!(m >= 0.0) || !std::isfinite(m)) throw std::invalid_argument("alphabet measure: negative mass");
            total += m;
        }
        if (std::abs(total.value() - 1.0) > 1e-12) throw std::invalid_argument("alphabet measure: masses must sum to 1");
    }
};

/// Half the L1 distance between two measures on the same alphabet.
template <FiniteSymbol V>
double tv_discrete(const FiniteAlphabetMeasure<V>& a, const FiniteAlphabetMeasure<V>& b) {
    if (a.alphabet != b.alphabet) throw std::invalid_argument("tv_discrete: alphabets differ");
    CompensatedSum s;
    for (std::size_t i = 0; i < a.mass.size(); ++i) s += std::abs(a.mass[i] - b.mass[i]);
    return std::clamp(0.5 * s.value(), 0.0, 1.0);
}

/// Merges atoms with equal symbols onto `alphabet` (which must contain them all).
template <FiniteSymbol V>
FiniteAlphabetMeasure<V> collapse(const LocalEmpiricalMeasure<V>& m, const std::vector<V>& alphabet) {
    std::vector<CompensatedSum> acc(alphabet.size());
    for (const auto& atom : m.atoms) {
        auto it = std::lower_bound(alphabet.begin(), alphabet.end(), atom.value);
        if (it == alphabet.end() || *it != atom.value) throw std::invalid_argument("collapse: symbol outside the alphabet");
        acc[static_cast<std::size_t>(it - alphabet.begin())] += atom.weight;
    }
    FiniteAlphabetMeasure<V> out;
    out.alphabet = alphabet;
    out.mass.reserve(alphabet.size());
    for (const auto& a : acc) out.mass.push_back(a.value());
    return out;
}

template <FiniteSymbol V>
using RealizationBundle = std::vector<ObservationSet<V>>;

template <FiniteSymbol V>
std::vector<V> alphabet_of(const RealizationBundle<V>& bundle) {
    std::vector<V> symbols;
    for (const auto& realization : bundle) {
        for (const auto& r : realization) symbols.push_back(r.value);
    }
    std::sort(symbols.begin(), symbols.end());
    symbols.erase(std::unique(symbols.begin(), symbols.end()), symbols.end());
    return symbols;
}

struct PremetricEstimate {
    double estimate = 0.0;
    std::size_t realizations = 0;
    std::size_t alphabet_size = 0;
    // max over realizations of max{l(T_n, t), l(T_n, t')}, l(T, t) = min_tau l(tau, t).
    // Consistency needs this to vanish as realizations accumulate.
    double max_min_distance = 0.0;
    double standard_error = 0.0;  // sample sd of the per-realization TVs over sqrt(N)
    std::vector<double> per_realization;
};

/// Average over realizations of the TV between the local empirical measures
/// at t and t', each built with bias coefficients b = l(tau, t).
template <FiniteSymbol V, Premetric P>
PremetricEstimate estimate_dsc(const RealizationBundle<V>& bundle, const Covariate& t, const Covariate& t_prime,
                               const P& ell) {
    if (bundle.empty()) throw std::invalid_argument("estimate_dsc: bundle must be nonempty");
    for (const auto& realization : bundle) {
        if (realization.empty()) throw std::invalid_argument("estimate_dsc: every realization must be nonempty");
    }
    const auto alphabet = alphabet_of(bundle);
    PremetricEstimate out;
    out.realizations = bundle.size();
    out.alphabet_size = alphabet.size();
    out.per_realization.reserve(bundle.size());
    CompensatedSum total;
    for (const auto& realization : bundle) {
        const auto m_t = local_empirical_measure(realization, t, ell, TestFunctionKind::indicator);
        const auto m_u = local_empirical_measure(realization, t_prime, ell, TestFunctionKind::indicator);
        const double tv = tv_discrete(collapse(m_t, alphabet), collapse(m_u, alphabet));
        out.per_realization.push_back(tv);
        total += tv;
        double nearest_t = 1.0;
        double nearest_u = 1.0;
        for (std::size_t i = 0; i < realization.size(); ++i) {
            nearest_t = std::min(nearest_t, m_t.coefficients[i]);
            nearest_u = std::min(nearest_u, m_u.coefficients[i]);
        }
        out.max_min_distance = std::max({out.max_min_distance, nearest_t, nearest_u});
    }
    const double n = static_cast<double>(bundle.size());
    out.estimate = std::clamp(total.value() / n, 0.0, 1.0);
    if (bundle.size() > 1) {
        CompensatedSum sq;
        for (double v : out.per_realization) sq += (v - out.estimate) * (v - out.estimate);
        out.standard_error = std::sqrt(sq.value() / (n - 1.0)) / std::sqrt(n);
    }
    return out;
}

}  // namespace locex
