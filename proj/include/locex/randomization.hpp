#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "locex/numeric.hpp"
#include "locex/premetric.hpp"
#include "locex/rng.hpp"

namespace locex {

/// S : X^T -> R, evaluated on values in index order.
template <typename V>
using Statistic = std::function<double(std::span<const V>)>;

/// Admissibility of merging two blocks (given as index lists).
using BlockConstraint = std::function<bool(std::span<const std::size_t>, std::span<const std::size_t>)>;

inline BlockConstraint unconstrained() {
    return [](std::span<const std::size_t>, std::span<const std::size_t>) { return true; };
}

inline BlockConstraint max_block_size(std::size_t limit) {
    return [limit](std::span<const std::size_t> a, std::span<const std::size_t> b) { return a.size() + b.size() <= limit; };
}

/// At most one treated and at most one control index per block.
inline BlockConstraint matched_pairs(std::vector<bool> treated) {
    return [treated = std::move(treated)](std::span<const std::size_t> a, std::span<const std::size_t> b) {
        std::size_t t = 0;
        std::size_t c = 0;
        for (auto block : {a, b}) {
            for (auto i : block) (treated.at(i) ? t : c) += 1;
        }
        return t <= 1 && c <= 1;
    };
}

// ---------------------------------------------------------------------------
// Closed forms over within-block permutation groups

/// Group average of sum_t d(t, pi(t)): sum_k |T_k|^-1 sum_{t,t' in T_k} d(t,t').
template <Premetric P>
double penalty(const BlockPartition& partition, const P& d, std::span<const Covariate> covariates) {
    if (partition.size() != covariates.size()) throw std::invalid_argument("penalty: partition does not match covariates");
    CompensatedSum total;
    for (const auto& block : partition.blocks()) {
        CompensatedSum within;
        for (std::size_t i = 0; i < block.size(); ++i) {
            for (std::size_t j = i + 1; j < block.size(); ++j) {
                within += 2.0 * d.distance(covariates[block[i]], covariates[block[j]]);
            }
        }
        total += within.value() / static_cast<double>(block.size());
    }
    return total.value();
}

namespace detail {
/// Largest sum_i w[i][sigma(i)] over permutations sigma of a k x k matrix
/// (Hungarian method on -w, O(k^3)).
inline double max_assignment(const std::vector<double>& w, std::size_t k) {
    if (k == 0) return 0.0;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(k + 1, 0.0), v(k + 1, 0.0);
    std::vector<std::size_t> p(k + 1, 0), way(k + 1, 0);
    for (std::size_t i = 1; i <= k; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(k + 1, inf);
        std::vector<char> used(k + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= k; ++j) {
                if (used[j]) continue;
                const double cur = -w[(i0 - 1) * k + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= k; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    CompensatedSum total;
    for (std::size_t j = 1; j <= k; ++j) total += w[(p[j] - 1) * k + (j - 1)];
    return total.value();
}
}  // namespace detail

/// sum_k sum_{t in T_k} max_{t' in T_k} d(t, t'). Equals max_pi sum_t d(t, pi(t))
/// when every block has at most two points, and bounds it from above otherwise.
template <Premetric P>
double farthest_point_bound(const BlockPartition& partition, const P& d, std::span<const Covariate> covariates) {
    if (partition.size() != covariates.size()) throw std::invalid_argument("group_max: partition does not match covariates");
    CompensatedSum total;
    for (const auto& block : partition.blocks()) {
        for (auto t : block) {
            double worst = 0.0;
            for (auto u : block) worst = std::max(worst, d.distance(covariates[t], covariates[u]));
            total += worst;
        }
    }
    return total.value();
}

/// M = 1 v max_pi sum_t d(t, pi(t)), the maximum taken block by block as an
/// assignment problem. Short-circuits to 1 when the farthest-point bound is <= 1.
template <Premetric P>
double group_max(const BlockPartition& partition, const P& d, std::span<const Covariate> covariates) {
    if (farthest_point_bound(partition, d, covariates) <= 1.0) return 1.0;
    CompensatedSum total;
    std::vector<double> w;
    for (const auto& block : partition.blocks()) {
        const std::size_t k = block.size();
        if (k == 1) continue;
        if (k == 2) {
            total += 2.0 * d.distance(covariates[block[0]], covariates[block[1]]);
            continue;
        }
        w.assign(k * k, 0.0);
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                if (i != j) w[i * k + j] = d.distance(covariates[block[i]], covariates[block[j]]);
            }
        }
        total += detail::max_assignment(w, k);
    }
    return std::max(1.0, total.value());
}

/// Greedy agglomeration from singletons. Each step merges the admissible pair
/// of blocks whose merged partition has the smallest penalty, ties going to
/// the lexicographically smallest (block, block) pair; stops once that
/// penalty would exceed alpha / 2 or nothing admissible remains.
///
/// Memory is O(n); cross-block distance sums are recomputed from the
/// premetric when a block changes.
template <Premetric P>
BlockPartition build_partition(std::span<const Covariate> covariates, const P& d, double alpha,
                               const BlockConstraint& constraint = unconstrained()) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("build_partition: alpha must lie in (0, 1)");
    const std::size_t n = covariates.size();
    if (n == 0) return BlockPartition({}, 0);
    const double budget = alpha / 2.0;

    // Blocks are addressed by a stable id (the smallest original position);
    // merging b into a keeps a, so id order equals current block order.
    std::vector<std::vector<std::size_t>> members(n);
    std::vector<double> within(n, 0.0);  // ordered-pair distance sum
    std::vector<char> alive(n, 1);
    for (std::size_t i = 0; i < n; ++i) members[i] = {i};

    const auto cross = [&](std::size_t a, std::size_t b) {
        double s = 0.0;
        for (auto i : members[a]) {
            for (auto j : members[b]) s += d.distance(covariates[i], covariates[j]);
        }
        return s;
    };
    const auto share = [&](std::size_t k) { return within[k] / static_cast<double>(members[k].size()); };

    struct Candidate {
        double delta = std::numeric_limits<double>::infinity();
        std::size_t lo = std::numeric_limits<std::size_t>::max();
        std::size_t hi = std::numeric_limits<std::size_t>::max();
        [[nodiscard]] bool valid() const { return std::isfinite(delta); }
        [[nodiscard]] bool before(const Candidate& o) const {
            return std::tie(delta, lo, hi) < std::tie(o.delta, o.lo, o.hi);
        }
    };
    const auto candidate = [&](std::size_t a, std::size_t b) {
        Candidate c;
        c.lo = std::min(a, b);
        c.hi = std::max(a, b);
        if (!constraint(members[c.lo], members[c.hi])) return Candidate{};
        const double merged_within = within[a] + within[b] + 2.0 * cross(a, b);
        const double size = static_cast<double>(members[a].size() + members[b].size());
        c.delta = merged_within / size - share(a) - share(b);
        return c;
    };

    std::vector<Candidate> best(n);
    const auto refresh = [&](std::size_t k) {
        best[k] = Candidate{};
        for (std::size_t x = 0; x < n; ++x) {
            if (x == k || !alive[x]) continue;
            auto c = candidate(k, x);
            if (c.valid() && c.before(best[k])) best[k] = c;
        }
    };
    for (std::size_t k = 0; k < n; ++k) refresh(k);

    std::size_t live = n;
    while (live > 1) {
        Candidate top;
        for (std::size_t k = 0; k < n; ++k) {
            if (alive[k] && best[k].valid() && best[k].before(top)) top = best[k];
        }
        if (!top.valid()) break;
        const std::size_t a = top.lo;
        const std::size_t b = top.hi;
        const double merged_within = within[a] + within[b] + 2.0 * cross(a, b);
        const double merged_size = static_cast<double>(members[a].size() + members[b].size());
        // Penalty of the candidate partition, recomputed in full.
        CompensatedSum j_value;
        for (std::size_t k = 0; k < n; ++k) {
            if (alive[k] && k != a && k != b) j_value += share(k);
        }
        j_value += merged_within / merged_size;
        if (j_value.value() > budget) break;

        within[a] = merged_within;
        members[a].insert(members[a].end(), members[b].begin(), members[b].end());
        std::sort(members[a].begin(), members[a].end());
        members[b].clear();
        alive[b] = 0;
        --live;

        refresh(a);
        for (std::size_t k = 0; k < n; ++k) {
            if (!alive[k] || k == a) continue;
            if (best[k].lo == a || best[k].hi == a || best[k].lo == b || best[k].hi == b) {
                refresh(k);
            } else {
                auto c = candidate(k, a);
                if (c.valid() && c.before(best[k])) best[k] = c;
            }
        }
    }

    std::vector<std::vector<std::size_t>> blocks;
    for (std::size_t k = 0; k < n; ++k) {
        if (alive[k]) blocks.push_back(std::move(members[k]));
    }
    return BlockPartition(std::move(blocks), n);
}

/// Number of blocks holding exactly two indices.
inline std::size_t pair_count(const BlockPartition& partition) {
    return static_cast<std::size_t>(std::count_if(partition.blocks().begin(), partition.blocks().end(),
                                                  [](const auto& b) { return b.size() == 2; }));
}

// ---------------------------------------------------------------------------
// Permutations

/// A uniform draw from the within-block group: Fisher-Yates inside each
/// block. Returns pi with pi[t] the index whose value lands at t.
inline std::vector<std::size_t> sample_within_bin_permutation(const BlockPartition& partition, Stream& rng) {
    std::vector<std::size_t> pi(partition.size());
    for (std::size_t i = 0; i < pi.size(); ++i) pi[i] = i;
    for (const auto& block : partition.blocks()) {
        std::vector<std::size_t> image(block.begin(), block.end());
        for (std::size_t i = image.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng.below(i));
            std::swap(image[i - 1], image[j]);
        }
        for (std::size_t i = 0; i < block.size(); ++i) pi[block[i]] = image[i];
    }
    return pi;
}

/// (X_{pi,T})_t = X_{pi(t)}.
template <typename V>
void apply_permutation(std::span<const V> values, std::span<const std::size_t> pi, std::vector<V>& out) {
    out.resize(values.size());
    for (std::size_t t = 0; t < values.size(); ++t) out[t] = values[pi[t]];
}

template <Premetric P>
double displacement_cost(std::span<const std::size_t> pi, const P& d, std::span<const Covariate> covariates) {
    double s = 0.0;
    for (std::size_t t = 0; t < pi.size(); ++t) {
        if (pi[t] != t) s += d.distance(covariates[t], covariates[pi[t]]);
    }
    return s;
}

/// Calls `visit(pi)` once for every element of the within-block group.
template <typename Visit>
void for_each_within_bin_permutation(const BlockPartition& partition, Visit&& visit) {
    const auto& blocks = partition.blocks();
    std::vector<std::vector<std::size_t>> image(blocks.size());
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        image[k] = blocks[k];
        std::sort(image[k].begin(), image[k].end());
    }
    std::vector<std::size_t> pi(partition.size());
    for (std::size_t i = 0; i < pi.size(); ++i) pi[i] = i;
    std::vector<std::vector<std::size_t>> sorted_blocks = image;
    while (true) {
        for (std::size_t k = 0; k < blocks.size(); ++k) {
            for (std::size_t i = 0; i < image[k].size(); ++i) pi[sorted_blocks[k][i]] = image[k][i];
        }
        visit(std::span<const std::size_t>(pi));
        std::size_t k = 0;
        for (; k < blocks.size(); ++k) {
            if (std::next_permutation(image[k].begin(), image[k].end())) break;
        }
        if (k == blocks.size()) return;
    }
}

// ---------------------------------------------------------------------------
// Tests

struct TestResult {
    double statistic = 0.0;
    double frac_exceed = 0.0;
    double penalty = 0.0;
    double threshold = 0.0;
    bool reject = false;
    std::optional<std::uint64_t> n_samples;  // empty for exact enumeration
    std::uint64_t group_size = 0;            // |G| for exact enumeration
    double alpha = 0.0;
    std::optional<double> alpha_n;
    double group_max = 1.0;
    std::uint64_t seed = 0;
};

class EnumerationBudgetExceeded : public std::length_error {
public:
    explicit EnumerationBudgetExceeded(std::uint64_t budget)
        : std::length_error("exact_test: group order exceeds the enumeration budget of " + std::to_string(budget) +
                            " permutations; use the subsampled test") {}
};

class InsufficientSamples : public std::invalid_argument {
public:
    explicit InsufficientSamples(std::uint64_t required)
        : std::invalid_argument("subsampled_test: alpha_N is not positive for this N; at least " +
                                std::to_string(required) + " permutations are required"),
          required_(required) {}
    [[nodiscard]] std::uint64_t required() const noexcept { return required_; }

private:
    std::uint64_t required_;
};

inline constexpr std::uint64_t kDefaultEnumerationBudget = 1'000'000;

/// Rejects iff |G|^-1 sum_pi 1[S(X) > S(X_pi)] - penalty > 1 - alpha.
template <typename V, Premetric P>
TestResult exact_test(std::span<const V> values, std::span<const Covariate> covariates, const BlockPartition& partition,
                      const P& d, const Statistic<V>& stat, double alpha,
                      std::uint64_t budget = kDefaultEnumerationBudget) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("exact_test: alpha must lie in [0, 1]");
    if (values.size() != covariates.size() || partition.size() != values.size()) {
        throw std::invalid_argument("exact_test: data, covariates and partition sizes differ");
    }
    const auto order = partition.group_order(budget);
    if (order > budget) throw EnumerationBudgetExceeded(budget);

    TestResult r;
    r.alpha = alpha;
    r.statistic = stat(values);
    r.penalty = penalty(partition, d, covariates);
    r.group_max = group_max(partition, d, covariates);
    r.group_size = order;
    r.threshold = 1.0 - alpha;
    std::uint64_t exceed = 0;
    std::vector<V> permuted;
    for_each_within_bin_permutation(partition, [&](std::span<const std::size_t> pi) {
        apply_permutation(values, pi, permuted);
        if (r.statistic > stat(std::span<const V>(permuted))) ++exceed;
    });
    r.frac_exceed = static_cast<double>(exceed) / static_cast<double>(order);
    r.reject = r.frac_exceed - r.penalty > r.threshold;
    return r;
}

/// alpha_N = alpha - 2 sqrt(|log(2N/M^2)| / (2N/M^2)). May be <= 0.
inline double alpha_n(double alpha, double M, std::uint64_t N) {
    const double x = 2.0 * static_cast<double>(N) / (M * M);
    return alpha - 2.0 * std::sqrt(std::abs(std::log(x)) / x);
}

/// The Monte Carlo correction is only a valid bound where |log x| is large
/// enough to absorb the exp(-2N eps^2 / M^2) term; we require x = 2N/M^2 >= e,
/// where the correction is also monotone decreasing in N.
inline bool alpha_n_valid(double alpha, double M, std::uint64_t N) {
    const double x = 2.0 * static_cast<double>(N) / (M * M);
    return x >= std::numbers::e && alpha_n(alpha, M, N) > 0.0;
}

/// Smallest N with 2N/M^2 >= e and alpha_N > 0.
inline std::uint64_t required_samples(double alpha, double M) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("required_samples: alpha must lie in (0, 1)");
    if (!(M >= 1.0) || !std::isfinite(M)) throw std::invalid_argument("required_samples: M must be finite and >= 1");
    auto lo = static_cast<std::uint64_t>(std::ceil(std::numbers::e * M * M / 2.0));
    while (2.0 * static_cast<double>(lo) / (M * M) < std::numbers::e) ++lo;
    if (alpha_n(alpha, M, lo) > 0.0) return lo;
    std::uint64_t hi = lo;
    while (!(alpha_n(alpha, M, hi) > 0.0)) {
        lo = hi;
        if (hi > (std::numeric_limits<std::uint64_t>::max() >> 2)) throw std::overflow_error("required_samples: overflow");
        hi *= 2;
    }
    // alpha_n(lo) <= 0 < alpha_n(hi)
    while (hi - lo > 1) {
        const auto mid = lo + (hi - lo) / 2;
        if (alpha_n(alpha, M, mid) > 0.0) hi = mid;
        else lo = mid;
    }
    return hi;
}

struct SubsampleOptions {
    std::size_t threads = 1;
    std::size_t chunk = 1024;
};

/// Rejects iff N^-1 sum_n (1[S(X) > S(X_{pi_n})] - sum_t d(t, pi_n(t))) > 1 - alpha_N.
///
/// Draw n uses the sub-stream Stream(seed).split("permutations").split(n).
/// Draws are reduced in fixed-size chunks combined in chunk order, so the
/// result is bit-identical for any thread count.
template <typename V, Premetric P>
TestResult subsampled_test(std::span<const V> values, std::span<const Covariate> covariates,
                           const BlockPartition& partition, const P& d, const Statistic<V>& stat, double alpha,
                           std::uint64_t N, std::uint64_t seed, SubsampleOptions options = {}) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("subsampled_test: alpha must lie in (0, 1)");
    if (values.size() != covariates.size() || partition.size() != values.size()) {
        throw std::invalid_argument("subsampled_test: data, covariates and partition sizes differ");
    }
    TestResult r;
    r.alpha = alpha;
    r.seed = seed;
    r.n_samples = N;
    r.group_max = group_max(partition, d, covariates);
    if (N == 0 || !alpha_n_valid(alpha, r.group_max, N)) throw InsufficientSamples(required_samples(alpha, r.group_max));
    r.alpha_n = alpha_n(alpha, r.group_max, N);
    r.threshold = 1.0 - *r.alpha_n;
    r.statistic = stat(values);

    const Stream root = Stream(seed).split("permutations");
    const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
    const std::size_t n_chunks = static_cast<std::size_t>((N + chunk - 1) / chunk);
    std::vector<std::uint64_t> exceed(n_chunks, 0);
    std::vector<CompensatedSum> cost(n_chunks);

    const auto run_chunk = [&](std::size_t c) {
        std::vector<V> permuted;
        const std::uint64_t begin = static_cast<std::uint64_t>(c) * chunk;
        const std::uint64_t end = std::min<std::uint64_t>(N, begin + chunk);
        for (std::uint64_t i = begin; i < end; ++i) {
            Stream rng = root.split(i);
            const auto pi = sample_within_bin_permutation(partition, rng);
            apply_permutation(values, std::span<const std::size_t>(pi), permuted);
            if (r.statistic > stat(std::span<const V>(permuted))) ++exceed[c];
            cost[c] += displacement_cost(std::span<const std::size_t>(pi), d, covariates);
        }
    };

    const std::size_t threads = std::min(options.threads == 0 ? std::size_t{1} : options.threads, n_chunks);
    if (threads <= 1) {
        for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t c = next++; c < n_chunks; c = next++) run_chunk(c);
            });
        }
    }

    std::uint64_t total_exceed = 0;
    CompensatedSum total_cost;
    for (std::size_t c = 0; c < n_chunks; ++c) {
        total_exceed += exceed[c];
        total_cost.merge(cost[c]);
    }
    const double draws = static_cast<double>(N);
    r.frac_exceed = static_cast<double>(total_exceed) / draws;
    r.penalty = total_cost.value() / draws;
    r.reject = r.frac_exceed - r.penalty > r.threshold;
    return r;
}

/// #(outcome & treated)/#treated - #(outcome & control)/#control.
inline double diff_conditional_proportions(std::span<const bool> treated, std::span<const bool> outcome) {
    if (treated.size() != outcome.size()) throw std::invalid_argument("diff_conditional_proportions: length mismatch");
    std::size_t nt = 0, nc = 0, st = 0, sc = 0;
    for (std::size_t i = 0; i < treated.size(); ++i) {
        if (treated[i]) {
            ++nt;
            st += outcome[i] ? 1 : 0;
        } else {
            ++nc;
            sc += outcome[i] ? 1 : 0;
        }
    }
    if (nt == 0 || nc == 0) throw std::invalid_argument("diff_conditional_proportions: both groups must be nonempty");
    return static_cast<double>(st) / static_cast<double>(nt) - static_cast<double>(sc) / static_cast<double>(nc);
}

/// Built-in statistic: group flags stay attached to indices, the outcome is
/// read from the (possibly permuted) observation values.
template <typename V, typename Outcome>
Statistic<V> difference_in_proportions(std::vector<bool> treated, Outcome outcome) {
    std::size_t nt = 0;
    for (bool t : treated) nt += t ? 1 : 0;
    if (nt == 0 || nt == treated.size()) throw std::invalid_argument("difference_in_proportions: both groups must be nonempty");
    return [treated = std::move(treated), outcome = std::move(outcome), nt](std::span<const V> values) {
        if (values.size() != treated.size()) throw std::invalid_argument("difference_in_proportions: length mismatch");
        std::size_t st = 0, sc = 0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (outcome(values[i])) (treated[i] ? st : sc) += 1;
        }
        const auto nc = treated.size() - nt;
        return static_cast<double>(st) / static_cast<double>(nt) - static_cast<double>(sc) / static_cast<double>(nc);
    };
}

}  // namespace locex
