#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "locex/config.hpp"
#include "locex/numeric.hpp"

namespace locex {

class SchemaError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// One observation's index point: categorical labels followed by numeric
/// coordinates, in the column order of the dataset schema. Duplicate
/// covariates are allowed and stand for replicate observations.
struct Covariate {
    std::vector<std::string> categorical;
    std::vector<double> numeric;

    friend bool operator==(const Covariate&, const Covariate&) = default;
};

/// Convenience for the common single-numeric-coordinate case.
inline Covariate at(double t) { return Covariate{{}, {t}}; }

/// Reduction of a value onto [0, period).
inline double reduce_mod(double value, double period) {
    double r = std::fmod(value, period);
    if (r < 0.0) r += period;
    if (r >= period) r = 0.0;
    return r;
}

inline double cyclic_distance(double a, double b, double period) {
    const double delta = reduce_mod(std::abs(a - b), period);
    return std::min(delta, period - delta);
}

template <typename P>
concept Premetric = requires(const P& p, const Covariate& s, const Covariate& t) {
    { p.distance(s, t) } -> std::convertible_to<double>;
};

enum class ColumnKind { categorical, numeric };

struct ColumnTerm {
    std::string column;
    ColumnKind kind = ColumnKind::numeric;
    double weight = 0.0;
    // Categorical only: any mismatch forces distance 1.
    bool hard = false;
    // Numeric only: cyclic coordinate with this period.
    std::optional<double> period;

    friend bool operator==(const ColumnTerm&, const ColumnTerm&) = default;
};

/// Weighted sum of per-coordinate distances, capped at 1.
///
/// Categorical columns contribute either a hard mismatch (distance 1) or
/// `weight * [s != t]`; numeric columns contribute `weight * |s - t|`, or the
/// cyclic distance when a period is set. The column list fixes the schema:
/// the i-th categorical term reads `Covariate::categorical[i]`, the j-th
/// numeric term reads `Covariate::numeric[j]`.
class PremetricSpec {
public:
    PremetricSpec() = default;

    explicit PremetricSpec(std::vector<ColumnTerm> terms) : terms_(std::move(terms)) {
        for (std::size_t i = 0; i < terms_.size(); ++i) {
            const auto& term = terms_[i];
            if (!is_config_token(term.column)) throw SchemaError("premetric: invalid column name '" + term.column + "'");
            for (std::size_t j = 0; j < i; ++j) {
                if (terms_[j].column == term.column) throw SchemaError("premetric: duplicate column '" + term.column + "'");
            }
            if (!(term.weight >= 0.0) || !std::isfinite(term.weight)) {
                throw SchemaError("premetric: weight for column '" + term.column + "' must be finite and >= 0");
            }
            if (term.kind == ColumnKind::numeric) {
                if (term.hard) throw SchemaError("premetric: numeric column '" + term.column + "' cannot be hard");
                if (term.period && !(*term.period > 0.0 && std::isfinite(*term.period))) {
                    throw SchemaError("premetric: period for column '" + term.column + "' must be > 0");
                }
                numeric_.push_back(i);
            } else {
                if (term.period) throw SchemaError("premetric: categorical column '" + term.column + "' cannot have a period");
                categorical_.push_back(i);
            }
        }
    }

    /// Single cyclic numeric coordinate, as used for time-of-day data.
    static PremetricSpec cyclic(std::string column, double weight, double period) {
        return PremetricSpec({ColumnTerm{std::move(column), ColumnKind::numeric, weight, false, period}});
    }
    /// Single absolute-difference numeric coordinate.
    static PremetricSpec linear(std::string column, double weight) {
        return PremetricSpec({ColumnTerm{std::move(column), ColumnKind::numeric, weight, false, std::nullopt}});
    }

    [[nodiscard]] double distance(const Covariate& s, const Covariate& t) const {
        check_schema(s);
        check_schema(t);
        double total = 0.0;
        for (std::size_t c = 0; c < categorical_.size(); ++c) {
            if (s.categorical[c] != t.categorical[c]) {
                const auto& term = terms_[categorical_[c]];
                if (term.hard) return 1.0;
                total += term.weight;
            }
        }
        for (std::size_t j = 0; j < numeric_.size(); ++j) {
            const auto& term = terms_[numeric_[j]];
            if (term.weight == 0.0) continue;
            const double a = s.numeric[j];
            const double b = t.numeric[j];
            const double gap = term.period ? cyclic_distance(a, b, *term.period) : std::abs(a - b);
            total += term.weight * gap;
        }
        return std::min(1.0, total);
    }

    void check_schema(const Covariate& c) const {
        if (c.categorical.size() != categorical_.size() || c.numeric.size() != numeric_.size()) {
            throw SchemaError("premetric: covariate arity (" + std::to_string(c.categorical.size()) + " categorical, " +
                              std::to_string(c.numeric.size()) + " numeric) does not match schema (" +
                              std::to_string(categorical_.size()) + ", " + std::to_string(numeric_.size()) + ")");
        }
    }

    [[nodiscard]] const std::vector<ColumnTerm>& terms() const noexcept { return terms_; }
    [[nodiscard]] std::size_t categorical_arity() const noexcept { return categorical_.size(); }
    [[nodiscard]] std::size_t numeric_arity() const noexcept { return numeric_.size(); }
    [[nodiscard]] const ColumnTerm& categorical_term(std::size_t i) const { return terms_.at(categorical_.at(i)); }
    [[nodiscard]] const ColumnTerm& numeric_term(std::size_t j) const { return terms_.at(numeric_.at(j)); }

    /// Copy with every non-hard weight multiplied by `factor` (>= 0).
    [[nodiscard]] PremetricSpec scaled(double factor) const {
        if (!(factor >= 0.0)) throw SchemaError("premetric: scale factor must be >= 0");
        auto terms = terms_;
        for (auto& t : terms) t.weight *= factor;
        return PremetricSpec(std::move(terms));
    }

    void append_to(ConfigDocument& doc, std::string section = "premetric") const {
        auto& sec = doc.add_section(std::move(section));
        for (const auto& t : terms_) {
            ConfigEntry e;
            e.set("column", t.column);
            e.set("kind", t.kind == ColumnKind::numeric ? "numeric" : "categorical");
            e.set("weight", t.hard ? std::string("hard") : format_double(t.weight));
            if (t.period) e.set("period", format_double(*t.period));
            sec.entries.push_back(std::move(e));
        }
    }

    [[nodiscard]] std::string to_config() const {
        ConfigDocument doc;
        append_to(doc);
        return doc.to_string();
    }

    static PremetricSpec from_section(const ConfigSection& section) {
        std::vector<ColumnTerm> terms;
        for (const auto& e : section.entries) {
            ColumnTerm t;
            t.column = e.at("column");
            const auto& kind = e.at("kind");
            const auto where = "line " + std::to_string(e.line) + ": ";
            if (kind == "numeric") {
                t.kind = ColumnKind::numeric;
            } else if (kind == "categorical") {
                t.kind = ColumnKind::categorical;
            } else {
                throw ConfigError(where + "unknown column kind '" + kind + "'");
            }
            const std::string* weight = e.find("weight");
            if (weight == nullptr) {
                // Categorical columns default to hard matching; numeric to zero weight.
                t.hard = t.kind == ColumnKind::categorical;
            } else if (*weight == "hard") {
                t.hard = true;
            } else {
                auto w = parse_double(*weight);
                if (!w) throw ConfigError(where + "unparseable weight '" + *weight + "'");
                t.weight = *w;
            }
            if (const auto* p = e.find("period")) {
                auto v = parse_double(*p);
                if (!v) throw ConfigError(where + "unparseable period '" + *p + "'");
                t.period = *v;
            }
            for (const auto& [k, v] : e.fields) {
                if (k != "column" && k != "kind" && k != "weight" && k != "period") {
                    throw ConfigError(where + "unknown key '" + k + "'");
                }
            }
            terms.push_back(std::move(t));
        }
        return PremetricSpec(std::move(terms));
    }

    static PremetricSpec from_config(std::string_view text, std::string_view section = "premetric") {
        return from_section(ConfigDocument::parse(text).require(section));
    }

    [[nodiscard]] std::uint64_t hash() const { return fnv1a64(to_config()); }

    friend bool operator==(const PremetricSpec& a, const PremetricSpec& b) { return a.terms_ == b.terms_; }

private:
    std::vector<ColumnTerm> terms_;
    std::vector<std::size_t> categorical_;
    std::vector<std::size_t> numeric_;
};

inline double eval(const PremetricSpec& spec, const Covariate& s, const Covariate& t) { return spec.distance(s, t); }

/// Identically zero: ordinary exchangeability.
struct ZeroPremetric {
    [[nodiscard]] constexpr double distance(const Covariate&, const Covariate&) const noexcept { return 0.0; }
};

/// Wraps any callable `double(const Covariate&, const Covariate&)`.
template <typename F>
struct FunctionPremetric {
    F fn;
    [[nodiscard]] double distance(const Covariate& s, const Covariate& t) const { return fn(s, t); }
};
template <typename F>
FunctionPremetric(F) -> FunctionPremetric<F>;

/// User-supplied pairwise table over a small set of covariates. The table
/// is taken as given (not checked against the axioms); run `validate` on it.
class TablePremetric {
public:
    TablePremetric(std::vector<Covariate> keys, std::vector<double> table)
        : keys_(std::move(keys)), table_(std::move(table)) {
        if (table_.size() != keys_.size() * keys_.size()) {
            throw SchemaError("table premetric: table must be " + std::to_string(keys_.size()) + "x" +
                              std::to_string(keys_.size()));
        }
    }

    [[nodiscard]] double distance(const Covariate& s, const Covariate& t) const {
        return table_[index_of(s) * keys_.size() + index_of(t)];
    }

    [[nodiscard]] const std::vector<Covariate>& keys() const noexcept { return keys_; }

private:
    [[nodiscard]] std::size_t index_of(const Covariate& c) const {
        auto it = std::find(keys_.begin(), keys_.end(), c);
        if (it == keys_.end()) throw SchemaError("table premetric: covariate not in table");
        return static_cast<std::size_t>(it - keys_.begin());
    }

    std::vector<Covariate> keys_;
    std::vector<double> table_;
};

// ---------------------------------------------------------------------------
// Validation

enum class AxiomViolation { asymmetric, nonzero_self, out_of_range };

struct Violation {
    std::size_t first = 0;
    std::size_t second = 0;
    AxiomViolation kind = AxiomViolation::asymmetric;
    double value = 0.0;
    double mirrored = 0.0;
};

struct ValidationReport {
    std::size_t pairs_checked = 0;
    std::vector<Violation> violations;
    [[nodiscard]] bool passed() const noexcept { return violations.empty(); }
};

inline const char* to_string(AxiomViolation v) {
    switch (v) {
        case AxiomViolation::asymmetric: return "asymmetric";
        case AxiomViolation::nonzero_self: return "nonzero_self";
        case AxiomViolation::out_of_range: return "out_of_range";
    }
    return "unknown";
}

/// Checks symmetry, zero self-distance and range [0,1] over all pairs of the
/// sample. Evaluation errors propagate.
template <Premetric P>
ValidationReport validate(const P& d, std::span<const Covariate> sample) {
    if (sample.empty()) throw std::invalid_argument("validate: sample must be nonempty");
    ValidationReport report;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double self = d.distance(sample[i], sample[i]);
        ++report.pairs_checked;
        if (self != 0.0) report.violations.push_back({i, i, AxiomViolation::nonzero_self, self, self});
        for (std::size_t j = i + 1; j < sample.size(); ++j) {
            const double ij = d.distance(sample[i], sample[j]);
            const double ji = d.distance(sample[j], sample[i]);
            ++report.pairs_checked;
            if (ij != ji) report.violations.push_back({i, j, AxiomViolation::asymmetric, ij, ji});
            if (!(ij >= 0.0 && ij <= 1.0)) report.violations.push_back({i, j, AxiomViolation::out_of_range, ij, ji});
            else if (!(ji >= 0.0 && ji <= 1.0)) report.violations.push_back({j, i, AxiomViolation::out_of_range, ji, ij});
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Partitions and derived quantities

/// Disjoint blocks covering {0, ..., n-1}.
class BlockPartition {
public:
    BlockPartition() = default;

    BlockPartition(std::vector<std::vector<std::size_t>> blocks, std::size_t n) : blocks_(std::move(blocks)), size_(n) {
        std::vector<char> seen(n, 0);
        std::size_t count = 0;
        for (const auto& b : blocks_) {
            if (b.empty()) throw std::invalid_argument("partition: empty block");
            for (auto i : b) {
                if (i >= n) throw std::invalid_argument("partition: index " + std::to_string(i) + " out of range");
                if (seen[i]) throw std::invalid_argument("partition: index " + std::to_string(i) + " appears twice");
                seen[i] = 1;
                ++count;
            }
        }
        if (count != n) throw std::invalid_argument("partition: blocks do not cover all indices");
    }

    static BlockPartition singletons(std::size_t n) {
        std::vector<std::vector<std::size_t>> blocks(n);
        for (std::size_t i = 0; i < n; ++i) blocks[i] = {i};
        return BlockPartition(std::move(blocks), n);
    }

    [[nodiscard]] const std::vector<std::vector<std::size_t>>& blocks() const noexcept { return blocks_; }
    [[nodiscard]] std::size_t size() const noexcept { return size_; }
    [[nodiscard]] std::size_t block_count() const noexcept { return blocks_.size(); }

    /// log |G| where G is the product of symmetric groups over the blocks.
    [[nodiscard]] double log_group_order() const {
        double total = 0.0;
        for (const auto& b : blocks_) total += std::lgamma(static_cast<double>(b.size()) + 1.0);
        return total;
    }

    /// |G|, saturating at `cap + 1` when it exceeds `cap`.
    [[nodiscard]] std::uint64_t group_order(std::uint64_t cap) const {
        std::uint64_t order = 1;
        for (const auto& b : blocks_) {
            for (std::uint64_t k = 2; k <= b.size(); ++k) {
                if (order > cap / k) return cap + 1;
                order *= k;
            }
        }
        return order;
    }

    friend bool operator==(const BlockPartition&, const BlockPartition&) = default;

private:
    std::vector<std::vector<std::size_t>> blocks_;
    std::size_t size_ = 0;
};

template <Premetric P>
double diameter(const P& d, std::span<const Covariate> block) {
    if (block.empty()) throw std::invalid_argument("diameter: block must be nonempty");
    double best = 0.0;
    for (std::size_t i = 0; i < block.size(); ++i) {
        for (std::size_t j = i + 1; j < block.size(); ++j) best = std::max(best, d.distance(block[i], block[j]));
    }
    return best;
}

namespace detail {
template <Premetric P>
double block_diameter(const P& d, std::span<const std::size_t> block, std::span<const Covariate> covariates) {
    if (block.empty()) throw std::invalid_argument("diameter: block must be nonempty");
    double best = 0.0;
    for (std::size_t i = 0; i < block.size(); ++i) {
        for (std::size_t j = i + 1; j < block.size(); ++j) {
            best = std::max(best, d.distance(covariates[block[i]], covariates[block[j]]));
        }
    }
    return best;
}
}  // namespace detail

struct SufficiencyDefect {
    double weighted = 0.0;  // sum_k |T_k| diam(T_k)
    double coarse = 0.0;    // |T| max_k diam(T_k)
};

/// How far the per-block empirical measures are from sufficient statistics.
template <Premetric P>
SufficiencyDefect sufficiency_defect_bound(const P& d, const BlockPartition& partition,
                                           std::span<const Covariate> covariates) {
    if (partition.size() != covariates.size()) {
        throw std::invalid_argument("sufficiency_defect_bound: partition does not cover the covariates");
    }
    SufficiencyDefect out;
    double worst = 0.0;
    CompensatedSum weighted;
    for (const auto& block : partition.blocks()) {
        const double diam = detail::block_diameter(d, block, covariates);
        weighted += static_cast<double>(block.size()) * diam;
        worst = std::max(worst, diam);
    }
    out.weighted = weighted.value();
    out.coarse = static_cast<double>(covariates.size()) * worst;
    return out;
}

}  // namespace locex
