#pragma once

// Synthetic locally exchangeable processes with known premetrics.
//
// Every generator reads the first numeric coordinate of each covariate and
// draws one realization from a Stream; the same seed always reproduces the
// same observation set. `matching_premetric` gives a premetric the process
// is known to be locally exchangeable with respect to.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "locex/config.hpp"
#include "locex/local_empirical.hpp"
#include "locex/numeric.hpp"
#include "locex/premetric.hpp"
#include "locex/rng.hpp"

namespace locex {

namespace detail {
inline double coordinate(const Covariate& c) {
    if (c.numeric.empty()) throw SchemaError("generator: covariate has no numeric coordinate");
    return c.numeric.front();
}

inline void check_mass(std::span<const double> mass) {
    if (mass.empty()) throw std::invalid_argument("generator: mass vector must be nonempty");
    CompensatedSum s;
    for (double m : mass) {
        if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("generator: masses must lie in [0, 1]");
        s += m;
    }
    if (std::abs(s.value() - 1.0) > 1e-12) throw std::invalid_argument("generator: masses must sum to 1");
}

// Inverse-CDF draw of a symbol in {0, ..., K-1}.
inline int draw_symbol(std::span<const double> mass, Stream& rng) {
    const double u = rng.uniform();
    double cumulative = 0.0;
    for (std::size_t k = 0; k + 1 < mass.size(); ++k) {
        cumulative += mass[k];
        if (u < cumulative) return static_cast<int>(k);
    }
    // Skip trailing zero-mass symbols so they are never drawn.
    for (std::size_t k = mass.size(); k-- > 0;) {
        if (mass[k] > 0.0) return static_cast<int>(k);
    }
    return 0;
}

inline void check_unit_interval(const Covariate& c) {
    const double t = coordinate(c);
    if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("generator: covariate " + format_double(t) + " outside [0, 1]");
}
}  // namespace detail

/// Total variation between two mass vectors on the shared alphabet {0..K-1}.
inline double tv_mass(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("generator: alphabet mismatch");
    CompensatedSum s;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return 0.5 * s.value();
}

/// Independent draws from `mass`; exchangeable (zero premetric).
inline ObservationSet<int> gen_iid(std::span<const double> mass, std::span<const Covariate> covariates, Stream rng) {
    detail::check_mass(mass);
    ObservationSet<int> out;
    out.reserve(covariates.size());
    for (const auto& c : covariates) out.push_back({c, detail::draw_symbol(mass, rng)});
    return out;
}

/// X_t = 1(t >= U), U ~ Unif(0, 1) drawn once.
inline ObservationSet<int> gen_jump(std::span<const Covariate> covariates, Stream rng) {
    for (const auto& c : covariates) detail::check_unit_interval(c);
    const double u = rng.uniform();
    ObservationSet<int> out;
    out.reserve(covariates.size());
    for (const auto& c : covariates) out.push_back({c, detail::coordinate(c) >= u ? 1 : 0});
    return out;
}

/// X_t = sgn sin(2 pi (t - U)) with sgn(0) = +1, values in {-1, +1}.
inline ObservationSet<int> gen_square_wave(std::span<const Covariate> covariates, Stream rng) {
    const double u = rng.uniform();
    ObservationSet<int> out;
    out.reserve(covariates.size());
    for (const auto& c : covariates) {
        const double shifted = detail::coordinate(c) - u;
        const double phase = shifted - std::floor(shifted);  // [0, 1)
        // sin(2 pi phase) >= 0 exactly on [0, 1/2].
        out.push_back({c, phase <= 0.5 ? 1 : -1});
    }
    return out;
}

/// U ~ Unif(0, 1) once; X_t ~ mu0 for t < U, mu1 otherwise, independently.
inline ObservationSet<int> gen_switching_mixture(std::span<const double> mu0, std::span<const double> mu1,
                                                 std::span<const Covariate> covariates, Stream rng) {
    detail::check_mass(mu0);
    detail::check_mass(mu1);
    if (mu0.size() != mu1.size()) throw std::invalid_argument("gen_switching_mixture: alphabet mismatch");
    for (const auto& c : covariates) detail::check_unit_interval(c);
    const double u = rng.uniform();
    ObservationSet<int> out;
    out.reserve(covariates.size());
    for (const auto& c : covariates) {
        const auto& mass = detail::coordinate(c) < u ? mu0 : mu1;
        out.push_back({c, detail::draw_symbol(mass, rng)});
    }
    return out;
}

/// d_sc(t, t') = |t - t'| tv(mu0, mu1) for t, t' in [0, 1].
inline double switching_mixture_dsc(std::span<const double> mu0, std::span<const double> mu1, double t, double t_prime) {
    return std::abs(t - t_prime) * tv_mass(mu0, mu1);
}

struct Quantizer {
    double lo = -3.0;
    double hi = 3.0;
    int bins = 6;

    [[nodiscard]] int operator()(double x) const {
        const double scaled = (x - lo) / (hi - lo) * bins;
        return static_cast<int>(std::clamp(std::floor(scaled), 0.0, static_cast<double>(bins - 1)));
    }
};

/// Latent Y ~ GP(0, exp(-|x-x'|^2 / (2 w^2))) shared across replicates at the
/// same location, plus N(0, sigma^2) noise per observation. The covariance
/// over the distinct locations is factorized once per sampler.
class LatentGaussianSampler {
public:
    LatentGaussianSampler(double width, double noise_variance, std::span<const Covariate> covariates)
        : width_(width), noise_variance_(noise_variance), covariates_(covariates.begin(), covariates.end()) {
        if (!(width > 0.0)) throw std::invalid_argument("gen_latent_gaussian: kernel width must be > 0");
        if (!(noise_variance > 0.0)) throw std::invalid_argument("gen_latent_gaussian: noise variance must be > 0");
        for (const auto& c : covariates_) locations_.push_back(detail::coordinate(c));
        std::sort(locations_.begin(), locations_.end());
        locations_.erase(std::unique(locations_.begin(), locations_.end()), locations_.end());
        if (locations_.size() > kMaxLocations) {
            throw std::invalid_argument("gen_latent_gaussian: at most " + std::to_string(kMaxLocations) +
                                        " distinct locations are supported");
        }
        for (const auto& c : covariates_) {
            const double x = detail::coordinate(c);
            slot_.push_back(static_cast<std::size_t>(std::lower_bound(locations_.begin(), locations_.end(), x) -
                                                     locations_.begin()));
        }
        const auto m = static_cast<Eigen::Index>(locations_.size());
        Eigen::MatrixXd k(m, m);
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < m; ++j) {
                const double gap = locations_[static_cast<std::size_t>(i)] - locations_[static_cast<std::size_t>(j)];
                k(i, j) = std::exp(-gap * gap / (2.0 * width * width));
            }
            k(i, i) += kJitter;
        }
        Eigen::LLT<Eigen::MatrixXd> llt(k);
        if (llt.info() != Eigen::Success) throw std::runtime_error("gen_latent_gaussian: covariance is not positive definite");
        factor_ = llt.matrixL();
    }

    [[nodiscard]] ObservationSet<double> sample(Stream rng) const {
        const auto m = static_cast<Eigen::Index>(locations_.size());
        Eigen::VectorXd z(m);
        for (Eigen::Index i = 0; i < m; ++i) z(i) = rng.normal();
        const Eigen::VectorXd latent = factor_.triangularView<Eigen::Lower>() * z;
        const double noise_sd = std::sqrt(noise_variance_);
        ObservationSet<double> out;
        out.reserve(covariates_.size());
        for (std::size_t i = 0; i < covariates_.size(); ++i) {
            out.push_back({covariates_[i], latent(static_cast<Eigen::Index>(slot_[i])) + noise_sd * rng.normal()});
        }
        return out;
    }

    /// min(1, sqrt(2a / (pi sigma^2)) |x - x'|) with a = 1 / (2 w^2).
    [[nodiscard]] double lipschitz() const { return 1.0 / (width_ * std::sqrt(noise_variance_ * std::numbers::pi)); }

    static constexpr std::size_t kMaxLocations = 2000;
    static constexpr double kJitter = 1e-10;

private:
    double width_;
    double noise_variance_;
    std::vector<Covariate> covariates_;
    std::vector<double> locations_;
    std::vector<std::size_t> slot_;
    Eigen::MatrixXd factor_;
};

inline ObservationSet<double> gen_latent_gaussian(double width, double noise_variance,
                                                  std::span<const Covariate> covariates, Stream rng) {
    return LatentGaussianSampler(width, noise_variance, covariates).sample(rng);
}

inline ObservationSet<int> quantize(const ObservationSet<double>& data, const Quantizer& q) {
    ObservationSet<int> out;
    out.reserve(data.size());
    for (const auto& r : data) out.push_back({r.covariate, q(r.value)});
    return out;
}

inline double latent_gaussian_premetric_constant(double width, double noise_variance) {
    return 1.0 / (width * std::sqrt(noise_variance * std::numbers::pi));
}

// ---------------------------------------------------------------------------
// Declarative generator specs

enum class GeneratorKind { iid, jump, square_wave, switching_mixture, latent_gaussian };

inline const char* to_string(GeneratorKind k) {
    switch (k) {
        case GeneratorKind::iid: return "iid";
        case GeneratorKind::jump: return "jump";
        case GeneratorKind::square_wave: return "square_wave";
        case GeneratorKind::switching_mixture: return "switching_mixture";
        case GeneratorKind::latent_gaussian: return "latent_gaussian";
    }
    return "unknown";
}

struct GeneratorSpec {
    GeneratorKind kind = GeneratorKind::iid;
    std::vector<double> mass{0.5, 0.5};  // iid
    std::vector<double> mu0{1.0, 0.0};   // switching_mixture
    std::vector<double> mu1{0.0, 1.0};
    double width = 1.0;                  // latent_gaussian
    double noise_variance = 1.0;
    std::optional<Quantizer> quantizer;
    std::uint64_t seed = 0;

    void validate() const {
        switch (kind) {
            case GeneratorKind::iid: detail::check_mass(mass); break;
            case GeneratorKind::switching_mixture:
                detail::check_mass(mu0);
                detail::check_mass(mu1);
                if (mu0.size() != mu1.size()) throw std::invalid_argument("generator: alphabet mismatch");
                break;
            case GeneratorKind::latent_gaussian:
                if (!(width > 0.0) || !(noise_variance > 0.0)) {
                    throw std::invalid_argument("generator: width and noise_variance must be > 0");
                }
                if (quantizer && (!(quantizer->hi > quantizer->lo) || quantizer->bins < 1)) {
                    throw std::invalid_argument("generator: quantizer needs hi > lo and bins >= 1");
                }
                break;
            default: break;
        }
    }

    /// Premetric the process is locally exchangeable under, over column `column`.
    [[nodiscard]] PremetricSpec matching_premetric(const std::string& column = "t") const {
        switch (kind) {
            case GeneratorKind::iid: return PremetricSpec::linear(column, 0.0);
            case GeneratorKind::jump:
            case GeneratorKind::square_wave: return PremetricSpec::linear(column, 1.0);
            case GeneratorKind::switching_mixture: return PremetricSpec::linear(column, tv_mass(mu0, mu1));
            case GeneratorKind::latent_gaussian:
                return PremetricSpec::linear(column, latent_gaussian_premetric_constant(width, noise_variance));
        }
        return PremetricSpec::linear(column, 1.0);
    }

    /// Realization r is drawn from Stream(seed).split("realization").split(r).
    [[nodiscard]] std::vector<ObservationSet<double>> simulate(std::span<const Covariate> covariates,
                                                               std::size_t realizations) const {
        validate();
        const Stream root = Stream(seed).split("realization");
        std::vector<ObservationSet<double>> out;
        out.reserve(realizations);
        std::optional<LatentGaussianSampler> gp;
        if (kind == GeneratorKind::latent_gaussian) gp.emplace(width, noise_variance, covariates);
        for (std::size_t r = 0; r < realizations; ++r) {
            const Stream rng = root.split(r);
            ObservationSet<int> discrete;
            switch (kind) {
                case GeneratorKind::iid: discrete = gen_iid(mass, covariates, rng); break;
                case GeneratorKind::jump: discrete = gen_jump(covariates, rng); break;
                case GeneratorKind::square_wave: discrete = gen_square_wave(covariates, rng); break;
                case GeneratorKind::switching_mixture: discrete = gen_switching_mixture(mu0, mu1, covariates, rng); break;
                case GeneratorKind::latent_gaussian: {
                    auto continuous = gp->sample(rng);
                    if (!quantizer) {
                        out.push_back(std::move(continuous));
                        continue;
                    }
                    discrete = quantize(continuous, *quantizer);
                    break;
                }
            }
            ObservationSet<double> converted;
            converted.reserve(discrete.size());
            for (auto& rec : discrete) converted.push_back({std::move(rec.covariate), static_cast<double>(rec.value)});
            out.push_back(std::move(converted));
        }
        return out;
    }

    [[nodiscard]] std::string to_config() const {
        ConfigDocument doc;
        auto& sec = doc.add_section("generator");
        ConfigEntry e;
        e.set("kind", to_string(kind));
        const auto list = [](const std::vector<double>& v) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
            return s;
        };
        switch (kind) {
            case GeneratorKind::iid: e.set("mass", list(mass)); break;
            case GeneratorKind::switching_mixture:
                e.set("mu0", list(mu0));
                e.set("mu1", list(mu1));
                break;
            case GeneratorKind::latent_gaussian:
                e.set("width", format_double(width));
                e.set("noise_variance", format_double(noise_variance));
                if (quantizer) {
                    e.set("quantize_lo", format_double(quantizer->lo));
                    e.set("quantize_hi", format_double(quantizer->hi));
                    e.set("quantize_bins", std::to_string(quantizer->bins));
                }
                break;
            default: break;
        }
        e.set("seed", std::to_string(seed));
        sec.entries.push_back(std::move(e));
        return doc.to_string();
    }

    static GeneratorSpec from_config(std::string_view text) {
        const auto doc = ConfigDocument::parse(text);
        const auto& sec = doc.require("generator");
        if (sec.entries.size() != 1) throw ConfigError("[generator] must hold exactly one entry");
        const auto& e = sec.entries.front();
        const auto number = [&](const std::string& key) {
            auto v = parse_double(e.at(key));
            if (!v) throw ConfigError("generator: unparseable " + key);
            return *v;
        };
        const auto list = [&](const std::string& key) {
            std::vector<double> out;
            std::stringstream ss(e.at(key));
            std::string item;
            while (std::getline(ss, item, ',')) {
                auto v = parse_double(item);
                if (!v) throw ConfigError("generator: unparseable entry in " + key);
                out.push_back(*v);
            }
            return out;
        };
        GeneratorSpec g;
        const auto& kind = e.at("kind");
        if (kind == "iid") {
            g.kind = GeneratorKind::iid;
            g.mass = list("mass");
        } else if (kind == "jump") {
            g.kind = GeneratorKind::jump;
        } else if (kind == "square_wave") {
            g.kind = GeneratorKind::square_wave;
        } else if (kind == "switching_mixture") {
            g.kind = GeneratorKind::switching_mixture;
            g.mu0 = list("mu0");
            g.mu1 = list("mu1");
        } else if (kind == "latent_gaussian") {
            g.kind = GeneratorKind::latent_gaussian;
            g.width = number("width");
            g.noise_variance = number("noise_variance");
            if (e.find("quantize_bins")) {
                Quantizer q;
                q.lo = number("quantize_lo");
                q.hi = number("quantize_hi");
                q.bins = static_cast<int>(number("quantize_bins"));
                g.quantizer = q;
            }
        } else {
            throw ConfigError("generator: unknown kind '" + kind + "'");
        }
        if (const auto* seed_text = e.find("seed")) {
            try {
                std::size_t used = 0;
                g.seed = std::stoull(*seed_text, &used);
                if (used != seed_text->size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ConfigError("generator: unparseable seed '" + *seed_text + "'");
            }
        }
        g.validate();
        return g;
    }
};

}  // namespace locex
