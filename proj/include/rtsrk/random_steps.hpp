#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace rtsrk {

/// Philox4x32-10 counter-based generator. The 64-bit seed is the key, the
/// stream id fills the upper half of the counter, so every (seed, stream_id)
/// pair addresses an independent, reproducible sequence.
class Philox4x32 {
public:
    using Block = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Block encrypt(Block counter, Key key);
};

/// Per-trajectory random stream. Satisfies UniformRandomBitGenerator so the
/// standard distributions can draw from it.
class RngStream {
public:
    using result_type = std::uint64_t;

    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()();

    /// Uniform on the open interval (0, 1).
    double uniform();
    double normal();

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

private:
    void refill();

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t counter_ = 0;
    Philox4x32::Block buffer_{};
    int used_ = 4;
    std::normal_distribution<double> gauss_;
};

/// Key of the i-th independent sub-experiment of a run seeded with `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::size_t i)
{
    return seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(i);
}

enum class StepLaw { uniform, lognormal, degenerate };

enum class LognormalVariant {
    as_printed,  // sigma^2 = log(1 + h^{2p}): Var H = h^{2p+2}
    corrected    // sigma^2 = log(1 + h^{2p-1}): Var H = h^{2p+1}
};

StepLaw parse_step_law(std::string_view name);
std::string to_string(StepLaw law);

struct StepMoments {
    double mean = 0.0;
    double variance = 0.0;
};

/// Law of the random steps H_k with E H_k = h and E (H_k - h)^2 = C h^{2p+1}.
class StepDistribution {
public:
    /// H ~ U(h - h^{p+1/2}, h + h^{p+1/2}), 0 < h < 1. The lower endpoint must
    /// be non-negative, which with h < 1 means p >= 1/2.
    static StepDistribution uniform(double h, double p);
    static StepDistribution lognormal(double h, double p,
                                      LognormalVariant variant = LognormalVariant::as_printed);
    static StepDistribution degenerate(double h);

    double sample(RngStream& rng) const;
    StepMoments analytic_moments() const;

    /// E H^r by quadrature against the law's density.
    double raw_moment_quadrature(double r) const;

    StepLaw law() const { return law_; }
    double mean_step() const { return h_; }
    double noise_exponent() const { return p_; }
    /// Nominal constant C of E Z^2 = C h^{2p+1}: 1/3 uniform, 1 lognormal, 0 degenerate.
    double variance_constant() const { return c_; }
    LognormalVariant lognormal_variant() const { return variant_; }

    double support_low() const { return lo_; }
    double support_high() const { return hi_; }

private:
    StepDistribution() = default;

    StepLaw law_ = StepLaw::degenerate;
    double h_ = 0.0;
    double p_ = 0.0;
    double c_ = 0.0;
    double lo_ = 0.0;
    double hi_ = 0.0;
    double log_mu_ = 0.0;
    double log_sigma_ = 0.0;
    LognormalVariant variant_ = LognormalVariant::as_printed;
};

struct MomentRelationCheck {
    int r = 0;
    double mc_value = 0.0;          // sample mean of H^r - h^r
    double mc_std_error = 0.0;
    double quadrature_value = 0.0;  // E H^r - h^r
    bool passed = false;
};

struct Assumption1Report {
    bool passed = true;
    std::size_t samples = 0;
    double min_sample = 0.0;
    double mean = 0.0;
    double variance = 0.0;
    double c_estimate = 0.0;  // variance / h^{2p+1}
    std::vector<MomentRelationCheck> moment_relations;
    std::vector<std::string> violations;
};

/// Empirical check of positivity, mean, variance scaling and the higher
/// moment relation E(H^r - h^r) for r = 2, 3, 4.
Assumption1Report validate_assumption1(const StepDistribution& dist, std::size_t n, double tol,
                                       RngStream& rng);

}  // namespace rtsrk
