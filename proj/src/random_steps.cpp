#include "rtsrk/random_steps.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rtsrk {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo)
{
    const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(product >> 32);
    lo = static_cast<std::uint32_t>(product);
}

}  // namespace

Philox4x32::Block Philox4x32::encrypt(Block ctr, Key key)
{
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kMul0, ctr[0], hi0, lo0);
        mulhilo(kMul1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {}

void RngStream::refill()
{
    const Philox4x32::Block ctr = {static_cast<std::uint32_t>(counter_),
                                   static_cast<std::uint32_t>(counter_ >> 32),
                                   static_cast<std::uint32_t>(stream_id_),
                                   static_cast<std::uint32_t>(stream_id_ >> 32)};
    const Philox4x32::Key key = {static_cast<std::uint32_t>(seed_),
                                 static_cast<std::uint32_t>(seed_ >> 32)};
    buffer_ = Philox4x32::encrypt(ctr, key);
    ++counter_;
    used_ = 0;
}

RngStream::result_type RngStream::operator()()
{
    if (used_ >= 4) refill();
    const std::uint64_t lo = buffer_[used_];
    const std::uint64_t hi = buffer_[used_ + 1];
    used_ += 2;
    return (hi << 32) | lo;
}

double RngStream::uniform()
{
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() { return gauss_(*this); }

StepLaw parse_step_law(std::string_view name)
{
    if (name == "uniform") return StepLaw::uniform;
    if (name == "lognormal") return StepLaw::lognormal;
    if (name == "degenerate") return StepLaw::degenerate;
    throw std::invalid_argument("unknown step distribution '" + std::string(name) + "'");
}

std::string to_string(StepLaw law)
{
    switch (law) {
    case StepLaw::uniform: return "uniform";
    case StepLaw::lognormal: return "lognormal";
    case StepLaw::degenerate: return "degenerate";
    }
    return "?";
}

StepDistribution StepDistribution::uniform(double h, double p)
{
    if (!(h > 0.0 && h < 1.0)) throw std::invalid_argument("uniform steps need 0 < h < 1");
    if (!(p >= 0.5)) throw std::invalid_argument("uniform steps need p >= 1/2");
    const double half_width = std::pow(h, p + 0.5);
    if (h - half_width < 0.0)
        throw std::invalid_argument("uniform step support would reach non-positive values");
    StepDistribution d;
    d.law_ = StepLaw::uniform;
    d.h_ = h;
    d.p_ = p;
    d.c_ = 1.0 / 3.0;
    d.lo_ = h - half_width;
    d.hi_ = h + half_width;
    return d;
}

StepDistribution StepDistribution::lognormal(double h, double p, LognormalVariant variant)
{
    if (!(h > 0.0)) throw std::invalid_argument("lognormal steps need h > 0");
    if (!(p > 0.5)) throw std::invalid_argument("lognormal steps need p > 1/2");
    const double exponent = variant == LognormalVariant::as_printed ? 2.0 * p : 2.0 * p - 1.0;
    const double sigma2 = std::log1p(std::pow(h, exponent));
    StepDistribution d;
    d.law_ = StepLaw::lognormal;
    d.h_ = h;
    d.p_ = p;
    d.c_ = 1.0;
    d.log_sigma_ = std::sqrt(sigma2);
    d.log_mu_ = std::log(h) - 0.5 * sigma2;
    d.lo_ = 0.0;
    d.hi_ = std::numeric_limits<double>::infinity();
    d.variant_ = variant;
    return d;
}

StepDistribution StepDistribution::degenerate(double h)
{
    if (!(h > 0.0) || !std::isfinite(h)) throw std::invalid_argument("degenerate steps need h > 0");
    StepDistribution d;
    d.law_ = StepLaw::degenerate;
    d.h_ = h;
    d.p_ = std::numeric_limits<double>::infinity();
    d.c_ = 0.0;
    d.lo_ = d.hi_ = h;
    return d;
}

double StepDistribution::sample(RngStream& rng) const
{
    switch (law_) {
    case StepLaw::uniform: return lo_ + (hi_ - lo_) * rng.uniform();
    case StepLaw::lognormal: return std::exp(log_mu_ + log_sigma_ * rng.normal());
    case StepLaw::degenerate: return h_;
    }
    return h_;
}

StepMoments StepDistribution::analytic_moments() const
{
    switch (law_) {
    case StepLaw::uniform: {
        const double width = hi_ - lo_;
        return {h_, width * width / 12.0};
    }
    case StepLaw::lognormal: {
        const double s2 = log_sigma_ * log_sigma_;
        const double mean = std::exp(log_mu_ + 0.5 * s2);
        return {mean, std::expm1(s2) * mean * mean};
    }
    case StepLaw::degenerate: return {h_, 0.0};
    }
    return {};
}

double StepDistribution::raw_moment_quadrature(double r) const
{
    using boost::math::quadrature::gauss_kronrod;
    switch (law_) {
    case StepLaw::uniform: {
        auto integrand = [r](double x) { return std::pow(x, r); };
        return gauss_kronrod<double, 31>::integrate(integrand, lo_, hi_, 10, 1e-14) / (hi_ - lo_);
    }
    case StepLaw::lognormal: {
        const double mu = log_mu_, sigma = log_sigma_;
        auto integrand = [=](double z) {
            return std::exp(r * (mu + sigma * z) - 0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
        };
        return gauss_kronrod<double, 61>::integrate(integrand, -14.0, 14.0, 15, 1e-14);
    }
    case StepLaw::degenerate: return std::pow(h_, r);
    }
    return 0.0;
}

Assumption1Report validate_assumption1(const StepDistribution& dist, std::size_t n, double tol,
                                       RngStream& rng)
{
    if (n < 10000) throw std::invalid_argument("validate_assumption1 needs at least 1e4 samples");
    const double h = dist.mean_step();
    constexpr int kOrders[] = {2, 3, 4};

    double min_sample = std::numeric_limits<double>::infinity();
    double s1 = 0.0, s2 = 0.0, s4 = 0.0;  // sums of Z, Z^2, Z^4 with Z = H - h
    double rel_sum[3] = {}, rel_sq[3] = {};
    for (std::size_t i = 0; i < n; ++i) {
        const double x = dist.sample(rng);
        min_sample = std::min(min_sample, x);
        const double z = x - h;
        s1 += z;
        s2 += z * z;
        s4 += z * z * z * z;
        for (int k = 0; k < 3; ++k) {
            const double d = std::pow(x, kOrders[k]) - std::pow(h, kOrders[k]);
            rel_sum[k] += d;
            rel_sq[k] += d * d;
        }
    }

    const double nn = static_cast<double>(n);
    Assumption1Report rep;
    rep.samples = n;
    rep.min_sample = min_sample;
    rep.mean = h + s1 / nn;
    const double m2 = s2 / nn;
    rep.variance = std::max(0.0, m2 - (s1 / nn) * (s1 / nn));
    const double scale = std::pow(h, 2.0 * dist.noise_exponent() + 1.0);
    rep.c_estimate = dist.law() == StepLaw::degenerate ? 0.0 : rep.variance / scale;

    if (!(min_sample > 0.0)) rep.violations.push_back("(i) positivity: a sample was <= 0");

    const double mean_se = std::sqrt(rep.variance / nn);
    if (std::abs(rep.mean - h) / h > tol + 3.0 * mean_se / h)
        rep.violations.push_back("(ii) mean: |E H - h| / h = " + std::to_string(std::abs(rep.mean - h) / h));

    if (dist.law() == StepLaw::degenerate) {
        if (rep.variance != 0.0) rep.violations.push_back("(iii) variance: degenerate law has spread");
    } else {
        const double target = dist.variance_constant() * scale;
        const double var_se = std::sqrt(std::max(0.0, s4 / nn - m2 * m2) / nn);
        const double rel = std::abs(rep.variance - target) / target;
        if (rel > tol + 3.0 * var_se / target)
            rep.violations.push_back("(iii) variance: |Var H - C h^(2p+1)| / (C h^(2p+1)) = "
                                     + std::to_string(rel));
    }

    for (int k = 0; k < 3; ++k) {
        MomentRelationCheck check;
        check.r = kOrders[k];
        check.mc_value = rel_sum[k] / nn;
        check.mc_std_error =
            std::sqrt(std::max(0.0, rel_sq[k] / nn - check.mc_value * check.mc_value) / nn);
        check.quadrature_value = dist.raw_moment_quadrature(kOrders[k]) - std::pow(h, kOrders[k]);
        const double allowed = 3.0 * check.mc_std_error + tol * std::abs(check.quadrature_value)
                               + 1e-15 * std::pow(h, kOrders[k]);
        check.passed = std::abs(check.mc_value - check.quadrature_value) <= allowed;
        if (dist.law() != StepLaw::degenerate && !(check.quadrature_value > 0.0)) check.passed = false;
        if (!check.passed)
            rep.violations.push_back("moment relation E(H^r - h^r), r = " + std::to_string(check.r));
        rep.moment_relations.push_back(check);
    }

    rep.passed = rep.violations.empty();
    return rep;
}

}  // namespace rtsrk
