#include "rtsrk/analysis.hpp"
#include "rtsrk/bayes.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace rtsrk;

namespace {

double gauss_pdf(double x, double m, double v)
{
    return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2.0 * std::numbers::pi * v);
}

Vector vec(std::initializer_list<double> v)
{
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

// Posterior of d = a y + N(0, s2) under a N(0, 1) prior.
GaussianMoments conjugate(double a, double s2, double d)
{
    return {a * d / (a * a + s2), s2 / (a * a + s2)};
}

// RTS posterior of the decay example by brute-force quadrature over the step.
std::pair<double, double> rts_oracle_moments(double h, double sigma, double d, double p)
{
    const double w = std::pow(h, p + 0.5);
    const int ns = 2000, ny = 20000;
    const double lo = -1.0, hi = 4.0, dy = (hi - lo) / ny;
    double z = 0.0, m1 = 0.0, m2 = 0.0;
    for (int i = 0; i <= ny; ++i) {
        const double y = lo + i * dy;
        double like = 0.0;
        for (int j = 0; j < ns; ++j) {
            const double s = h - w + (j + 0.5) * 2.0 * w / ns;
            like += gauss_pdf(d, (1.0 - s) * y, sigma * sigma);
        }
        const double f = like / ns * gauss_pdf(y, 0.0, 1.0);
        z += f;
        m1 += f * y;
        m2 += f * y * y;
    }
    return {m1 / z, m2 / z - (m1 / z) * (m1 / z)};
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

TEST_CASE("potential")
{
    CHECK(potential(vec({1.0, 2.0}), vec({0.0, 0.0}), Eigen::MatrixXd::Identity(2, 2)) == doctest::Approx(2.5));
    Eigen::MatrixXd c(2, 2);
    c << 4.0, 0.0, 0.0, 0.25;
    CHECK(potential(vec({2.0, 1.0}), vec({0.0, 0.5}), c) == doctest::Approx(0.5 * (1.0 + 1.0)));
    Eigen::MatrixXd singular(2, 2);
    singular << 1.0, 1.0, 1.0, 1.0;
    CHECK_THROWS_AS(NoiseModel{singular}, std::invalid_argument);
    Eigen::MatrixXd skew(2, 2);
    skew << 1.0, 0.5, 0.0, 1.0;
    CHECK_THROWS_AS(NoiseModel{skew}, std::invalid_argument);
    CHECK_THROWS_AS(NoiseModel{Eigen::MatrixXd::Zero(2, 3)}, std::invalid_argument);
    CHECK_THROWS_AS(potential(vec({1.0}), vec({1.0, 2.0}), Eigen::MatrixXd::Identity(2, 2)), std::invalid_argument);
}

TEST_CASE("Gaussian prior")
{
    Eigen::MatrixXd c(2, 2);
    c << 2.0, 0.5, 0.5, 1.0;
    const GaussianPrior prior(vec({1.0, -1.0}), c);
    CHECK(prior.log_density(vec({1.0, -1.0})) == doctest::Approx(0.0));
    CHECK((prior.factor() * prior.factor().transpose() - c).norm() < 1e-14);
    RngStream rng(1, 0);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(2, 2);
    Vector mean = Vector::Zero(2);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const Vector x = prior.sample(rng);
        mean += x;
        acc += (x - prior.mean()) * (x - prior.mean()).transpose();
    }
    CHECK((mean / n - prior.mean()).norm() < 0.02);
    CHECK((acc / n - c).norm() < 0.05);
}

TEST_CASE("forward model of the decay example")
{
    const double h = 0.25;
    const InverseProblem ip = linear_inverse_problem(h, 0.1, 0.5);
    CHECK(forward(ip, vec({2.0}), ForwardScheme::deterministic, h)[0] == doctest::Approx(1.5));
    CHECK(forward(ip, vec({2.0}), ForwardScheme::deterministic, h / 2)[0] == doctest::Approx(2.0 * 0.875 * 0.875));
    CHECK_THROWS_AS(forward(ip, vec({2.0}), ForwardScheme::deterministic, 0.3 * h), std::invalid_argument);
    CHECK_THROWS_AS(forward(ip, vec({2.0}), ForwardScheme::rts, h), std::invalid_argument);

    const StepDistribution dist = StepDistribution::uniform(h, 1.0);
    RngStream rng(2, 0);
    for (int i = 0; i < 100; ++i) {
        const double g = forward(ip, vec({1.0}), ForwardScheme::rts, h, &dist, &rng)[0];
        CHECK(g >= 1.0 - dist.support_high());
        CHECK(g <= 1.0 - dist.support_low());
    }
    const double v = 0.5 * (1.5 - 0.5) * (1.5 - 0.5) / 0.01;
    CHECK(log_likelihood_estimate(ip, vec({2.0}), ForwardScheme::deterministic, h, nullptr, 1, nullptr) == doctest::Approx(-v));
}

TEST_CASE("a flat likelihood samples the prior")
{
    const GaussianPrior prior(vec({0.0}), Eigen::MatrixXd::Identity(1, 1));
    McmcConfig cfg;
    cfg.n_steps = 50000;
    cfg.warmup = 2000;
    cfg.seed = 3;
    const Chain c = metropolis([](const Vector&, RngStream&) { return 0.0; }, prior, cfg, ChainKind::rwmh);
    REQUIRE(c.samples.size() == cfg.n_steps);
    std::vector<double> x;
    for (const auto& s : c.samples) x.push_back(s[0]);
    std::sort(x.begin(), x.end());
    double ks = 0.0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = normal_cdf(x[i]);
        ks = std::max({ks, std::abs(f - i / n), std::abs(f - (i + 1) / n)});
    }
    CHECK(ks <= 0.05);
    CHECK(c.acceptance_rate > 0.15);
    CHECK(c.acceptance_rate < 0.35);

    cfg.proposal_scale = 0.0;
    CHECK_THROWS_AS(metropolis([](const Vector&, RngStream&) { return 0.0; }, prior, cfg, ChainKind::rwmh), std::invalid_argument);
}

TEST_CASE("PMMH with degenerate steps and one sample is RWMH")
{
    const double h = 0.2;
    const InverseProblem ip = linear_inverse_problem(h, 0.2, 0.7);
    McmcConfig cfg;
    cfg.n_steps = 3000;
    cfg.warmup = 500;
    cfg.seed = 4;
    const Chain a = rwmh(ip, h, cfg);
    const Chain b = pmmh(ip, StepDistribution::degenerate(h), 1, cfg);
    REQUIRE(a.samples.size() == b.samples.size());
    bool same = true;
    for (std::size_t i = 0; i < a.samples.size(); ++i) same &= a.samples[i][0] == b.samples[i][0];
    CHECK(same);
    CHECK(a.accepted == b.accepted);
    CHECK(a.proposal_scale == b.proposal_scale);
    CHECK(to_string(b.kind) == "pmmh");
}

TEST_CASE("a constant likelihood offset does not change the chain")
{
    const GaussianPrior prior(vec({0.0}), Eigen::MatrixXd::Identity(1, 1));
    // dyadic values keep the offset exact in floating point
    auto ll = [](const Vector& t, RngStream&) { return std::ldexp(std::round(std::ldexp(-2.0 * t[0] * t[0], 20)), -20); };
    McmcConfig cfg;
    cfg.n_steps = 5000;
    cfg.warmup = 500;
    cfg.seed = 5;
    const Chain a = metropolis(ll, prior, cfg, ChainKind::rwmh);
    const Chain b = metropolis([&](const Vector& t, RngStream& r) { return ll(t, r) + 3.0; }, prior, cfg, ChainKind::rwmh);
    bool same = true;
    for (std::size_t i = 0; i < a.samples.size(); ++i) same &= a.samples[i][0] == b.samples[i][0];
    CHECK(same);
}

TEST_CASE("Gaussian posteriors of the decay example")
{
    const double h = 0.1, sigma = 0.1, d = std::exp(-0.5) + 0.02;
    const auto truth = conjugate(std::exp(-h), sigma * sigma, d);
    const LinearPosterior t(parse_linear_kind("true"), h, sigma, d);
    CHECK(t.mean() == doctest::Approx(truth.mean).epsilon(1e-12));
    CHECK(t.variance() == doctest::Approx(truth.variance).epsilon(1e-12));
    CHECK(t.density(0.6) == doctest::Approx(gauss_pdf(0.6, truth.mean, truth.variance)).epsilon(1e-10));

    const auto det = conjugate(1.0 - h, sigma * sigma, d);
    const LinearPosterior g(LinearPosteriorKind::deterministic, h, sigma, d);
    CHECK(g.mean() == doctest::Approx(det.mean).epsilon(1e-12));
    CHECK(g.variance() == doctest::Approx(det.variance).epsilon(1e-12));

    const double p = 1.5;
    const double s_add = std::sqrt(sigma * sigma + std::pow(h, 2 * p + 1));
    const LinearPosterior add(LinearPosteriorKind::additive, h, sigma, d, p);
    const LinearPosterior det_wide(LinearPosteriorKind::deterministic, h, s_add, d);
    CHECK(add.mean() == doctest::Approx(det_wide.mean()).epsilon(1e-12));
    CHECK(add.variance() == doctest::Approx(det_wide.variance()).epsilon(1e-12));
    CHECK(g.quantile(0.5) == doctest::Approx(det.mean).epsilon(1e-9));
    CHECK(to_string(LinearPosteriorKind::rts) == "rts");
    CHECK_THROWS_AS(parse_linear_kind("mcmc"), std::invalid_argument);
}

TEST_CASE("true posterior mean at h = 0.5")
{
    const LinearPosterior t(LinearPosteriorKind::truth, 0.5, 0.1, std::exp(-0.5));
    CHECK(t.mean() == doctest::Approx(std::exp(-1.0) / (0.01 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(t.mean() == doctest::Approx(0.97354).epsilon(1e-5));
}

TEST_CASE("RTS posterior against brute-force quadrature")
{
    const double h = 0.2, sigma = 0.05, d = 0.6, p = 1.0;
    const LinearPosterior r(LinearPosteriorKind::rts, h, sigma, d, p);
    const auto [m, v] = rts_oracle_moments(h, sigma, d, p);
    CHECK(r.mean() == doctest::Approx(m).epsilon(1e-4));
    CHECK(r.variance() == doctest::Approx(v).epsilon(1e-3));

    const auto [lo, hi] = r.support();
    const int n = 40000;
    const double dx = (hi - lo) / n;
    double mass = 0.0;
    for (int i = 0; i <= n; ++i) mass += (i == 0 || i == n ? 0.5 : 1.0) * r.density(lo + i * dx);
    CHECK(mass * dx == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.quantile(0.5) > lo);
    CHECK(r.quantile(0.5) < hi);
}

TEST_CASE("small-noise limits")
{
    const double h = 0.2, y0 = 1.3;
    CHECK(linear_deterministic_limit(h, y0) == doctest::Approx(std::exp(-h) * y0 / (1.0 - h)));
    const auto [lo, hi] = linear_rts_limit_support(h, y0, 1.0);
    const double w = std::pow(h, 1.5);
    CHECK(lo == doctest::Approx(std::exp(-h) * y0 / (1.0 - h + w)));
    CHECK(hi == doctest::Approx(std::exp(-h) * y0 / (1.0 - h - w)));
    const auto [blo, bhi] = linear_rts_support_bisection(h, 1e-9, std::exp(-h) * y0, 1.0);
    CHECK(blo == doctest::Approx(lo).epsilon(1e-8));
    CHECK(bhi == doctest::Approx(hi).epsilon(1e-8));
    const GaussianMoments a = linear_additive_limit(h, y0);
    const auto ref = conjugate(1.0 - h, std::pow(h, 3), std::exp(-h) * y0);
    CHECK(a.mean == doctest::Approx(ref.mean).epsilon(1e-12));
    CHECK(a.variance == doctest::Approx(ref.variance).epsilon(1e-12));
}

TEST_CASE("Hellinger distance")
{
    const double dx = 1e-3;
    std::vector<double> p, q, far;
    for (int i = 0; i <= 30000; ++i) {
        const double x = -15.0 + i * dx;
        p.push_back(gauss_pdf(x, 0.0, 1.0));
        q.push_back(gauss_pdf(x, 1.0, 4.0));
        far.push_back(gauss_pdf(x, 12.0, 0.01));
    }
    CHECK(hellinger(p, p, dx) == doctest::Approx(0.0).scale(1.0).epsilon(1e-7));
    CHECK(hellinger(p, far, dx) == doctest::Approx(1.0).epsilon(1e-6));
    // closed form for two Gaussians
    const double bc = std::sqrt(2.0 * 1.0 * 2.0 / 5.0) * std::exp(-0.25 * 1.0 / 5.0);
    CHECK(hellinger(p, q, dx) == doctest::Approx(std::sqrt(1.0 - bc)).epsilon(1e-6));
    std::vector<double> unit_shift;
    for (int i = 0; i <= 30000; ++i) unit_shift.push_back(gauss_pdf(-15.0 + i * dx, 1.0, 1.0));
    CHECK(hellinger(p, unit_shift, dx) == doctest::Approx(std::sqrt(1.0 - std::exp(-0.125))).epsilon(1e-6));
    std::vector<double> half = p;
    for (double& x : half) x *= 0.5;
    CHECK_THROWS_AS(hellinger(half, p, dx), std::invalid_argument);
}

TEST_CASE("chain histogram against a density")
{
    RngStream rng(6, 0);
    std::vector<double> x;
    for (int i = 0; i < 100000; ++i) x.push_back(rng.normal());
    auto pdf = [](double y) { return gauss_pdf(y, 0.0, 1.0); };
    CHECK(hellinger_chain_density(x, pdf, -3.0, 3.0, 40) < 0.01);
    CHECK(hellinger_chain_density(x, [](double y) { return gauss_pdf(y, 2.0, 1.0); }, -3.0, 5.0, 40) > 0.3);
}

TEST_CASE("PMMH samples the RTS posterior for S = 1 and S = 10")
{
    const double h = 0.1, sigma = 0.05, d = std::exp(-0.5);
    const InverseProblem ip = linear_inverse_problem(h, sigma, d);
    const LinearPosterior target(LinearPosteriorKind::rts, h, sigma, d, 1.0);
    const double lo = target.quantile(5e-4), hi = target.quantile(1.0 - 5e-4);
    for (std::size_t s : {std::size_t{1}, std::size_t{10}}) {
        McmcConfig cfg;
        cfg.n_steps = 50000;
        cfg.warmup = 3000;
        cfg.seed = 7;
        cfg.initial = vec({d});
        const Chain c = pmmh(ip, StepDistribution::uniform(h, 1.0), s, cfg);
        std::vector<double> x;
        for (const auto& v : c.samples) x.push_back(v[0]);
        CHECK(hellinger_chain_density(x, [&](double y) { return target.density(y); }, lo, hi, 40) <= 0.05);
    }
}

TEST_CASE("the deterministic posterior approaches the true one as h shrinks")
{
    const double sigma = 0.1, d = std::exp(-0.5), dx = 1e-4;
    double prev = 2.0;
    for (double h : {0.4, 0.2, 0.1, 0.05}) {
        const LinearPosterior truth(LinearPosteriorKind::truth, h, sigma, d);
        const LinearPosterior det(LinearPosteriorKind::deterministic, h, sigma, d);
        std::vector<double> a, b;
        for (double y = -1.0; y <= 3.0; y += dx) {
            a.push_back(truth.density(y));
            b.push_back(det.density(y));
        }
        const double dist = hellinger(a, b, dx);
        CHECK(dist < prev);
        prev = dist;
    }
}

TEST_CASE("Henon-Heiles inference problem")
{
    const OdeSystem sys = make_problem("henon_heiles");
    const State y_true = sys.default_y0;
    const InverseProblem ip = henon_inverse_problem(y_true, 1.0, 0.01, Vector(y_true), 0.5, Stepper::from_name("verlet"), 0.01, 8);
    CHECK(ip.data.size() == 4);
    CHECK(ip.prior.dim() == 4);
    const Vector at_truth = forward(ip, Vector(y_true), ForwardScheme::deterministic, 0.01);
    CHECK((at_truth - ip.data).cwiseAbs().maxCoeff() < 0.05);
    const Vector exact = Vector(reference_solution(sys, y_true, 1.0, 1e-4));
    CHECK((ip.data - exact).cwiseAbs().maxCoeff() < 0.05);
    CHECK_THROWS_AS(henon_inverse_problem(make_state({1.0, 2.0}), 1.0, 0.01, vec({0.0, 0.0}), 0.5, Stepper::from_name("verlet"), 0.01, 8),
                    std::invalid_argument);
}
