#include "rtsrk/bayes.hpp"

#include "rtsrk/analysis.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace rtsrk {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& cov, const char* what)
{
    if (cov.rows() != cov.cols() || cov.rows() == 0)
        throw std::invalid_argument(std::string(what) + " covariance must be square and non-empty");
    if (!cov.allFinite()) throw std::invalid_argument(std::string(what) + " covariance is not finite");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, cov.cwiseAbs().maxCoeff()))
        throw std::invalid_argument(std::string(what) + " covariance is not symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument(std::string(what) + " covariance is not positive definite");
    const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
    if (diag.minCoeff() <= 1e-14 * diag.maxCoeff())
        throw std::invalid_argument(std::string(what) + " covariance is singular");
    return llt;
}

/// Standard normal CDF.
double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Phi(a) - Phi(b) for a >= b without cancellation in the upper tail.
double norm_cdf_diff(double a, double b)
{
    if (b > 0.0) return norm_cdf(-b) - norm_cdf(-a);
    return norm_cdf(a) - norm_cdf(b);
}

std::size_t steps_for_obs(double t_obs, double h)
{
    const double ratio = t_obs / h;
    const double n = std::round(ratio);
    if (!(h > 0.0) || n < 1.0 || std::abs(ratio - n) > 1e-9 * ratio)
        throw std::invalid_argument("t_obs / h must be a positive integer");
    return static_cast<std::size_t>(n);
}

}  // namespace

GaussianPrior::GaussianPrior(Vector mean, Eigen::MatrixXd cov)
    : mean_(std::move(mean)), cov_(std::move(cov)), llt_(checked_llt(cov_, "prior"))
{
    if (mean_.size() != cov_.rows()) throw std::invalid_argument("prior mean and covariance differ in size");
    factor_ = llt_.matrixL();
}

double GaussianPrior::log_density(const Vector& theta) const
{
    if (theta.size() != mean_.size()) throw std::invalid_argument("parameter dimension mismatch");
    const Vector r = llt_.matrixL().solve(theta - mean_);
    return -0.5 * r.squaredNorm();
}

Vector GaussianPrior::sample(RngStream& rng) const
{
    Vector z(mean_.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
    return mean_ + factor_ * z;
}

NoiseModel::NoiseModel(Eigen::MatrixXd cov) : cov_(std::move(cov)), llt_(checked_llt(cov_, "noise")) {}

double NoiseModel::potential(const Vector& g, const Vector& data) const
{
    if (g.size() != data.size() || g.size() != cov_.rows())
        throw std::invalid_argument("observable and data dimensions differ");
    const Vector r = llt_.matrixL().solve(g - data);
    return 0.5 * r.squaredNorm();
}

double potential(const Vector& g, const Vector& data, const Eigen::MatrixXd& noise_cov)
{
    return NoiseModel(noise_cov).potential(g, data);
}

Vector forward(const InverseProblem& ip, const Vector& theta, ForwardScheme scheme, double h,
               const StepDistribution* dist, RngStream* rng)
{
    const std::size_t n = steps_for_obs(ip.t_obs, h);
    const OdeSystem sys = ip.system(theta);
    const State y0 = ip.initial_state(theta);
    const Recording rec{{n}, false};
    if (scheme == ForwardScheme::deterministic)
        return ip.observe(integrate_deterministic(ip.stepper, sys, y0, h, n, rec).final_state());
    if (!dist || !rng) throw std::invalid_argument("the rts forward model needs a step law and an rng");
    return ip.observe(integrate_rts_rk(ip.stepper, *dist, sys, y0, n, *rng, rec).final_state());
}

double log_likelihood_estimate(const InverseProblem& ip, const Vector& theta,
                               ForwardScheme scheme, double h, const StepDistribution* dist,
                               std::size_t samples, RngStream* rng)
{
    if (samples < 1) throw std::invalid_argument("need at least one estimator sample");
    std::vector<double> logs;
    logs.reserve(samples);
    for (std::size_t j = 0; j < samples; ++j) {
        try {
            const Vector g = forward(ip, theta, scheme, h, dist, rng);
            const double v = ip.noise.potential(g, ip.data);
            logs.push_back(std::isfinite(v) ? -v : -kInf);
        } catch (const DivergenceError&) {
            logs.push_back(-kInf);
        } catch (const ConvergenceFailure&) {
            logs.push_back(-kInf);
        }
    }
    const double top = *std::max_element(logs.begin(), logs.end());
    if (top == -kInf) return -kInf;
    double sum = 0.0;
    for (double l : logs) sum += std::exp(l - top);
    return top + std::log(sum) - std::log(static_cast<double>(samples));
}

std::string to_string(ChainKind kind) { return kind == ChainKind::rwmh ? "rwmh" : "pmmh"; }

Chain metropolis(const LogLikelihoodEstimator& log_lik, const GaussianPrior& prior,
                 const McmcConfig& cfg, ChainKind kind)
{
    if (!(cfg.proposal_scale > 0.0) || !std::isfinite(cfg.proposal_scale))
        throw std::invalid_argument("proposal scale must be positive");
    if (!(cfg.target_acceptance > 0.0 && cfg.target_acceptance < 1.0))
        throw std::invalid_argument("target acceptance must lie in (0, 1)");
    if (cfg.adapt_batch < 1) throw std::invalid_argument("adaptation batch must be positive");

    RngStream moves(cfg.seed, 0);
    RngStream aux(cfg.seed, 1);

    Vector theta = cfg.initial ? *cfg.initial : prior.mean();
    if (theta.size() != prior.dim()) throw std::invalid_argument("initial point has the wrong dimension");
    double ll = log_lik(theta, aux);
    double lp = prior.log_density(theta);
    if (!std::isfinite(ll)) throw std::invalid_argument("initial point has zero likelihood");

    Chain chain;
    chain.kind = kind;
    chain.seed = cfg.seed;
    chain.samples.reserve(cfg.n_steps);
    chain.log_estimates.reserve(cfg.n_steps);
    chain.log_accept.reserve(cfg.n_steps);
    chain.accepted.reserve(cfg.n_steps);

    double log_scale = std::log(cfg.proposal_scale);
    std::size_t batch_accepts = 0, batch_index = 0, accepted_total = 0, run_of_rejects = 0;
    bool stall_reported = false;
    const Eigen::MatrixXd& factor = prior.factor();
    Vector z(theta.size());

    for (std::size_t it = 0; it < cfg.warmup + cfg.n_steps; ++it) {
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = moves.normal();
        const Vector cand = theta + std::exp(log_scale) * (factor * z);
        const double ll_c = log_lik(cand, aux);
        const double lp_c = prior.log_density(cand);
        double log_a = ll_c == -kInf ? -kInf : (ll_c - ll) + (lp_c - lp);
        if (std::isnan(log_a)) log_a = -kInf;
        const bool accept = std::log(moves.uniform()) < log_a;
        if (accept) {
            theta = cand;
            ll = ll_c;
            lp = lp_c;
        }

        if (it < cfg.warmup) {
            batch_accepts += accept;
            if ((it + 1) % cfg.adapt_batch == 0) {
                const double rate = static_cast<double>(batch_accepts) / static_cast<double>(cfg.adapt_batch);
                log_scale += 3.0 * (rate - cfg.target_acceptance) / std::sqrt(static_cast<double>(++batch_index));
                batch_accepts = 0;
            }
            continue;
        }

        chain.samples.push_back(theta);
        chain.log_estimates.push_back(ll);
        chain.log_accept.push_back(log_a);
        chain.accepted.push_back(accept);
        accepted_total += accept;
        run_of_rejects = accept ? 0 : run_of_rejects + 1;
        if (!stall_reported && cfg.stall_window > 0 && run_of_rejects >= cfg.stall_window) {
            chain.warnings.push_back("no proposal accepted over " + std::to_string(cfg.stall_window)
                                     + " iterations ending at " + std::to_string(it - cfg.warmup));
            stall_reported = true;
        }
    }
    chain.proposal_scale = std::exp(log_scale);
    chain.acceptance_rate = cfg.n_steps > 0
                                ? static_cast<double>(accepted_total) / static_cast<double>(cfg.n_steps)
                                : 0.0;
    return chain;
}

Chain rwmh(const InverseProblem& ip, double h, const McmcConfig& cfg)
{
    auto ll = [&](const Vector& theta, RngStream&) {
        return log_likelihood_estimate(ip, theta, ForwardScheme::deterministic, h, nullptr, 1, nullptr);
    };
    return metropolis(ll, ip.prior, cfg, ChainKind::rwmh);
}

Chain pmmh(const InverseProblem& ip, const StepDistribution& dist, std::size_t samples,
           const McmcConfig& cfg)
{
    if (samples < 1) throw std::invalid_argument("pmmh needs S >= 1");
    const double h = dist.mean_step();
    auto ll = [&](const Vector& theta, RngStream& aux) {
        return log_likelihood_estimate(ip, theta, ForwardScheme::rts, h, &dist, samples, &aux);
    };
    return metropolis(ll, ip.prior, cfg, ChainKind::pmmh);
}

InverseProblem linear_inverse_problem(double h, double sigma, double d)
{
    if (!(h > 0.0)) throw std::invalid_argument("h must be positive");
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
    InverseProblem ip;
    const OdeSystem sys = make_problem("linear_decay");
    ip.system = [sys](const Vector&) { return sys; };
    ip.initial_state = [](const Vector& theta) { return make_state({theta[0]}); };
    ip.observe = [](const State& y) { return Vector(Vector::Constant(1, y[0])); };
    ip.stepper = Stepper::from_name("euler");
    ip.t_obs = h;
    ip.noise = NoiseModel(Eigen::MatrixXd::Constant(1, 1, sigma * sigma));
    ip.data = Vector::Constant(1, d);
    ip.prior = GaussianPrior(Vector::Zero(1), Eigen::MatrixXd::Identity(1, 1));
    return ip;
}

LinearPosteriorKind parse_linear_kind(std::string_view name)
{
    if (name == "true" || name == "truth") return LinearPosteriorKind::truth;
    if (name == "det") return LinearPosteriorKind::deterministic;
    if (name == "add") return LinearPosteriorKind::additive;
    if (name == "rts") return LinearPosteriorKind::rts;
    throw std::invalid_argument("unknown posterior kind '" + std::string(name) + "'");
}

std::string to_string(LinearPosteriorKind kind)
{
    switch (kind) {
    case LinearPosteriorKind::truth: return "true";
    case LinearPosteriorKind::deterministic: return "det";
    case LinearPosteriorKind::additive: return "add";
    case LinearPosteriorKind::rts: return "rts";
    }
    return "?";
}

LinearPosterior::LinearPosterior(LinearPosteriorKind kind, double h, double sigma, double d, double p)
    : kind_(kind), h_(h), sigma_(sigma), d_(d), p_(p)
{
    if (!(h > 0.0 && h < 1.0)) throw std::invalid_argument("linear posterior needs 0 < h < 1");
    if (!(sigma > 0.0)) throw std::invalid_argument("linear posterior needs sigma > 0");
    const double a = 1.0 - h;
    switch (kind) {
    case LinearPosteriorKind::truth: {
        const double g = std::exp(-h);
        gauss_mean_ = d * g / (sigma * sigma + g * g);
        gauss_var_ = sigma * sigma / (sigma * sigma + g * g);
        break;
    }
    case LinearPosteriorKind::deterministic:
        gauss_mean_ = a * d / (sigma * sigma + a * a);
        gauss_var_ = sigma * sigma / (sigma * sigma + a * a);
        break;
    case LinearPosteriorKind::additive: {
        const double s2 = sigma * sigma + std::pow(h, 2.0 * p + 1.0);
        gauss_mean_ = a * d / (s2 + a * a);
        gauss_var_ = s2 / (s2 + a * a);
        break;
    }
    case LinearPosteriorKind::rts: {
        if (!(d > 0.0)) throw std::invalid_argument("rts posterior needs positive data");
        const double w = std::pow(h, p + 0.5);
        if (!(a - w > 0.0)) throw std::invalid_argument("rts posterior needs 1 - h > h^(p+1/2)");
        lo_ = std::max(d / (a + w) / 2.0, 1e-6);
        hi_ = 2.0 * d / (a - w);
        constexpr std::size_t kGrid = 20001;
        const double dx = (hi_ - lo_) / static_cast<double>(kGrid - 1);
        grid_.resize(kGrid);
        std::vector<double> f(kGrid);
        double fmax = 0.0;
        for (std::size_t i = 0; i < kGrid; ++i) {
            grid_[i] = lo_ + dx * static_cast<double>(i);
            f[i] = unnormalized_rts(grid_[i]);
            fmax = std::max(fmax, f[i]);
        }
        if (!(fmax > 0.0)) throw std::runtime_error("rts posterior vanishes on its support");
        cdf_.assign(kGrid, 0.0);
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t i = 1; i < kGrid; ++i) {
            const double area = 0.5 * dx * (f[i] + f[i - 1]);
            cdf_[i] = cdf_[i - 1] + area;
            m1 += 0.5 * dx * (grid_[i] * f[i] + grid_[i - 1] * f[i - 1]);
            m2 += 0.5 * dx * (grid_[i] * grid_[i] * f[i] + grid_[i - 1] * grid_[i - 1] * f[i - 1]);
        }
        const double z = cdf_.back();
        for (double& c : cdf_) c /= z;
        log_norm_ = std::log(z);
        rts_mean_ = m1 / z;
        rts_var_ = m2 / z - rts_mean_ * rts_mean_;
        break;
    }
    }
    if (kind != LinearPosteriorKind::rts) {
        const double sd = std::sqrt(gauss_var_);
        lo_ = gauss_mean_ - 12.0 * sd;
        hi_ = gauss_mean_ + 12.0 * sd;
    }
}

double LinearPosterior::unnormalized_rts(double y) const
{
    const double a = 1.0 - h_;
    const double w = std::pow(h_, p_ + 0.5);
    const double upper = ((a + w) * y - d_) / sigma_;
    const double lower = ((a - w) * y - d_) / sigma_;
    return std::exp(-0.5 * y * y) / y * norm_cdf_diff(upper, lower);
}

double LinearPosterior::density(double y) const
{
    if (kind_ != LinearPosteriorKind::rts) {
        const double r = (y - gauss_mean_);
        return std::exp(-0.5 * r * r / gauss_var_) / std::sqrt(2.0 * std::numbers::pi * gauss_var_);
    }
    if (y < lo_ || y > hi_) return 0.0;
    return unnormalized_rts(y) / std::exp(log_norm_);
}

double LinearPosterior::mean() const { return kind_ == LinearPosteriorKind::rts ? rts_mean_ : gauss_mean_; }

double LinearPosterior::variance() const
{
    return kind_ == LinearPosteriorKind::rts ? rts_var_ : gauss_var_;
}

double LinearPosterior::quantile(double u) const
{
    if (!(u > 0.0 && u < 1.0)) throw std::invalid_argument("quantile level must lie in (0, 1)");
    if (kind_ != LinearPosteriorKind::rts)
        return boost::math::quantile(boost::math::normal(gauss_mean_, std::sqrt(gauss_var_)), u);
    const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    const auto i = static_cast<std::size_t>(it - cdf_.begin());
    if (i == 0) return grid_.front();
    if (i >= grid_.size()) return grid_.back();
    const double t = (u - cdf_[i - 1]) / (cdf_[i] - cdf_[i - 1]);
    return grid_[i - 1] + t * (grid_[i] - grid_[i - 1]);
}

std::pair<double, double> LinearPosterior::support() const { return {lo_, hi_}; }

LinearPosterior linear_analytic_posterior(LinearPosteriorKind kind, double h, double sigma,
                                          double d, double p)
{
    return LinearPosterior(kind, h, sigma, d, p);
}

double linear_deterministic_limit(double h, double y0_true)
{
    return std::exp(-h) * y0_true / (1.0 - h);
}

GaussianMoments linear_additive_limit(double h, double y0_true)
{
    const double a = 1.0 - h;
    const double h3 = h * h * h;
    return {a * std::exp(-h) * y0_true / (h3 + a * a), h3 / (h3 + a * a)};
}

std::pair<double, double> linear_rts_limit_support(double h, double y0_true, double p)
{
    const double w = std::pow(h, p + 0.5);
    const double obs = std::exp(-h) * y0_true;
    return {obs / ((1.0 - h) + w), obs / ((1.0 - h) - w)};
}

std::pair<double, double> linear_rts_support_bisection(double h, double sigma, double d, double p)
{
    const double a = 1.0 - h;
    const double w = std::pow(h, p + 0.5);
    if (!(a - w > 0.0) || !(d > 0.0)) throw std::invalid_argument("support is unbounded");
    auto solve = [&](double slope) {
        // Phi((slope y - d) / sigma) = 1/2, increasing in y
        double lo = 0.0, hi = 4.0 * d / slope + 1.0;
        for (int i = 0; i < 200 && hi - lo > 0.0; ++i) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) break;
            if (norm_cdf((slope * mid - d) / sigma) < 0.5) lo = mid;
            else hi = mid;
        }
        return 0.5 * (lo + hi);
    };
    return {solve(a + w), solve(a - w)};
}

double hellinger(const std::vector<double>& p, const std::vector<double>& q, double dx)
{
    if (p.size() != q.size() || p.size() < 2) throw std::invalid_argument("grids must match and hold two points");
    if (!(dx > 0.0)) throw std::invalid_argument("grid spacing must be positive");
    auto trapezoid = [dx](const std::vector<double>& f) {
        double s = 0.5 * (f.front() + f.back());
        for (std::size_t i = 1; i + 1 < f.size(); ++i) s += f[i];
        return s * dx;
    };
    for (std::size_t i = 0; i < p.size(); ++i)
        if (!(p[i] >= 0.0) || !(q[i] >= 0.0)) throw std::invalid_argument("densities must be non-negative");
    if (std::abs(trapezoid(p) - 1.0) > 1e-3 || std::abs(trapezoid(q) - 1.0) > 1e-3)
        throw std::invalid_argument("densities must integrate to 1 within 1e-3");
    std::vector<double> sq(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double r = std::sqrt(p[i]) - std::sqrt(q[i]);
        sq[i] = r * r;
    }
    return std::sqrt(std::max(0.0, 0.5 * trapezoid(sq)));
}

double hellinger_chain_density(const std::vector<double>& samples,
                               const std::function<double(double)>& density, double lo,
                               double hi, std::size_t bins)
{
    if (samples.empty()) throw std::invalid_argument("no samples");
    if (!(hi > lo) || bins < 1) throw std::invalid_argument("bad histogram range");
    const double width = (hi - lo) / static_cast<double>(bins);
    std::vector<double> counts(bins, 0.0);
    double outside = 0.0;
    for (double x : samples) {
        if (x < lo || x >= hi) {
            outside += 1.0;
            continue;
        }
        auto b = static_cast<std::size_t>((x - lo) / width);
        counts[std::min(b, bins - 1)] += 1.0;
    }
    const double n = static_cast<double>(samples.size());
    // Simpson's rule with 32 panels per bin
    constexpr int kPanels = 32;
    double inside_mass = 0.0, sum = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
        const double a = lo + width * static_cast<double>(b);
        const double step = width / kPanels;
        double s = density(a) + density(a + width);
        for (int i = 1; i < kPanels; ++i) s += (i % 2 ? 4.0 : 2.0) * density(a + step * i);
        const double mass = std::max(0.0, s * step / 3.0);
        inside_mass += mass;
        const double r = std::sqrt(counts[b] / n) - std::sqrt(mass);
        sum += r * r;
    }
    const double r = std::sqrt(outside / n) - std::sqrt(std::max(0.0, 1.0 - inside_mass));
    sum += r * r;
    return std::sqrt(0.5 * sum);
}

InverseProblem henon_inverse_problem(const State& y_true, double t_obs, double noise_sd,
                                     const Vector& prior_mean, double prior_sd,
                                     const Stepper& stepper, double h_data,
                                     std::uint64_t noise_seed)
{
    if (!(noise_sd > 0.0) || !(prior_sd > 0.0)) throw std::invalid_argument("standard deviations must be positive");
    const OdeSystem sys = make_problem("henon_heiles");
    if (y_true.size() != sys.dim || prior_mean.size() != sys.dim)
        throw std::invalid_argument("Henon-Heiles states are four-dimensional");
    InverseProblem ip;
    ip.system = [sys](const Vector&) { return sys; };
    ip.initial_state = [](const Vector& theta) {
        State y(theta.size());
        for (Eigen::Index i = 0; i < theta.size(); ++i) y[i] = theta[i];
        return y;
    };
    ip.observe = [](const State& y) { return Vector(y); };
    ip.stepper = stepper;
    ip.t_obs = t_obs;
    const auto d = static_cast<Eigen::Index>(sys.dim);
    ip.noise = NoiseModel(noise_sd * noise_sd * Eigen::MatrixXd::Identity(d, d));
    ip.prior = GaussianPrior(prior_mean, prior_sd * prior_sd * Eigen::MatrixXd::Identity(d, d));
    const State exact = reference_solution(sys, y_true, t_obs, h_data);
    RngStream rng(noise_seed, 0);
    ip.data = Vector(d);
    for (Eigen::Index i = 0; i < d; ++i) ip.data[i] = exact[i] + noise_sd * rng.normal();
    return ip;
}

}  // namespace rtsrk
