#pragma once

#include "rtsrk/integrators.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rtsrk {

using Vector = Eigen::VectorXd;

class GaussianPrior {
public:
    GaussianPrior(Vector mean, Eigen::MatrixXd cov);

    double log_density(const Vector& theta) const;  // up to an additive constant
    Vector sample(RngStream& rng) const;

    const Vector& mean() const { return mean_; }
    const Eigen::MatrixXd& cov() const { return cov_; }
    /// Lower Cholesky factor of the covariance.
    const Eigen::MatrixXd& factor() const { return factor_; }
    Eigen::Index dim() const { return mean_.size(); }

private:
    Vector mean_;
    Eigen::MatrixXd cov_;
    Eigen::MatrixXd factor_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// Gaussian observation noise; rejects covariances that are not symmetric
/// positive definite.
class NoiseModel {
public:
    explicit NoiseModel(Eigen::MatrixXd cov);

    /// 1/2 (g - data)^T cov^{-1} (g - data)
    double potential(const Vector& g, const Vector& data) const;
    const Eigen::MatrixXd& cov() const { return cov_; }

private:
    Eigen::MatrixXd cov_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

double potential(const Vector& g, const Vector& data, const Eigen::MatrixXd& noise_cov);

struct InverseProblem {
    /// Parameter-to-system map. The system is evaluated once per forward solve.
    std::function<OdeSystem(const Vector&)> system;
    std::function<State(const Vector&)> initial_state;
    std::function<Vector(const State&)> observe;
    Stepper stepper = Stepper::from_name("euler");
    double t_obs = 1.0;
    NoiseModel noise{Eigen::MatrixXd::Identity(1, 1)};
    Vector data;
    GaussianPrior prior{Vector::Zero(1), Eigen::MatrixXd::Identity(1, 1)};
};

enum class ForwardScheme { deterministic, rts };

/// Observable of the numerical solution at t_obs with nominal step h. The rts
/// scheme draws the steps from dist and needs an rng.
Vector forward(const InverseProblem& ip, const Vector& theta, ForwardScheme scheme, double h,
               const StepDistribution* dist = nullptr, RngStream* rng = nullptr);

/// Log-likelihood estimate log(S^{-1} sum_j exp(-V_j)); -inf when a forward
/// solve diverges.
double log_likelihood_estimate(const InverseProblem& ip, const Vector& theta,
                               ForwardScheme scheme, double h, const StepDistribution* dist,
                               std::size_t samples, RngStream* rng);

enum class ChainKind { rwmh, pmmh };
std::string to_string(ChainKind kind);

struct McmcConfig {
    std::size_t n_steps = 10000;  // recorded iterations
    std::size_t warmup = 2000;    // adaptive iterations before recording
    double proposal_scale = 1.0;  // multiplies the prior Cholesky factor
    double target_acceptance = 0.25;
    std::size_t adapt_batch = 100;
    std::size_t stall_window = 1000;  // warn after this many rejections in a row
    std::optional<Vector> initial;    // defaults to the prior mean
    std::uint64_t seed = 0;
};

struct Chain {
    std::vector<Vector> samples;
    std::vector<double> log_estimates;  // carried log-likelihood estimate
    std::vector<double> log_accept;     // log acceptance ratio of each proposal
    std::vector<bool> accepted;
    double acceptance_rate = 0.0;
    double proposal_scale = 0.0;  // frozen after warm-up
    std::uint64_t seed = 0;
    ChainKind kind = ChainKind::rwmh;
    std::vector<std::string> warnings;
};

/// Random-walk Metropolis-Hastings with an unbiased (possibly noisy)
/// log-likelihood estimator. The estimator reads its auxiliary randomness
/// from the second stream, proposals and acceptance from the first.
using LogLikelihoodEstimator = std::function<double(const Vector&, RngStream&)>;

Chain metropolis(const LogLikelihoodEstimator& log_lik, const GaussianPrior& prior,
                 const McmcConfig& cfg, ChainKind kind);

/// Random-walk MH on the deterministic posterior.
Chain rwmh(const InverseProblem& ip, double h, const McmcConfig& cfg);

/// Pseudo-marginal MH on the RTS posterior with S fresh step sequences per
/// proposal.
Chain pmmh(const InverseProblem& ip, const StepDistribution& dist, std::size_t samples,
           const McmcConfig& cfg);

/// Scalar decay example: y' = -y, prior N(0, 1), one observation at t = h of
/// a single Euler step.
InverseProblem linear_inverse_problem(double h, double sigma, double d);

enum class LinearPosteriorKind { truth, deterministic, additive, rts };
LinearPosteriorKind parse_linear_kind(std::string_view name);  // true | det | add | rts
std::string to_string(LinearPosteriorKind kind);

/// Normalized posterior density of the scalar decay example.
class LinearPosterior {
public:
    LinearPosterior(LinearPosteriorKind kind, double h, double sigma, double d, double p = 1.0);

    double density(double y) const;
    double mean() const;
    double variance() const;
    double quantile(double u) const;
    /// Interval holding essentially all of the mass.
    std::pair<double, double> support() const;
    LinearPosteriorKind kind() const { return kind_; }

private:
    double unnormalized_rts(double y) const;

    LinearPosteriorKind kind_;
    double h_, sigma_, d_, p_;
    double gauss_mean_ = 0.0, gauss_var_ = 0.0;
    double lo_ = 0.0, hi_ = 0.0;
    double log_norm_ = 0.0;
    double rts_mean_ = 0.0, rts_var_ = 0.0;
    std::vector<double> grid_, cdf_;  // rts only
};

LinearPosterior linear_analytic_posterior(LinearPosteriorKind kind, double h, double sigma,
                                          double d, double p = 1.0);

/// Point the deterministic posterior collapses to as sigma -> 0.
double linear_deterministic_limit(double h, double y0_true);

struct GaussianMoments {
    double mean = 0.0;
    double variance = 0.0;
};

/// sigma -> 0 limit of the additive-noise posterior.
GaussianMoments linear_additive_limit(double h, double y0_true);

/// [y_min, y_max] support of the sigma -> 0 limit of the RTS posterior.
std::pair<double, double> linear_rts_limit_support(double h, double y0_true, double p = 1.0);

/// Edges of the RTS likelihood's plateau at finite sigma, found by bisection
/// where each Gaussian CDF term crosses one half.
std::pair<double, double> linear_rts_support_bisection(double h, double sigma, double d,
                                                       double p = 1.0);

/// (1/2 int (sqrt p - sqrt q)^2)^{1/2} by the trapezoid rule on a uniform grid.
double hellinger(const std::vector<double>& p, const std::vector<double>& q, double dx);

/// Discrete Hellinger distance between a chain's histogram on `bins` equal
/// bins over [lo, hi] and the bin masses of the density. Mass outside the
/// range forms one extra bin on both sides.
double hellinger_chain_density(const std::vector<double>& samples,
                               const std::function<double(double)>& density, double lo,
                               double hi, std::size_t bins);

/// Henon-Heiles initial-state inference from the full state at t_obs.
InverseProblem henon_inverse_problem(const State& y_true, double t_obs, double noise_sd,
                                     const Vector& prior_mean, double prior_sd,
                                     const Stepper& stepper, double h_data,
                                     std::uint64_t noise_seed);

}  // namespace rtsrk
