#pragma once

#include "rtsrk/integrators.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

namespace rtsrk {

/// Everything needed to generate one trajectory of a given scheme.
struct SchemeConfig {
    OdeSystem system;
    State y0;
    Stepper stepper = Stepper::from_name("euler");
    Scheme scheme = Scheme::rts_rk;
    StepLaw law = StepLaw::uniform;
    LognormalVariant lognormal_variant = LognormalVariant::as_printed;
    double h = 0.1;
    double p = 1.0;
    std::size_t n_steps = 10;
    double noise_scale = 1.0;  // additive scheme only
    Recording recording;

    /// The step law for the rts scheme. Throws for other schemes.
    StepDistribution distribution() const;

    /// Runs one trajectory on the given stream.
    Trajectory run(RngStream& rng, const StepObserver& observer = {}) const;
};

struct Ensemble {
    std::vector<Trajectory> trajectories;  // successful ones, ordered by stream id
    std::size_t requested = 0;
    std::uint64_t base_seed = 0;
    std::size_t failed_count = 0;
    std::vector<std::uint64_t> failed_ids;

    std::size_t size() const { return trajectories.size(); }
};

/// Builds a per-trajectory observer; called once per trajectory index.
using ObserverFactory = std::function<StepObserver(std::size_t)>;

/// M trajectories on streams stream_offset + i, i = 0..M-1, all keyed by
/// base_seed. Output does not depend on the thread count. Trajectories that
/// diverge are dropped and counted; if all of them fail, throws
/// std::runtime_error.
Ensemble run_ensemble(const SchemeConfig& cfg, std::size_t m, std::uint64_t base_seed,
                      std::uint64_t stream_offset = 0, const ObserverFactory& observers = {});

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
};

/// Sample mean of phi(Y_k) over the ensemble, with its standard error.
Estimate mc_functional_estimate(const Ensemble& e, const Functional& phi, std::size_t k);
double mc_functional(const Ensemble& e, const Functional& phi, std::size_t k);

/// (mean |Y_k - y_ref|^2)^{1/2}; the standard error is propagated through the
/// square root.
Estimate ms_error_estimate(const Ensemble& e, const State& y_ref, std::size_t k);
double ms_error(const Ensemble& e, const State& y_ref, std::size_t k);

/// |mean phi(Y_k) - phi_ref| with the standard error of the mean.
Estimate weak_error_estimate(const Ensemble& e, const Functional& phi, double phi_ref,
                             std::size_t k);
double weak_error(const Ensemble& e, const Functional& phi, double phi_ref, std::size_t k);

/// Square root of the trace of the sample covariance of Y_k. Needs M >= 2.
double std_indicator(const Ensemble& e, std::size_t k);

struct MseReport {
    double mse = 0.0;       // mean over replicas of (Z - Zhat)^2
    double variance = 0.0;  // replica variance of Zhat (divisor R)
    double bias = 0.0;      // mean Zhat - Z
    double std_error = 0.0;
    std::vector<double> estimates;  // Zhat of each replica
};

inline constexpr std::size_t kMinReplicas = 16;

/// MSE of the M-sample Monte Carlo estimator of E phi(Y_N) against the truth
/// z, estimated from R independent ensembles. Replica r uses streams
/// r*M .. r*M + M - 1.
MseReport estimator_mse(const SchemeConfig& cfg, std::size_t m, std::size_t replicas,
                        const Functional& phi, double z, std::uint64_t base_seed);

/// Writes traj_id,k,t_nominal,t_realized,y0,...
void write_ensemble_csv(std::ostream& os, const Ensemble& e);

}  // namespace rtsrk
