#pragma once

#include "rtsrk/ensemble.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace rtsrk {

/// Exact flow at T when the system has one, else RK4 with step about h_ref and
/// compensated accumulation of the increments.
State reference_solution(const OdeSystem& sys, const State& y0, double t_final, double h_ref);

/// Reference states at t = k h, k = 0..n, each step of h split into
/// `substeps` RK4 steps (or the exact flow when available).
std::vector<State> reference_trajectory(const OdeSystem& sys, const State& y0, double h,
                                        std::size_t n, int substeps);

/// Least-squares slope of log(error) against log(h). Needs at least three
/// points and strictly positive errors.
double fit_order(const std::vector<double>& h, const std::vector<double>& errors);

/// Continuous two-segment fit in log-log space with the hinge on a grid point.
struct TwoRegimeFit {
    std::size_t breakpoint = 0;  // index into the grid
    double slope_coarse = 0.0;   // over h_grid[0..breakpoint]
    double slope_fine = 0.0;     // over h_grid[breakpoint..]
    double residual = 0.0;       // sum of squared log residuals
};

/// Each segment keeps at least `min_points` points including the hinge.
TwoRegimeFit fit_two_regimes(const std::vector<double>& h, const std::vector<double>& errors,
                             std::size_t min_points = 2);

enum class StudyKind { mean_square, weak, mse };
std::string to_string(StudyKind kind);

struct ConvergenceStudy {
    StudyKind kind = StudyKind::mean_square;
    std::vector<double> h_grid;  // strictly decreasing
    std::vector<double> errors;
    std::vector<double> std_errors;
    std::vector<bool> flagged;  // MC noise dominates: std error > half the error
    std::vector<double> theory_curve;  // mse studies only
    double fitted_order = 0.0;  // NaN when fewer than three points survive
    double theory_order = 0.0;
    std::size_t m = 0;
    std::size_t replicas = 0;
    std::uint64_t seed = 0;
    std::size_t failed_trajectories = 0;
    bool monotone = true;  // errors decrease along the unflagged points
    std::vector<std::string> notes;

    bool any_flagged() const;
};

struct StudySpec {
    OdeSystem system;
    State y0;
    Stepper stepper = Stepper::from_name("euler");
    StepLaw law = StepLaw::uniform;
    LognormalVariant lognormal_variant = LognormalVariant::as_printed;
    double p = 1.0;
    std::vector<double> h_grid;
    std::size_t m = 1000;
    double t_final = 1.0;
    std::uint64_t seed = 0;
    double h_ref = 0.0;  // 0 -> smallest h / 64
};

/// Root mean-square error at T against the reference; theory order min{p, q}.
ConvergenceStudy study_mean_square(const StudySpec& spec);

/// |E phi(Y_N) - phi(y(T))|; theory order min{2p, q}. Points whose standard
/// error exceeds half the error are flagged and left out of the fit.
ConvergenceStudy study_weak(const StudySpec& spec, const Functional& phi);

/// estimator_mse over the grid with R replicas; the theory curve
/// c (h^{2 min{2p,q}} + h^{2 min{p,q}} / M) is scaled to the data.
ConvergenceStudy study_estimator_mse(const StudySpec& spec, std::size_t replicas,
                                     const Functional& phi);

struct SeriesReport {
    std::vector<double> times;
    std::vector<double> values;

    double max() const;
    /// Mean of the values with t in [t0, t1].
    double mean_over(double t0, double t1) const;
};

/// |I(Y_k) - I(Y_0)| at the recorded states, against nominal time.
SeriesReport integral_drift(const Trajectory& traj, const FirstIntegral& integral);
/// Ensemble mean of the above; every trajectory must record the same indices.
SeriesReport integral_drift(const Ensemble& e, const FirstIntegral& integral);

/// Step indices on a logarithmic time grid from h to n h, at most
/// `per_decade` points per decade.
std::vector<std::size_t> log_time_indices(double h, std::size_t n, int per_decade);

/// Mean over M trajectories of |Q(Y_n) - Q(y0)| on the logarithmic grid.
/// States are streamed through an observer and never stored.
SeriesReport hamiltonian_error_longtime(const SchemeConfig& cfg, std::size_t m,
                                        std::uint64_t base_seed, int per_decade = 128);

struct ErrorEstimatorComparison {
    SeriesReport local_estimate;  // accumulated embedded Euler-Heun estimate
    SeriesReport std_indicator;   // RTS-RK Euler ensemble spread
    SeriesReport true_error;      // deterministic Euler vs reference
};

ErrorEstimatorComparison error_estimator_comparison(const OdeSystem& sys, const State& y0,
                                                    double h, double t_final, double p,
                                                    std::size_t m, std::uint64_t seed);

}  // namespace rtsrk
