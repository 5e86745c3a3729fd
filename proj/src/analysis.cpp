#include "rtsrk/analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>

namespace rtsrk {

namespace {

/// RK4 from y over n steps of size h, increments summed with Kahan compensation.
State rk4_compensated(const Rhs& f, const State& y0, double h, std::size_t n)
{
    static const ButcherTableau tab = ButcherTableau::rk4();
    State y = y0;
    State carry = State::Zero(y0.size());
    for (std::size_t k = 0; k < n; ++k) {
        const State inc = explicit_rk_increment(tab, f, y, h) - carry;
        const State sum = y + inc;
        carry = (sum - y) - inc;
        y = sum;
        if (!all_finite(y)) throw DivergenceError(k + 1, y - inc);
    }
    return y;
}

std::size_t steps_for(double t_final, double h)
{
    const double ratio = t_final / h;
    const double n = std::round(ratio);
    if (n < 1.0 || std::abs(ratio - n) > 1e-9 * ratio)
        throw std::invalid_argument("T / h must be a positive integer (h = " + std::to_string(h) + ")");
    return static_cast<std::size_t>(n);
}

void check_grid(const std::vector<double>& h)
{
    if (h.empty()) throw std::invalid_argument("empty step grid");
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (!(h[i] > 0.0)) throw std::invalid_argument("step sizes must be positive");
        if (i > 0 && !(h[i] < h[i - 1]))
            throw std::invalid_argument("step grid must be strictly decreasing");
    }
}

double theory_mean_square(double p, int q) { return std::min(p, static_cast<double>(q)); }
double theory_weak(double p, int q) { return std::min(2.0 * p, static_cast<double>(q)); }

/// Flags noisy points, fits the rest and checks monotone decrease.
void finish_study(ConvergenceStudy& s)
{
    const std::size_t n = s.errors.size();
    s.flagged.assign(n, false);
    std::vector<double> hs, es;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(s.errors[i] > 0.0) || s.std_errors[i] > 0.5 * s.errors[i]) {
            s.flagged[i] = true;
            s.notes.push_back("h = " + std::to_string(s.h_grid[i])
                              + ": Monte Carlo noise dominates, excluded from the fit");
            continue;
        }
        hs.push_back(s.h_grid[i]);
        es.push_back(s.errors[i]);
    }
    for (std::size_t i = 1; i < es.size(); ++i)
        if (es[i] >= es[i - 1]) s.monotone = false;
    if (hs.size() >= 3) {
        s.fitted_order = fit_order(hs, es);
    } else {
        s.fitted_order = std::numeric_limits<double>::quiet_NaN();
        s.notes.push_back("fewer than three usable points; increase M or narrow the grid");
    }
}

SchemeConfig scheme_for(const StudySpec& spec, double h)
{
    SchemeConfig cfg;
    cfg.system = spec.system;
    cfg.y0 = spec.y0;
    cfg.stepper = spec.stepper;
    cfg.scheme = Scheme::rts_rk;
    cfg.law = spec.law;
    cfg.lognormal_variant = spec.lognormal_variant;
    cfg.h = h;
    cfg.p = spec.p;
    cfg.n_steps = steps_for(spec.t_final, h);
    cfg.recording = Recording::endpoints(cfg.n_steps);
    return cfg;
}

State study_reference(const StudySpec& spec)
{
    check_grid(spec.h_grid);
    const double h_min = spec.h_grid.back();
    const double h_ref = spec.h_ref > 0.0 ? spec.h_ref : h_min / 64.0;
    if (h_ref > h_min / 50.0) throw std::invalid_argument("reference step must be <= h_min / 50");
    return reference_solution(spec.system, spec.y0, spec.t_final, h_ref);
}

double effective_p(const StudySpec& spec)
{
    return spec.law == StepLaw::degenerate ? std::numeric_limits<double>::infinity() : spec.p;
}

}  // namespace

State reference_solution(const OdeSystem& sys, const State& y0, double t_final, double h_ref)
{
    if (!(t_final >= 0.0)) throw std::invalid_argument("final time must be non-negative");
    if (sys.exact_flow) return sys.exact_flow(t_final, y0);
    if (!(h_ref > 0.0)) throw std::invalid_argument("reference step must be positive");
    if (t_final == 0.0) return y0;
    const auto n = static_cast<std::size_t>(std::ceil(t_final / h_ref - 1e-9));
    return rk4_compensated(sys.rhs, y0, t_final / static_cast<double>(n), n);
}

std::vector<State> reference_trajectory(const OdeSystem& sys, const State& y0, double h,
                                        std::size_t n, int substeps)
{
    if (substeps < 1) throw std::invalid_argument("need at least one substep");
    std::vector<State> out;
    out.reserve(n + 1);
    out.push_back(y0);
    State y = y0;
    for (std::size_t k = 1; k <= n; ++k) {
        if (sys.exact_flow) {
            out.push_back(sys.exact_flow(static_cast<double>(k) * h, y0));
        } else {
            y = rk4_compensated(sys.rhs, y, h / substeps, static_cast<std::size_t>(substeps));
            out.push_back(y);
        }
    }
    return out;
}

double fit_order(const std::vector<double>& h, const std::vector<double>& errors)
{
    if (h.size() != errors.size()) throw std::invalid_argument("grid and errors differ in length");
    if (h.size() < 3) throw std::invalid_argument("fit_order needs at least three points");
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (!(h[i] > 0.0)) throw std::invalid_argument("step sizes must be positive");
        if (!(errors[i] > 0.0) || !std::isfinite(errors[i]))
            throw std::invalid_argument("non-positive error at h = " + std::to_string(h[i])
                                        + ": Monte Carlo noise floor reached, increase M or "
                                          "narrow the grid");
    }
    const double n = static_cast<double>(h.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        mx += std::log(h[i]);
        my += std::log(errors[i]);
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        const double dx = std::log(h[i]) - mx;
        sxy += dx * (std::log(errors[i]) - my);
        sxx += dx * dx;
    }
    if (!(sxx > 0.0)) throw std::invalid_argument("step sizes must not all be equal");
    return sxy / sxx;
}

TwoRegimeFit fit_two_regimes(const std::vector<double>& h, const std::vector<double>& errors,
                             std::size_t min_points)
{
    check_grid(h);
    if (h.size() != errors.size()) throw std::invalid_argument("grid and errors differ in length");
    if (min_points < 2) throw std::invalid_argument("segments need at least two points");
    const std::size_t n = h.size();
    if (n < 2 * min_points - 1) throw std::invalid_argument("too few points for two segments");
    for (double e : errors)
        if (!(e > 0.0)) throw std::invalid_argument("errors must be positive");

    TwoRegimeFit best;
    best.residual = std::numeric_limits<double>::infinity();
    const auto rows = static_cast<Eigen::Index>(n);
    Eigen::VectorXd y(rows);
    for (std::size_t i = 0; i < n; ++i) y[static_cast<Eigen::Index>(i)] = std::log(errors[i]);
    for (std::size_t j = min_points - 1; j + min_points <= n; ++j) {
        const double xj = std::log(h[j]);
        Eigen::MatrixXd a(rows, 3);
        for (std::size_t i = 0; i < n; ++i) {
            const double dx = std::log(h[i]) - xj;
            const auto r = static_cast<Eigen::Index>(i);
            a(r, 0) = 1.0;
            a(r, 1) = std::max(dx, 0.0);
            a(r, 2) = std::min(dx, 0.0);
        }
        const Eigen::Vector3d coef = a.colPivHouseholderQr().solve(y);
        const double res = (a * coef - y).squaredNorm();
        if (res < best.residual) best = {j, coef[1], coef[2], res};
    }
    return best;
}

std::string to_string(StudyKind kind)
{
    switch (kind) {
    case StudyKind::mean_square: return "mean_square";
    case StudyKind::weak: return "weak";
    case StudyKind::mse: return "mse";
    }
    return "?";
}

bool ConvergenceStudy::any_flagged() const
{
    return std::any_of(flagged.begin(), flagged.end(), [](bool b) { return b; });
}

ConvergenceStudy study_mean_square(const StudySpec& spec)
{
    const State ref = study_reference(spec);
    ConvergenceStudy s;
    s.kind = StudyKind::mean_square;
    s.h_grid = spec.h_grid;
    s.m = spec.m;
    s.seed = spec.seed;
    s.theory_order = theory_mean_square(effective_p(spec), spec.stepper.order());
    for (std::size_t i = 0; i < spec.h_grid.size(); ++i) {
        const SchemeConfig cfg = scheme_for(spec, spec.h_grid[i]);
        const Ensemble e = run_ensemble(cfg, spec.m, derive_seed(spec.seed, i));
        s.failed_trajectories += e.failed_count;
        const Estimate err = ms_error_estimate(e, ref, cfg.n_steps);
        s.errors.push_back(err.value);
        s.std_errors.push_back(err.std_error);
    }
    finish_study(s);
    return s;
}

ConvergenceStudy study_weak(const StudySpec& spec, const Functional& phi)
{
    const double phi_ref = phi(study_reference(spec));
    ConvergenceStudy s;
    s.kind = StudyKind::weak;
    s.h_grid = spec.h_grid;
    s.m = spec.m;
    s.seed = spec.seed;
    s.theory_order = theory_weak(effective_p(spec), spec.stepper.order());
    for (std::size_t i = 0; i < spec.h_grid.size(); ++i) {
        const SchemeConfig cfg = scheme_for(spec, spec.h_grid[i]);
        const Ensemble e = run_ensemble(cfg, spec.m, derive_seed(spec.seed, i));
        s.failed_trajectories += e.failed_count;
        const Estimate err = weak_error_estimate(e, phi, phi_ref, cfg.n_steps);
        s.errors.push_back(err.value);
        s.std_errors.push_back(err.std_error);
    }
    finish_study(s);
    return s;
}

ConvergenceStudy study_estimator_mse(const StudySpec& spec, std::size_t replicas,
                                     const Functional& phi)
{
    const double z = phi(study_reference(spec));
    const double p = effective_p(spec);
    const int q = spec.stepper.order();
    ConvergenceStudy s;
    s.kind = StudyKind::mse;
    s.h_grid = spec.h_grid;
    s.m = spec.m;
    s.replicas = replicas;
    s.seed = spec.seed;
    s.theory_order = 2.0 * theory_mean_square(p, q);
    for (std::size_t i = 0; i < spec.h_grid.size(); ++i) {
        const SchemeConfig cfg = scheme_for(spec, spec.h_grid[i]);
        const MseReport rep = estimator_mse(cfg, spec.m, replicas, phi, z, derive_seed(spec.seed, i));
        s.errors.push_back(rep.mse);
        s.std_errors.push_back(rep.std_error);
    }
    finish_study(s);

    // c (h^{2 min{2p,q}} + h^{2 min{p,q}} / M), c matched to the data in log space
    const double a = 2.0 * theory_weak(p, q);
    const double b = 2.0 * theory_mean_square(p, q);
    std::vector<double> shape;
    double log_c = 0.0;
    int used = 0;
    for (std::size_t i = 0; i < s.h_grid.size(); ++i) {
        const double h = s.h_grid[i];
        shape.push_back(std::pow(h, a) + std::pow(h, b) / static_cast<double>(spec.m));
        if (s.errors[i] > 0.0 && shape.back() > 0.0) {
            log_c += std::log(s.errors[i]) - std::log(shape.back());
            ++used;
        }
    }
    const double c = used > 0 ? std::exp(log_c / used) : 0.0;
    for (double v : shape) s.theory_curve.push_back(c * v);
    return s;
}

double SeriesReport::max() const
{
    if (values.empty()) return 0.0;
    return *std::max_element(values.begin(), values.end());
}

double SeriesReport::mean_over(double t0, double t1) const
{
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (times[i] >= t0 && times[i] <= t1) {
            sum += values[i];
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("no samples in the requested time window");
    return sum / static_cast<double>(n);
}

SeriesReport integral_drift(const Trajectory& traj, const FirstIntegral& integral)
{
    SeriesReport r;
    if (traj.states.empty()) return r;
    const double i0 = eval_integral(integral, traj.states.front());
    r.times.reserve(traj.states.size());
    r.values.reserve(traj.states.size());
    for (std::size_t j = 0; j < traj.states.size(); ++j) {
        r.times.push_back(traj.nominal_time(traj.indices[j]));
        r.values.push_back(std::abs(eval_integral(integral, traj.states[j]) - i0));
    }
    return r;
}

SeriesReport integral_drift(const Ensemble& e, const FirstIntegral& integral)
{
    if (e.trajectories.empty()) throw std::invalid_argument("empty ensemble");
    SeriesReport mean = integral_drift(e.trajectories.front(), integral);
    for (std::size_t t = 1; t < e.size(); ++t) {
        if (e.trajectories[t].indices != e.trajectories.front().indices)
            throw std::invalid_argument("trajectories record different steps");
        const SeriesReport r = integral_drift(e.trajectories[t], integral);
        for (std::size_t j = 0; j < r.values.size(); ++j) mean.values[j] += r.values[j];
    }
    for (double& v : mean.values) v /= static_cast<double>(e.size());
    return mean;
}

std::vector<std::size_t> log_time_indices(double h, std::size_t n, int per_decade)
{
    if (!(h > 0.0) || n < 1 || per_decade < 1) throw std::invalid_argument("bad log grid request");
    std::vector<std::size_t> out;
    const double decades = std::log10(static_cast<double>(n));
    const auto points = static_cast<std::size_t>(std::ceil(decades * per_decade));
    for (std::size_t j = 0; j <= points; ++j) {
        const double k = std::pow(10.0, static_cast<double>(j) / per_decade);
        const auto idx = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(k)));
        if (out.empty() || idx > out.back()) out.push_back(idx);
    }
    if (out.back() != n) out.push_back(n);
    return out;
}

SeriesReport hamiltonian_error_longtime(const SchemeConfig& cfg, std::size_t m,
                                        std::uint64_t base_seed, int per_decade)
{
    if (!cfg.system.hamiltonian) throw std::invalid_argument("system has no Hamiltonian structure");
    const HamiltonianStructure& ham = *cfg.system.hamiltonian;
    const std::vector<std::size_t> idx = log_time_indices(cfg.h, cfg.n_steps, per_decade);
    const double q0 = eval_energy(ham, cfg.y0);

    SchemeConfig run_cfg = cfg;
    run_cfg.recording = Recording::endpoints(cfg.n_steps);
    std::vector<std::vector<double>> rows(m, std::vector<double>(idx.size(), 0.0));
    auto factory = [&](std::size_t traj) -> StepObserver {
        auto cursor = std::make_shared<std::size_t>(0);
        std::vector<double>* row = &rows[traj];
        return [&ham, &idx, q0, cursor, row](std::size_t k, double, const State& y) {
            if (*cursor < idx.size() && idx[*cursor] == k) {
                (*row)[*cursor] = std::abs(eval_energy(ham, y) - q0);
                ++*cursor;
            }
        };
    };
    const Ensemble e = run_ensemble(run_cfg, m, base_seed, 0, factory);

    std::vector<bool> failed(m, false);
    for (std::uint64_t id : e.failed_ids) failed[id] = true;
    SeriesReport r;
    r.values.assign(idx.size(), 0.0);
    for (std::size_t j = 0; j < idx.size(); ++j) r.times.push_back(static_cast<double>(idx[j]) * cfg.h);
    for (std::size_t t = 0; t < m; ++t) {
        if (failed[t]) continue;
        for (std::size_t j = 0; j < idx.size(); ++j) r.values[j] += rows[t][j];
    }
    for (double& v : r.values) v /= static_cast<double>(e.size());
    return r;
}

ErrorEstimatorComparison error_estimator_comparison(const OdeSystem& sys, const State& y0,
                                                    double h, double t_final, double p,
                                                    std::size_t m, std::uint64_t seed)
{
    const std::size_t n = steps_for(t_final, h);
    const std::vector<State> ref = reference_trajectory(sys, y0, h, n, 64);

    ErrorEstimatorComparison out;
    State y = y0;
    double accumulated = 0.0;
    for (std::size_t k = 0; k <= n; ++k) {
        const double t = static_cast<double>(k) * h;
        out.local_estimate.times.push_back(t);
        out.local_estimate.values.push_back(accumulated);
        out.true_error.times.push_back(t);
        out.true_error.values.push_back((y - ref[k]).norm());
        if (k == n) break;
        const EmbeddedEulerHeun step = step_embedded_euler_heun(sys.rhs, y, h);
        accumulated += step.error;
        y = step.euler;
        if (!all_finite(y)) throw DivergenceError(k + 1, y);
    }

    SchemeConfig cfg;
    cfg.system = sys;
    cfg.y0 = y0;
    cfg.stepper = Stepper::from_name("euler");
    cfg.scheme = Scheme::rts_rk;
    cfg.law = StepLaw::uniform;
    cfg.h = h;
    cfg.p = p;
    cfg.n_steps = n;
    cfg.recording = Recording{{}, false};
    const Ensemble e = run_ensemble(cfg, m, seed);
    for (std::size_t k = 0; k <= n; ++k) {
        out.std_indicator.times.push_back(static_cast<double>(k) * h);
        out.std_indicator.values.push_back(std_indicator(e, k));
    }
    return out;
}

}  // namespace rtsrk
