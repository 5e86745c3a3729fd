#include "rtsrk/ensemble.hpp"

#include <cmath>
#include <exception>
#include <iomanip>
#include <optional>
#include <ostream>
#include <stdexcept>

namespace rtsrk {

StepDistribution SchemeConfig::distribution() const
{
    if (scheme != Scheme::rts_rk) throw std::logic_error("only the rts scheme has a step law");
    switch (law) {
    case StepLaw::uniform: return StepDistribution::uniform(h, p);
    case StepLaw::lognormal: return StepDistribution::lognormal(h, p, lognormal_variant);
    case StepLaw::degenerate: return StepDistribution::degenerate(h);
    }
    throw std::logic_error("unreachable");
}

Trajectory SchemeConfig::run(RngStream& rng, const StepObserver& observer) const
{
    switch (scheme) {
    case Scheme::deterministic: {
        Trajectory t = integrate_deterministic(stepper, system, y0, h, n_steps, recording, observer);
        t.seed = rng.seed();
        t.stream_id = rng.stream_id();
        return t;
    }
    case Scheme::rts_rk:
        return integrate_rts_rk(stepper, distribution(), system, y0, n_steps, rng, recording,
                                observer);
    case Scheme::additive_noise:
        return integrate_additive_noise(stepper, system, y0, h, p, n_steps, rng, recording,
                                        observer, noise_scale);
    }
    throw std::logic_error("unreachable");
}

Ensemble run_ensemble(const SchemeConfig& cfg, std::size_t m, std::uint64_t base_seed,
                      std::uint64_t stream_offset, const ObserverFactory& observers)
{
    if (m < 1) throw std::invalid_argument("ensemble size must be at least 1");
    if (cfg.scheme == Scheme::rts_rk) (void)cfg.distribution();  // validate before fanning out

    std::vector<std::optional<Trajectory>> slots(m);
    std::exception_ptr fatal;
    const auto count = static_cast<long long>(m);

#pragma omp parallel for schedule(dynamic, 1)
    for (long long i = 0; i < count; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        try {
            RngStream rng(base_seed, stream_offset + idx);
            StepObserver obs = observers ? observers(idx) : StepObserver{};
            slots[idx] = cfg.run(rng, obs);
        } catch (const DivergenceError&) {
        } catch (const ConvergenceFailure&) {
        } catch (...) {
#pragma omp critical(rtsrk_ensemble_fatal)
            if (!fatal) fatal = std::current_exception();
        }
    }
    if (fatal) std::rethrow_exception(fatal);

    Ensemble e;
    e.requested = m;
    e.base_seed = base_seed;
    e.trajectories.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (slots[i]) {
            e.trajectories.push_back(std::move(*slots[i]));
        } else {
            ++e.failed_count;
            e.failed_ids.push_back(stream_offset + i);
        }
    }
    if (e.trajectories.empty()) throw std::runtime_error("every trajectory of the ensemble diverged");
    return e;
}

namespace {

void check_index(const Ensemble& e, std::size_t k)
{
    if (e.trajectories.empty()) throw std::invalid_argument("empty ensemble");
    if (k > e.trajectories.front().n_steps)
        throw std::out_of_range("step index " + std::to_string(k) + " beyond N");
}

Estimate mean_and_se(const std::vector<double>& xs)
{
    const double n = static_cast<double>(xs.size());
    double sum = 0.0;
    for (double x : xs) sum += x;
    const double mean = sum / n;
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

}  // namespace

Estimate mc_functional_estimate(const Ensemble& e, const Functional& phi, std::size_t k)
{
    check_index(e, k);
    std::vector<double> values;
    values.reserve(e.size());
    for (const auto& t : e.trajectories) values.push_back(phi(t.state(k)));
    return mean_and_se(values);
}

double mc_functional(const Ensemble& e, const Functional& phi, std::size_t k)
{
    return mc_functional_estimate(e, phi, k).value;
}

Estimate ms_error_estimate(const Ensemble& e, const State& y_ref, std::size_t k)
{
    check_index(e, k);
    std::vector<double> sq;
    sq.reserve(e.size());
    for (const auto& t : e.trajectories) sq.push_back((t.state(k) - y_ref).squaredNorm());
    const Estimate msq = mean_and_se(sq);
    const double root = std::sqrt(msq.value);
    return {root, root > 0.0 ? msq.std_error / (2.0 * root) : 0.0};
}

double ms_error(const Ensemble& e, const State& y_ref, std::size_t k)
{
    return ms_error_estimate(e, y_ref, k).value;
}

Estimate weak_error_estimate(const Ensemble& e, const Functional& phi, double phi_ref,
                             std::size_t k)
{
    const Estimate m = mc_functional_estimate(e, phi, k);
    return {std::abs(m.value - phi_ref), m.std_error};
}

double weak_error(const Ensemble& e, const Functional& phi, double phi_ref, std::size_t k)
{
    return weak_error_estimate(e, phi, phi_ref, k).value;
}

double std_indicator(const Ensemble& e, std::size_t k)
{
    check_index(e, k);
    if (e.size() < 2) throw std::invalid_argument("std_indicator needs at least two trajectories");
    const State& first = e.trajectories.front().state(k);
    State mean = State::Zero(first.size());
    for (const auto& t : e.trajectories) mean += t.state(k);
    mean /= static_cast<double>(e.size());
    double trace = 0.0;
    for (const auto& t : e.trajectories) trace += (t.state(k) - mean).squaredNorm();
    return std::sqrt(trace / static_cast<double>(e.size() - 1));
}

MseReport estimator_mse(const SchemeConfig& cfg, std::size_t m, std::size_t replicas,
                        const Functional& phi, double z, std::uint64_t base_seed)
{
    if (replicas < kMinReplicas)
        throw std::invalid_argument("estimator_mse needs at least " + std::to_string(kMinReplicas)
                                    + " replicas");
    SchemeConfig run_cfg = cfg;
    run_cfg.recording = Recording::endpoints(cfg.n_steps);

    MseReport rep;
    rep.estimates.reserve(replicas);
    std::vector<double> sq;
    sq.reserve(replicas);
    for (std::size_t r = 0; r < replicas; ++r) {
        const Ensemble e = run_ensemble(run_cfg, m, base_seed, static_cast<std::uint64_t>(r) * m);
        if (e.failed_count > 0)
            throw std::runtime_error("estimator_mse: " + std::to_string(e.failed_count)
                                     + " trajectories diverged");
        const double zhat = mc_functional(e, phi, cfg.n_steps);
        rep.estimates.push_back(zhat);
        sq.push_back((z - zhat) * (z - zhat));
    }
    const Estimate mse = mean_and_se(sq);
    rep.mse = mse.value;
    rep.std_error = mse.std_error;
    const Estimate zbar = mean_and_se(rep.estimates);
    rep.bias = zbar.value - z;
    double var = 0.0;
    for (double x : rep.estimates) var += (x - zbar.value) * (x - zbar.value);
    rep.variance = var / static_cast<double>(replicas);
    return rep;
}

void write_ensemble_csv(std::ostream& os, const Ensemble& e)
{
    if (e.trajectories.empty()) return;
    const Eigen::Index d = e.trajectories.front().states.front().size();
    os << "traj_id,k,t_nominal,t_realized";
    for (Eigen::Index i = 0; i < d; ++i) os << ",y" << i;
    os << '\n';
    os << std::setprecision(17);
    for (const auto& t : e.trajectories) {
        for (std::size_t j = 0; j < t.indices.size(); ++j) {
            const std::size_t k = t.indices[j];
            os << t.stream_id << ',' << k << ',' << t.nominal_time(k) << ',' << t.realized_times[j];
            for (Eigen::Index i = 0; i < d; ++i) os << ',' << t.states[j][i];
            os << '\n';
        }
    }
}

}  // namespace rtsrk
