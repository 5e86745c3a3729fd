#include "rtsrk/integrators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rtsrk {

Scheme parse_scheme(std::string_view name)
{
    if (name == "det" || name == "deterministic") return Scheme::deterministic;
    if (name == "rts" || name == "rts_rk") return Scheme::rts_rk;
    if (name == "add" || name == "additive_noise") return Scheme::additive_noise;
    throw std::invalid_argument("unknown scheme '" + std::string(name) + "'");
}

std::string to_string(Scheme scheme)
{
    switch (scheme) {
    case Scheme::deterministic: return "deterministic";
    case Scheme::rts_rk: return "rts_rk";
    case Scheme::additive_noise: return "additive_noise";
    }
    return "?";
}

const State& Trajectory::state(std::size_t k) const
{
    if (indices.empty() || k > n_steps) throw std::out_of_range("step index out of range");
    auto it = std::lower_bound(indices.begin(), indices.end(), k);
    if (it == indices.end() || *it != k)
        throw std::out_of_range("state " + std::to_string(k) + " was not recorded");
    return states[static_cast<std::size_t>(it - indices.begin())];
}

double Trajectory::realized_time(std::size_t k) const
{
    if (k > n_steps) throw std::out_of_range("step index out of range");
    auto it = std::lower_bound(indices.begin(), indices.end(), k);
    if (it == indices.end() || *it != k)
        throw std::out_of_range("time " + std::to_string(k) + " was not recorded");
    return realized_times[static_cast<std::size_t>(it - indices.begin())];
}

namespace {

/// Drives a one-step map. next(y, k) returns the pair (new state, step used).
template <class Next>
Trajectory march(const State& y0, std::size_t n_steps, double nominal_h, Scheme scheme,
                 const Recording& rec, const StepObserver& observer, Next&& next)
{
    if (n_steps < 1) throw std::invalid_argument("need at least one step");
    if (!(nominal_h > 0.0)) throw std::invalid_argument("nominal step must be positive");

    Trajectory traj;
    traj.n_steps = n_steps;
    traj.nominal_h = nominal_h;
    traj.scheme = scheme;

    std::vector<std::size_t> wanted = rec.indices;
    const bool keep_all = wanted.empty();
    std::sort(wanted.begin(), wanted.end());
    wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());
    if (!wanted.empty() && wanted.back() > n_steps)
        throw std::invalid_argument("recording index beyond the last step");
    const std::size_t expected = keep_all ? n_steps + 1 : wanted.size();
    traj.indices.reserve(expected);
    traj.states.reserve(expected);
    traj.realized_times.reserve(expected);
    if (rec.keep_steps) traj.realized_steps.reserve(n_steps);

    std::size_t cursor = 0;
    auto store = [&](std::size_t k, double t, const State& y) {
        if (keep_all || (cursor < wanted.size() && wanted[cursor] == k)) {
            traj.indices.push_back(k);
            traj.states.push_back(y);
            traj.realized_times.push_back(t);
            ++cursor;
        }
    };

    State y = y0;
    double t = 0.0;
    store(0, t, y);
    for (std::size_t k = 0; k < n_steps; ++k) {
        double used = nominal_h;
        try {
            auto [y_next, step] = next(y);
            used = step;
            if (!all_finite(y_next)) throw DivergenceError(k + 1, y);
            y = std::move(y_next);
        } catch (const DivergenceError&) {
            throw DivergenceError(k + 1, y);
        }
        t += used;
        if (rec.keep_steps) traj.realized_steps.push_back(used);
        store(k + 1, t, y);
        if (observer) observer(k + 1, t, y);
    }
    return traj;
}

}  // namespace

Trajectory integrate_deterministic(const Stepper& stepper, const OdeSystem& sys, const State& y0,
                                   double h, std::size_t n_steps, const Recording& rec,
                                   const StepObserver& observer)
{
    return march(y0, n_steps, h, Scheme::deterministic, rec, observer, [&](const State& y) {
        return std::pair{stepper.step(sys, y, h), h};
    });
}

Trajectory integrate_rts_rk(const Stepper& stepper, const StepDistribution& dist,
                            const OdeSystem& sys, const State& y0, std::size_t n_steps,
                            RngStream& rng, const Recording& rec, const StepObserver& observer)
{
    Trajectory traj = march(y0, n_steps, dist.mean_step(), Scheme::rts_rk, rec, observer,
                            [&](const State& y) {
                                const double step = dist.sample(rng);
                                return std::pair{stepper.step(sys, y, step), step};
                            });
    traj.seed = rng.seed();
    traj.stream_id = rng.stream_id();
    return traj;
}

Trajectory integrate_additive_noise(const Stepper& stepper, const OdeSystem& sys,
                                    const State& y0, double h, double p, std::size_t n_steps,
                                    RngStream& rng, const Recording& rec,
                                    const StepObserver& observer, double noise_scale)
{
    if (!(p >= 1.0)) throw std::invalid_argument("additive noise needs p >= 1");
    if (!(noise_scale >= 0.0)) throw std::invalid_argument("noise scale must be non-negative");
    const double sd = noise_scale * std::sqrt(std::pow(h, 2.0 * p + 1.0));
    Trajectory traj = march(y0, n_steps, h, Scheme::additive_noise, rec, observer,
                            [&](const State& y) {
                                State next = stepper.step(sys, y, h);
                                if (sd > 0.0)
                                    for (Eigen::Index i = 0; i < next.size(); ++i)
                                        next[i] += sd * rng.normal();
                                return std::pair{std::move(next), h};
                            });
    traj.seed = rng.seed();
    traj.stream_id = rng.stream_id();
    return traj;
}

}  // namespace rtsrk
