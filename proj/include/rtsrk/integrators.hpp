#pragma once

#include "rtsrk/problems.hpp"
#include "rtsrk/random_steps.hpp"
#include "rtsrk/rk_core.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace rtsrk {

enum class Scheme { deterministic, rts_rk, additive_noise };

Scheme parse_scheme(std::string_view name);  // det | rts | add
std::string to_string(Scheme scheme);

/// Which states an integration keeps. An empty index list keeps every state.
struct Recording {
    std::vector<std::size_t> indices;
    bool keep_steps = true;

    static Recording all() { return {}; }
    static Recording endpoints(std::size_t n_steps) { return {{0, n_steps}, false}; }
};

/// Called after every step with the step index k (1..N), the realized time
/// and the new state.
using StepObserver = std::function<void(std::size_t, double, const State&)>;

struct Trajectory {
    std::vector<std::size_t> indices;  // step index of each stored state
    std::vector<State> states;
    std::vector<double> realized_times;
    std::vector<double> realized_steps;  // empty unless recorded
    std::size_t n_steps = 0;
    double nominal_h = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
    Scheme scheme = Scheme::deterministic;

    /// State after k steps; throws std::out_of_range when k was not recorded.
    const State& state(std::size_t k) const;
    double realized_time(std::size_t k) const;
    double nominal_time(std::size_t k) const { return static_cast<double>(k) * nominal_h; }
    const State& final_state() const { return states.back(); }
};

Trajectory integrate_deterministic(const Stepper& stepper, const OdeSystem& sys, const State& y0,
                                   double h, std::size_t n_steps, const Recording& rec = {},
                                   const StepObserver& observer = {});

/// Y_{k+1} = Psi_{H_k}(Y_k) with H_k drawn i.i.d. from dist.
Trajectory integrate_rts_rk(const Stepper& stepper, const StepDistribution& dist,
                            const OdeSystem& sys, const State& y0, std::size_t n_steps,
                            RngStream& rng, const Recording& rec = {},
                            const StepObserver& observer = {});

/// Y_{k+1} = Psi_h(Y_k) + xi_k with xi_k ~ N(0, noise_scale^2 h^{2p+1} I).
Trajectory integrate_additive_noise(const Stepper& stepper, const OdeSystem& sys,
                                    const State& y0, double h, double p, std::size_t n_steps,
                                    RngStream& rng, const Recording& rec = {},
                                    const StepObserver& observer = {}, double noise_scale = 1.0);

}  // namespace rtsrk
