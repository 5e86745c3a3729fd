#include "rtsrk/integrators.hpp"

#include <doctest.h>

#include <cmath>

using namespace rtsrk;

namespace {

OdeSystem blow_up()
{
    OdeSystem sys;
    sys.name = "riccati";
    sys.dim = 1;
    sys.rhs = [](const State& y) { return State(y.array().square()); };
    sys.default_y0 = make_state({1.0});
    return sys;
}

OdeSystem harmonic()
{
    OdeSystem sys;
    sys.name = "harmonic";
    sys.dim = 2;
    sys.rhs = [](const State& y) { return make_state({-y[1], y[0]}); };
    sys.default_y0 = make_state({1.0, 0.0});
    return sys;
}

}  // namespace

TEST_CASE("explicit Euler on linear decay")
{
    const OdeSystem sys = make_problem("linear_decay");
    const Trajectory t = integrate_deterministic(Stepper::from_name("euler"), sys, make_state({1.0}), 0.5, 2);
    REQUIRE(t.states.size() == 3);
    CHECK(t.states[0][0] == 1.0);
    CHECK(t.states[1][0] == 0.5);
    CHECK(t.states[2][0] == 0.25);
    CHECK(t.realized_steps == std::vector<double>{0.5, 0.5});
    CHECK(t.scheme == Scheme::deterministic);
    CHECK(t.nominal_time(2) == 1.0);
}

TEST_CASE("implicit midpoint single step")
{
    const OdeSystem sys = make_problem("linear_decay");
    const Trajectory t = integrate_deterministic(Stepper::from_name("midpoint"), sys, make_state({1.0}), 0.5, 1);
    CHECK(t.final_state()[0] == doctest::Approx(0.6));
}

TEST_CASE("zero field stays constant for every scheme")
{
    const OdeSystem z = make_zero_field(2);
    const State y0 = make_state({0.3, -0.7});
    RngStream rng(1, 0);
    for (const auto& t : {integrate_deterministic(Stepper::from_name("rk4"), z, y0, 0.1, 10),
                          integrate_rts_rk(Stepper::from_name("heun"), StepDistribution::lognormal(0.1, 1.0), z, y0, 10, rng)}) {
        for (const auto& s : t.states) CHECK(s == y0);
    }
}

TEST_CASE("degenerate steps reproduce the deterministic run bitwise")
{
    const OdeSystem sys = make_problem("lorenz");
    for (const char* name : {"euler", "heun", "rk4", "midpoint", "rkc"}) {
        const Stepper st = Stepper::from_name(name);
        const Trajectory a = integrate_deterministic(st, sys, sys.default_y0, 0.005, 200);
        RngStream rng(3, 0);
        const Trajectory b = integrate_rts_rk(st, StepDistribution::degenerate(0.005), sys, sys.default_y0, 200, rng);
        REQUIRE(a.states.size() == b.states.size());
        for (std::size_t k = 0; k < a.states.size(); ++k) CHECK((a.states[k].array() == b.states[k].array()).all());
        CHECK(a.realized_steps == b.realized_steps);
    }
}

TEST_CASE("RTS Euler uses the realized step")
{
    const OdeSystem sys = make_problem("linear_decay");
    RngStream rng(4, 0);
    const Trajectory t = integrate_rts_rk(Stepper::from_name("euler"), StepDistribution::uniform(0.3, 1.0), sys, make_state({1.0}), 5, rng);
    REQUIRE(t.realized_steps.size() == 5);
    CHECK(t.states[1][0] == doctest::Approx(1.0 - t.realized_steps[0]));
    double prod = 1.0, time = 0.0;
    for (double hk : t.realized_steps) {
        prod *= 1.0 - hk;
        time += hk;
    }
    CHECK(t.final_state()[0] == doctest::Approx(prod));
    CHECK(t.realized_time(5) == doctest::Approx(time));
    CHECK(t.states.size() == t.realized_steps.size() + 1);
}

TEST_CASE("additive noise variance and mean")
{
    const OdeSystem sys = make_problem("linear_decay");
    const Stepper euler = Stepper::from_name("euler");
    const int n = 100000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        RngStream rng(5, static_cast<std::uint64_t>(i));
        const double y = integrate_additive_noise(euler, sys, make_state({1.0}), 0.5, 1.0, 1, rng).final_state()[0];
        s1 += y;
        s2 += y * y;
    }
    const double mean = s1 / n;
    const double var = s2 / n - mean * mean;
    CHECK(var == doctest::Approx(0.125).epsilon(0.02));
    // E v^T Y_1 = v^T Psi_h(y0) = 0.5
    CHECK(std::abs(mean - 0.5) < 3.0 * std::sqrt(0.125 / n));
}

TEST_CASE("additive noise scale zero gives the deterministic run")
{
    const OdeSystem sys = make_problem("fitzhugh_nagumo");
    const Stepper st = Stepper::from_name("heun");
    RngStream rng(6, 0);
    const Trajectory a = integrate_additive_noise(st, sys, sys.default_y0, 0.01, 1.0, 50, rng, {}, {}, 0.0);
    const Trajectory b = integrate_deterministic(st, sys, sys.default_y0, 0.01, 50);
    for (std::size_t k = 0; k < a.states.size(); ++k) CHECK(a.states[k] == b.states[k]);
    CHECK(a.scheme == Scheme::additive_noise);
    for (double hk : a.realized_steps) CHECK(hk == 0.01);
    CHECK_THROWS_AS(integrate_additive_noise(st, sys, sys.default_y0, 0.01, 0.5, 5, rng), std::invalid_argument);
}

TEST_CASE("additive noise biases a quadratic invariant by tr(S) h^(2p+1)")
{
    const OdeSystem sys = harmonic();
    const Stepper mid = Stepper::from_name("midpoint");
    const double h = 0.2, p = 1.0;
    const int n = 200000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        RngStream rng(8, static_cast<std::uint64_t>(i));
        const State y = integrate_additive_noise(mid, sys, sys.default_y0, h, p, 1, rng).final_state();
        const double di = y.squaredNorm() - 1.0;  // S = I in dimension 2
        s1 += di;
        s2 += di * di;
    }
    const double mean = s1 / n;
    const double se = std::sqrt((s2 / n - mean * mean) / n);
    CHECK(std::abs(mean - 2.0 * std::pow(h, 2 * p + 1)) < 3.0 * se);
}

TEST_CASE("RTS conserves linear invariants path-wise")
{
    OdeSystem sys;
    sys.name = "exchange";
    sys.dim = 3;
    sys.rhs = [](const State& y) {
        const double a = 2.0 * y[0] * y[1], b = 0.3 * y[1] * y[1];
        return make_state({-a, a - b, b});
    };
    const State v = make_state({1.0, 1.0, 1.0});
    const State y0 = make_state({0.6, 0.3, 0.1});
    for (const char* name : {"euler", "heun", "rk4", "midpoint"}) {
        RngStream rng(9, 0);
        const Trajectory t = integrate_rts_rk(Stepper::from_name(name), StepDistribution::uniform(0.05, 1.0), sys, y0, 400, rng);
        for (std::size_t k = 0; k < t.states.size(); ++k)
            CHECK(std::abs(v.dot(t.states[k]) - v.dot(y0)) <= 1e-12 * static_cast<double>(k + 1) * v.norm());
    }
}

TEST_CASE("divergence reports the step and the last finite state")
{
    const OdeSystem sys = blow_up();
    try {
        integrate_deterministic(Stepper::from_name("euler"), sys, sys.default_y0, 0.5, 50);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.step() == 13);
        CHECK(e.last_finite().allFinite());
        CHECK(e.last_finite()[0] > 1e200);
    }
}

TEST_CASE("recording subsets and the observer")
{
    const OdeSystem sys = make_problem("linear_decay");
    std::vector<std::size_t> seen;
    const Trajectory t = integrate_deterministic(Stepper::from_name("euler"), sys, make_state({1.0}), 0.1, 10,
                                                 Recording{{10, 0, 5, 5}, false},
                                                 [&](std::size_t k, double, const State&) { seen.push_back(k); });
    CHECK(t.indices == std::vector<std::size_t>{0, 5, 10});
    CHECK(t.realized_steps.empty());
    CHECK(t.state(5)[0] == doctest::Approx(std::pow(0.9, 5)));
    CHECK_THROWS_AS(t.state(4), std::out_of_range);
    CHECK_THROWS_AS(t.state(11), std::out_of_range);
    CHECK(seen.size() == 10);
    CHECK(seen.back() == 10);
    CHECK_THROWS_AS(integrate_deterministic(Stepper::from_name("euler"), sys, make_state({1.0}), 0.1, 10, Recording{{11}, false}),
                    std::invalid_argument);
}

TEST_CASE("argument checks")
{
    const OdeSystem sys = make_problem("linear_decay");
    CHECK_THROWS_AS(integrate_deterministic(Stepper::from_name("euler"), sys, make_state({1.0}), 0.1, 0), std::invalid_argument);
    CHECK_THROWS_AS(integrate_deterministic(Stepper::from_name("euler"), sys, make_state({1.0}), -0.1, 3), std::invalid_argument);
    CHECK(parse_scheme("rts") == Scheme::rts_rk);
    CHECK(parse_scheme("add") == Scheme::additive_noise);
    CHECK(to_string(Scheme::deterministic) == "deterministic");
    CHECK_THROWS_AS(parse_scheme("sde"), std::invalid_argument);
}
