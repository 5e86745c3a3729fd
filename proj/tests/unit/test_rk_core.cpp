#include "rtsrk/integrators.hpp"
#include "rtsrk/rk_core.hpp"

#include <doctest.h>

#include <cmath>

using namespace rtsrk;

namespace {

OdeSystem diagonal_linear(std::vector<double> rates)
{
    OdeSystem sys;
    sys.name = "diag";
    sys.dim = static_cast<int>(rates.size());
    sys.rhs = [rates](const State& y) {
        State f(y.size());
        for (Eigen::Index i = 0; i < y.size(); ++i) f[i] = -rates[static_cast<std::size_t>(i)] * y[i];
        return f;
    };
    sys.default_y0 = State::Ones(sys.dim);
    return sys;
}

double global_error(const Stepper& st, const OdeSystem& sys, double h, double t_final)
{
    const auto n = static_cast<std::size_t>(std::llround(t_final / h));
    const Trajectory t = integrate_deterministic(st, sys, sys.default_y0, h, n, Recording::endpoints(n));
    return (t.final_state() - sys.exact_flow(t_final, sys.default_y0)).norm();
}

}  // namespace

TEST_CASE("built-in tableaux are consistent")
{
    for (const auto& tab : {ButcherTableau::euler(), ButcherTableau::heun(), ButcherTableau::rk4()}) {
        CAPTURE(tab.name);
        CHECK_NOTHROW(tab.validate());
        CHECK(tab.is_explicit);
    }
    CHECK(ButcherTableau::rk4().order == 4);
    CHECK(ButcherTableau::heun().stages() == 2);
}

TEST_CASE("malformed tableaux are rejected")
{
    ButcherTableau bad = ButcherTableau::heun();
    bad.b[0] = 0.7;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ButcherTableau::heun();
    bad.c[1] = 0.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ButcherTableau::heun();
    bad.a(0, 1) = 0.1;
    bad.a(0, 0) = -0.1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("one step on linear decay matches the stability functions")
{
    const OdeSystem sys = make_problem("linear_decay");
    const State y = make_state({1.0});
    const double h = 0.5;
    CHECK(Stepper::from_name("euler").step(sys, y, h)[0] == doctest::Approx(0.5));
    CHECK(Stepper::from_name("heun").step(sys, y, h)[0] == doctest::Approx(1 - h + h * h / 2));
    CHECK(Stepper::from_name("rk4").step(sys, y, h)[0]
          == doctest::Approx(1 - h + h * h / 2 - h * h * h / 6 + h * h * h * h / 24));
    CHECK(Stepper::from_name("midpoint").step(sys, y, h)[0] == doctest::Approx(0.6));
}

TEST_CASE("implicit midpoint with finite-difference Jacobian matches the analytic one")
{
    OdeSystem sys = make_problem("pendulum");
    const State y = sys.default_y0;
    const NewtonConfig cfg;
    const State a = step_implicit_midpoint(cfg, sys.rhs, sys.jacobian, y, 0.1);
    const State b = step_implicit_midpoint(cfg, sys.rhs, {}, y, 0.1);
    CHECK((a - b).norm() < 1e-11);
}

TEST_CASE("Newton failure raises ConvergenceFailure")
{
    const OdeSystem sys = make_problem("pendulum");
    NewtonConfig cfg;
    cfg.max_iter = 1;
    cfg.tol = 1e-15;
    CHECK_THROWS_AS(step_implicit_midpoint(cfg, sys.rhs, sys.jacobian, sys.default_y0, 2.0), ConvergenceFailure);
    NewtonConfig bad;
    bad.tol = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("every stepper leaves a zero field untouched")
{
    const OdeSystem z = make_zero_field(4);
    const State y = make_state({1.0, 2.0, 3.0, 4.0});
    for (const auto& name : stepper_names()) {
        if (name == "verlet") continue;  // needs a Hamiltonian
        CAPTURE(name);
        CHECK(Stepper::from_name(name).step(z, y, 0.3) == y);
    }
}

TEST_CASE("non-positive steps and unknown names are rejected")
{
    const OdeSystem sys = make_problem("linear_decay");
    CHECK_THROWS_AS(Stepper::from_name("euler").step(sys, sys.default_y0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(Stepper::from_name("euler").step(sys, sys.default_y0, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(Stepper::from_name("dopri"), std::invalid_argument);
    CHECK_THROWS_AS(Stepper::from_name("verlet").step(sys, sys.default_y0, 0.1), std::invalid_argument);
}

TEST_CASE("stepper orders and empirical convergence on linear decay")
{
    const OdeSystem sys = make_problem("linear_decay");
    for (const auto& [name, q] : {std::pair{"euler", 1}, std::pair{"heun", 2}, std::pair{"rk4", 4},
                                  std::pair{"midpoint", 2}, std::pair{"rkc", 1}}) {
        CAPTURE(name);
        const Stepper st = Stepper::from_name(name);
        CHECK(st.order() == q);
        const double e1 = global_error(st, sys, 0.02, 1.0);
        const double e2 = global_error(st, sys, 0.01, 1.0);
        CHECK(std::log2(e1 / e2) == doctest::Approx(q).epsilon(0.08));
    }
}

TEST_CASE("Stormer-Verlet is second order on the pendulum energy-free flow")
{
    const OdeSystem sys = make_problem("pendulum");
    const Stepper verlet = Stepper::from_name("verlet");
    const Stepper rk4 = Stepper::from_name("rk4");
    const State ref = integrate_deterministic(rk4, sys, sys.default_y0, 1e-4, 10000, Recording::endpoints(10000)).final_state();
    auto err = [&](double h) {
        const auto n = static_cast<std::size_t>(std::llround(1.0 / h));
        return (integrate_deterministic(verlet, sys, sys.default_y0, h, n, Recording::endpoints(n)).final_state() - ref).norm();
    };
    CHECK(std::log2(err(0.02) / err(0.01)) == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("RKC stage rule and stability on stiff linear decay")
{
    CHECK(rkc_stage_count(0.1, 0.0) == 1);
    CHECK(rkc_stage_count(1.0, 0.65 * 16) == 4);
    CHECK(rkc_stage_count(1.0, 0.65 * 16 + 1e-9) == 5);

    const double lambda = 1000.0, h = 0.05;
    const Rhs f = [lambda](const State& y) { return State(-lambda * y); };
    const int s = rkc_stage_count(h, lambda);
    State y = make_state({1.0});
    for (int k = 0; k < 200; ++k) y = step_rkc(f, y, h, s, 0.05);
    CHECK(std::abs(y[0]) < 1.0);
    // the same step with too few stages blows up
    State z = make_state({1.0});
    for (int k = 0; k < 20; ++k) z = step_rkc(f, z, h, 1, 0.05);
    CHECK(std::abs(z[0]) > 1e10);
}

TEST_CASE("spectral radius estimate bounds the dominant eigenvalue")
{
    const OdeSystem sys = diagonal_linear({1.0, 40.0, 300.0});
    const double rho = estimate_spectral_radius(sys.rhs, make_state({1.0, 1.0, 1.0}));
    CHECK(rho >= 300.0);
    CHECK(rho <= 1.2 * 300.0 * 1.01);
}

TEST_CASE("embedded Euler-Heun estimate on linear decay")
{
    const OdeSystem sys = make_problem("linear_decay");
    const auto e = step_embedded_euler_heun(sys.rhs, make_state({2.0}), 0.1);
    CHECK(e.euler[0] == doctest::Approx(1.8));
    CHECK(e.heun[0] == doctest::Approx(2.0 * (1 - 0.1 + 0.005)));
    CHECK(e.error == doctest::Approx(2.0 * 0.005));
}

TEST_CASE("implicit midpoint conserves quadratic invariants of a rotation")
{
    OdeSystem rot;
    rot.name = "rotation";
    rot.dim = 2;
    rot.rhs = [](const State& y) { return make_state({-y[1], y[0]}); };
    const Stepper mid = Stepper::from_name("midpoint");
    State y = make_state({1.0, 0.5});
    const double r0 = y.squaredNorm();
    for (int k = 0; k < 1000; ++k) y = mid.step(rot, y, 0.37);
    CHECK(std::abs(y.squaredNorm() - r0) < 1e-12);
}
