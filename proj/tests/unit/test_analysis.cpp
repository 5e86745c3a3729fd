#include "rtsrk/analysis.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace rtsrk;

namespace {

OdeSystem rotation()
{
    OdeSystem sys;
    sys.name = "rotation";
    sys.dim = 2;
    sys.rhs = [](const State& y) { return make_state({-y[1], y[0]}); };
    sys.default_y0 = make_state({1.0, 0.0});
    return sys;
}

std::vector<double> halving(double h0, int n)
{
    std::vector<double> h;
    for (int i = 0; i < n; ++i) h.push_back(h0 * std::pow(0.5, i));
    return h;
}

}  // namespace

TEST_CASE("reference solutions")
{
    const OdeSystem decay = make_problem("linear_decay");
    CHECK(reference_solution(decay, make_state({2.0}), 1.5, 0.1)[0] == doctest::Approx(2.0 * std::exp(-1.5)).epsilon(1e-15));
    const State r = reference_solution(rotation(), make_state({1.0, 0.0}), 3.0, 1e-3);
    CHECK(r[0] == doctest::Approx(std::cos(3.0)).epsilon(1e-12));
    CHECK(r[1] == doctest::Approx(std::sin(3.0)).epsilon(1e-12));
    const auto traj = reference_trajectory(rotation(), make_state({1.0, 0.0}), 0.1, 20, 16);
    REQUIRE(traj.size() == 21);
    CHECK(traj[10][1] == doctest::Approx(std::sin(1.0)).epsilon(1e-10));
}

TEST_CASE("fit_order")
{
    const auto h = halving(0.1, 5);
    std::vector<double> e;
    for (double x : h) e.push_back(3.0 * std::pow(x, 2.5));
    CHECK(fit_order(h, e) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK_THROWS_AS(fit_order({0.1, 0.05}, {1.0, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(fit_order({0.1, 0.05, 0.025}, {1.0, 0.0, 0.1}), std::invalid_argument);
    CHECK_THROWS_AS(fit_order({0.1, 0.05, 0.025}, {1.0, 0.5}), std::invalid_argument);
}

TEST_CASE("two-regime fit recovers a hinge")
{
    const auto h = halving(0.5, 10);
    const double hb = h[4];
    std::vector<double> e;
    for (double x : h) e.push_back(x >= hb ? std::pow(x, 4) : std::pow(hb, 4) * std::pow(x / hb, 2));
    const TwoRegimeFit fit = fit_two_regimes(h, e);
    CHECK(fit.breakpoint == 4);
    CHECK(fit.slope_coarse == doctest::Approx(4.0).epsilon(1e-9));
    CHECK(fit.slope_fine == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(fit.residual < 1e-18);
    CHECK_THROWS_AS(fit_two_regimes({0.1, 0.05}, {1.0, 0.5}), std::invalid_argument);
}

TEST_CASE("degenerate mean-square study gives the deterministic order")
{
    StudySpec spec;
    spec.system = make_problem("linear_decay");
    spec.y0 = make_state({1.0});
    spec.stepper = Stepper::from_name("heun");
    spec.law = StepLaw::degenerate;
    spec.h_grid = halving(0.05, 4);
    spec.m = 2;
    const ConvergenceStudy s = study_mean_square(spec);
    CHECK(s.kind == StudyKind::mean_square);
    CHECK(s.fitted_order == doctest::Approx(2.0).epsilon(0.05));
    CHECK(s.theory_order == 2.0);
    CHECK(s.monotone);
    CHECK_FALSE(s.any_flagged());
    for (double se : s.std_errors) CHECK(se == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("uniform mean-square study on linear decay")
{
    StudySpec spec;
    spec.system = make_problem("linear_decay");
    spec.y0 = make_state({1.0});
    spec.p = 0.5;
    spec.h_grid = halving(0.04, 4);
    spec.m = 400;
    spec.seed = 3;
    const ConvergenceStudy s = study_mean_square(spec);
    CHECK(s.theory_order == 0.5);
    CHECK(s.fitted_order == doctest::Approx(0.5).epsilon(0.2));
    CHECK(s.errors.size() == 4);
}

TEST_CASE("weak studies flag noise-dominated points")
{
    StudySpec spec;
    spec.system = make_problem("linear_decay");
    spec.y0 = make_state({1.0});
    spec.p = 1.0;
    spec.h_grid = halving(0.1, 3);
    spec.m = 20;
    spec.seed = 5;
    const Functional phi = [](const State& y) { return y[0]; };
    const ConvergenceStudy s = study_weak(spec, phi);
    CHECK(s.theory_order == 1.0);
    for (std::size_t i = 0; i < s.errors.size(); ++i) CHECK(s.flagged[i] == (s.std_errors[i] > 0.5 * s.errors[i]));
    if (s.flagged.size() - std::count(s.flagged.begin(), s.flagged.end(), true) < 3) {
        CHECK(std::isnan(s.fitted_order));
        CHECK_FALSE(s.notes.empty());
    }
    spec.h_ref = spec.h_grid.back() / 10.0;
    CHECK_THROWS_AS(study_weak(spec, phi), std::invalid_argument);
}

TEST_CASE("integral drift series")
{
    const OdeSystem rot = [] {
        OdeSystem s = rotation();
        FirstIntegral radius;
        radius.name = "radius";
        radius.kind = FirstIntegral::Kind::quadratic;
        radius.quadratic = Matrix::Identity(2, 2);
        s.integrals.push_back(radius);
        return s;
    }();
    const Trajectory mid = integrate_deterministic(Stepper::from_name("midpoint"), rot, rot.default_y0, 0.1, 100);
    const SeriesReport d = integral_drift(mid, rot.integrals[0]);
    REQUIRE(d.values.size() == 101);
    CHECK(d.max() < 1e-13);
    CHECK(d.times[100] == doctest::Approx(10.0));

    const Trajectory eu = integrate_deterministic(Stepper::from_name("euler"), rot, rot.default_y0, 0.1, 100);
    const SeriesReport g = integral_drift(eu, rot.integrals[0]);
    CHECK(g.values[100] == doctest::Approx(std::pow(1.01, 100) - 1.0).epsilon(1e-10));
    CHECK(g.mean_over(0.0, 0.1) == doctest::Approx(0.005));
}

TEST_CASE("logarithmic time indices")
{
    const auto idx = log_time_indices(0.1, 100000, 8);
    CHECK(idx.front() == 1);
    CHECK(idx.back() == 100000);
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
    CHECK(idx.size() <= 5 * 8 + 1);
    CHECK_THROWS_AS(log_time_indices(0.1, 0, 8), std::invalid_argument);
}

TEST_CASE("deterministic symplectic energy error stays bounded")
{
    SchemeConfig cfg;
    cfg.system = make_problem("pendulum");
    cfg.y0 = cfg.system.default_y0;
    cfg.stepper = Stepper::from_name("verlet");
    cfg.scheme = Scheme::deterministic;
    cfg.h = 0.1;
    cfg.n_steps = 20000;
    const SeriesReport r = hamiltonian_error_longtime(cfg, 1, 0, 16);
    CHECK(r.max() < 0.05);
    CHECK(r.mean_over(100.0, 2000.0) == doctest::Approx(r.mean_over(1.0, 10.0)).epsilon(0.9));
    cfg.system = make_problem("linear_decay");
    cfg.y0 = make_state({1.0});
    CHECK_THROWS_AS(hamiltonian_error_longtime(cfg, 1, 0), std::invalid_argument);
}

TEST_CASE("error estimator comparison")
{
    const auto zero = error_estimator_comparison(make_zero_field(2), make_state({1.0, 2.0}), 0.1, 1.0, 1.0, 10, 1);
    for (double v : zero.local_estimate.values) CHECK(v == 0.0);
    for (double v : zero.std_indicator.values) CHECK(v == 0.0);
    for (double v : zero.true_error.values) CHECK(v == 0.0);

    const auto dec = error_estimator_comparison(make_problem("linear_decay"), make_state({1.0}), 0.02, 1.0, 1.0, 500, 2);
    REQUIRE(dec.true_error.values.size() == 51);
    const double truth = dec.true_error.values.back();
    CHECK(dec.local_estimate.values.back() / truth > 0.1);
    CHECK(dec.local_estimate.values.back() / truth < 10.0);
    CHECK(dec.std_indicator.values.back() / truth > 0.1);
    CHECK(dec.std_indicator.values.back() / truth < 10.0);
}
