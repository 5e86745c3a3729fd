#pragma once

#include "rtsrk/problems.hpp"
#include "rtsrk/state.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace rtsrk {

struct ButcherTableau {
    std::string name;
    Eigen::MatrixXd a;
    Eigen::VectorXd b;
    Eigen::VectorXd c;
    int order = 1;
    bool is_explicit = true;

    int stages() const { return static_cast<int>(b.size()); }

    /// Throws std::invalid_argument when shapes, consistency (sum b = 1) or
    /// row sums (c_i = sum_j a_ij) are off, or an explicit tableau has a
    /// non-zero entry on or above the diagonal.
    void validate() const;

    static ButcherTableau euler();
    static ButcherTableau heun();  // explicit trapezoidal rule
    static ButcherTableau rk4();
};

/// Iterations stop once the residual (or update) is below tol * (1 + |y|).
struct NewtonConfig {
    double tol = 1e-12;
    int max_iter = 50;

    void validate() const;
    double threshold(const State& y) const { return tol * (1.0 + y.norm()); }
};

/// h * sum_i b_i f(K_i): the increment of one explicit RK step.
State explicit_rk_increment(const ButcherTableau& tab, const Rhs& f, const State& y, double h);

State step_explicit_rk(const ButcherTableau& tab, const Rhs& f, const State& y, double h);

/// y + h f(m) with m = y + (h/2) f(m), m found by Newton's method on the stage
/// equation. Throws ConvergenceFailure when the residual stays above cfg.threshold(y).
State step_implicit_midpoint(const NewtonConfig& cfg, const Rhs& f, const JacobianFn& jac,
                             const State& y, double h);

/// Stormer-Verlet for y = (v, w). Separable Hamiltonians take the explicit
/// kick-drift-kick path; otherwise the two implicit substeps are solved by
/// fixed-point iteration.
State step_stormer_verlet(const HamiltonianStructure& ham, const State& y, double h,
                          const NewtonConfig& cfg = {});

/// First-order Runge-Kutta-Chebyshev step with s stages and damping eps.
State step_rkc(const Rhs& f, const State& y, double h, int stages, double damping);

/// Stage count ceil(sqrt(h * rho / 0.65)), at least 1.
int rkc_stage_count(double h, double spectral_radius);

/// Nonlinear power iteration for the spectral radius of f'(y), inflated by a
/// 1.2 safety factor.
double estimate_spectral_radius(const Rhs& f, const State& y);

struct EmbeddedEulerHeun {
    State euler;
    State heun;
    double error = 0.0;
};

EmbeddedEulerHeun step_embedded_euler_heun(const Rhs& f, const State& y, double h);

struct ExplicitRk {
    ButcherTableau tableau;
};

struct ImplicitMidpoint {
    NewtonConfig newton;
};

struct StormerVerlet {
    NewtonConfig fixed_point;
};

struct Rkc {
    double damping = 0.05;
    std::optional<int> fixed_stages;  // empty -> spectral rule per step
};

/// A deterministic one-step map Psi_h.
class Stepper {
public:
    using Method = std::variant<ExplicitRk, ImplicitMidpoint, StormerVerlet, Rkc>;

    explicit Stepper(Method method);

    /// euler | heun | rk4 | midpoint | verlet | rkc
    static Stepper from_name(std::string_view name);

    State step(const OdeSystem& sys, const State& y, double h) const;

    int order() const { return order_; }
    const std::string& name() const { return name_; }
    const Method& method() const { return method_; }

private:
    Method method_;
    int order_ = 1;
    std::string name_;
};

const std::vector<std::string>& stepper_names();

}  // namespace rtsrk
