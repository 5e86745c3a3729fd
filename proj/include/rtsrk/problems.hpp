#pragma once

#include "rtsrk/state.hpp"

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rtsrk {

using ParamMap = std::map<std::string, double, std::less<>>;

/// A conserved quantity I with I'(y) f(y) = 0.
struct FirstIntegral {
    enum class Kind { linear, quadratic, generic };

    std::string name;
    Kind kind = Kind::generic;
    State weights;     // linear: I(y) = v^T y
    Matrix quadratic;  // quadratic: I(y) = y^T C y, C symmetric
    Functional fn;     // generic

    static FirstIntegral linear(std::string name, State v);
    static FirstIntegral quadratic_form(std::string name, Matrix c);
    static FirstIntegral generic(std::string name, Functional fn);

    /// Dimension the integral is defined on, or -1 for generic integrals.
    Eigen::Index dim() const;
};

double eval_integral(const FirstIntegral& integral, const State& y);

/// Canonical Hamiltonian structure y' = J^{-1} grad Q(y) with y = (v, w):
/// v' = -grad_w Q, w' = grad_v Q.
struct HamiltonianStructure {
    Functional energy;
    // Gradients with respect to the v and w halves, evaluated at the full state.
    Rhs grad_v;
    Rhs grad_w;
    bool separable = false;
    int dim = 0;  // full phase-space dimension, even
};

double eval_energy(const HamiltonianStructure& ham, const State& y);

struct OdeSystem {
    std::string name;
    int dim = 0;
    Rhs rhs;
    State default_y0;
    std::function<State(double, const State&)> exact_flow;  // empty when unknown
    JacobianFn jacobian;                                     // empty -> finite differences
    std::vector<FirstIntegral> integrals;
    std::optional<HamiltonianStructure> hamiltonian;
    ParamMap params;

    /// Analytic Jacobian when provided, else central differences with step
    /// 1e-7 * max(1, |y_i|).
    Matrix jacobian_at(const State& y) const;

    const FirstIntegral& integral(std::string_view name) const;
};

/// Central finite-difference Jacobian of f at y.
Matrix finite_difference_jacobian(const Rhs& f, const State& y);

/// Names accepted by make_problem.
const std::vector<std::string>& problem_names();

/// Builds one of the catalogued test systems. Unknown parameter keys and
/// out-of-range values throw std::invalid_argument.
OdeSystem make_problem(std::string_view name, const ParamMap& params = {});

/// f == 0 in the given dimension, with the identity as exact flow.
OdeSystem make_zero_field(int dim);

/// The canonical matrix J = [[0, I], [-I, 0]].
Matrix canonical_j(int dim);

}  // namespace rtsrk
