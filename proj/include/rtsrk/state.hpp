#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

namespace rtsrk {

/// Largest state dimension the library supports without heap allocation.
inline constexpr int kMaxDim = 8;

/// Dynamically sized state vector with inline storage.
using State = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor,
                             kMaxDim, kMaxDim>;

using Rhs = std::function<State(const State&)>;
using JacobianFn = std::function<Matrix(const State&)>;
using Functional = std::function<double(const State&)>;

inline bool all_finite(const State& y) { return y.allFinite(); }

inline State make_state(std::initializer_list<double> values)
{
    State y(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values) y[i++] = v;
    return y;
}

/// A trajectory left the finite range. Carries the index of the step that
/// produced the non-finite value and the last finite state.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t step, State last_finite)
        : std::runtime_error("integration diverged at step " + std::to_string(step)),
          step_(step), last_(std::move(last_finite))
    {
    }

    std::size_t step() const noexcept { return step_; }
    const State& last_finite() const noexcept { return last_; }

private:
    std::size_t step_;
    State last_;
};

/// An implicit stage equation was not solved within the iteration budget.
class ConvergenceFailure : public std::runtime_error {
public:
    ConvergenceFailure(const std::string& what, double residual)
        : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"),
          residual_(residual)
    {
    }

    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

}  // namespace rtsrk
