#include "rtsrk/rk_core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace rtsrk {

namespace {

constexpr int kMaxStages = 8;

void require_positive_step(double h)
{
    if (!(h > 0.0) || !std::isfinite(h))
        throw std::invalid_argument("step size must be positive and finite, got " + std::to_string(h));
}

State checked(State y)
{
    if (!all_finite(y)) throw DivergenceError(0, State());
    return y;
}

}  // namespace

void ButcherTableau::validate() const
{
    const auto s = b.size();
    if (s < 1 || s > kMaxStages) throw std::invalid_argument("tableau stage count out of range");
    if (a.rows() != s || a.cols() != s || c.size() != s)
        throw std::invalid_argument("tableau '" + name + "' has inconsistent shapes");
    if (std::abs(b.sum() - 1.0) > 1e-14)
        throw std::invalid_argument("tableau '" + name + "' is not consistent: sum b != 1");
    for (Eigen::Index i = 0; i < s; ++i) {
        if (std::abs(a.row(i).sum() - c[i]) > 1e-14)
            throw std::invalid_argument("tableau '" + name + "': c_i != sum_j a_ij");
        if (is_explicit)
            for (Eigen::Index j = i; j < s; ++j)
                if (a(i, j) != 0.0)
                    throw std::invalid_argument("explicit tableau '" + name
                                                + "' must be strictly lower triangular");
    }
}

ButcherTableau ButcherTableau::euler()
{
    ButcherTableau t;
    t.name = "euler";
    t.a = Eigen::MatrixXd::Zero(1, 1);
    t.b = Eigen::VectorXd::Ones(1);
    t.c = Eigen::VectorXd::Zero(1);
    t.order = 1;
    return t;
}

ButcherTableau ButcherTableau::heun()
{
    ButcherTableau t;
    t.name = "heun";
    t.a = Eigen::MatrixXd::Zero(2, 2);
    t.a(1, 0) = 1.0;
    t.b = Eigen::Vector2d(0.5, 0.5);
    t.c = Eigen::Vector2d(0.0, 1.0);
    t.order = 2;
    return t;
}

ButcherTableau ButcherTableau::rk4()
{
    ButcherTableau t;
    t.name = "rk4";
    t.a = Eigen::MatrixXd::Zero(4, 4);
    t.a(1, 0) = 0.5;
    t.a(2, 1) = 0.5;
    t.a(3, 2) = 1.0;
    t.b = Eigen::Vector4d(1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0);
    t.c = Eigen::Vector4d(0.0, 0.5, 0.5, 1.0);
    t.order = 4;
    return t;
}

void NewtonConfig::validate() const
{
    if (!(tol > 0.0)) throw std::invalid_argument("Newton tolerance must be positive");
    if (max_iter < 1) throw std::invalid_argument("Newton max_iter must be at least 1");
}

State explicit_rk_increment(const ButcherTableau& tab, const Rhs& f, const State& y, double h)
{
    const int s = tab.stages();
    std::array<State, kMaxStages> k;
    State incr = State::Zero(y.size());
    for (int i = 0; i < s; ++i) {
        State arg = y;
        for (int j = 0; j < i; ++j)
            if (tab.a(i, j) != 0.0) arg.noalias() += (h * tab.a(i, j)) * k[j];
        k[i] = f(arg);
        incr.noalias() += (h * tab.b[i]) * k[i];
    }
    return incr;
}

State step_explicit_rk(const ButcherTableau& tab, const Rhs& f, const State& y, double h)
{
    if (!tab.is_explicit) throw std::invalid_argument("step_explicit_rk needs an explicit tableau");
    require_positive_step(h);
    return checked(y + explicit_rk_increment(tab, f, y, h));
}

State step_implicit_midpoint(const NewtonConfig& cfg, const Rhs& f, const JacobianFn& jac,
                             const State& y, double h)
{
    require_positive_step(h);
    const auto n = y.size();
    const double half = 0.5 * h;
    const double tol = cfg.threshold(y);

    State m = y + half * f(y);
    State residual = m - y - half * f(m);
    double norm = residual.norm();
    Eigen::PartialPivLU<Matrix> lu;
    bool factored = false;
    for (int it = 0; it < cfg.max_iter && norm > tol; ++it) {
        const Matrix df = jac ? jac(m) : finite_difference_jacobian(f, m);
        lu.compute(Matrix::Identity(n, n) - half * df);
        factored = true;
        m -= lu.solve(residual);
        residual = m - y - half * f(m);
        norm = residual.norm();
        if (!std::isfinite(norm)) throw DivergenceError(0, State());
    }
    if (!(norm <= tol)) throw ConvergenceFailure("implicit midpoint Newton did not converge", norm);

    // polish with a frozen Jacobian while the residual keeps dropping
    if (!factored && norm > 0.0)
        lu.compute(Matrix::Identity(n, n) - half * (jac ? jac(m) : finite_difference_jacobian(f, m)));
    for (int extra = 0; extra < 3 && norm > 0.0; ++extra) {
        const State trial = m - lu.solve(residual);
        const State r = trial - y - half * f(trial);
        if (!(r.norm() < 0.5 * norm)) break;
        m = trial;
        residual = r;
        norm = r.norm();
    }
    return checked(y + h * f(m));
}

namespace {

State join(const State& v, const State& w)
{
    State y(v.size() + w.size());
    y << v, w;
    return y;
}

}  // namespace

State step_stormer_verlet(const HamiltonianStructure& ham, const State& y, double h,
                          const NewtonConfig& cfg)
{
    require_positive_step(h);
    if (y.size() != ham.dim) throw std::invalid_argument("Stormer-Verlet state has wrong dimension");
    const auto half = y.size() / 2;
    const State v = y.head(half);
    const State w = y.tail(half);
    const double tol = cfg.threshold(y);

    if (ham.separable) {
        const State v_half = v - 0.5 * h * ham.grad_w(y);
        const State w_next = w + h * ham.grad_v(join(v_half, w));
        const State v_next = v_half - 0.5 * h * ham.grad_w(join(v_half, w_next));
        return checked(join(v_next, w_next));
    }

    State v_half = v - 0.5 * h * ham.grad_w(y);
    double change = std::numeric_limits<double>::infinity();
    for (int it = 0; it < cfg.max_iter && change > tol; ++it) {
        const State next = v - 0.5 * h * ham.grad_w(join(v_half, w));
        change = (next - v_half).norm();
        v_half = next;
    }
    if (!(change <= tol))
        throw ConvergenceFailure("Stormer-Verlet half-kick fixed point did not converge", change);

    const State drift0 = ham.grad_v(join(v_half, w));
    State w_next = w + h * drift0;
    change = std::numeric_limits<double>::infinity();
    for (int it = 0; it < cfg.max_iter && change > tol; ++it) {
        const State next = w + 0.5 * h * (drift0 + ham.grad_v(join(v_half, w_next)));
        change = (next - w_next).norm();
        w_next = next;
    }
    if (!(change <= tol))
        throw ConvergenceFailure("Stormer-Verlet drift fixed point did not converge", change);

    const State v_next = v_half - 0.5 * h * ham.grad_w(join(v_half, w_next));
    return checked(join(v_next, w_next));
}

State step_rkc(const Rhs& f, const State& y, double h, int stages, double damping)
{
    require_positive_step(h);
    if (stages < 1) throw std::invalid_argument("RKC needs at least one stage");
    if (!(damping >= 0.0)) throw std::invalid_argument("RKC damping must be non-negative");

    const double s = stages;
    const double w0 = 1.0 + damping / (s * s);

    // Chebyshev values T_j(w0) and the derivative T_s'(w0).
    std::vector<double> t(stages + 1);
    double dt_prev = 0.0, dt = 1.0;
    t[0] = 1.0;
    t[1] = w0;
    for (int j = 2; j <= stages; ++j) {
        t[j] = 2.0 * w0 * t[j - 1] - t[j - 2];
        const double next = 2.0 * t[j - 1] + 2.0 * w0 * dt - dt_prev;
        dt_prev = dt;
        dt = next;
    }
    const double w1 = t[stages] / dt;

    State y_prev2 = y;
    State y_prev = y + (w1 / w0) * h * f(y);
    for (int j = 2; j <= stages; ++j) {
        const double mu = 2.0 * w0 * t[j - 1] / t[j];
        const double nu = -t[j - 2] / t[j];
        const double mu_tilde = 2.0 * w1 * t[j - 1] / t[j];
        State next = mu * y_prev + nu * y_prev2 + (mu_tilde * h) * f(y_prev);
        y_prev2 = std::move(y_prev);
        y_prev = std::move(next);
    }
    return checked(y_prev);
}

int rkc_stage_count(double h, double spectral_radius)
{
    require_positive_step(h);
    if (!(spectral_radius >= 0.0)) throw std::invalid_argument("spectral radius must be non-negative");
    return std::max(1, static_cast<int>(std::ceil(std::sqrt(h * spectral_radius / 0.65))));
}

double estimate_spectral_radius(const Rhs& f, const State& y)
{
    const State fy = f(y);
    State dir = fy.norm() > 0.0 ? fy : State(State::Ones(y.size()));
    const double delta = std::sqrt(std::numeric_limits<double>::epsilon())
                         * std::max(1.0, y.norm());
    double rho = 0.0;
    double best = 0.0;
    for (int it = 0; it < 50; ++it) {
        const State probe = y + delta * dir.normalized();
        const State df = f(probe) - fy;
        const double dn = df.norm();
        if (dn == 0.0) break;
        const double next = dn / delta;
        best = std::max(best, next);
        dir = df;
        if (it > 0 && std::abs(next - rho) <= 0.01 * next) break;
        rho = next;
    }
    return 1.2 * best;
}

EmbeddedEulerHeun step_embedded_euler_heun(const Rhs& f, const State& y, double h)
{
    require_positive_step(h);
    EmbeddedEulerHeun out;
    const State fy = f(y);
    out.euler = y + h * fy;
    out.heun = y + 0.5 * h * (fy + f(out.euler));
    out.error = (out.heun - out.euler).norm();
    return out;
}

namespace {

struct StepVisitor {
    const OdeSystem& sys;
    const State& y;
    double h;

    State operator()(const ExplicitRk& m) const { return step_explicit_rk(m.tableau, sys.rhs, y, h); }

    State operator()(const ImplicitMidpoint& m) const
    {
        return step_implicit_midpoint(m.newton, sys.rhs, sys.jacobian, y, h);
    }

    State operator()(const StormerVerlet& m) const
    {
        if (!sys.hamiltonian)
            throw std::invalid_argument("Stormer-Verlet needs a Hamiltonian system, '" + sys.name
                                        + "' has none");
        return step_stormer_verlet(*sys.hamiltonian, y, h, m.fixed_point);
    }

    State operator()(const Rkc& m) const
    {
        const int s = m.fixed_stages ? *m.fixed_stages
                                     : rkc_stage_count(h, estimate_spectral_radius(sys.rhs, y));
        return step_rkc(sys.rhs, y, h, s, m.damping);
    }
};

struct DescribeVisitor {
    std::pair<int, std::string> operator()(const ExplicitRk& m) const
    {
        m.tableau.validate();
        return {m.tableau.order, m.tableau.name};
    }
    std::pair<int, std::string> operator()(const ImplicitMidpoint& m) const
    {
        m.newton.validate();
        return {2, "midpoint"};
    }
    std::pair<int, std::string> operator()(const StormerVerlet& m) const
    {
        m.fixed_point.validate();
        return {2, "verlet"};
    }
    std::pair<int, std::string> operator()(const Rkc& m) const
    {
        if (m.fixed_stages && *m.fixed_stages < 1)
            throw std::invalid_argument("RKC needs at least one stage");
        return {1, "rkc"};
    }
};

}  // namespace

Stepper::Stepper(Method method) : method_(std::move(method))
{
    std::tie(order_, name_) = std::visit(DescribeVisitor{}, method_);
}

Stepper Stepper::from_name(std::string_view name)
{
    if (name == "euler") return Stepper(ExplicitRk{ButcherTableau::euler()});
    if (name == "heun") return Stepper(ExplicitRk{ButcherTableau::heun()});
    if (name == "rk4") return Stepper(ExplicitRk{ButcherTableau::rk4()});
    if (name == "midpoint") return Stepper(ImplicitMidpoint{});
    if (name == "verlet") return Stepper(StormerVerlet{});
    if (name == "rkc") return Stepper(Rkc{});
    throw std::invalid_argument("unknown stepper '" + std::string(name) + "'");
}

State Stepper::step(const OdeSystem& sys, const State& y, double h) const
{
    return std::visit(StepVisitor{sys, y, h}, method_);
}

const std::vector<std::string>& stepper_names()
{
    static const std::vector<std::string> names = {"euler", "heun", "rk4", "midpoint", "verlet", "rkc"};
    return names;
}

}  // namespace rtsrk
