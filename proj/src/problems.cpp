#include "rtsrk/problems.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rtsrk {

FirstIntegral FirstIntegral::linear(std::string name, State v)
{
    FirstIntegral out;
    out.name = std::move(name);
    out.kind = Kind::linear;
    out.weights = std::move(v);
    return out;
}

FirstIntegral FirstIntegral::quadratic_form(std::string name, Matrix c)
{
    if (c.rows() != c.cols()) throw std::invalid_argument("quadratic integral needs a square matrix");
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > 0.0)
        throw std::invalid_argument("quadratic integral matrix must be symmetric");
    FirstIntegral out;
    out.name = std::move(name);
    out.kind = Kind::quadratic;
    out.quadratic = std::move(c);
    return out;
}

FirstIntegral FirstIntegral::generic(std::string name, Functional fn)
{
    FirstIntegral out;
    out.name = std::move(name);
    out.kind = Kind::generic;
    out.fn = std::move(fn);
    return out;
}

Eigen::Index FirstIntegral::dim() const
{
    switch (kind) {
    case Kind::linear: return weights.size();
    case Kind::quadratic: return quadratic.rows();
    case Kind::generic: return -1;
    }
    return -1;
}

double eval_integral(const FirstIntegral& integral, const State& y)
{
    const auto d = integral.dim();
    if (d >= 0 && d != y.size())
        throw std::invalid_argument("integral '" + integral.name + "' expects dimension "
                                    + std::to_string(d) + ", got " + std::to_string(y.size()));
    switch (integral.kind) {
    case FirstIntegral::Kind::linear: return integral.weights.dot(y);
    case FirstIntegral::Kind::quadratic: return y.dot(integral.quadratic * y);
    case FirstIntegral::Kind::generic: return integral.fn(y);
    }
    return 0.0;
}

double eval_energy(const HamiltonianStructure& ham, const State& y)
{
    if (y.size() != ham.dim || ham.dim % 2 != 0)
        throw std::invalid_argument("energy expects an even state of dimension "
                                    + std::to_string(ham.dim));
    return ham.energy(y);
}

Matrix finite_difference_jacobian(const Rhs& f, const State& y)
{
    const auto n = y.size();
    Matrix jac(n, n);
    State yp = y;
    State ym = y;
    for (Eigen::Index j = 0; j < n; ++j) {
        const double step = 1e-7 * std::max(1.0, std::abs(y[j]));
        yp[j] = y[j] + step;
        ym[j] = y[j] - step;
        jac.col(j) = (f(yp) - f(ym)) / (2.0 * step);
        yp[j] = y[j];
        ym[j] = y[j];
    }
    return jac;
}

Matrix OdeSystem::jacobian_at(const State& y) const
{
    return jacobian ? jacobian(y) : finite_difference_jacobian(rhs, y);
}

const FirstIntegral& OdeSystem::integral(std::string_view wanted) const
{
    for (const auto& i : integrals)
        if (i.name == wanted) return i;
    throw std::invalid_argument("problem '" + name + "' has no integral '" + std::string(wanted) + "'");
}

Matrix canonical_j(int dim)
{
    if (dim % 2 != 0) throw std::invalid_argument("symplectic structure needs an even dimension");
    const int half = dim / 2;
    Matrix j = Matrix::Zero(dim, dim);
    j.block(0, half, half, half).setIdentity();
    j.block(half, 0, half, half) = -Matrix::Identity(half, half);
    return j;
}

namespace {

class ParamReader {
public:
    ParamReader(std::string_view problem, const ParamMap& given, ParamMap defaults)
        : problem_(problem), values_(std::move(defaults))
    {
        for (const auto& [key, value] : given) {
            auto it = values_.find(key);
            if (it == values_.end())
                throw std::invalid_argument("unknown parameter '" + key + "' for problem '"
                                            + std::string(problem_) + "'");
            it->second = value;
        }
    }

    double operator[](std::string_view key) const { return values_.find(key)->second; }
    const ParamMap& all() const { return values_; }

    void require(bool ok, std::string_view what) const
    {
        if (!ok)
            throw std::invalid_argument("invalid parameter for '" + std::string(problem_)
                                        + "': " + std::string(what));
    }

private:
    std::string_view problem_;
    ParamMap values_;
};

OdeSystem lorenz(const ParamMap& given)
{
    ParamReader p("lorenz", given,
                  {{"sigma", 10.0}, {"rho", 28.0}, {"beta", 8.0 / 3.0},
                   {"x0", -10.0}, {"y0", -1.0}, {"z0", 40.0}});
    const double sigma = p["sigma"], rho = p["rho"], beta = p["beta"];
    OdeSystem sys;
    sys.name = "lorenz";
    sys.dim = 3;
    sys.rhs = [=](const State& y) {
        return make_state({sigma * (y[1] - y[0]), y[0] * (rho - y[2]) - y[1],
                           y[0] * y[1] - beta * y[2]});
    };
    sys.default_y0 = make_state({p["x0"], p["y0"], p["z0"]});
    sys.params = p.all();
    return sys;
}

OdeSystem linear_decay(const ParamMap& given)
{
    ParamReader p("linear_decay", given, {{"rate", 1.0}, {"y0", 1.0}});
    const double rate = p["rate"];
    OdeSystem sys;
    sys.name = "linear_decay";
    sys.dim = 1;
    sys.rhs = [=](const State& y) { return State(-rate * y); };
    sys.jacobian = [=](const State&) { return Matrix::Constant(1, 1, -rate); };
    sys.exact_flow = [=](double t, const State& y) { return State(y * std::exp(-rate * t)); };
    sys.default_y0 = make_state({p["y0"]});
    sys.params = p.all();
    return sys;
}

OdeSystem fitzhugh_nagumo(const ParamMap& given)
{
    ParamReader p("fitzhugh_nagumo", given,
                  {{"a", 0.2}, {"b", 0.2}, {"c", 3.0}, {"y1_0", -1.0}, {"y2_0", 1.0}});
    const double a = p["a"], b = p["b"], c = p["c"];
    p.require(c != 0.0, "c must be non-zero");
    OdeSystem sys;
    sys.name = "fitzhugh_nagumo";
    sys.dim = 2;
    sys.rhs = [=](const State& y) {
        return make_state({c * (y[0] - y[0] * y[0] * y[0] / 3.0 + y[1]),
                           -(y[0] - a + b * y[1]) / c});
    };
    sys.default_y0 = make_state({p["y1_0"], p["y2_0"]});
    sys.params = p.all();
    return sys;
}

OdeSystem olsen_peroxide(const ParamMap& given)
{
    ParamReader p("olsen_peroxide", given,
                  {{"k1", 0.35}, {"k2", 250.0}, {"k3", 0.035}, {"k4", 20.0},
                   {"k5", 5.35}, {"k6", 1e-5}, {"k7", 0.1}, {"k8", 0.825},
                   {"A0", 8.0}, {"B0", 1.0}, {"X0", 1.0},
                   {"A_init", 6.0}, {"B_init", 58.0}, {"X_init", 0.0}, {"Y_init", 0.0}});
    const double k1 = p["k1"], k2 = p["k2"], k3 = p["k3"], k4 = p["k4"];
    const double k5 = p["k5"], k6 = p["k6"], k7 = p["k7"], k8 = p["k8"];
    const double a0 = p["A0"], b0 = p["B0"], x0 = p["X0"];
    for (const auto& [key, value] : p.all()) p.require(value >= 0.0, key + " must be non-negative");
    OdeSystem sys;
    sys.name = "olsen_peroxide";
    sys.dim = 4;
    sys.rhs = [=](const State& y) {
        const double A = y[0], B = y[1], X = y[2], Y = y[3];
        const double aby = k3 * A * B * Y;
        return make_state({k7 * (a0 - A) - aby,
                           k8 * b0 - k1 * B * X - aby,
                           k1 * B * X - 2.0 * k2 * X * X + 3.0 * aby - k4 * X + k6 * x0,
                           2.0 * k2 * X * X - k5 * Y - aby});
    };
    sys.default_y0 = make_state({p["A_init"], p["B_init"], p["X_init"], p["Y_init"]});
    sys.params = p.all();
    return sys;
}

OdeSystem kepler_perturbed(const ParamMap& given)
{
    ParamReader p("kepler_perturbed", given, {{"delta", 0.015}, {"e", 0.6}});
    const double delta = p["delta"], e = p["e"];
    p.require(e >= 0.0, "eccentricity must be non-negative");
    p.require(1.0 - e > 0.0, "1 - e must be positive");
    // y = (v1, v2, w1, w2): velocity first, then position.
    auto grad_w = [=](const State& y) {
        const double r2 = y[2] * y[2] + y[3] * y[3];
        const double r = std::sqrt(r2);
        const double g = 1.0 / (r2 * r) + delta / (r2 * r2 * r);
        return make_state({g * y[2], g * y[3]});
    };
    auto grad_v = [](const State& y) { return make_state({y[0], y[1]}); };
    auto energy = [=](const State& y) {
        const double r = std::hypot(y[2], y[3]);
        return 0.5 * (y[0] * y[0] + y[1] * y[1]) - 1.0 / r - delta / (3.0 * r * r * r);
    };

    OdeSystem sys;
    sys.name = "kepler_perturbed";
    sys.dim = 4;
    sys.rhs = [=](const State& y) {
        const State gw = grad_w(y);
        return make_state({-gw[0], -gw[1], y[0], y[1]});
    };
    sys.default_y0 = make_state({0.0, std::sqrt((1.0 + e) / (1.0 - e)), 1.0 - e, 0.0});

    // w1 v2 - w2 v1 as y^T C y.
    Matrix c = Matrix::Zero(4, 4);
    c(2, 1) = c(1, 2) = 0.5;
    c(3, 0) = c(0, 3) = -0.5;
    sys.integrals.push_back(FirstIntegral::quadratic_form("angular_momentum", c));
    sys.integrals.push_back(FirstIntegral::generic("energy", energy));
    sys.hamiltonian = HamiltonianStructure{energy, grad_v, grad_w, true, 4};
    sys.params = p.all();
    return sys;
}

OdeSystem pendulum(const ParamMap& given)
{
    ParamReader p("pendulum", given, {{"v0", 1.5}, {"w0", -std::numbers::pi}});
    auto energy = [](const State& y) { return 0.5 * y[0] * y[0] - std::cos(y[1]); };
    OdeSystem sys;
    sys.name = "pendulum";
    sys.dim = 2;
    sys.rhs = [](const State& y) { return make_state({-std::sin(y[1]), y[0]}); };
    sys.jacobian = [](const State& y) {
        Matrix j(2, 2);
        j << 0.0, -std::cos(y[1]), 1.0, 0.0;
        return j;
    };
    sys.default_y0 = make_state({p["v0"], p["w0"]});
    sys.integrals.push_back(FirstIntegral::generic("energy", energy));
    sys.hamiltonian = HamiltonianStructure{
        energy, [](const State& y) { return make_state({y[0]}); },
        [](const State& y) { return make_state({std::sin(y[1])}); }, true, 2};
    sys.params = p.all();
    return sys;
}

OdeSystem henon_heiles(const ParamMap& given)
{
    ParamReader p("henon_heiles", given, {{"energy", 0.13}, {"w1_0", 0.0}, {"w2_0", 0.1}, {"v1_0", 0.0}});
    auto potential = [](double w1, double w2) {
        return 0.5 * (w1 * w1 + w2 * w2) + w1 * w1 * w2 - w2 * w2 * w2 / 3.0;
    };
    auto energy = [=](const State& y) {
        return 0.5 * (y[0] * y[0] + y[1] * y[1]) + potential(y[2], y[3]);
    };
    auto grad_w = [](const State& y) {
        return make_state({y[2] + 2.0 * y[2] * y[3], y[3] + y[2] * y[2] - y[3] * y[3]});
    };
    auto grad_v = [](const State& y) { return make_state({y[0], y[1]}); };

    const double w1 = p["w1_0"], w2 = p["w2_0"], v1 = p["v1_0"];
    const double kinetic = p["energy"] - potential(w1, w2) - 0.5 * v1 * v1;
    p.require(kinetic >= 0.0, "initial position and v1 exceed the requested energy");

    OdeSystem sys;
    sys.name = "henon_heiles";
    sys.dim = 4;
    sys.rhs = [=](const State& y) {
        const State gw = grad_w(y);
        return make_state({-gw[0], -gw[1], y[0], y[1]});
    };
    sys.default_y0 = make_state({v1, std::sqrt(2.0 * kinetic), w1, w2});
    sys.integrals.push_back(FirstIntegral::generic("energy", energy));
    sys.hamiltonian = HamiltonianStructure{energy, grad_v, grad_w, true, 4};
    sys.params = p.all();
    return sys;
}

}  // namespace

const std::vector<std::string>& problem_names()
{
    static const std::vector<std::string> names = {
        "lorenz", "linear_decay", "fitzhugh_nagumo", "olsen_peroxide",
        "kepler_perturbed", "pendulum", "henon_heiles"};
    return names;
}

OdeSystem make_problem(std::string_view name, const ParamMap& params)
{
    if (name == "lorenz") return lorenz(params);
    if (name == "linear_decay") return linear_decay(params);
    if (name == "fitzhugh_nagumo") return fitzhugh_nagumo(params);
    if (name == "olsen_peroxide") return olsen_peroxide(params);
    if (name == "kepler_perturbed") return kepler_perturbed(params);
    if (name == "pendulum") return pendulum(params);
    if (name == "henon_heiles") return henon_heiles(params);
    throw std::invalid_argument("unknown problem '" + std::string(name) + "'");
}

OdeSystem make_zero_field(int dim)
{
    if (dim < 1 || dim > kMaxDim) throw std::invalid_argument("zero field dimension out of range");
    OdeSystem sys;
    sys.name = "zero";
    sys.dim = dim;
    sys.rhs = [dim](const State&) { return State(State::Zero(dim)); };
    sys.jacobian = [dim](const State&) { return Matrix(Matrix::Zero(dim, dim)); };
    sys.exact_flow = [](double, const State& y) { return y; };
    sys.default_y0 = State::Ones(dim);
    return sys;
}

}  // namespace rtsrk
