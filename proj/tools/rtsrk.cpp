// Experiment runner: one subcommand per study, flat JSON configs, CSV/JSON
// outputs and a manifest that can be fed back in as a config.

#include "rtsrk/analysis.hpp"
#include "rtsrk/bayes.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#ifndef RTSRK_GIT_DESCRIBE
#define RTSRK_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace rtsrk;

namespace {

constexpr std::uint64_t kDefaultSeed = 20240601;

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& key, const std::string& what)
        : std::runtime_error("config key '" + key + "': " + what), key_(key) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

struct Run;

struct Experiment {
    std::string name;
    std::string description;
    json defaults;
    std::string fixed_problem;  // set when the problem is not a config key
    std::function<void(Run&)> body;
};

bool has_problem(const Experiment& ex) { return !ex.fixed_problem.empty() || ex.defaults.contains("problem"); }

struct Run {
    const Experiment* ex = nullptr;
    json cfg;
    fs::path out;
    std::vector<std::string> issues;  // conditions that fail --strict
    std::vector<std::string> outputs;

    std::uint64_t seed() const { return cfg.at("seed").get<std::uint64_t>(); }
    double num(const std::string& key) const { return cfg.at(key).get<double>(); }
    std::size_t count(const std::string& key) const { return cfg.at(key).get<std::size_t>(); }
    std::string str(const std::string& key) const { return cfg.at(key).get<std::string>(); }
    std::vector<double> list(const std::string& key) const { return cfg.at(key).get<std::vector<double>>(); }
    std::vector<std::string> strings(const std::string& key) const { return cfg.at(key).get<std::vector<std::string>>(); }

    std::ofstream open(const std::string& file)
    {
        outputs.push_back(file);
        std::ofstream os(out / file);
        if (!os) throw std::runtime_error("cannot write " + (out / file).string());
        os << std::setprecision(17);
        return os;
    }

    void write_json(const std::string& file, const json& j)
    {
        std::ofstream os = open(file);
        os << j.dump(2) << '\n';
    }
};

// ---------------------------------------------------------------------------
// config handling

bool same_kind(const json& def, const json& v)
{
    if (def.is_number_integer() || def.is_number_unsigned())
        return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    if (def.is_number()) return v.is_number();
    if (def.is_string()) return v.is_string();
    if (def.is_boolean()) return v.is_boolean();
    if (def.is_array()) {
        if (!v.is_array()) return false;
        for (const auto& e : v) {
            if (!def.empty() && !same_kind(def.front(), e)) return false;
            if (def.empty() && !e.is_number()) return false;
        }
        return true;
    }
    return false;
}

std::string kind_name(const json& def)
{
    if (def.is_number_integer() || def.is_number_unsigned()) return "a non-negative integer";
    if (def.is_number()) return "a number";
    if (def.is_string()) return "a string";
    if (def.is_boolean()) return "a boolean";
    if (def.is_array()) return def.empty() || def.front().is_number() ? "a list of numbers" : "a list of strings";
    return "a value";
}

bool is_param_key(const std::string& key) { return key.rfind("problem.", 0) == 0 && key.size() > 8; }

std::string problem_name(const Run& r)
{
    return r.ex->fixed_problem.empty() ? r.str("problem") : r.ex->fixed_problem;
}

OdeSystem build_problem(const Run& r)
{
    ParamMap params;
    for (const auto& [key, value] : r.cfg.items())
        if (is_param_key(key)) params[key.substr(8)] = value.get<double>();
    try {
        return make_problem(problem_name(r), params);
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        const auto q = msg.find("parameter '");
        if (q != std::string::npos) {
            const auto start = q + 11;
            throw ConfigError("problem." + msg.substr(start, msg.find('\'', start) - start), msg);
        }
        throw ConfigError("problem", msg);
    }
}

State initial_state(const Run& r, const OdeSystem& sys)
{
    const auto v = r.list("y0");
    if (v.empty()) return sys.default_y0;
    if (static_cast<int>(v.size()) != sys.dim)
        throw ConfigError("y0", "expected " + std::to_string(sys.dim) + " components");
    State y(sys.dim);
    for (int i = 0; i < sys.dim; ++i) y[i] = v[static_cast<std::size_t>(i)];
    return y;
}

std::vector<double> grid(const Run& r)
{
    std::vector<double> h;
    for (std::size_t i = 0; i < r.count("levels"); ++i) h.push_back(r.num("h0") * std::pow(0.5, static_cast<double>(i)));
    return h;
}

LognormalVariant parse_variant(const std::string& s)
{
    if (s == "as_printed") return LognormalVariant::as_printed;
    if (s == "corrected") return LognormalVariant::corrected;
    throw std::invalid_argument("unknown lognormal variant '" + s + "' (as_printed | corrected)");
}

const std::set<std::string> kPositive = {"h", "T", "M", "R", "S", "n_steps", "levels", "h0", "t_obs", "noise_sd",
                                         "prior_sd", "steps", "stride", "per_decade", "grid_points", "p",
                                         "sigmas", "extended.M", "proposal_scale", "data_h_ref", "plateau.t1"};

void check_semantics(const Run& r)
{
    for (const auto& [key, value] : r.cfg.items()) {
        auto wrap = [&](auto&& fn) {
            try {
                fn();
            } catch (const ConfigError&) {
                throw;
            } catch (const std::exception& e) {
                throw ConfigError(key, e.what());
            }
        };
        if (kPositive.count(key)) {
            const bool ok = value.is_array() ? std::all_of(value.begin(), value.end(), [](const json& v) { return v.get<double>() > 0.0; })
                                             : value.get<double>() > 0.0;
            if (!ok) throw ConfigError(key, "must be positive");
        }
        if (key == "stepper") wrap([&] { (void)Stepper::from_name(value.get<std::string>()); });
        if (key == "scheme") wrap([&] { (void)parse_scheme(value.get<std::string>()); });
        if (key == "schemes")
            wrap([&] {
                for (const auto& s : value) (void)parse_scheme(s.get<std::string>());
            });
        if (key == "dist") wrap([&] { (void)parse_step_law(value.get<std::string>()); });
        if (key == "dist.variant") wrap([&] { (void)parse_variant(value.get<std::string>()); });
        if (key == "kinds")
            wrap([&] {
                for (const auto& s : value) (void)parse_linear_kind(s.get<std::string>());
            });
        if (key == "methods")
            wrap([&] {
                for (const auto& s : value) {
                    std::string name = s.get<std::string>();
                    if (name.size() > 4 && name.ends_with("-rts")) name.resize(name.size() - 4);
                    (void)Stepper::from_name(name);
                }
            });
        if (key.rfind("rows.", 0) == 0 || key.rfind("extended.rows.", 0) == 0)
            wrap([&] { (void)Stepper::from_name(key.substr(key.rfind('.') + 1)); });
    }
    if (has_problem(*r.ex)) {
        const OdeSystem sys = build_problem(r);
        if (r.cfg.contains("y0")) (void)initial_state(r, sys);
        if (r.cfg.contains("integral")) {
            try {
                (void)sys.integral(r.str("integral"));
            } catch (const std::exception& e) {
                throw ConfigError("integral", e.what());
            }
        }
    }
}

json resolve(const Experiment& ex, const json& file_cfg, const std::vector<std::string>& sets,
             const std::optional<std::uint64_t>& seed)
{
    json cfg = ex.defaults;
    auto put = [&](const std::string& key, const json& value) {
        if (key == "experiment") {
            if (value != ex.name) throw ConfigError(key, "config is for '" + value.dump() + "', not '" + ex.name + "'");
            return;
        }
        if (is_param_key(key) && has_problem(ex)) {
            if (!value.is_number()) throw ConfigError(key, "must be a number");
            cfg[key] = value;
            return;
        }
        if (!ex.defaults.contains(key)) throw ConfigError(key, "unknown key for " + ex.name);
        if (!same_kind(ex.defaults[key], value)) throw ConfigError(key, "must be " + kind_name(ex.defaults[key]));
        cfg[key] = value;
    };

    if (!file_cfg.is_null()) {
        const json* flat = &file_cfg;
        if (file_cfg.contains("config") && file_cfg["config"].is_object()) {  // a manifest
            if (file_cfg.contains("experiment") && file_cfg["experiment"] != ex.name)
                throw ConfigError("experiment", "manifest is for " + file_cfg["experiment"].dump());
            flat = &file_cfg["config"];
        }
        if (!flat->is_object()) throw ConfigError("<root>", "config must be a JSON object");
        for (const auto& [key, value] : flat->items()) put(key, value);
    }
    for (const std::string& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError(s, "overrides take the form key=value");
        const std::string key = s.substr(0, eq), text = s.substr(eq + 1);
        json value;
        try {
            value = json::parse(text);
        } catch (const json::parse_error&) {
            value = text;
        }
        put(key, value);
    }
    if (seed) cfg["seed"] = *seed;
    return cfg;
}

// ---------------------------------------------------------------------------
// helpers shared by the experiments

SchemeConfig scheme_config(const Run& r, const OdeSystem& sys, const State& y0)
{
    SchemeConfig c;
    c.system = sys;
    c.y0 = y0;
    c.stepper = Stepper::from_name(r.str("stepper"));
    if (r.cfg.contains("scheme")) c.scheme = parse_scheme(r.str("scheme"));
    if (r.cfg.contains("dist")) c.law = parse_step_law(r.str("dist"));
    if (r.cfg.contains("dist.variant")) c.lognormal_variant = parse_variant(r.str("dist.variant"));
    if (r.cfg.contains("h") && r.cfg["h"].is_number()) c.h = r.num("h");
    c.p = r.num("p");
    if (r.cfg.contains("noise_scale")) c.noise_scale = r.num("noise_scale");
    return c;
}

std::size_t steps_for(double t, double h, const std::string& key)
{
    const double n = std::round(t / h);
    if (n < 1.0 || std::abs(t / h - n) > 1e-9 * (t / h)) throw ConfigError(key, "T / h must be a positive integer");
    return static_cast<std::size_t>(n);
}

void write_state(std::ostream& os, const State& y)
{
    for (Eigen::Index i = 0; i < y.size(); ++i) os << ',' << y[i];
}

std::string state_header(int dim)
{
    std::string s;
    for (int i = 0; i < dim; ++i) s += ",y" + std::to_string(i);
    return s;
}

json nan_to_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

// ---------------------------------------------------------------------------
// experiments

void run_integrate(Run& r)
{
    const OdeSystem sys = build_problem(r);
    SchemeConfig c = scheme_config(r, sys, initial_state(r, sys));
    c.n_steps = r.count("n_steps");
    RngStream rng(r.seed(), r.count("stream"));
    Ensemble e;
    e.requested = 1;
    e.base_seed = r.seed();
    e.trajectories.push_back(c.run(rng));
    std::ofstream os = r.open("trajectory.csv");
    write_ensemble_csv(os, e);
}

void run_lorenz_fan(Run& r)
{
    const OdeSystem sys = build_problem(r);
    const State y0 = initial_state(r, sys);
    const Stepper st = Stepper::from_name(r.str("stepper"));
    const double h = r.num("h");
    const std::size_t n = steps_for(r.num("T"), h, "T"), m = r.count("M"), stride = r.count("stride");
    Recording rec{{}, false};
    for (std::size_t k = 0; k <= n; k += stride) rec.indices.push_back(k);
    rec.indices.push_back(n);

    std::ofstream os = r.open("fan.csv");
    os << "sigma,traj_id,k,t" << state_header(sys.dim) << '\n';
    const auto sigmas = r.list("sigmas");
    json summary = json::array();
    for (std::size_t s = 0; s < sigmas.size(); ++s) {
        std::size_t failed = 0;
        for (std::size_t i = 0; i < m; ++i) {
            RngStream rng(derive_seed(r.seed(), s), i);
            State y = y0;
            y[0] += sigmas[s] * rng.normal();
            try {
                const Trajectory t = integrate_deterministic(st, sys, y, h, n, rec);
                for (std::size_t j = 0; j < t.indices.size(); ++j) {
                    os << sigmas[s] << ',' << i << ',' << t.indices[j] << ',' << t.nominal_time(t.indices[j]);
                    write_state(os, t.states[j]);
                    os << '\n';
                }
            } catch (const DivergenceError&) {
                ++failed;
            }
        }
        if (failed) r.issues.push_back(std::to_string(failed) + " fan trajectories diverged");
        summary.push_back({{"sigma", sigmas[s]}, {"failed", failed}});
    }
    r.write_json("summary.json", {{"fans", summary}});
}

void run_err_estimator(Run& r)
{
    const OdeSystem sys = build_problem(r);
    const double h = r.num("h");
    (void)steps_for(r.num("T"), h, "T");
    const ErrorEstimatorComparison c =
        error_estimator_comparison(sys, initial_state(r, sys), h, r.num("T"), r.num("p"), r.count("M"), r.seed());
    std::ofstream os = r.open("series.csv");
    os << "t,embedded_estimate,std_indicator,true_error\n";
    for (std::size_t k = 0; k < c.true_error.times.size(); ++k)
        os << c.true_error.times[k] << ',' << c.local_estimate.values[k] << ',' << c.std_indicator.values[k] << ','
           << c.true_error.values[k] << '\n';
    r.write_json("summary.json", {{"final_embedded_estimate", c.local_estimate.values.back()},
                                  {"final_std_indicator", c.std_indicator.values.back()},
                                  {"final_true_error", c.true_error.values.back()}});
}

void study_rows(Run& r, const std::string& prefix, std::size_t m, StudyKind kind, std::ostream& csv, json& rows,
                std::size_t& row_id)
{
    const OdeSystem sys = build_problem(r);
    const State y0 = initial_state(r, sys);
    const Functional phi = [](const State& y) { return y.squaredNorm(); };
    for (const auto& [key, value] : r.cfg.items()) {
        if (key.rfind(prefix, 0) != 0) continue;
        const std::string method = key.substr(prefix.size());
        for (double p : value.get<std::vector<double>>()) {
            StudySpec spec;
            spec.system = sys;
            spec.y0 = y0;
            spec.stepper = Stepper::from_name(method);
            spec.law = parse_step_law(r.str("dist"));
            spec.p = p;
            spec.h_grid = grid(r);
            spec.m = m;
            spec.t_final = r.num("T");
            spec.seed = derive_seed(r.seed(), row_id++);
            spec.h_ref = r.num("h_ref");
            const ConvergenceStudy s = kind == StudyKind::weak ? study_weak(spec, phi) : study_mean_square(spec);
            for (std::size_t i = 0; i < s.h_grid.size(); ++i)
                csv << method << ',' << p << ',' << m << ',' << s.h_grid[i] << ',' << s.errors[i] << ','
                    << s.std_errors[i] << ',' << (s.flagged[i] ? 1 : 0) << '\n';
            rows.push_back({{"method", method},
                            {"p", p},
                            {"fitted_order", nan_to_null(s.fitted_order)},
                            {"theory_order", s.theory_order},
                            {"M", m},
                            {"seed", s.seed},
                            {"monotone", s.monotone},
                            {"flagged_points", std::count(s.flagged.begin(), s.flagged.end(), true)},
                            {"failed_trajectories", s.failed_trajectories},
                            {"notes", s.notes}});
            const std::string cell = method + " p=" + std::to_string(p);
            if (s.any_flagged()) r.issues.push_back(cell + ": Monte Carlo noise dominates some points");
            if (s.failed_trajectories) r.issues.push_back(cell + ": failed trajectories");
            if (!std::isfinite(s.fitted_order)) r.issues.push_back(cell + ": no order could be fitted");
        }
    }
}

void run_table(Run& r, StudyKind kind, const std::string& stem)
{
    std::ofstream csv = r.open(stem + ".csv");
    csv << "method,p,M,h,error,stderr,flagged\n";
    json rows = json::array();
    std::size_t row_id = 0;
    study_rows(r, "rows.", r.count("M"), kind, csv, rows, row_id);
    if (kind == StudyKind::weak && r.cfg.value("extended", false)) study_rows(r, "extended.rows.", r.count("extended.M"), kind, csv, rows, row_id);
    r.write_json(stem + ".json", {{"kind", to_string(kind)}, {"seed", r.seed()}, {"rows", rows}});
}

void run_mc_mse(Run& r)
{
    const OdeSystem sys = build_problem(r);
    StudySpec spec;
    spec.system = sys;
    spec.y0 = initial_state(r, sys);
    spec.stepper = Stepper::from_name(r.str("stepper"));
    spec.law = parse_step_law(r.str("dist"));
    spec.p = r.num("p");
    spec.h_grid = grid(r);
    spec.m = r.count("M");
    spec.t_final = r.num("T");
    spec.seed = r.seed();
    spec.h_ref = r.num("h_ref");
    const ConvergenceStudy s = study_estimator_mse(spec, r.count("R"), [](const State& y) { return y.squaredNorm(); });

    std::ofstream os = r.open("mse.csv");
    os << "h,mse,stderr,flagged,theory\n";
    for (std::size_t i = 0; i < s.h_grid.size(); ++i)
        os << s.h_grid[i] << ',' << s.errors[i] << ',' << s.std_errors[i] << ',' << (s.flagged[i] ? 1 : 0) << ','
           << s.theory_curve[i] << '\n';

    json summary = {{"fitted_order", nan_to_null(s.fitted_order)},
                    {"theory_order", s.theory_order},
                    {"M", s.m},
                    {"R", s.replicas},
                    {"seed", s.seed},
                    {"crossover_h", 1.0 / std::sqrt(static_cast<double>(s.m))},
                    {"notes", s.notes}};
    if (s.h_grid.size() >= 4) {
        const TwoRegimeFit fit = fit_two_regimes(s.h_grid, s.errors);
        summary["two_regime"] = {{"breakpoint_index", fit.breakpoint},
                                 {"breakpoint_h", s.h_grid[fit.breakpoint]},
                                 {"slope_coarse", fit.slope_coarse},
                                 {"slope_fine", fit.slope_fine}};
    }
    r.write_json("summary.json", summary);
    if (s.any_flagged()) r.issues.push_back("Monte Carlo noise dominates some MSE points");
}

void run_chemistry(Run& r)
{
    const OdeSystem sys = build_problem(r);
    const State y0 = initial_state(r, sys);
    SchemeConfig base = scheme_config(r, sys, y0);
    base.n_steps = steps_for(r.num("T"), base.h, "T");
    base.recording = Recording::endpoints(base.n_steps);
    const std::size_t m = r.count("M"), stride = r.count("stride");

    std::ofstream os = r.open("paths.csv");
    os << "scheme,traj_id,k,t_nominal,t_realized" << state_header(sys.dim) << '\n';
    json report = json::object();
    const auto schemes = r.strings("schemes");
    for (std::size_t s = 0; s < schemes.size(); ++s) {
        SchemeConfig cfg = base;
        cfg.scheme = parse_scheme(schemes[s]);
        const std::string label = to_string(cfg.scheme);
        std::size_t negatives = 0, paths_negative = 0, diverged = 0;
        double earliest = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m; ++i) {
            std::ostringstream rows;
            rows << std::setprecision(17);
            std::size_t own = 0;
            auto emit = [&](std::size_t k, double t, const State& y) {
                for (Eigen::Index j = 0; j < y.size(); ++j) own += y[j] < 0.0;
                if (k % stride == 0 || k == cfg.n_steps) {
                    rows << label << ',' << i << ',' << k << ',' << static_cast<double>(k) * cfg.h << ',' << t;
                    write_state(rows, y);
                    rows << '\n';
                }
            };
            emit(0, 0.0, y0);
            RngStream rng(derive_seed(r.seed(), s), i);
            try {
                (void)cfg.run(rng, emit);
            } catch (const DivergenceError& e) {
                ++diverged;
                earliest = std::min(earliest, static_cast<double>(e.step()) * cfg.h);
            } catch (const ConvergenceFailure&) {
                ++diverged;
            }
            os << rows.str();
            negatives += own;
            paths_negative += own > 0;
        }
        report[label] = {{"trajectories", m},
                         {"negative_values", negatives},
                         {"paths_with_negatives", paths_negative},
                         {"diverged", diverged},
                         {"earliest_divergence_time", nan_to_null(std::isfinite(earliest) ? earliest : NAN)}};
        if (diverged) r.issues.push_back(label + ": " + std::to_string(diverged) + " trajectories diverged");
    }
    r.write_json("positivity.json", report);
}

void run_kepler_invariant(Run& r)
{
    const OdeSystem sys = build_problem(r);
    const State y0 = initial_state(r, sys);
    const FirstIntegral& integral = sys.integral(r.str("integral"));
    const double i0 = eval_integral(integral, y0);
    SchemeConfig base = scheme_config(r, sys, y0);
    base.n_steps = steps_for(r.num("T"), base.h, "T");
    base.recording = Recording::endpoints(base.n_steps);
    const std::size_t m = r.count("M"), stride = r.count("stride");
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k <= base.n_steps; k += stride) idx.push_back(k);
    if (idx.back() != base.n_steps) idx.push_back(base.n_steps);

    std::ofstream os = r.open("drift.csv");
    os << "scheme,k,t,mean_drift,max_drift\n";
    json report = json::object();
    const auto schemes = r.strings("schemes");
    for (std::size_t s = 0; s < schemes.size(); ++s) {
        SchemeConfig cfg = base;
        cfg.scheme = parse_scheme(schemes[s]);
        std::vector<std::vector<double>> rows(m, std::vector<double>(idx.size(), 0.0));
        auto factory = [&](std::size_t traj) -> StepObserver {
            auto cursor = std::make_shared<std::size_t>(1);
            std::vector<double>* row = &rows[traj];
            return [&, cursor, row](std::size_t k, double, const State& y) {
                if (*cursor < idx.size() && idx[*cursor] == k) (*row)[(*cursor)++] = std::abs(eval_integral(integral, y) - i0);
            };
        };
        const Ensemble e = run_ensemble(cfg, m, derive_seed(r.seed(), s), 0, factory);
        std::vector<bool> failed(m, false);
        for (auto id : e.failed_ids) failed[id] = true;
        double worst = 0.0, final_mean = 0.0;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            double sum = 0.0, mx = 0.0;
            for (std::size_t t = 0; t < m; ++t) {
                if (failed[t]) continue;
                sum += rows[t][j];
                mx = std::max(mx, rows[t][j]);
            }
            const double mean = sum / static_cast<double>(e.size());
            worst = std::max(worst, mx);
            final_mean = mean;
            os << to_string(cfg.scheme) << ',' << idx[j] << ',' << static_cast<double>(idx[j]) * cfg.h << ',' << mean << ','
               << mx << '\n';
        }
        report[to_string(cfg.scheme)] = {{"max_drift", worst}, {"final_mean_drift", final_mean}, {"failed", e.failed_count}};
        if (e.failed_count) r.issues.push_back(to_string(cfg.scheme) + ": failed trajectories");
    }
    r.write_json("summary.json", {{"integral", r.str("integral")}, {"schemes", report}});
}

void run_pendulum_longtime(Run& r)
{
    const OdeSystem sys = build_problem(r);
    SchemeConfig base = scheme_config(r, sys, initial_state(r, sys));
    base.scheme = Scheme::rts_rk;
    std::ofstream os = r.open("longtime.csv");
    os << "h,t,mean_error\n";
    json per_h = json::array();
    double previous = NAN;
    const auto hs = r.list("h");
    for (std::size_t j = 0; j < hs.size(); ++j) {
        SchemeConfig cfg = base;
        cfg.h = hs[j];
        cfg.n_steps = steps_for(r.num("T"), cfg.h, "T");
        const SeriesReport s =
            hamiltonian_error_longtime(cfg, r.count("M"), derive_seed(r.seed(), j), static_cast<int>(r.count("per_decade")));
        for (std::size_t k = 0; k < s.times.size(); ++k) os << cfg.h << ',' << s.times[k] << ',' << s.values[k] << '\n';
        const double plateau = s.mean_over(r.num("plateau.t0"), r.num("plateau.t1"));
        json row = {{"h", cfg.h}, {"plateau", plateau}, {"plateau_over_h2", plateau / (cfg.h * cfg.h)}, {"max", s.max()}};
        if (std::isfinite(previous)) row["ratio_to_previous"] = previous / plateau;
        previous = plateau;
        per_h.push_back(row);
    }
    r.write_json("summary.json", {{"plateau_window", {r.num("plateau.t0"), r.num("plateau.t1")}}, {"series", per_h}});
}

void run_linear_posterior(Run& r)
{
    const double h = r.num("h"), p = r.num("p"), y0 = r.num("y0_true");
    RngStream rng(r.seed(), 0);
    const double z = rng.normal();
    const auto sigmas = r.list("sigmas");
    const auto kinds = r.strings("kinds");
    const std::size_t points = r.count("grid_points"), mcmc_steps = r.count("mcmc.steps");

    std::ofstream os = r.open("densities.csv");
    os << "sigma,kind,y,density\n";
    std::ofstream chains;
    if (mcmc_steps) {
        chains = r.open("chains.csv");
        chains << "sigma,kind,iteration,theta0,log_estimate,accepted\n";
    }
    json per_sigma = json::array();
    for (std::size_t s = 0; s < sigmas.size(); ++s) {
        const double sigma = sigmas[s];
        const double d = std::exp(-h) * y0 + sigma * z;
        std::vector<LinearPosterior> post;
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& k : kinds) {
            post.push_back(linear_analytic_posterior(parse_linear_kind(k), h, sigma, d, p));
            lo = std::min(lo, post.back().support().first);
            hi = std::max(hi, post.back().support().second);
        }
        json entry = {{"sigma", sigma}, {"d", d}};
        for (std::size_t k = 0; k < kinds.size(); ++k) {
            for (std::size_t i = 0; i < points; ++i) {
                const double y = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
                os << sigma << ',' << to_string(post[k].kind()) << ',' << y << ',' << post[k].density(y) << '\n';
            }
            entry[to_string(post[k].kind())] = {{"mean", post[k].mean()}, {"variance", post[k].variance()}};
        }
        if (mcmc_steps) {
            const InverseProblem ip = linear_inverse_problem(h, sigma, d);
            McmcConfig mc;
            mc.n_steps = mcmc_steps;
            mc.warmup = r.count("mcmc.warmup");
            mc.initial = Vector::Constant(1, d);
            mc.seed = derive_seed(r.seed(), 2 * s + 1);
            const Chain det = rwmh(ip, h, mc);
            mc.seed = derive_seed(r.seed(), 2 * s + 2);
            const Chain rts = pmmh(ip, StepDistribution::uniform(h, p), r.count("mcmc.S"), mc);
            for (const auto& [label, chain, kind] : {std::tuple{"det", &det, LinearPosteriorKind::deterministic},
                                                     std::tuple{"rts", &rts, LinearPosteriorKind::rts}}) {
                std::vector<double> xs;
                for (std::size_t i = 0; i < chain->samples.size(); ++i) {
                    xs.push_back(chain->samples[i][0]);
                    chains << sigma << ',' << label << ',' << i << ',' << chain->samples[i][0] << ','
                           << chain->log_estimates[i] << ',' << (chain->accepted[i] ? 1 : 0) << '\n';
                }
                const LinearPosterior target = linear_analytic_posterior(kind, h, sigma, d, p);
                const double qlo = target.quantile(5e-4), qhi = target.quantile(1.0 - 5e-4);
                entry["chain_" + std::string(label)] = {
                    {"acceptance_rate", chain->acceptance_rate},
                    {"hellinger", hellinger_chain_density(xs, [&](double y) { return target.density(y); }, qlo, qhi, 40)},
                    {"warnings", chain->warnings}};
                if (!chain->warnings.empty()) r.issues.push_back(std::string(label) + " chain: " + chain->warnings.front());
            }
        }
        per_sigma.push_back(entry);
    }
    const auto add = linear_additive_limit(h, y0);
    const auto [rlo, rhi] = linear_rts_limit_support(h, y0, p);
    r.write_json("summary.json", {{"h", h},
                                  {"p", p},
                                  {"z", z},
                                  {"posteriors", per_sigma},
                                  {"sigma_to_zero",
                                   {{"deterministic_point", linear_deterministic_limit(h, y0)},
                                    {"additive", {{"mean", add.mean}, {"variance", add.variance}}},
                                    {"rts_support", {rlo, rhi}}}}});
}

void run_infer_henon(Run& r)
{
    const OdeSystem sys = build_problem(r);
    const State y_true = sys.default_y0;
    RngStream shift(derive_seed(r.seed(), 0), 0);
    Vector prior_mean(y_true.size());
    for (Eigen::Index i = 0; i < y_true.size(); ++i) prior_mean[i] = y_true[i] + r.num("prior_shift") * shift.normal();
    InverseProblem ip = henon_inverse_problem(y_true, r.num("t_obs"), r.num("noise_sd"), prior_mean, r.num("prior_sd"),
                                              Stepper::from_name("verlet"), r.num("data_h_ref"), derive_seed(r.seed(), 1));

    std::ofstream os = r.open("chains.csv");
    os << "method,h,iteration,theta0,theta1,theta2,theta3,log_estimate,accepted\n";
    json chains = json::array();
    std::size_t chain_id = 0;
    for (const std::string& method : r.strings("methods")) {
        const bool rts = method.ends_with("-rts");
        ip.stepper = Stepper::from_name(rts ? method.substr(0, method.size() - 4) : method);
        for (double h : r.list("h")) {
            (void)steps_for(r.num("t_obs"), h, "h");
            McmcConfig mc;
            mc.n_steps = r.count("steps");
            mc.warmup = r.count("warmup");
            mc.proposal_scale = r.num("proposal_scale");
            mc.seed = derive_seed(r.seed(), 2 + chain_id++);
            const Chain c = rts ? pmmh(ip, StepDistribution::uniform(h, r.num("p")), r.count("S"), mc) : rwmh(ip, h, mc);
            Vector mean = Vector::Zero(4), sq = Vector::Zero(4);
            for (std::size_t i = 0; i < c.samples.size(); ++i) {
                os << method << ',' << h << ',' << i;
                for (Eigen::Index j = 0; j < 4; ++j) os << ',' << c.samples[i][j];
                os << ',' << c.log_estimates[i] << ',' << (c.accepted[i] ? 1 : 0) << '\n';
                mean += c.samples[i];
                sq += c.samples[i].cwiseAbs2();
            }
            mean /= static_cast<double>(c.samples.size());
            const Vector sd = (sq / static_cast<double>(c.samples.size()) - mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
            chains.push_back({{"method", method},
                              {"h", h},
                              {"acceptance_rate", c.acceptance_rate},
                              {"proposal_scale", c.proposal_scale},
                              {"mean", std::vector<double>(mean.data(), mean.data() + 4)},
                              {"sd", std::vector<double>(sd.data(), sd.data() + 4)},
                              {"warnings", c.warnings}});
            for (const auto& w : c.warnings) r.issues.push_back(method + " h=" + std::to_string(h) + ": " + w);
        }
    }
    r.write_json("summary.json", {{"y_true", std::vector<double>(y_true.data(), y_true.data() + y_true.size())},
                                  {"prior_mean", std::vector<double>(prior_mean.data(), prior_mean.data() + 4)},
                                  {"data", std::vector<double>(ip.data.data(), ip.data.data() + ip.data.size())},
                                  {"chains", chains}});
}

std::vector<Experiment> experiments()
{
    const json seed = kDefaultSeed;
    std::vector<Experiment> ex;
    ex.push_back({"integrate", "single trajectory dump",
                  {{"problem", "linear_decay"}, {"y0", json::array()}, {"stepper", "euler"}, {"scheme", "rts"},
                   {"dist", "uniform"}, {"dist.variant", "as_printed"}, {"h", 0.1}, {"p", 1.0}, {"n_steps", 10},
                   {"noise_scale", 1.0}, {"stream", 0}, {"seed", seed}},
                  "", run_integrate});
    ex.push_back({"lorenz-fan", "deterministic fans from perturbed initial conditions",
                  {{"problem", "lorenz"}, {"y0", json::array()}, {"stepper", "heun"}, {"h", 0.01}, {"T", 10.0},
                   {"M", 20}, {"sigmas", {1e-1, 1e-3, 1e-5}}, {"stride", 1}, {"seed", seed}},
                  "", run_lorenz_fan});
    ex.push_back({"err-estimator", "embedded estimate, ensemble spread and true error",
                  {{"problem", "lorenz"}, {"y0", json::array()}, {"h", 0.02}, {"T", 10.0}, {"M", 100}, {"p", 1.0},
                   {"seed", seed}},
                  "", run_err_estimator});
    ex.push_back({"table-ms", "mean-square order table",
                  {{"problem", "fitzhugh_nagumo"}, {"y0", json::array()}, {"dist", "uniform"}, {"T", 1.0},
                   {"h0", 0.01}, {"levels", 5}, {"M", 1000}, {"h_ref", 0.0},
                   {"rows.heun", {0.5, 1.0, 1.5, 2.0, 2.5}}, {"rows.rk4", {2.5, 3.0, 3.5, 4.0, 4.5}}, {"seed", seed}},
                  "", [](Run& r) { run_table(r, StudyKind::mean_square, "table_ms"); }});
    ex.push_back({"table-weak", "weak order table",
                  {{"problem", "fitzhugh_nagumo"}, {"y0", json::array()}, {"dist", "uniform"}, {"T", 1.0},
                   {"h0", 0.1}, {"levels", 6}, {"M", 100000}, {"h_ref", 0.0}, {"extended", false}, {"rows.heun", {1.0, 1.5}},
                   {"rows.rk4", {1.0, 1.5}}, {"extended.M", 1000000}, {"extended.rows.heun", {2.0}},
                   {"extended.rows.rk4", {2.0, 3.0, 4.0}}, {"seed", seed}},
                  "", [](Run& r) { run_table(r, StudyKind::weak, "table_weak"); }});
    ex.push_back({"mc-mse", "mean-square error of the Monte Carlo estimator",
                  {{"problem", "fitzhugh_nagumo"}, {"y0", json::array()}, {"stepper", "heun"}, {"dist", "uniform"},
                   {"p", 1.0}, {"T", 1.0}, {"h0", 0.125}, {"levels", 8}, {"M", 1000}, {"R", 32}, {"h_ref", 0.0},
                   {"seed", seed}},
                  "", run_mc_mse});
    ex.push_back({"chemistry", "positivity of RTS-RK and additive noise on the peroxidase-oxidase model",
                  {{"problem", "olsen_peroxide"}, {"y0", json::array()}, {"stepper", "rkc"}, {"dist", "uniform"},
                   {"h", 0.05}, {"p", 1.0}, {"T", 100.0}, {"M", 50}, {"noise_scale", 1.0},
                   {"schemes", {"rts", "add"}}, {"stride", 20}, {"seed", seed}},
                  "", run_chemistry});
    ex.push_back({"kepler-invariant", "first-integral drift on the perturbed Kepler problem",
                  {{"problem", "kepler_perturbed"}, {"y0", json::array()}, {"stepper", "midpoint"}, {"dist", "uniform"},
                   {"h", 0.01}, {"p", 2.0}, {"T", 4000.0}, {"M", 1}, {"noise_scale", 1.0},
                   {"integral", "angular_momentum"}, {"schemes", {"rts", "add"}}, {"stride", 100}, {"seed", seed}},
                  "", run_kepler_invariant});
    ex.push_back({"pendulum-longtime", "long-time mean Hamiltonian error",
                  {{"problem", "pendulum"}, {"y0", json::array()}, {"stepper", "midpoint"}, {"dist", "uniform"},
                   {"p", 2.0}, {"h", {0.2, 0.1}}, {"T", 100000.0}, {"M", 20}, {"per_decade", 128},
                   {"plateau.t0", 10.0}, {"plateau.t1", 1000.0}, {"seed", seed}},
                  "", run_pendulum_longtime});
    ex.push_back({"linear-posterior", "analytic posteriors of the scalar decay example",
                  {{"h", 0.5}, {"p", 1.0}, {"y0_true", 1.0}, {"sigmas", {0.1, 0.05, 0.025, 0.0125}},
                   {"kinds", {"true", "det", "add", "rts"}}, {"grid_points", 2001}, {"mcmc.steps", 0},
                   {"mcmc.warmup", 5000}, {"mcmc.S", 1}, {"seed", seed}},
                  "", run_linear_posterior});
    ex.push_back({"infer-henon", "posterior chains for the Henon-Heiles initial state",
                  {{"t_obs", 10.0}, {"noise_sd", 5e-4}, {"h", {0.2, 0.1, 0.05, 0.025}},
                   {"methods", {"heun", "verlet", "verlet-rts"}}, {"p", 2.0}, {"S", 1}, {"prior_sd", 0.05},
                   {"prior_shift", 0.05}, {"data_h_ref", 1e-3}, {"steps", 100000}, {"warmup", 5000}, {"proposal_scale", 0.01}, {"seed", seed}},
                  "henon_heiles", run_infer_henon});
    return ex;
}

json load_file(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw ConfigError("--config", "cannot open " + path);
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError("--config", e.what());
    }
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Random time-step Runge-Kutta experiments"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    int threads = 0;
    bool strict = false, extended = false, validate_only = false, dump = false;
    std::vector<std::string> sets;
    app.add_option("--config", config_path, "JSON config with flat dotted keys, or a manifest");
    app.add_option("--seed", seed, "overrides the config seed");
    app.add_option("--threads", threads, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
    app.add_option("--out", out_dir, "output directory (default out/<experiment>)");
    app.add_flag("--strict", strict, "non-zero exit when MC noise dominates or trajectories fail");
    app.add_flag("--extended", extended, "also run the large-M weak-order rows");
    app.add_option("--set", sets, "key=value override, repeatable");
    app.add_flag("--validate-only", validate_only, "check the config and exit");
    app.add_flag("--dump-config", dump, "print the resolved config and exit");

    const std::vector<Experiment> all = experiments();
    for (const auto& ex : all) app.add_subcommand(ex.name, ex.description);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    const Experiment* chosen = nullptr;
    for (const auto& ex : all)
        if (app.got_subcommand(ex.name)) chosen = &ex;

    Run run;
    run.ex = chosen;
    try {
        const json file_cfg = config_path.empty() ? json() : load_file(config_path);
        run.cfg = resolve(*chosen, file_cfg, sets, seed);
        if (extended) {
            if (!run.cfg.contains("extended")) throw ConfigError("--extended", "not used by " + chosen->name);
            run.cfg["extended"] = true;
        }
        check_semantics(run);
    } catch (const ConfigError& e) {
        std::cerr << "rtsrk " << chosen->name << ": invalid config: " << e.what() << '\n';
        return 2;
    }
    if (dump) {
        json flat = {{"experiment", chosen->name}};
        flat.update(run.cfg);
        std::cout << flat.dump(2) << '\n';
        return 0;
    }
    if (validate_only) {
        std::cout << chosen->name << ": config ok\n";
        return 0;
    }

    if (threads > 0) omp_set_num_threads(threads);
    run.out = out_dir.empty() ? fs::path("out") / chosen->name : fs::path(out_dir);
    fs::create_directories(run.out);

    const auto start = std::chrono::steady_clock::now();
    try {
        chosen->body(run);
    } catch (const ConfigError& e) {
        std::cerr << "rtsrk " << chosen->name << ": invalid config: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "rtsrk " << chosen->name << ": " << e.what() << '\n';
        return 1;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    json manifest = {{"experiment", chosen->name},
                     {"config", run.cfg},
                     {"seed", run.seed()},
                     {"git_describe", RTSRK_GIT_DESCRIBE},
                     {"threads", threads > 0 ? threads : omp_get_max_threads()},
                     {"wall_time_s", wall},
                     {"outputs", run.outputs},
                     {"issues", run.issues}};
    std::ofstream(run.out / "manifest.json") << manifest.dump(2) << '\n';

    for (const auto& issue : run.issues) std::cerr << "warning: " << issue << '\n';
    std::cout << chosen->name << ": wrote " << run.outputs.size() << " file(s) to " << run.out.string() << " in "
              << std::fixed << std::setprecision(1) << wall << " s\n";
    return strict && !run.issues.empty() ? 3 : 0;
}
