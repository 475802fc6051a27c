#pragma once

// CLI run configuration: sectioned key-value JSON with strict validation.
// Unknown sections or keys are rejected before any compute starts; every
// default matches the model calibration and the documented design choices.

#include <cstdint>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddsg/hdmr.hpp"
#include "ddsg/irbc.hpp"
#include "ddsg/serialize.hpp"
#include "ddsg/solver.hpp"
#include "ddsg/time_iteration.hpp"

namespace ddsg::cli {

class config_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct ApproxConfig {
    std::string function = "separable_poly"; // separable_poly | product_peak | x1_sqrt_x2
    int dim = 4;
    int degree = 1; // exponent c of the separable polynomial family
    int eval_samples = 1000;
    bool build = true;
    std::vector<int> count_dims = {10, 20};
    std::vector<int> count_orders = {1, 2};
};

struct BenchConfig {
    int dim = 8;
    int points = 1000;
    int repetitions = 5;
};

struct AnalyzeConfig {
    std::string policy_in; // optional serialized policy as the frozen iterate
};

struct RunConfig {
    // grid
    int max_level = 4;
    double eps_gamma = 1e-3;
    BoundaryMode boundary_mode = BoundaryMode::modified_linear;
    // hdmr
    int k_max = 1;
    double eps_eta = 1e-4;
    double eps_rho = 1e-4; // defaults to eps_eta when absent
    std::string anchor = "center"; // center | sample
    int anchor_samples = 1000;
    bool exact_cuts = false;
    // model
    irbc::IrbcParameters model = irbc::make_parameters(2, irbc::Variant::smooth);
    // solver
    irbc::SolverConfig solver;
    // time iteration
    irbc::TimeIterationConfig time_iteration;
    // runtime
    unsigned workers = 0; // 0 = hardware parallelism
    // command sections
    ApproxConfig approx;
    BenchConfig bench;
    AnalyzeConfig analyze;

    DdsgOptions ddsg_options() const {
        DdsgOptions opt;
        opt.k_max = k_max;
        opt.eps_eta = eps_eta;
        opt.eps_rho = eps_rho;
        opt.max_level = max_level;
        opt.eps_gamma = eps_gamma;
        opt.mode = boundary_mode;
        opt.exact_cuts = exact_cuts;
        opt.workers = effective_workers();
        return opt;
    }

    unsigned effective_workers() const {
        return workers == 0 ? default_worker_count() : workers;
    }
};

namespace detail_cfg {

inline void check_keys(const nlohmann::json& section, const std::string& name,
                       const std::set<std::string>& allowed) {
    if (!section.is_object()) throw config_error("config section '" + name + "' must be an object");
    for (const auto& [key, value] : section.items())
        if (!allowed.count(key))
            throw config_error("config: unknown key '" + key + "' in section '" + name + "'");
}

template <typename T>
void read(const nlohmann::json& section, const char* key, T& target) {
    if (section.contains(key)) target = section.at(key).get<T>();
}

} // namespace detail_cfg

inline RunConfig parse_config(const nlohmann::json& doc) {
    RunConfig cfg;
    detail_cfg::check_keys(doc, "(top level)",
                           {"grid", "hdmr", "model", "solver", "time_iteration", "runtime",
                            "approx", "bench", "analyze"});
    using detail_cfg::read;
    if (doc.contains("grid")) {
        const auto& s = doc.at("grid");
        detail_cfg::check_keys(s, "grid", {"max_level", "eps_gamma", "boundary_mode"});
        read(s, "max_level", cfg.max_level);
        read(s, "eps_gamma", cfg.eps_gamma);
        if (s.contains("boundary_mode"))
            cfg.boundary_mode = boundary_mode_from_string(s.at("boundary_mode"));
    }
    if (doc.contains("hdmr")) {
        const auto& s = doc.at("hdmr");
        detail_cfg::check_keys(
            s, "hdmr", {"k_max", "eps_eta", "eps_rho", "anchor", "anchor_samples", "exact_cuts"});
        read(s, "k_max", cfg.k_max);
        read(s, "eps_eta", cfg.eps_eta);
        cfg.eps_rho = cfg.eps_eta; // convention: eps_rho follows eps_eta unless given
        read(s, "eps_rho", cfg.eps_rho);
        read(s, "anchor", cfg.anchor);
        read(s, "anchor_samples", cfg.anchor_samples);
        read(s, "exact_cuts", cfg.exact_cuts);
        if (cfg.anchor != "center" && cfg.anchor != "sample")
            throw config_error("config: hdmr.anchor must be 'center' or 'sample'");
    }
    if (doc.contains("model")) {
        const auto& s = doc.at("model");
        detail_cfg::check_keys(s, "model",
                               {"countries", "beta", "gamma_base", "alpha", "delta", "sigma",
                                "rho_a", "phi_adj", "variant", "k_min", "k_max",
                                "lna_half_width"});
        auto& m = cfg.model;
        read(s, "countries", m.countries);
        read(s, "beta", m.beta);
        read(s, "gamma_base", m.gamma_base);
        read(s, "alpha", m.alpha);
        read(s, "delta", m.delta);
        read(s, "sigma", m.sigma);
        read(s, "rho_a", m.rho_a);
        read(s, "phi_adj", m.phi_adj);
        read(s, "k_min", m.k_lo);
        read(s, "k_max", m.k_hi);
        read(s, "lna_half_width", m.lna_half_width);
        if (s.contains("variant")) {
            const std::string v = s.at("variant").get<std::string>();
            if (v == "smooth")
                m.variant = irbc::Variant::smooth;
            else if (v == "nonsmooth")
                m.variant = irbc::Variant::nonsmooth;
            else
                throw config_error("config: model.variant must be 'smooth' or 'nonsmooth'");
        }
        m.gamma.clear(); // recompute the schedule from gamma_base
        try {
            irbc::refresh_derived(m);
        } catch (const std::invalid_argument& e) {
            throw config_error(std::string("config: ") + e.what());
        }
    }
    if (doc.contains("solver")) {
        const auto& s = doc.at("solver");
        detail_cfg::check_keys(s, "solver",
                               {"newton_tol", "max_newton_iters", "fd_epsilon", "min_step"});
        read(s, "newton_tol", cfg.solver.newton_tol);
        read(s, "max_newton_iters", cfg.solver.max_newton_iters);
        read(s, "fd_epsilon", cfg.solver.fd_epsilon);
        read(s, "min_step", cfg.solver.min_step);
        if (cfg.solver.newton_tol <= 0.0 || cfg.solver.fd_epsilon <= 0.0)
            throw config_error("config: solver tolerances must be > 0");
    }
    if (doc.contains("time_iteration")) {
        const auto& s = doc.at("time_iteration");
        detail_cfg::check_keys(s, "time_iteration",
                               {"euler_tol", "max_steps", "policy_change_tol", "euler_samples",
                                "policy_change_samples", "rng_seed"});
        auto& t = cfg.time_iteration;
        read(s, "euler_tol", t.euler_tol);
        read(s, "max_steps", t.max_steps);
        read(s, "policy_change_tol", t.policy_change_tol);
        read(s, "euler_samples", t.euler_samples);
        read(s, "policy_change_samples", t.policy_change_samples);
        read(s, "rng_seed", t.rng_seed);
        if (t.euler_tol <= 0.0 || t.policy_change_tol <= 0.0 || t.euler_samples < 1)
            throw config_error("config: invalid time_iteration section");
    }
    if (doc.contains("runtime")) {
        const auto& s = doc.at("runtime");
        detail_cfg::check_keys(s, "runtime", {"workers"});
        read(s, "workers", cfg.workers);
    }
    if (doc.contains("approx")) {
        const auto& s = doc.at("approx");
        detail_cfg::check_keys(s, "approx",
                               {"function", "dim", "degree", "eval_samples", "build",
                                "count_dims", "count_orders"});
        auto& a = cfg.approx;
        read(s, "function", a.function);
        read(s, "dim", a.dim);
        read(s, "degree", a.degree);
        read(s, "eval_samples", a.eval_samples);
        read(s, "build", a.build);
        read(s, "count_dims", a.count_dims);
        read(s, "count_orders", a.count_orders);
        if (a.function != "separable_poly" && a.function != "product_peak" &&
            a.function != "x1_sqrt_x2")
            throw config_error("config: approx.function must be one of separable_poly, "
                               "product_peak, x1_sqrt_x2");
        if (a.dim < 1 || a.eval_samples < 1)
            throw config_error("config: invalid approx section");
    }
    if (doc.contains("bench")) {
        const auto& s = doc.at("bench");
        detail_cfg::check_keys(s, "bench", {"dim", "points", "repetitions"});
        read(s, "dim", cfg.bench.dim);
        read(s, "points", cfg.bench.points);
        read(s, "repetitions", cfg.bench.repetitions);
        if (cfg.bench.dim < 1 || cfg.bench.points < 1 || cfg.bench.repetitions < 1)
            throw config_error("config: invalid bench section");
    }
    if (doc.contains("analyze")) {
        const auto& s = doc.at("analyze");
        detail_cfg::check_keys(s, "analyze", {"policy_in"});
        read(s, "policy_in", cfg.analyze.policy_in);
    }
    if (cfg.max_level < 1) throw config_error("config: grid.max_level must be >= 1");
    if (cfg.eps_gamma < 0.0 || cfg.eps_eta < 0.0 || cfg.eps_rho < 0.0)
        throw config_error("config: thresholds must be >= 0");
    return cfg;
}

// FNV-1a over the canonical (sorted-key) dump; stamped into every artifact.
inline std::string config_hash(const nlohmann::json& doc) {
    const std::string dump = doc.dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace ddsg::cli
