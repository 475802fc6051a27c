// Command-line frontend: approximation experiments, model solves, expansion
// analysis, and interpolation benchmarks.  All parallelism lives behind the
// runtime module; this file only orchestrates and writes artifacts.
//
// Exit codes: 0 success, 1 configuration error, 2 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ddsg/config.hpp"
#include "ddsg/ddsg_eval.hpp"
#include "ddsg/hdmr.hpp"
#include "ddsg/irbc.hpp"
#include "ddsg/serialize.hpp"
#include "ddsg/solver.hpp"
#include "ddsg/time_iteration.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ddsg;

namespace {

struct Cli {
    std::string config_path;
    std::string out_dir = ".";
    unsigned workers = 0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool workers_set = false;
};

json load_config_doc(const Cli& cli) {
    json doc = json::object();
    if (!cli.config_path.empty()) {
        std::ifstream in(cli.config_path);
        if (!in) throw cli::config_error("cannot open config file: " + cli.config_path);
        try {
            in >> doc;
        } catch (const json::exception& e) {
            throw cli::config_error("config parse error: " + std::string(e.what()));
        }
    }
    // fold CLI overrides into the effective config so the hash covers them
    if (cli.workers_set) doc["runtime"]["workers"] = cli.workers;
    if (cli.seed_set) doc["time_iteration"]["rng_seed"] = cli.seed;
    return doc;
}

std::ofstream open_artifact(const fs::path& path, const std::string& hash) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << "# config_hash=" << hash << "\n";
    out.precision(17);
    return out;
}

// built-in analytic test functions ------------------------------------------

struct TestFunction {
    std::string name;
    int dim = 0;
    std::function<double(std::span<const double>)> f;
};

TestFunction make_test_function(const cli::ApproxConfig& a) {
    TestFunction tf;
    tf.name = a.function;
    if (a.function == "separable_poly") {
        tf.dim = a.dim;
        const int c = a.degree;
        tf.f = [c](std::span<const double> x) {
            double s = 0.0;
            for (double v : x) s += v;
            return std::pow(s, c);
        };
    } else if (a.function == "product_peak") {
        tf.dim = a.dim;
        tf.f = [](std::span<const double> x) {
            double s = 1.0;
            for (double v : x) s *= 1.0 / (1.0 + (v - 0.5) * (v - 0.5));
            return s;
        };
    } else { // x1_sqrt_x2
        tf.dim = 2;
        tf.f = [](std::span<const double> x) { return x[0] * std::sqrt(x[1]); };
    }
    return tf;
}

Evaluator wrap_scalar(const std::function<double(std::span<const double>)>& f) {
    return [f](std::span<const double> x, std::span<double> out) { out[0] = f(x); };
}

// approx ---------------------------------------------------------------------

int cmd_approx(const cli::RunConfig& cfg, const json& doc, const fs::path& out_dir) {
    const std::string hash = cli::config_hash(doc);
    const auto& a = cfg.approx;

    {
        auto counts = open_artifact(out_dir / "counts.csv", hash);
        counts << "d,k_max,max_level,ddsg_points,sg_points,ratio_sg_over_ddsg\n";
        for (int d : a.count_dims) {
            for (int k : a.count_orders) {
                if (k > d) continue;
                const auto ddsg_pts = ddsg_grid_count(d, k, cfg.max_level);
                const auto sg_pts = sg_node_count(d, cfg.max_level);
                counts << d << ',' << k << ',' << cfg.max_level << ',' << ddsg_pts << ','
                       << sg_pts << ','
                       << static_cast<double>(sg_pts) / static_cast<double>(ddsg_pts) << "\n";
            }
        }
    }
    if (!a.build) return 0;

    const TestFunction tf = make_test_function(a);
    Evaluator f = wrap_scalar(tf.f);
    AnchorPoint anchor;
    if (cfg.anchor == "sample") {
        anchor = select_anchor(f, tf.dim, 1, cfg.anchor_samples, cfg.time_iteration.rng_seed);
    } else {
        anchor.coords.assign(static_cast<std::size_t>(tf.dim), 0.5);
    }

    DdsgOptions opt = cfg.ddsg_options();
    opt.k_max = std::min(opt.k_max, tf.dim);
    ExpansionDiagnostics diag;
    const auto t0 = std::chrono::steady_clock::now();
    auto dd = std::make_shared<const DdsgFunction>(
        decompose(f, tf.dim, 1, anchor, opt, &diag));
    const double build_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto vec = VectorizedDdsg::compile(dd);

    // sampled errors against the analytic function
    std::mt19937_64 rng(cfg.time_iteration.rng_seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double linf = 0.0, l2 = 0.0;
    std::vector<double> x(static_cast<std::size_t>(tf.dim)), out(1);
    for (int i = 0; i < a.eval_samples; ++i) {
        for (auto& c : x) c = unif(rng);
        vec.evaluate(x, out);
        const double err = std::abs(out[0] - tf.f(x));
        linf = std::max(linf, err);
        l2 += err * err;
    }
    l2 = std::sqrt(l2 / static_cast<double>(a.eval_samples));

    {
        auto summary = open_artifact(out_dir / "summary.csv", hash);
        summary << "function,d,degree,k_max,eps_eta,eps_rho,max_level,eps_gamma,exact_cuts,"
                   "ddsg_points,sg_points,linf_error,l2_error,eval_samples,build_seconds\n";
        summary << tf.name << ',' << tf.dim << ',' << a.degree << ',' << opt.k_max << ','
                << opt.eps_eta << ',' << opt.eps_rho << ',' << opt.max_level << ','
                << opt.eps_gamma << ',' << (opt.exact_cuts ? 1 : 0) << ','
                << dd->total_grid_points() << ',' << sg_node_count(tf.dim, opt.max_level) << ','
                << linf << ',' << l2 << ',' << a.eval_samples << ',' << build_s << "\n";
    }
    {
        auto rho = open_artifact(out_dir / "rho.csv", hash);
        rho << "order,rho\n";
        for (std::size_t k = 0; k < diag.rho_by_order.size(); ++k)
            rho << (k + 1) << ',' << diag.rho_by_order[k] << "\n";
    }
    {
        auto eta = open_artifact(out_dir / "eta.csv", hash);
        eta << "order,index,eta,accepted\n";
        for (const auto& order_records : diag.eta_by_order)
            for (const auto& r : order_records) {
                std::string dims;
                for (std::size_t i = 0; i < r.index.dims.size(); ++i)
                    dims += (i ? "|" : "") + std::to_string(r.index.dims[i]);
                eta << r.index.order() << ',' << dims << ',' << r.eta << ','
                    << (r.accepted ? 1 : 0) << "\n";
            }
    }
    std::cout << "approx: " << tf.name << " d=" << tf.dim << " points="
              << dd->total_grid_points() << " linf=" << linf << " l2=" << l2 << "\n";
    return 0;
}

// solve ----------------------------------------------------------------------

int cmd_solve(const cli::RunConfig& cfg, const json& doc, const fs::path& out_dir) {
    const std::string hash = cli::config_hash(doc);
    irbc::TimeIterationResult result;
    try {
        result = irbc::time_iterate(cfg.model, cfg.ddsg_options(), cfg.time_iteration,
                                    cfg.solver, cfg.effective_workers());
    } catch (const irbc::time_iteration_abort& ab) {
        auto diag = open_artifact(out_dir / "failures.csv", hash);
        diag << "canonical_state,residual_norm\n";
        for (const auto& f : ab.failures()) {
            std::string state;
            for (std::size_t i = 0; i < f.canonical_state.size(); ++i)
                state += (i ? "|" : "") + std::to_string(f.canonical_state[i]);
            diag << state << ',' << f.residual_norm << "\n";
        }
        std::cerr << "solve aborted: " << ab.what() << " (diagnostics in failures.csv)\n";
        return 2;
    }

    irbc::write_reports_csv((out_dir / "reports.csv").string(), result.reports,
                            "config_hash=" + hash);
    save_json(to_json(*result.policy), (out_dir / "policy.json").string());

    const auto& last = result.reports.back();
    {
        auto summary = open_artifact(out_dir / "summary.csv", hash);
        summary << "variant,d,k_max,eps_eta,eps_rho,max_level,eps_gamma,ddsg_points,"
                   "avg_euler_log10,max_euler_log10,steps,converged\n";
        summary << (cfg.model.variant == irbc::Variant::smooth ? "smooth" : "nonsmooth") << ','
                << cfg.model.state_dim() << ',' << cfg.k_max << ',' << cfg.eps_eta << ','
                << cfg.eps_rho << ',' << cfg.max_level << ',' << cfg.eps_gamma << ','
                << last.grid_points << ',' << last.avg_euler_log10 << ','
                << last.max_euler_log10 << ',' << last.step << ','
                << (result.converged ? 1 : 0) << "\n";
    }
    {
        json summary;
        summary["config_hash"] = hash;
        summary["config"] = doc;
        summary["steps"] = last.step;
        summary["converged"] = result.converged;
        summary["ddsg_points"] = last.grid_points;
        summary["avg_euler_log10"] = last.avg_euler_log10;
        summary["max_euler_log10"] = last.max_euler_log10;
        summary["policy_change_sup"] = last.policy_change_sup;
        save_json(summary, (out_dir / "summary.json").string());
    }
    std::cout << "solve: steps=" << last.step << " points=" << last.grid_points
              << " avg_euler_log10=" << last.avg_euler_log10
              << " max_euler_log10=" << last.max_euler_log10
              << " converged=" << result.converged << "\n";
    return 0;
}

// analyze --------------------------------------------------------------------

int cmd_analyze(const cli::RunConfig& cfg, const json& doc, const fs::path& out_dir) {
    const std::string hash = cli::config_hash(doc);
    const auto& p = cfg.model;
    const auto quad = irbc::make_shock_quadrature(p.countries);
    const double lam_ss = irbc::steady_state_lambda(p);
    const int d = p.state_dim();
    const int m = p.policy_dim();

    irbc::PolicyEvaluator frozen;
    if (!cfg.analyze.policy_in.empty()) {
        auto loaded = std::make_shared<const DdsgFunction>(
            ddsg_from_json(load_json(cfg.analyze.policy_in)));
        auto vec = std::make_shared<const VectorizedDdsg>(VectorizedDdsg::compile(loaded));
        frozen = [vec](std::span<const double> x, std::span<double> out) {
            thread_local EvalWorkspace ws;
            vec->evaluate(x, out, ws);
        };
    } else {
        frozen = [p, lam_ss](std::span<const double> x, std::span<double> out) {
            const auto s = irbc::from_canonical(x, p);
            irbc::PolicyValue pv;
            pv.k_next = s.k;
            if (p.variant == irbc::Variant::nonsmooth)
                pv.mu.assign(s.k.size(), 0.0);
            pv.lambda = lam_ss;
            pv.to_flat(out, p);
        };
    }

    Evaluator foc_eval = [&](std::span<const double> x, std::span<double> out) {
        const auto st = irbc::from_canonical(x, p);
        std::vector<double> wf(static_cast<std::size_t>(m));
        frozen(x, wf);
        const auto sol = irbc::solve_foc_at_point(
            st, p, frozen, irbc::PolicyValue::from_flat(wf, p), cfg.solver, quad);
        sol.to_flat(out, p);
    };

    // one instrumented expansion step, full measurement: no eta truncation and
    // no early rho stop
    DdsgOptions opt = cfg.ddsg_options();
    opt.eps_eta = 0.0;
    opt.eps_rho = 0.0;
    AnchorPoint anchor;
    anchor.coords.assign(static_cast<std::size_t>(d), 0.5);
    ExpansionDiagnostics diag;
    decompose(foc_eval, d, m, anchor, opt, &diag);

    {
        auto eta = open_artifact(out_dir / "eta.csv", hash);
        eta << "order,index,eta,accepted\n";
        for (const auto& order_records : diag.eta_by_order)
            for (const auto& r : order_records) {
                std::string dims;
                for (std::size_t i = 0; i < r.index.dims.size(); ++i)
                    dims += (i ? "|" : "") + std::to_string(r.index.dims[i]);
                eta << r.index.order() << ',' << dims << ',' << r.eta << ','
                    << (r.accepted ? 1 : 0) << "\n";
            }
    }
    {
        auto by_order = open_artifact(out_dir / "eta_by_order.csv", hash);
        by_order << "order,count,min_eta,avg_eta,max_eta\n";
        for (std::size_t k = 0; k < diag.eta_by_order.size(); ++k) {
            const auto& recs = diag.eta_by_order[k];
            if (recs.empty()) continue;
            double lo = recs.front().eta, hi = recs.front().eta, avg = 0.0;
            for (const auto& r : recs) {
                lo = std::min(lo, r.eta);
                hi = std::max(hi, r.eta);
                avg += r.eta;
            }
            avg /= static_cast<double>(recs.size());
            by_order << (k + 1) << ',' << recs.size() << ',' << lo << ',' << avg << ',' << hi
                     << "\n";
        }
    }
    {
        auto rho = open_artifact(out_dir / "rho.csv", hash);
        rho << "order,rho\n";
        for (std::size_t k = 0; k < diag.rho_by_order.size(); ++k)
            rho << (k + 1) << ',' << diag.rho_by_order[k] << "\n";
    }
    std::cout << "analyze: orders=" << diag.rho_by_order.size() << " artifacts in " << out_dir
              << "\n";
    return 0;
}

// bench ----------------------------------------------------------------------

int cmd_bench(const cli::RunConfig& cfg, const json& doc, const fs::path& out_dir) {
    const std::string hash = cli::config_hash(doc);
    const auto& b = cfg.bench;

    // moderately coupled benchmark target so no slot degenerates
    auto fn = [](std::span<const double> x) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) s += std::exp(-0.4 * x[j]) + 0.1 * x[j] * x[j];
        for (std::size_t j = 0; j + 1 < x.size(); ++j) s += 0.2 * std::sin(x[j] * x[j + 1]);
        return s;
    };
    Evaluator f = wrap_scalar(fn);
    AnchorPoint anchor;
    anchor.coords.assign(static_cast<std::size_t>(b.dim), 0.5);
    DdsgOptions opt = cfg.ddsg_options();
    opt.k_max = std::min(opt.k_max, b.dim);
    auto dd = std::make_shared<const DdsgFunction>(decompose(f, b.dim, 1, anchor, opt));
    const auto vec = VectorizedDdsg::compile(dd);

    std::mt19937_64 rng(cfg.time_iteration.rng_seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::vector<double>> pts(static_cast<std::size_t>(b.points),
                                         std::vector<double>(static_cast<std::size_t>(b.dim)));
    for (auto& x : pts)
        for (auto& c : x) c = unif(rng);

    // correctness precedes speed
    std::uint64_t calls_naive = 0, calls_vec = 0;
    double max_diff = 0.0;
    {
        std::vector<double> a(1), c(1);
        EvalWorkspace ws;
        for (const auto& x : pts) {
            dd->evaluate_naive(x, a, &calls_naive);
            vec.evaluate(x, c, ws, &calls_vec);
            max_diff = std::max(max_diff, std::abs(a[0] - c[0]));
        }
    }
    if (max_diff > 1e-12) {
        std::cerr << "bench: naive and vectorized evaluation disagree (max diff " << max_diff
                  << ")\n";
        return 2;
    }

    auto time_pass = [&](auto&& eval_one) {
        const auto t0 = std::chrono::steady_clock::now();
        double sink = 0.0;
        std::vector<double> out(1);
        for (const auto& x : pts) {
            eval_one(x, out);
            sink += out[0];
        }
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        volatile double keep = sink;
        (void)keep;
        return ms;
    };

    std::vector<double> naive_ms, vec_ms;
    EvalWorkspace ws;
    for (int rep = 0; rep < b.repetitions; ++rep) {
        naive_ms.push_back(time_pass([&](std::span<const double> x, std::span<double> out) {
            dd->evaluate_naive(x, out);
        }));
        vec_ms.push_back(time_pass([&](std::span<const double> x, std::span<double> out) {
            vec.evaluate(x, out, ws);
        }));
    }
    auto mean_std = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        return std::pair<double, double>(mean, std::sqrt(var / static_cast<double>(v.size())));
    };
    const auto [nm, ns] = mean_std(naive_ms);
    const auto [vm, vs] = mean_std(vec_ms);
    const double calls_per_eval_naive =
        static_cast<double>(calls_naive) / static_cast<double>(pts.size());
    const double calls_per_eval_vec =
        static_cast<double>(calls_vec) / static_cast<double>(pts.size());

    {
        auto out = open_artifact(out_dir / "bench.csv", hash);
        out << "d,k_max,max_level,points,repetitions,naive_ms_mean,naive_ms_std,vec_ms_mean,"
               "vec_ms_std,ratio_vec_over_naive,interp_calls_per_eval_naive,"
               "interp_calls_per_eval_vec,max_abs_diff\n";
        out << b.dim << ',' << opt.k_max << ',' << opt.max_level << ',' << b.points << ','
            << b.repetitions << ',' << nm << ',' << ns << ',' << vm << ',' << vs << ','
            << vm / nm << ',' << calls_per_eval_naive << ',' << calls_per_eval_vec << ','
            << max_diff << "\n";
    }
    std::cout << "bench: naive " << nm << " ms, vectorized " << vm << " ms, ratio " << vm / nm
              << ", calls/eval " << calls_per_eval_naive << " -> " << calls_per_eval_vec << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dimensional-decomposition sparse grids for dynamic economic models"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand
    Cli cli;
    app.add_option("--config", cli.config_path, "JSON configuration file")->expected(1);
    app.add_option("--out", cli.out_dir, "output directory for artifacts");
    auto* wopt = app.add_option("--workers", cli.workers, "worker thread count");
    auto* sopt = app.add_option("--seed", cli.seed, "RNG seed override");

    auto* approx = app.add_subcommand("approx", "approximate built-in test functions");
    auto* solve = app.add_subcommand("solve", "run the time-iteration model solve");
    auto* analyze = app.add_subcommand("analyze", "one instrumented expansion step");
    auto* bench = app.add_subcommand("bench", "naive vs vectorized interpolation timing");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) ? 1 : 0;
    }
    cli.workers_set = wopt->count() > 0;
    cli.seed_set = sopt->count() > 0;

    try {
        const json doc = load_config_doc(cli);
        const cli::RunConfig cfg = cli::parse_config(doc);
        fs::create_directories(cli.out_dir);
        const fs::path out_dir(cli.out_dir);
        if (approx->parsed()) return cmd_approx(cfg, doc, out_dir);
        if (solve->parsed()) return cmd_solve(cfg, doc, out_dir);
        if (analyze->parsed()) return cmd_analyze(cfg, doc, out_dir);
        if (bench->parsed()) return cmd_bench(cfg, doc, out_dir);
        return 1;
    } catch (const cli::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
