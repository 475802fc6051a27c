#pragma once

// Time iteration on DDSG policy functions: each step solves the FOC system
// at every grid point of the decomposition against the previous policy,
// compiles the vectorized interpolant, measures Euler errors and the policy
// change, and stops on the configured thresholds.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ddsg/ddsg_eval.hpp"
#include "ddsg/hdmr.hpp"
#include "ddsg/solver.hpp"

namespace ddsg::irbc {

struct TimeIterationConfig {
    double euler_tol = 1e-4;         // stop when the mean relative Euler error falls below
    int max_steps = 300;
    double policy_change_tol = 1e-8; // sup-norm fallback stop on a fixed sample
    int euler_samples = 10000;
    int policy_change_samples = 1000;
    std::uint64_t rng_seed = 0;
};

struct IterationReport {
    int step = 0;
    std::size_t grid_points = 0;
    std::vector<std::string> accepted_indices;      // "{0}", "{1}", ...
    std::vector<std::size_t> points_per_component;  // aligned with accepted_indices
    std::vector<std::string> rejected_indices;
    std::vector<double> rho_by_order;
    std::vector<double> eta_min_by_order; // NaN where an order has no eta records
    std::vector<double> eta_avg_by_order;
    std::vector<double> eta_max_by_order;
    double avg_euler_log10 = 0.0;
    double max_euler_log10 = 0.0;
    double policy_change_sup = 0.0;
    std::uint64_t clamp_count = 0;
    std::uint64_t foc_failures = 0;
    double max_comp_residual = std::numeric_limits<double>::quiet_NaN(); // nonsmooth only
    double wall_time_s = 0.0;
};

// Raised when more than one per mille of the grid-point solves in a step
// fail even after the steady-state retry.
class time_iteration_abort : public std::runtime_error {
  public:
    struct Failure {
        std::vector<double> canonical_state;
        double residual_norm = 0.0;
    };
    time_iteration_abort(std::string msg, std::vector<Failure> failures)
        : std::runtime_error(std::move(msg)), failures_(std::move(failures)) {}
    const std::vector<Failure>& failures() const { return failures_; }

  private:
    std::vector<Failure> failures_;
};

struct TimeIterationResult {
    std::shared_ptr<const DdsgFunction> policy;
    std::vector<IterationReport> reports;
    bool converged = false;
};

namespace detail_ti {

inline void atomic_max(std::atomic<double>& target, double value) {
    double cur = target.load();
    while (value > cur && !target.compare_exchange_weak(cur, value)) {
    }
}

inline PolicyEvaluator compiled_evaluator(std::shared_ptr<const VectorizedDdsg> vec) {
    return [vec](std::span<const double> x, std::span<double> out) {
        thread_local EvalWorkspace ws;
        vec->evaluate(x, out, ws);
    };
}

inline PolicyEvaluator initial_guess_evaluator(const IrbcParameters& p) {
    const double lam = steady_state_lambda(p);
    return [p, lam](std::span<const double> x, std::span<double> out) {
        const EconomicState s = from_canonical(x, p);
        PolicyValue pv;
        pv.k_next = s.k; // keep capital where it is
        if (p.variant == Variant::nonsmooth)
            pv.mu.assign(static_cast<std::size_t>(p.countries), 0.0);
        pv.lambda = lam;
        pv.to_flat(out, p);
    };
}

} // namespace detail_ti

inline TimeIterationResult time_iterate(const IrbcParameters& params, const DdsgOptions& ddsg_opt,
                                        const TimeIterationConfig& tic, const SolverConfig& scfg,
                                        unsigned workers = 1) {
    if (tic.euler_tol <= 0.0 || tic.policy_change_tol <= 0.0 || tic.euler_samples < 1)
        throw std::invalid_argument("time_iterate: invalid configuration");
    const int d = params.state_dim();
    const int m = params.policy_dim();
    const std::size_t N = static_cast<std::size_t>(params.countries);
    const auto quad = make_shock_quadrature(params.countries);
    const double lam_ss = steady_state_lambda(params);
    const bool kink = params.variant == Variant::nonsmooth;

    DdsgOptions opt = ddsg_opt;
    opt.workers = workers;

    AnchorPoint anchor;
    anchor.coords.assign(static_cast<std::size_t>(d), 0.5); // the deterministic steady state

    // fixed sample for the policy-change sup-norm
    std::mt19937_64 rng(tic.rng_seed + 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::vector<double>> change_pts(
        static_cast<std::size_t>(tic.policy_change_samples),
        std::vector<double>(static_cast<std::size_t>(d)));
    for (auto& x : change_pts)
        for (auto& c : x) c = unif(rng);

    TimeIterationResult result;
    PolicyEvaluator p_prev = detail_ti::initial_guess_evaluator(params);

    for (int step = 1; step <= tic.max_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        std::atomic<std::uint64_t> clamps{0};
        std::atomic<std::uint64_t> solves{0};
        std::atomic<std::uint64_t> hard_failures{0};
        std::atomic<double> max_comp{0.0};
        std::mutex fail_mu;
        std::vector<time_iteration_abort::Failure> fail_records;

        Evaluator foc_eval = [&](std::span<const double> x, std::span<double> out) {
            const EconomicState st = from_canonical(x, params);
            std::vector<double> warm_flat(static_cast<std::size_t>(m));
            p_prev(x, warm_flat);
            const PolicyValue warm = PolicyValue::from_flat(warm_flat, params);
            std::uint64_t local_clamps = 0;
            PolicyValue sol;
            solves.fetch_add(1);
            try {
                sol = solve_foc_at_point(st, params, p_prev, warm, scfg, quad, &local_clamps);
            } catch (const solve_error& first) {
                PolicyValue steady;
                steady.k_next = st.k;
                if (kink) steady.mu.assign(N, 0.0);
                steady.lambda = lam_ss;
                try {
                    sol = solve_foc_at_point(st, params, p_prev, steady, scfg, quad,
                                             &local_clamps);
                } catch (const solve_error& second) {
                    hard_failures.fetch_add(1);
                    const bool first_better =
                        first.best_residual_norm() <= second.best_residual_norm();
                    sol = first_better ? first.best() : second.best();
                    std::lock_guard<std::mutex> lock(fail_mu);
                    fail_records.push_back(
                        {std::vector<double>(x.begin(), x.end()),
                         std::min(first.best_residual_norm(), second.best_residual_norm())});
                }
            }
            clamps.fetch_add(local_clamps);
            if (kink) {
                double worst = 0.0;
                for (std::size_t j = 0; j < N; ++j) {
                    const double slack = sol.k_next[j] - (1.0 - params.delta) * st.k[j];
                    worst = std::max(worst, std::abs(fischer_burmeister(sol.mu[j], slack)));
                }
                detail_ti::atomic_max(max_comp, worst);
            }
            sol.to_flat(out, params);
        };

        ExpansionDiagnostics diag;
        anchor.f_anchor.clear(); // re-solved each step against the new p_prev
        auto ddsg = std::make_shared<const DdsgFunction>(
            decompose(foc_eval, d, m, anchor, opt, &diag));

        if (hard_failures.load() * 1000 > solves.load()) {
            std::sort(fail_records.begin(), fail_records.end(),
                      [](const auto& a, const auto& b) {
                          return a.canonical_state < b.canonical_state;
                      });
            throw time_iteration_abort(
                "time_iterate: " + std::to_string(hard_failures.load()) + " of " +
                    std::to_string(solves.load()) + " grid-point solves failed in step " +
                    std::to_string(step),
                std::move(fail_records));
        }

        auto vec = std::make_shared<const VectorizedDdsg>(VectorizedDdsg::compile(ddsg));
        PolicyEvaluator p_new = detail_ti::compiled_evaluator(vec);

        std::uint64_t euler_clamps = 0;
        const EulerErrors euler =
            euler_errors(p_new, params, tic.euler_samples, tic.rng_seed, workers, &euler_clamps);

        double change = 0.0;
        {
            std::vector<double> a(static_cast<std::size_t>(m)), b(static_cast<std::size_t>(m));
            for (const auto& x : change_pts) {
                p_new(x, a);
                p_prev(x, b);
                for (int c = 0; c < m; ++c)
                    change = std::max(change, std::abs(a[static_cast<std::size_t>(c)] -
                                                       b[static_cast<std::size_t>(c)]));
            }
        }

        IterationReport rep;
        rep.step = step;
        rep.grid_points = ddsg->total_grid_points();
        for (const auto& [u, grid] : ddsg->accepted()) {
            rep.accepted_indices.push_back(u.to_string());
            rep.points_per_component.push_back(grid.size());
        }
        for (const auto& z : ddsg->rejected()) rep.rejected_indices.push_back(z.to_string());
        rep.rho_by_order = diag.rho_by_order;
        for (const auto& order_records : diag.eta_by_order) {
            double lo = std::numeric_limits<double>::quiet_NaN();
            double hi = lo, avg = lo;
            if (!order_records.empty()) {
                lo = std::numeric_limits<double>::infinity();
                hi = 0.0;
                avg = 0.0;
                for (const auto& recd : order_records) {
                    lo = std::min(lo, recd.eta);
                    hi = std::max(hi, recd.eta);
                    avg += recd.eta;
                }
                avg /= static_cast<double>(order_records.size());
            }
            rep.eta_min_by_order.push_back(lo);
            rep.eta_avg_by_order.push_back(avg);
            rep.eta_max_by_order.push_back(hi);
        }
        rep.avg_euler_log10 = euler.avg_log10;
        rep.max_euler_log10 = euler.max_log10;
        rep.policy_change_sup = change;
        rep.clamp_count = clamps.load() + euler_clamps;
        rep.foc_failures = hard_failures.load();
        if (kink) rep.max_comp_residual = max_comp.load();
        rep.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.reports.push_back(std::move(rep));

        result.policy = ddsg;
        p_prev = p_new;

        const double mean_linear = std::pow(10.0, euler.avg_log10);
        if (mean_linear < tic.euler_tol || change < tic.policy_change_tol) {
            result.converged = true;
            break;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// report export

namespace detail_ti {

template <typename T>
std::string join_pipe(const std::vector<T>& v) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << '|';
        os << v[i];
    }
    return os.str();
}

} // namespace detail_ti

inline std::string reports_csv_header() {
    return "step,grid_points,accepted,rejected,points_per_component,rho_by_order,"
           "eta_min_by_order,eta_avg_by_order,eta_max_by_order,avg_euler_log10,"
           "max_euler_log10,policy_change_sup,clamp_count,foc_failures,"
           "max_comp_residual,wall_time_s";
}

inline std::string to_csv_row(const IterationReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << r.step << ',' << r.grid_points << ',' << detail_ti::join_pipe(r.accepted_indices) << ','
       << detail_ti::join_pipe(r.rejected_indices) << ','
       << detail_ti::join_pipe(r.points_per_component) << ','
       << detail_ti::join_pipe(r.rho_by_order) << ','
       << detail_ti::join_pipe(r.eta_min_by_order) << ','
       << detail_ti::join_pipe(r.eta_avg_by_order) << ','
       << detail_ti::join_pipe(r.eta_max_by_order) << ',' << r.avg_euler_log10 << ','
       << r.max_euler_log10 << ',' << r.policy_change_sup << ',' << r.clamp_count << ','
       << r.foc_failures << ',' << r.max_comp_residual << ',' << r.wall_time_s;
    return os.str();
}

inline void write_reports_csv(const std::string& path, const std::vector<IterationReport>& reports,
                              const std::string& header_comment = "") {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    if (!header_comment.empty()) out << "# " << header_comment << "\n";
    out << reports_csv_header() << "\n";
    for (const auto& r : reports) out << to_csv_row(r) << "\n";
}

} // namespace ddsg::irbc
