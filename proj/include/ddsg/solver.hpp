#pragma once

// Per-grid-point FOC solver and Euler-equation error measurement.
//
// The point solver is a damped (semismooth) Newton method on the residual
// systems of the irbc module: forward-difference Jacobian for the smooth
// rows, analytic generalized derivatives for the Fischer-Burmeister rows
// (with the origin fixed to the 1 - 1/sqrt(2) convention), backtracking line
// search on the l2 residual norm, and step clipping that keeps k' and lambda
// strictly positive.
//
// Degenerate complementarity corners (mu and the investment slack both near
// zero) can stall the FB iteration.  The non-smooth solve therefore falls
// back to an active-set sweep: for each binding pattern the reduced smooth
// system is solved with the constrained capitals pinned at (1-delta) k, and
// the first pattern whose solution satisfies the sign conditions wins.  The
// sweep order is deterministic, so results do not depend on thread timing.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddsg/irbc.hpp"
#include "ddsg/runtime.hpp"

namespace ddsg::irbc {

struct SolverConfig {
    double newton_tol = 1e-7; // residual sup-norm at the returned point
    int max_newton_iters = 200;
    double min_step = std::ldexp(1.0, -20); // backtracking floor
    double fd_epsilon = 1e-7;               // relative forward-difference step
};

// Non-convergence carries the best iterate seen so that callers can retry
// or degrade gracefully.
class solve_error : public std::runtime_error {
  public:
    solve_error(std::string msg, PolicyValue best, double best_norm)
        : std::runtime_error(std::move(msg)), best_(std::move(best)), best_norm_(best_norm) {}
    const PolicyValue& best() const { return best_; }
    double best_residual_norm() const { return best_norm_; }

  private:
    PolicyValue best_;
    double best_norm_;
};

namespace detail_solver {

inline double sup_norm(const Eigen::VectorXd& v) { return v.lpNorm<Eigen::Infinity>(); }

// Generic damped Newton with backtracking.  residual(z, r) fills r;
// jacobian(z, r0, J) fills J; clip enforces feasibility of trial points.
// Returns true on convergence to sup-norm <= tol; z/r hold the final point.
struct NewtonCore {
    std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> residual;
    std::function<void(const Eigen::VectorXd&, const Eigen::VectorXd&, Eigen::MatrixXd&)> jacobian;
    std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> clip;

    bool run(Eigen::VectorXd& z, Eigen::VectorXd& r, const SolverConfig& cfg, int max_iters,
             Eigen::VectorXd& best_z, double& best_norm, int* iterations_used = nullptr) const {
        const int n = static_cast<int>(z.size());
        Eigen::VectorXd r_trial(n), dz(n), z_trial(n);
        Eigen::MatrixXd jac(n, n);
        residual(z, r);
        if (sup_norm(r) < best_norm) {
            best_norm = sup_norm(r);
            best_z = z;
        }
        for (int it = 0; it < max_iters; ++it) {
            if (sup_norm(r) <= cfg.newton_tol) {
                if (iterations_used) *iterations_used = it;
                return true;
            }
            jacobian(z, r, jac);
            dz = jac.partialPivLu().solve(-r);
            if (!dz.allFinite()) {
                Eigen::MatrixXd reg = jac + 1e-10 * Eigen::MatrixXd::Identity(n, n);
                dz = reg.partialPivLu().solve(-r);
                if (!dz.allFinite()) return false;
            }
            const double r2 = r.norm();
            double step = 1.0;
            bool accepted = false;
            while (step >= cfg.min_step) {
                z_trial = z + step * dz;
                clip(z, z_trial);
                residual(z_trial, r_trial);
                if (r_trial.allFinite() && r_trial.norm() < r2) {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) {
                // kinks can stall the decrease test; take the floor step if
                // it stays finite, otherwise stop
                z_trial = z + cfg.min_step * dz;
                clip(z, z_trial);
                residual(z_trial, r_trial);
                if (!r_trial.allFinite()) return false;
            }
            z = z_trial;
            r = r_trial;
            if (sup_norm(r) < best_norm) {
                best_norm = sup_norm(r);
                best_z = z;
            }
        }
        if (iterations_used) *iterations_used = max_iters;
        return sup_norm(r) <= cfg.newton_tol;
    }
};

} // namespace detail_solver

// Assembles the Newton matrix of the full system: forward differences on
// every row, then the Fischer-Burmeister rows replaced by their generalized
// derivative.
inline void foc_jacobian(const EconomicState& state, const Eigen::VectorXd& z,
                         const Eigen::VectorXd& r0, const PolicyEvaluator& policy_next,
                         const IrbcParameters& p, const ShockQuadrature& quad,
                         const SolverConfig& cfg, FocWorkspace& ws, Eigen::MatrixXd& jac) {
    const int n = p.policy_dim();
    const int N = p.countries;
    jac.resize(n, n);
    Eigen::VectorXd zp = z;
    std::vector<double> res(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) {
        const double h = cfg.fd_epsilon * std::max(std::abs(z[c]), 1e-2);
        zp[c] = z[c] + h;
        const PolicyValue cand = PolicyValue::from_flat(std::span(zp.data(), zp.size()), p);
        foc_residuals(state, cand, policy_next, p, quad, res, ws);
        for (int rr = 0; rr < n; ++rr) jac(rr, c) = (res[static_cast<std::size_t>(rr)] - r0[rr]) / h;
        zp[c] = z[c];
    }
    if (p.variant == Variant::nonsmooth) {
        for (int j = 0; j < N; ++j) {
            const int row = N + j;
            const double mu = z[N + j];
            const double s = z[j] - (1.0 - p.delta) * state.k[static_cast<std::size_t>(j)];
            const double norm = std::sqrt(mu * mu + s * s);
            double dmu, ds;
            if (norm == 0.0) {
                dmu = 1.0 - 1.0 / std::sqrt(2.0);
                ds = 1.0 - 1.0 / std::sqrt(2.0);
            } else {
                dmu = 1.0 - mu / norm;
                ds = 1.0 - s / norm;
            }
            jac.row(row).setZero();
            jac(row, N + j) = dmu;
            jac(row, j) = ds;
        }
    }
}

namespace detail_solver {

// Reduced system for one binding pattern: for active countries the capital
// choice is pinned at (1-delta) k and mu is the unknown; for the others mu
// is zero and capital is the unknown.  Unknown layout: y_0..y_{N-1}, lambda.
struct ActiveSetSystem {
    const EconomicState* state = nullptr;
    const IrbcParameters* params = nullptr;
    const PolicyEvaluator* policy_next = nullptr;
    const ShockQuadrature* quad = nullptr;
    unsigned mask = 0;
    FocWorkspace* ws = nullptr;
    std::uint64_t* clamps = nullptr;

    PolicyValue assemble(const Eigen::VectorXd& y) const {
        const auto& p = *params;
        const std::size_t N = static_cast<std::size_t>(p.countries);
        PolicyValue pv;
        pv.k_next.resize(N);
        pv.mu.assign(N, 0.0);
        for (std::size_t j = 0; j < N; ++j) {
            if (mask & (1u << j)) {
                pv.k_next[j] = (1.0 - p.delta) * state->k[j];
                pv.mu[j] = y[static_cast<int>(j)];
            } else {
                pv.k_next[j] = y[static_cast<int>(j)];
            }
        }
        pv.lambda = y[static_cast<int>(N)];
        return pv;
    }

    void residual(const Eigen::VectorXd& y, Eigen::VectorXd& out) const {
        const auto& p = *params;
        const std::size_t N = static_cast<std::size_t>(p.countries);
        const PolicyValue cand = assemble(y);
        std::vector<double> res(static_cast<std::size_t>(p.policy_dim()));
        *clamps += static_cast<std::uint64_t>(
            foc_residuals(*state, cand, *policy_next, p, *quad, res, *ws));
        for (std::size_t j = 0; j < N; ++j) out[static_cast<int>(j)] = res[j];
        out[static_cast<int>(N)] = res[static_cast<std::size_t>(p.policy_dim()) - 1];
    }
};

} // namespace detail_solver

// Solves the FOC system at one state against the frozen next-period policy.
// The returned tuple re-evaluates to a residual sup-norm <= newton_tol
// (certified by a final recheck, not by trusting the iteration state).
inline PolicyValue solve_foc_at_point(const EconomicState& state, const IrbcParameters& p,
                                      const PolicyEvaluator& policy_next,
                                      const PolicyValue& warm_start, const SolverConfig& cfg,
                                      const ShockQuadrature& quad,
                                      std::uint64_t* clamp_count = nullptr,
                                      int* iterations_used = nullptr) {
    const int n = p.policy_dim();
    const int N = p.countries;
    FocWorkspace ws;
    std::vector<double> res(static_cast<std::size_t>(n));
    std::uint64_t clamps = 0;

    Eigen::VectorXd z(n);
    warm_start.to_flat(std::span(z.data(), z.size()), p);
    Eigen::VectorXd best_z = z;
    double best_norm = std::numeric_limits<double>::infinity();

    detail_solver::NewtonCore core;
    core.residual = [&](const Eigen::VectorXd& zz, Eigen::VectorXd& out) {
        const PolicyValue cand = PolicyValue::from_flat(std::span(zz.data(), zz.size()), p);
        clamps += static_cast<std::uint64_t>(
            foc_residuals(state, cand, policy_next, p, quad, res, ws));
        for (int i = 0; i < n; ++i) out[i] = res[static_cast<std::size_t>(i)];
    };
    core.jacobian = [&](const Eigen::VectorXd& zz, const Eigen::VectorXd& r0,
                        Eigen::MatrixXd& jac) {
        foc_jacobian(state, zz, r0, policy_next, p, quad, cfg, ws, jac);
    };
    core.clip = [&](const Eigen::VectorXd& z_old, Eigen::VectorXd& z_new) {
        for (int j = 0; j < N; ++j)
            if (z_new[j] <= 0.0) z_new[j] = 0.05 * z_old[j];
        if (z_new[n - 1] <= 0.0) z_new[n - 1] = 0.05 * z_old[n - 1];
    };

    Eigen::VectorXd r(n);
    if (core.run(z, r, cfg, cfg.max_newton_iters, best_z, best_norm, iterations_used)) {
        if (clamp_count) *clamp_count += clamps;
        return PolicyValue::from_flat(std::span(z.data(), z.size()), p);
    }

    if (p.variant == Variant::nonsmooth) {
        // Active-set sweep.  Patterns are ordered: the warm-start-implied
        // pattern first, then by number of binding constraints, then by index.
        const double sign_tol = 1e-9;
        unsigned warm_mask = 0;
        for (int j = 0; j < N; ++j) {
            const double slack =
                warm_start.k_next[static_cast<std::size_t>(j)] -
                (1.0 - p.delta) * state.k[static_cast<std::size_t>(j)];
            const double mu_j =
                warm_start.mu.empty() ? 0.0 : warm_start.mu[static_cast<std::size_t>(j)];
            if (mu_j > cfg.newton_tol || slack < cfg.newton_tol) warm_mask |= 1u << j;
        }
        std::vector<unsigned> masks;
        masks.push_back(warm_mask);
        std::vector<unsigned> rest;
        for (unsigned m = 0; m < (1u << N); ++m)
            if (m != warm_mask) rest.push_back(m);
        std::sort(rest.begin(), rest.end(), [](unsigned a, unsigned b) {
            const int pa = __builtin_popcount(a), pb = __builtin_popcount(b);
            if (pa != pb) return pa < pb;
            return a < b;
        });
        masks.insert(masks.end(), rest.begin(), rest.end());

        for (unsigned mask : masks) {
            detail_solver::ActiveSetSystem sys;
            sys.state = &state;
            sys.params = &p;
            sys.policy_next = &policy_next;
            sys.quad = &quad;
            sys.mask = mask;
            sys.ws = &ws;
            sys.clamps = &clamps;

            Eigen::VectorXd y(N + 1);
            for (int j = 0; j < N; ++j) {
                if (mask & (1u << j))
                    y[j] = std::max(
                        warm_start.mu.empty() ? 0.0 : warm_start.mu[static_cast<std::size_t>(j)],
                        0.0);
                else
                    y[j] = warm_start.k_next[static_cast<std::size_t>(j)];
            }
            y[N] = warm_start.lambda;

            detail_solver::NewtonCore as;
            as.residual = [&](const Eigen::VectorXd& yy, Eigen::VectorXd& out) {
                sys.residual(yy, out);
            };
            as.jacobian = [&](const Eigen::VectorXd& yy, const Eigen::VectorXd& r0,
                              Eigen::MatrixXd& jac) {
                jac.resize(N + 1, N + 1);
                Eigen::VectorXd yp = yy, rp(N + 1);
                for (int c = 0; c <= N; ++c) {
                    const double h = cfg.fd_epsilon * std::max(std::abs(yy[c]), 1e-2);
                    yp[c] = yy[c] + h;
                    sys.residual(yp, rp);
                    for (int rr = 0; rr <= N; ++rr) jac(rr, c) = (rp[rr] - r0[rr]) / h;
                    yp[c] = yy[c];
                }
            };
            as.clip = [&](const Eigen::VectorXd& y_old, Eigen::VectorXd& y_new) {
                for (int j = 0; j < N; ++j)
                    if (!(mask & (1u << j)) && y_new[j] <= 0.0) y_new[j] = 0.05 * y_old[j];
                if (y_new[N] <= 0.0) y_new[N] = 0.05 * y_old[N];
            };

            Eigen::VectorXd ry(N + 1);
            Eigen::VectorXd best_y = y;
            double best_y_norm = std::numeric_limits<double>::infinity();
            if (!as.run(y, ry, cfg, std::min(cfg.max_newton_iters, 80), best_y, best_y_norm))
                continue;
            // sign conditions: binding patterns need mu >= 0, free ones a
            // nonnegative investment slack
            bool valid = true;
            for (int j = 0; j < N && valid; ++j) {
                if (mask & (1u << j)) {
                    if (y[j] < -sign_tol) valid = false;
                } else {
                    const double slack =
                        y[j] - (1.0 - p.delta) * state.k[static_cast<std::size_t>(j)];
                    if (slack < -sign_tol) valid = false;
                }
            }
            if (!valid || y[N] <= 0.0) continue;
            PolicyValue sol = sys.assemble(y);
            for (double& m : sol.mu) m = std::max(m, 0.0);
            // certification against the full FB system
            clamps += static_cast<std::uint64_t>(
                foc_residuals(state, sol, policy_next, p, quad, res, ws));
            double full_norm = 0.0;
            for (double v : res) full_norm = std::max(full_norm, std::abs(v));
            if (full_norm <= cfg.newton_tol) {
                if (clamp_count) *clamp_count += clamps;
                return sol;
            }
        }
    }

    throw solve_error("solve_foc_at_point: no convergence after " +
                          std::to_string(cfg.max_newton_iters) + " iterations (residual " +
                          std::to_string(best_norm) + ")",
                      PolicyValue::from_flat(std::span(best_z.data(), best_z.size()), p),
                      best_norm);
}

// ---------------------------------------------------------------------------
// Euler equation errors

struct EulerErrors {
    double avg_log10 = 0.0;
    double max_log10 = 0.0;
    std::vector<double> samples; // per-sample worst-country relative error
};

// Unit-free relative violation of the intertemporal condition at uniformly
// sampled canonical states:
//   err_j = | (beta E[...] + mu_j) / (lambda (1 + phi g'_j)) - 1 |
// with the expectation term of the corresponding Euler row; each sample
// reports its worst country.  Averages and maxima are returned in log10.
inline EulerErrors euler_errors(const PolicyEvaluator& policy, const IrbcParameters& p,
                                int n_samples, std::uint64_t seed, unsigned workers = 1,
                                std::uint64_t* clamp_count = nullptr) {
    if (n_samples < 1) throw std::invalid_argument("euler_errors: n_samples must be >= 1");
    const auto quad = make_shock_quadrature(p.countries);
    const std::size_t N = static_cast<std::size_t>(p.countries);
    const std::size_t d = static_cast<std::size_t>(p.state_dim());
    const std::size_t m = static_cast<std::size_t>(p.policy_dim());

    // all samples drawn up front from one stream: the estimate is a pure
    // function of (seed, n_samples), independent of the worker count
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::vector<double>> xs(static_cast<std::size_t>(n_samples),
                                        std::vector<double>(d));
    for (auto& x : xs)
        for (auto& c : x) c = unif(rng);

    std::vector<double> errs(xs.size(), 0.0);
    std::vector<std::uint64_t> clamps_per_block(64, 0);
    const std::size_t n_blocks = std::min<std::size_t>(64, xs.size());
    ddsg::detail::for_each_index(n_blocks, workers, [&](std::size_t b) {
        FocWorkspace ws;
        std::vector<double> pol(m), res(m);
        std::uint64_t local_clamps = 0;
        for (std::size_t i = b; i < xs.size(); i += n_blocks) {
            const auto& x = xs[i];
            const EconomicState st = from_canonical(x, p);
            policy(x, pol);
            const PolicyValue pv = PolicyValue::from_flat(pol, p);
            local_clamps += static_cast<std::uint64_t>(
                foc_residuals(st, pv, policy, p, quad, res, ws));
            double worst = 0.0;
            for (std::size_t j = 0; j < N; ++j) {
                const double g1 = pv.k_next[j] / st.k[j] - 1.0;
                const double denom = pv.lambda * (1.0 + p.phi_adj * g1);
                // Euler row: denom - mu_j - beta E = res_j  =>  numerator
                // (beta E + mu_j) recovered from the residual
                const double numerator = denom - res[j];
                worst = std::max(worst, std::abs(numerator / denom - 1.0));
            }
            errs[i] = worst;
        }
        clamps_per_block[b] = local_clamps;
    });

    EulerErrors out;
    double mean = 0.0, worst = 0.0;
    for (double e : errs) {
        mean += e;
        worst = std::max(worst, e);
    }
    mean /= static_cast<double>(errs.size());
    out.avg_log10 = std::log10(std::max(mean, 1e-16));
    out.max_log10 = std::log10(std::max(worst, 1e-16));
    out.samples = std::move(errs);
    if (clamp_count)
        for (std::uint64_t c : clamps_per_block) *clamp_count += c;
    return out;
}

} // namespace ddsg::irbc
