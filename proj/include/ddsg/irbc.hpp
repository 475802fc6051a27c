#pragma once

// Smooth and non-smooth international real business cycle models: the
// calibration, the state-domain mapping onto the unit cube, the stochastic
// law of motion with its monomial expectation rule, and the first-order
// condition residual systems the time iteration solves at every grid point.
//
// Model structure, per country j:
//   output      Y = A * a_j * k_j^alpha
//   investment  I = k'_j - (1 - delta) * k_j          (nonnegative in the
//                                                      non-smooth variant)
//   adjustment  G = (phi/2) * k_j * (k'_j / k_j - 1)^2
//   consumption c_j = (lambda / tau_j)^(-gamma_j)
// with log-productivity following an AR(1) driven by a country shock plus a
// global shock, both standard normal.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddsg::irbc {

enum class Variant { smooth, nonsmooth };

struct IrbcParameters {
    int countries = 2;
    double beta = 0.99;
    double alpha = 0.36;
    double delta = 0.01;
    double sigma = 0.01;
    double rho_a = 0.95;
    double phi_adj = 0.50;
    double gamma_base = 0.25; // the constant term of the gamma_j schedule
    std::vector<double> gamma;
    Variant variant = Variant::smooth;

    // state box mapped onto [0,1]^(2N): ln a_j in [-w, w], k_j in [k_lo, k_hi]
    double lna_half_width = 0.4;
    double k_lo = 0.5;
    double k_hi = 1.5;

    // derived
    double A = 0.0;
    std::vector<double> tau;

    int state_dim() const { return 2 * countries; }
    int policy_dim() const {
        return variant == Variant::smooth ? countries + 1 : 2 * countries + 1;
    }
};

// Fills gamma (when empty), A and tau, and checks the admissible ranges.
// gamma_j = gamma_base + 0.75 (j-1)/(N-1); a single country keeps gamma_base.
inline void refresh_derived(IrbcParameters& p) {
    if (p.countries < 1) throw std::invalid_argument("irbc: countries must be >= 1");
    if (!(p.beta > 0.0 && p.beta < 1.0)) throw std::invalid_argument("irbc: beta in (0,1)");
    if (!(p.delta > 0.0 && p.delta < 1.0)) throw std::invalid_argument("irbc: delta in (0,1)");
    if (!(p.alpha > 0.0 && p.alpha < 1.0)) throw std::invalid_argument("irbc: alpha in (0,1)");
    if (!(p.sigma >= 0.0)) throw std::invalid_argument("irbc: sigma must be >= 0");
    if (!(p.rho_a >= 0.0 && p.rho_a < 1.0)) throw std::invalid_argument("irbc: rho_a in [0,1)");
    if (!(p.phi_adj >= 0.0)) throw std::invalid_argument("irbc: phi_adj must be >= 0");
    if (!(p.k_lo > 0.0 && p.k_hi > p.k_lo))
        throw std::invalid_argument("irbc: capital box must satisfy 0 < k_lo < k_hi");
    if (!(p.lna_half_width > 0.0))
        throw std::invalid_argument("irbc: lna_half_width must be > 0");
    if (p.gamma.empty()) {
        p.gamma.resize(static_cast<std::size_t>(p.countries));
        for (int j = 0; j < p.countries; ++j)
            p.gamma[static_cast<std::size_t>(j)] =
                p.countries == 1
                    ? p.gamma_base
                    : p.gamma_base + 0.75 * static_cast<double>(j) /
                                         static_cast<double>(p.countries - 1);
    }
    if (p.gamma.size() != static_cast<std::size_t>(p.countries))
        throw std::invalid_argument("irbc: gamma length must equal countries");
    for (double g : p.gamma)
        if (!(g > 0.0)) throw std::invalid_argument("irbc: gamma_j must be > 0");
    p.A = (1.0 - p.beta * (1.0 - p.delta)) / (p.alpha * p.beta);
    p.tau.resize(p.gamma.size());
    for (std::size_t j = 0; j < p.gamma.size(); ++j) p.tau[j] = std::pow(p.A, 1.0 / p.gamma[j]);
}

inline IrbcParameters make_parameters(int countries, Variant variant,
                                      double gamma_base = 0.25) {
    IrbcParameters p;
    p.countries = countries;
    p.variant = variant;
    p.gamma_base = gamma_base;
    refresh_derived(p);
    return p;
}

inline IrbcParameters make_identical_gamma_parameters(int countries, Variant variant,
                                                      double gamma) {
    IrbcParameters p;
    p.countries = countries;
    p.variant = variant;
    p.gamma_base = gamma;
    p.gamma.assign(static_cast<std::size_t>(countries), gamma);
    refresh_derived(p);
    return p;
}

// ---------------------------------------------------------------------------
// model primitives

inline double production(double a_j, double k_j, const IrbcParameters& p) {
    if (!(a_j > 0.0 && k_j > 0.0))
        throw std::domain_error("production: inputs must be strictly positive");
    return p.A * a_j * std::pow(k_j, p.alpha);
}

inline double adjustment_cost(double k_j, double k_next_j, const IrbcParameters& p) {
    if (!(k_j > 0.0)) throw std::domain_error("adjustment_cost: k must be strictly positive");
    const double g = k_next_j / k_j - 1.0;
    return 0.5 * p.phi_adj * k_j * g * g;
}

// ln a'_j = rho_a ln a_j + sigma (e_j + e_global)
inline void law_of_motion(std::span<const double> a, std::span<const double> e_country,
                          double e_global, const IrbcParameters& p, std::span<double> a_next) {
    for (std::size_t j = 0; j < a.size(); ++j)
        a_next[j] = std::exp(p.rho_a * std::log(a[j]) + p.sigma * (e_country[j] + e_global));
}

// ---------------------------------------------------------------------------
// expectation rule

// Degree-3 monomial (Stroud) rule for the N+1 independent standard normals
// (N country shocks plus the global shock): 2(N+1) antipodal nodes at
// +-sqrt(N+1) along each axis, equal weights.
struct ShockQuadrature {
    // node layout: [e_1 .. e_N, e_global]
    std::vector<std::vector<double>> nodes;
    std::vector<double> weights;
};

inline ShockQuadrature make_shock_quadrature(int countries) {
    if (countries < 1) throw std::invalid_argument("shock quadrature: countries must be >= 1");
    const std::size_t n = static_cast<std::size_t>(countries) + 1;
    const double r = std::sqrt(static_cast<double>(n));
    ShockQuadrature q;
    q.nodes.reserve(2 * n);
    q.weights.assign(2 * n, 1.0 / static_cast<double>(2 * n));
    for (std::size_t i = 0; i < n; ++i) {
        for (double s : {+1.0, -1.0}) {
            std::vector<double> node(n, 0.0);
            node[i] = s * r;
            q.nodes.push_back(std::move(node));
        }
    }
    return q;
}

// ---------------------------------------------------------------------------
// state-domain mapping

struct EconomicState {
    std::vector<double> a; // productivity levels
    std::vector<double> k; // capital stocks
};

// Affine bijection between the state box and [0,1]^(2N); layout: the N
// log-productivities first, then the N capitals.
inline void to_canonical(const EconomicState& s, const IrbcParameters& p,
                         std::span<double> x) {
    const std::size_t N = static_cast<std::size_t>(p.countries);
    for (std::size_t j = 0; j < N; ++j) {
        const double lna = std::log(s.a[j]);
        x[j] = (lna + p.lna_half_width) / (2.0 * p.lna_half_width);
        x[N + j] = (s.k[j] - p.k_lo) / (p.k_hi - p.k_lo);
    }
}

// Hard-error variant used when states become grid points.
inline std::vector<double> to_canonical_checked(const EconomicState& s,
                                                const IrbcParameters& p) {
    std::vector<double> x(static_cast<std::size_t>(p.state_dim()));
    to_canonical(s, p, x);
    for (double c : x)
        if (!(c >= 0.0 && c <= 1.0))
            throw std::domain_error("irbc: state outside the canonical domain box");
    return x;
}

// Clamping variant used for interpolation queries; reports whether any
// coordinate left the box (a high clamp rate signals a too-small box).
inline bool to_canonical_clamped(const EconomicState& s, const IrbcParameters& p,
                                 std::span<double> x) {
    to_canonical(s, p, x);
    bool clamped = false;
    for (auto& c : x) {
        if (c < 0.0) {
            c = 0.0;
            clamped = true;
        } else if (c > 1.0) {
            c = 1.0;
            clamped = true;
        }
    }
    return clamped;
}

inline EconomicState from_canonical(std::span<const double> x, const IrbcParameters& p) {
    const std::size_t N = static_cast<std::size_t>(p.countries);
    EconomicState s;
    s.a.resize(N);
    s.k.resize(N);
    for (std::size_t j = 0; j < N; ++j) {
        s.a[j] = std::exp(x[j] * 2.0 * p.lna_half_width - p.lna_half_width);
        s.k[j] = p.k_lo + x[N + j] * (p.k_hi - p.k_lo);
    }
    return s;
}

// ---------------------------------------------------------------------------
// policies

// Policy tuple at one state; mu is empty for the smooth variant.
struct PolicyValue {
    std::vector<double> k_next;
    std::vector<double> mu;
    double lambda = 0.0;

    // flat layout: k_next[0..N), (mu[0..N) nonsmooth only), lambda
    static PolicyValue from_flat(std::span<const double> v, const IrbcParameters& p) {
        const std::size_t N = static_cast<std::size_t>(p.countries);
        PolicyValue pv;
        pv.k_next.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(N));
        if (p.variant == Variant::nonsmooth)
            pv.mu.assign(v.begin() + static_cast<std::ptrdiff_t>(N),
                         v.begin() + static_cast<std::ptrdiff_t>(2 * N));
        pv.lambda = v[static_cast<std::size_t>(p.policy_dim()) - 1];
        return pv;
    }

    void to_flat(std::span<double> v, const IrbcParameters& p) const {
        const std::size_t N = static_cast<std::size_t>(p.countries);
        for (std::size_t j = 0; j < N; ++j) v[j] = k_next[j];
        if (p.variant == Variant::nonsmooth)
            for (std::size_t j = 0; j < N; ++j) v[N + j] = mu[j];
        v[static_cast<std::size_t>(p.policy_dim()) - 1] = lambda;
    }
};

// Policy function in flat form on the canonical domain; must be immutable
// while a time-iteration step runs.
using PolicyEvaluator = std::function<void(std::span<const double>, std::span<double>)>;

// lambda at the deterministic steady state (a = 1, k = 1): the aggregate
// resource constraint reduces to sum_j A lambda^(-gamma_j) = N (A - delta).
inline double steady_state_lambda(const IrbcParameters& p) {
    const double target = static_cast<double>(p.countries) * (p.A - p.delta);
    if (!(target > 0.0))
        throw std::domain_error("irbc: steady-state consumption would be non-positive");
    double lo = 1e-8, hi = 1e8;
    auto g = [&](double lam) {
        double s = 0.0;
        for (double gj : p.gamma) s += p.A * std::pow(lam, -gj);
        return s - target;
    };
    // g is strictly decreasing in lambda
    for (int it = 0; it < 200; ++it) {
        const double mid = std::sqrt(lo * hi);
        (g(mid) > 0.0 ? lo : hi) = mid;
    }
    return std::sqrt(lo * hi);
}

inline double fischer_burmeister(double a, double b) {
    return a + b - std::sqrt(a * a + b * b);
}

// ---------------------------------------------------------------------------
// first-order condition residuals

// Scratch space reused across residual evaluations inside the point solver.
struct FocWorkspace {
    std::vector<double> canonical;
    std::vector<double> a_next;
    std::vector<double> policy_next;
    std::vector<double> expectation;
};

// Residuals of the equilibrium conditions at one state, given a candidate
// policy tuple and the next-period policy function.
//
// Smooth variant (N+1 residuals):
//   r_j    = lambda (1 + phi g'_j)
//            - beta E[ lambda' (a'_j A alpha k'_j^(alpha-1) + 1 - delta
//                              + (phi/2) g''_j (g''_j + 2)) ]
//   r_(N)  = sum_j ( a_j A k_j^alpha + k_j ((1-delta) - (phi/2) g'_j^2)
//                    - k'_j - (lambda / tau_j)^(-gamma_j) )
//
// Non-smooth variant (2N+1): the Euler rows subtract mu_j outside and
// (1-delta) mu'_j inside the expectation, followed by N Fischer-Burmeister
// rows psi(mu_j, k'_j - (1-delta) k_j) and the resource constraint.
//
// Returns the number of quadrature nodes whose successor state left the box
// (their canonical coordinates are clamped).
inline int foc_residuals(const EconomicState& state, const PolicyValue& candidate,
                         const PolicyEvaluator& policy_next, const IrbcParameters& p,
                         const ShockQuadrature& quad, std::span<double> residuals,
                         FocWorkspace& ws) {
    const std::size_t N = static_cast<std::size_t>(p.countries);
    const bool kink = p.variant == Variant::nonsmooth;
    const std::size_t n_res = static_cast<std::size_t>(p.policy_dim());
    if (residuals.size() != n_res)
        throw std::invalid_argument("foc_residuals: residual length mismatch");

    ws.canonical.resize(2 * N);
    ws.a_next.resize(N);
    ws.policy_next.resize(n_res);
    ws.expectation.assign(N, 0.0);
    int clamped_nodes = 0;

    EconomicState succ;
    succ.k = candidate.k_next;
    succ.a.resize(N);
    for (std::size_t q = 0; q < quad.nodes.size(); ++q) {
        const auto& node = quad.nodes[q];
        law_of_motion(state.a, std::span<const double>(node.data(), N), node[N], p, ws.a_next);
        succ.a = ws.a_next;
        if (to_canonical_clamped(succ, p, ws.canonical)) ++clamped_nodes;
        policy_next(ws.canonical, ws.policy_next);
        const PolicyValue p_next = PolicyValue::from_flat(ws.policy_next, p);
        const double w = quad.weights[q];
        for (std::size_t j = 0; j < N; ++j) {
            const double kp = candidate.k_next[j];
            const double g2 = p_next.k_next[j] / kp - 1.0;
            double term = p_next.lambda *
                          (ws.a_next[j] * p.A * p.alpha * std::pow(kp, p.alpha - 1.0) +
                           (1.0 - p.delta) + 0.5 * p.phi_adj * g2 * (g2 + 2.0));
            if (kink) term -= (1.0 - p.delta) * p_next.mu[j];
            ws.expectation[j] += w * term;
        }
    }

    double resource = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
        const double g1 = candidate.k_next[j] / state.k[j] - 1.0;
        double r = candidate.lambda * (1.0 + p.phi_adj * g1) - p.beta * ws.expectation[j];
        if (kink) r -= candidate.mu[j];
        residuals[j] = r;
        resource += state.a[j] * p.A * std::pow(state.k[j], p.alpha) +
                    state.k[j] * ((1.0 - p.delta) - 0.5 * p.phi_adj * g1 * g1) -
                    candidate.k_next[j] -
                    std::pow(candidate.lambda / p.tau[j], -p.gamma[j]);
        if (kink) {
            const double slack = candidate.k_next[j] - (1.0 - p.delta) * state.k[j];
            residuals[N + j] = fischer_burmeister(candidate.mu[j], slack);
        }
    }
    residuals[n_res - 1] = resource;
    return clamped_nodes;
}

} // namespace ddsg::irbc
