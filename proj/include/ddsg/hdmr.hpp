#pragma once

// Anchored (cut-)HDMR decomposition with sparse-grid component functions.
//
// A d-dimensional function f is expanded around an anchor point into
// component functions indexed by subsets u of the dimensions.  Each cut
// interpolant approximates f restricted to the axis-aligned cut through the
// anchor; the component functions arise from the telescopic combination of
// cuts.  Two criteria control the adaptive expansion: rho gates progression
// to the next expansion order, eta prunes insignificant component indices
// together with all their supersets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddsg/component_index.hpp"
#include "ddsg/runtime.hpp"
#include "ddsg/sparse_grid.hpp"

namespace ddsg {

struct AnchorPoint {
    std::vector<double> coords;   // x-bar in [0,1]^d
    std::vector<double> f_anchor; // f(x-bar), length out_dim
};

// Evaluator contract shared with the sparse grid: out-parameter style.
using Evaluator = std::function<void(std::span<const double>, std::span<double>)>;

// Draws n_samples uniform points, estimates E[f] by the sample mean and
// returns the sampled point whose value is closest (l1 over outputs) to that
// mean.  Ties break towards the lowest sample index.
inline AnchorPoint select_anchor(const Evaluator& f, int dim, int out_dim, int n_samples,
                                 std::uint64_t seed) {
    if (n_samples < 1) throw std::invalid_argument("select_anchor: n_samples must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::size_t m = static_cast<std::size_t>(out_dim);
    std::vector<std::vector<double>> xs(static_cast<std::size_t>(n_samples));
    std::vector<std::vector<double>> vals(xs.size());
    std::vector<double> mean(m, 0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        xs[i].resize(static_cast<std::size_t>(dim));
        for (double& c : xs[i]) c = unif(rng);
        vals[i].resize(m);
        f(xs[i], vals[i]);
        for (std::size_t c = 0; c < m; ++c) {
            if (!std::isfinite(vals[i][c]))
                throw build_error("select_anchor: evaluator returned a non-finite value", xs[i]);
            mean[c] += vals[i][c];
        }
    }
    for (double& c : mean) c /= static_cast<double>(n_samples);
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double dist = 0.0;
        for (std::size_t c = 0; c < m; ++c) dist += std::abs(vals[i][c] - mean[c]);
        if (dist < best_dist) {
            best_dist = dist;
            best = i;
        }
    }
    return AnchorPoint{std::move(xs[best]), std::move(vals[best])};
}

// Restriction of f to the cut through the anchor along the dimensions of u:
// g(y) = f(x) with x_j = y_j for j in u and x_j = anchor_j elsewhere.
inline Evaluator cut_evaluator(const Evaluator& f, const AnchorPoint& anchor,
                               const ComponentIndex& u) {
    if (u.empty()) throw std::invalid_argument("cut_evaluator: component index must be non-empty");
    std::vector<double> base = anchor.coords;
    std::vector<int> dims = u.dims;
    // Per-call copy keeps the evaluator safe under concurrent grid builds.
    return [f, base, dims](std::span<const double> y, std::span<double> out) {
        std::vector<double> x = base;
        for (std::size_t j = 0; j < dims.size(); ++j) x[static_cast<std::size_t>(dims[j])] = y[j];
        f(x, out);
    };
}

// Relative quadrature residual between consecutive cumulative expansion
// orders.  Raised when the order-(k-1) cumulative quadrature vanishes; the
// caller must then keep expanding (a zero denominator carries no evidence of
// convergence).
class rho_denominator_error : public std::runtime_error {
  public:
    rho_denominator_error()
        : std::runtime_error("expansion_rho: order-(k-1) cumulative quadrature is zero; "
                             "treat rho as above-threshold and continue expanding") {}
};

inline double expansion_rho(const std::vector<double>& cumulative_k,
                            const std::vector<double>& cumulative_km1) {
    double num = 0.0, den = 0.0;
    for (std::size_t c = 0; c < cumulative_k.size(); ++c) {
        const double d = cumulative_k[c] - cumulative_km1[c];
        num += d * d;
        den += cumulative_km1[c] * cumulative_km1[c];
    }
    if (den == 0.0) throw rho_denominator_error();
    return std::sqrt(num) / std::sqrt(den);
}

// Active-dimension selection coefficient: quadrature mass of one component
// function against the combined mass of all lower orders.  A zero denominator
// is treated as accept (conservative), signalled by +infinity.
inline double eta_coefficient(const std::vector<double>& component_quadrature,
                              const std::vector<double>& lower_order_sum) {
    double num = 0.0, den = 0.0;
    for (std::size_t c = 0; c < component_quadrature.size(); ++c) {
        num += component_quadrature[c] * component_quadrature[c];
        den += lower_order_sum[c] * lower_order_sum[c];
    }
    if (den == 0.0) return std::numeric_limits<double>::infinity();
    return std::sqrt(num) / std::sqrt(den);
}

// Number of grid points of the full (non-adaptive) decomposition:
//   sum_{k=1..k_max} C(d,k) * |V_{l,k}| + 1  (the anchor).
// Throws std::overflow_error when the count exceeds the 64-bit range.
inline std::uint64_t sg_node_count(int dim, int max_level) {
    // |V_{l,n}| = sum_{j=0..l-1} C(n-1+j, n-1) * 2^j
    std::uint64_t total = 0;
    for (int j = 0; j < max_level; ++j) {
        std::uint64_t binom = 1;
        for (int i = 1; i <= j; ++i) {
            if (__builtin_mul_overflow(binom, static_cast<std::uint64_t>(dim - 1 + i), &binom))
                throw std::overflow_error("sg_node_count: 64-bit overflow");
            binom /= static_cast<std::uint64_t>(i);
        }
        std::uint64_t term;
        if (j >= 64 || __builtin_mul_overflow(binom, std::uint64_t{1} << j, &term))
            throw std::overflow_error("sg_node_count: 64-bit overflow");
        if (__builtin_add_overflow(total, term, &total))
            throw std::overflow_error("sg_node_count: 64-bit overflow");
    }
    return total;
}

inline std::uint64_t ddsg_grid_count(int d, int k_max, int max_level) {
    if (d < 0 || k_max < 0 || k_max > d || max_level < 1)
        throw std::invalid_argument("ddsg_grid_count: invalid arguments");
    std::uint64_t total = 1; // anchor
    for (int k = 1; k <= k_max; ++k) {
        std::uint64_t binom = 1;
        for (int i = 1; i <= k; ++i) {
            if (__builtin_mul_overflow(binom, static_cast<std::uint64_t>(d - k + i), &binom))
                throw std::overflow_error("ddsg_grid_count: 64-bit overflow");
            binom /= static_cast<std::uint64_t>(i);
        }
        std::uint64_t term;
        if (__builtin_mul_overflow(binom, sg_node_count(k, max_level), &term))
            throw std::overflow_error("ddsg_grid_count: 64-bit overflow");
        if (__builtin_add_overflow(total, term, &total))
            throw std::overflow_error("ddsg_grid_count: 64-bit overflow");
    }
    return total;
}

struct DdsgOptions {
    int k_max = 1;
    double eps_rho = 0.0;           // 0 => never stop on rho
    double eps_eta = 0.0;           // 0 => accept every component index
    int max_level = 1;              // sparse-grid depth of the cuts
    double eps_gamma = 0.0;         // sparse-grid adaptivity threshold
    BoundaryMode mode = BoundaryMode::modified_linear;
    bool exact_cuts = false;        // evaluate cuts through f instead of the SG
    unsigned workers = 1;
};

// Per-order diagnostics captured while the expansion is built.
struct ExpansionDiagnostics {
    struct EtaRecord {
        ComponentIndex index;
        double eta = 0.0;
        bool accepted = true;
    };
    std::vector<double> rho_by_order;            // rho after orders 1..K (NaN if denominator was zero)
    std::vector<std::vector<EtaRecord>> eta_by_order; // order k records at [k-1] (order-1 entries empty)
};

class DdsgFunction {
  public:
    friend DdsgFunction decompose(const Evaluator&, int, int, const AnchorPoint&,
                                  const DdsgOptions&, ExpansionDiagnostics*);

    int dim() const { return dim_; }
    int out_dim() const { return out_dim_; }
    int k_max() const { return opt_.k_max; }
    bool exact_cuts() const { return opt_.exact_cuts; }
    const DdsgOptions& options() const { return opt_; }
    const AnchorPoint& anchor() const { return anchor_; }

    const std::map<ComponentIndex, SparseGridFunction>& accepted() const { return accepted_; }
    const std::set<ComponentIndex>& rejected() const { return rejected_; }
    const std::map<ComponentIndex, int>& coeff_b() const { return coeff_b_; }

    // Quadrature of the cut interpolant for an accepted index (f(x-bar) for
    // the empty index).
    const std::vector<double>& cut_quadrature(const ComponentIndex& u) const {
        auto it = cut_quadratures_.find(u);
        if (it == cut_quadratures_.end())
            throw std::out_of_range("ddsg: no quadrature for component index " + u.to_string());
        return it->second;
    }

    // Telescopic combination of cut quadratures: the quadrature of the
    // component function f_u.
    std::vector<double> component_quadrature(const ComponentIndex& u) const {
        std::vector<double> q(static_cast<std::size_t>(out_dim_), 0.0);
        for (const auto& v : all_subsets(u)) {
            const auto& qc = cut_quadrature(v);
            const double sign = ((u.order() - v.order()) % 2 == 0) ? 1.0 : -1.0;
            for (std::size_t c = 0; c < q.size(); ++c) q[c] += sign * qc[c];
        }
        return q;
    }

    // Cumulative decomposition quadrature over accepted indices of order <= k,
    // starting from the constant term f(x-bar).
    std::vector<double> cumulative_quadrature(std::size_t k) const {
        std::vector<double> q = anchor_.f_anchor;
        for (const auto& [u, grid] : accepted_) {
            if (u.order() > k) continue;
            const auto qu = component_quadrature(u);
            for (std::size_t c = 0; c < q.size(); ++c) q[c] += qu[c];
        }
        return q;
    }

    std::size_t total_grid_points() const {
        std::size_t n = 1; // anchor
        for (const auto& [u, grid] : accepted_)
            if (!u.empty()) n += grid.size();
        return n;
    }

    std::size_t order_reached() const { return order_reached_; }

    // Direct evaluation of the telescopic expansion: for every accepted index
    // u and every subset v of u, the cut interpolant of v is evaluated anew.
    // Kept deliberately free of the deduplication the vectorized form applies;
    // serves as its oracle and as the baseline in benchmarks.
    void evaluate_naive(std::span<const double> x, std::span<double> out,
                        std::uint64_t* interp_calls = nullptr) const {
        check_point(x);
        const std::size_t m = static_cast<std::size_t>(out_dim_);
        for (std::size_t c = 0; c < m; ++c) out[c] = anchor_.f_anchor[c]; // the u = {} term
        std::vector<double> slot(m), restricted;
        for (const auto& [u, grid] : accepted_) {
            for (const auto& v : all_subsets(u)) {
                const double sign = ((u.order() - v.order()) % 2 == 0) ? 1.0 : -1.0;
                evaluate_cut(v, x, restricted, slot, interp_calls);
                for (std::size_t c = 0; c < m; ++c) out[c] += sign * slot[c];
            }
        }
    }

    std::vector<double> evaluate_naive(std::span<const double> x) const {
        std::vector<double> out(static_cast<std::size_t>(out_dim_));
        evaluate_naive(x, out);
        return out;
    }

    // Evaluates the cut interpolant of an accepted index at the restriction
    // of x (exact cut call when the decomposition was built in exact mode).
    void evaluate_cut(const ComponentIndex& v, std::span<const double> x,
                      std::vector<double>& restricted_scratch, std::span<double> out,
                      std::uint64_t* interp_calls = nullptr) const {
        const std::size_t m = static_cast<std::size_t>(out_dim_);
        if (v.empty()) {
            for (std::size_t c = 0; c < m; ++c) out[c] = anchor_.f_anchor[c];
            return;
        }
        restricted_scratch.resize(v.order());
        for (std::size_t j = 0; j < v.order(); ++j)
            restricted_scratch[j] = x[static_cast<std::size_t>(v.dims[j])];
        if (interp_calls) ++*interp_calls;
        if (opt_.exact_cuts) {
            exact_cut_fns_.at(v)(restricted_scratch, out);
        } else {
            accepted_.at(v).interpolate(restricted_scratch, out);
        }
    }

    void check_point(std::span<const double> x) const {
        if (x.size() != static_cast<std::size_t>(dim_))
            throw std::invalid_argument("ddsg: query dimension mismatch");
        for (double v : x)
            if (!(v >= 0.0 && v <= 1.0)) throw std::domain_error("ddsg: query outside unit cube");
    }

    // Assembles a DdsgFunction from deserialized parts.
    static DdsgFunction from_parts(int dim, int out_dim, DdsgOptions opt, AnchorPoint anchor,
                                   std::map<ComponentIndex, SparseGridFunction> accepted,
                                   std::set<ComponentIndex> rejected,
                                   std::map<ComponentIndex, int> coeff_b,
                                   std::map<ComponentIndex, std::vector<double>> cut_quadratures) {
        DdsgFunction f;
        f.dim_ = dim;
        f.out_dim_ = out_dim;
        f.opt_ = std::move(opt);
        f.opt_.exact_cuts = false; // exact-cut closures are not serializable
        f.anchor_ = std::move(anchor);
        f.accepted_ = std::move(accepted);
        f.rejected_ = std::move(rejected);
        f.coeff_b_ = std::move(coeff_b);
        f.cut_quadratures_ = std::move(cut_quadratures);
        for (const auto& [u, grid] : f.accepted_)
            f.order_reached_ = std::max(f.order_reached_, u.order());
        return f;
    }

  private:
    int dim_ = 0;
    int out_dim_ = 0;
    DdsgOptions opt_;
    AnchorPoint anchor_;
    std::map<ComponentIndex, SparseGridFunction> accepted_;  // excludes the empty index
    std::set<ComponentIndex> rejected_;
    std::map<ComponentIndex, int> coeff_b_;
    std::map<ComponentIndex, std::vector<double>> cut_quadratures_;
    std::map<ComponentIndex, Evaluator> exact_cut_fns_;
    std::size_t order_reached_ = 0;

    void finalize_coefficients() {
        // b_i = sum over accepted u that contain i of (-1)^(|u| - |i|): the
        // telescopic coefficient the cut interpolant of i carries once the
        // double sum over (u, v subset of u) is regrouped per cut.
        coeff_b_.clear();
        std::vector<ComponentIndex> family;
        family.push_back(ComponentIndex{});
        for (const auto& [u, grid] : accepted_) family.push_back(u);
        for (const auto& i : family) {
            int b = 0;
            for (const auto& u : family) {
                if (!u.is_superset_of(i)) continue;
                b += ((u.order() - i.order()) % 2 == 0) ? 1 : -1;
            }
            coeff_b_[i] = b;
        }
    }
};

// Implements the adaptive decomposition loop: per expansion order k, the
// current index set holds the order-k indices that are not supersets of a
// rejected index; their cut grids and quadratures are built concurrently,
// eta prunes within the order (order-1 indices are always kept so every
// variable stays represented), and rho decides whether order k+1 is built.
// With eps_eta = 0 every index is kept, mirroring the non-adaptive expansion.
inline DdsgFunction decompose(const Evaluator& f, int dim, int out_dim, const AnchorPoint& anchor,
                              const DdsgOptions& opt, ExpansionDiagnostics* diag = nullptr) {
    if (dim < 1) throw std::invalid_argument("decompose: dim must be >= 1");
    if (opt.k_max < 1 || opt.k_max > dim)
        throw std::invalid_argument("decompose: k_max must satisfy 1 <= k_max <= dim");
    if (opt.eps_rho < 0.0 || opt.eps_eta < 0.0)
        throw std::invalid_argument("decompose: thresholds must be >= 0");
    if (anchor.coords.size() != static_cast<std::size_t>(dim))
        throw std::invalid_argument("decompose: anchor dimension mismatch");

    DdsgFunction out;
    out.dim_ = dim;
    out.out_dim_ = out_dim;
    out.opt_ = opt;
    out.anchor_ = anchor;
    if (out.anchor_.f_anchor.empty()) {
        out.anchor_.f_anchor.resize(static_cast<std::size_t>(out_dim));
        f(out.anchor_.coords, out.anchor_.f_anchor);
    }
    out.cut_quadratures_[ComponentIndex{}] = out.anchor_.f_anchor;

    for (int k = 1; k <= opt.k_max; ++k) {
        // Current order index set, pruned by the reject set.
        std::vector<ComponentIndex> current;
        for (auto& c : order_k_indices(dim, static_cast<std::size_t>(k))) {
            bool pruned = false;
            for (const auto& z : out.rejected_)
                if (c.is_superset_of(z)) {
                    pruned = true;
                    break;
                }
            if (!pruned) current.push_back(std::move(c));
        }
        if (current.empty()) break;

        // Coarse layer: one group per worker, components built independently.
        std::vector<double> costs(current.size());
        for (std::size_t i = 0; i < current.size(); ++i)
            costs[i] = static_cast<double>(sg_node_count(static_cast<int>(current[i].order()),
                                                         opt.max_level));
        const TaskPlan plan = load_balance(costs, std::max(1u, opt.workers));

        struct BuiltComponent {
            SparseGridFunction grid;
            std::vector<double> quadrature;
        };
        std::vector<BuiltComponent> built(current.size());
        try {
            detail::for_each_index(plan.groups.size(), static_cast<unsigned>(plan.groups.size()),
                                   [&](std::size_t g) {
                                       for (std::size_t id : plan.groups[g]) {
                                           const auto& u = current[id];
                                           try {
                                               SgBuildOptions sgo;
                                               sgo.max_level = opt.max_level;
                                               sgo.eps_gamma = opt.eps_gamma;
                                               sgo.mode = opt.mode;
                                               sgo.workers = plan.fine_workers_per_group;
                                               auto cut = cut_evaluator(f, out.anchor_, u);
                                               BuiltComponent bc;
                                               bc.grid = SparseGridFunction::build(
                                                   cut, static_cast<int>(u.order()), out_dim, sgo);
                                               bc.quadrature = bc.grid.quadrature();
                                               built[id] = std::move(bc);
                                           } catch (const std::exception& inner) {
                                               throw std::runtime_error(
                                                   "decompose: component " + u.to_string() +
                                                   " failed: " + inner.what());
                                           }
                                       }
                                   });
        } catch (const task_error& te) {
            te.rethrow_cause();
        }

        // Order boundary: the coordinator applies eta and the bookkeeping.
        auto lower_sum = out.cumulative_quadrature(static_cast<std::size_t>(k) - 1);
        if (diag && diag->eta_by_order.size() < static_cast<std::size_t>(k))
            diag->eta_by_order.resize(static_cast<std::size_t>(k));
        for (std::size_t id = 0; id < current.size(); ++id) {
            const auto& u = current[id];
            out.cut_quadratures_[u] = built[id].quadrature;
            bool accept = true;
            double eta = std::numeric_limits<double>::quiet_NaN();
            if (u.order() >= 2) {
                // component quadrature needs the cut quadrature staged above
                const auto qu = out.component_quadrature(u);
                eta = eta_coefficient(qu, lower_sum);
                accept = (opt.eps_eta == 0.0) || (eta > opt.eps_eta);
            }
            if (accept) {
                out.accepted_[u] = std::move(built[id].grid);
                if (opt.exact_cuts) out.exact_cut_fns_[u] = cut_evaluator(f, out.anchor_, u);
            } else {
                out.rejected_.insert(u);
                out.cut_quadratures_.erase(u);
            }
            if (diag && u.order() >= 2)
                diag->eta_by_order[static_cast<std::size_t>(k) - 1].push_back(
                    {u, eta, accept});
        }
        out.order_reached_ = static_cast<std::size_t>(k);

        // Expansion criterion on the cumulative quadratures.
        const auto cum_k = out.cumulative_quadrature(static_cast<std::size_t>(k));
        double rho = std::numeric_limits<double>::quiet_NaN();
        bool stop = false;
        try {
            rho = expansion_rho(cum_k, lower_sum);
            stop = rho < opt.eps_rho;
        } catch (const rho_denominator_error&) {
            stop = false; // no evidence of convergence; keep expanding
        }
        if (diag) diag->rho_by_order.push_back(rho);
        if (stop) break;
    }

    out.finalize_coefficients();
    return out;
}

} // namespace ddsg
