#pragma once

// Adaptive sparse grids with piecewise-linear hierarchical bases on [0,1]^n
// for vector-valued functions.
//
// Construction walks the level sums s = n .. L + n - 1.  At each sum the
// candidate set consists of the 2n hierarchical children of every node whose
// surplus passed the refinement criterion, closed under missing ancestors.
// Candidates are evaluated (possibly concurrently) against the frozen lower
// levels and then hierarchized one by one in a fixed order:
//
//   surplus(node) = f(x_node) - interpolate(grid so far, x_node)
//
// Residual hierarchization stays valid on pruned grids where the classical
// unidirectional sweep does not apply.  Hierarchical bases of distinct nodes
// at the same level sum vanish at each other's grid points, so the insertion
// order within one sum does not change any surplus, and nodes added later
// never alter the interpolant at already-stored points.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ddsg/basis.hpp"
#include "ddsg/grid_index.hpp"
#include "ddsg/runtime.hpp"

namespace ddsg {

// Raised when an evaluator misbehaves during grid construction.
class build_error : public std::runtime_error {
  public:
    build_error(std::string msg, std::vector<double> point)
        : std::runtime_error(std::move(msg)), point_(std::move(point)) {}
    const std::vector<double>& point() const { return point_; }

  private:
    std::vector<double> point_;
};

// Norm used to aggregate the m surplus components into the refinement
// indicator gamma.  The sup-norm matches the scalar criterion; l2 is kept as
// a documented alternative.
enum class SurplusNorm { inf, l2 };

struct GridNode {
    NodeKey key;
    std::vector<double> surplus; // length out_dim, finite after hierarchization
    bool refined = false;        // true once its children were admitted
};

struct SgBuildOptions {
    int max_level = 1;
    double eps_gamma = 0.0; // 0 => non-adaptive (full level enumeration)
    BoundaryMode mode = BoundaryMode::zero_boundary;
    SurplusNorm norm = SurplusNorm::inf;
    unsigned workers = 1; // fine-layer budget for candidate evaluations
};

// Evaluator contract: writes f(x) into `out` (length out_dim), x in [0,1]^n.
using GridEvaluator = std::function<void(std::span<const double>, std::span<double>)>;

class SparseGridFunction {
  public:
    SparseGridFunction() = default;

    int dim() const { return dim_; }
    int out_dim() const { return out_dim_; }
    int max_level() const { return max_level_; }
    double eps_gamma() const { return eps_gamma_; }
    BoundaryMode boundary_mode() const { return mode_; }
    const std::vector<GridNode>& nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }

    static SparseGridFunction build(const GridEvaluator& f, int dim, int out_dim,
                                    const SgBuildOptions& opt) {
        if (dim < 1) throw std::invalid_argument("sparse grid: dim must be >= 1");
        if (out_dim < 1) throw std::invalid_argument("sparse grid: out_dim must be >= 1");
        if (opt.max_level < 1) throw std::invalid_argument("sparse grid: max_level must be >= 1");
        if (opt.eps_gamma < 0.0) throw std::invalid_argument("sparse grid: eps_gamma must be >= 0");

        SparseGridFunction g;
        g.dim_ = dim;
        g.out_dim_ = out_dim;
        g.max_level_ = opt.max_level;
        g.eps_gamma_ = opt.eps_gamma;
        g.mode_ = opt.mode;
        g.norm_ = opt.norm;

        const int max_sum = opt.max_level + dim - 1;
        std::vector<NodeKey> batch{NodeKey(static_cast<std::size_t>(dim), HeapKey{1})};
        for (int s = dim; s <= max_sum && !batch.empty(); ++s) {
            g.insert_batch(batch, f, opt.workers);
            if (s == max_sum) break;
            batch = g.next_candidates(s);
        }
        g.finalize();
        return g;
    }

    // Sum of surplus * basis over all nodes; exact at stored grid points.
    void interpolate(std::span<const double> x, std::span<double> out) const {
        check_query(x, out);
        std::fill(out.begin(), out.end(), 0.0);
        const std::size_t n = nodes_.size();
        const std::size_t d = static_cast<std::size_t>(dim_);
        for (std::size_t nn = 0; nn < n; ++nn) {
            double w = 1.0;
            const FlatDim* fd = &flat_dims_[nn * d];
            for (std::size_t j = 0; j < d; ++j) {
                w *= basis_value(fd[j].kind, fd[j].center, fd[j].inv_h, x[j]);
                if (w == 0.0) break;
            }
            if (w != 0.0) {
                const double* s = &flat_surplus_[nn * static_cast<std::size_t>(out_dim_)];
                for (int c = 0; c < out_dim_; ++c) out[c] += w * s[c];
            }
        }
    }

    std::vector<double> interpolate(std::span<const double> x) const {
        std::vector<double> out(static_cast<std::size_t>(out_dim_));
        interpolate(x, out);
        return out;
    }

    // Integral over [0,1]^n: sum of surplus times the product of 1-d basis
    // weights; accumulated in fixed node order.
    std::vector<double> quadrature() const {
        std::vector<double> q(static_cast<std::size_t>(out_dim_), 0.0);
        const std::size_t d = static_cast<std::size_t>(dim_);
        for (std::size_t nn = 0; nn < nodes_.size(); ++nn) {
            double w = 1.0;
            const FlatDim* fd = &flat_dims_[nn * d];
            for (std::size_t j = 0; j < d; ++j) w *= basis_weight(fd[j].kind, 1.0 / fd[j].inv_h);
            const double* s = &flat_surplus_[nn * static_cast<std::size_t>(out_dim_)];
            for (int c = 0; c < out_dim_; ++c) q[c] += w * s[c];
        }
        return q;
    }

    bool contains(const NodeKey& key) const { return lookup_.count(key) > 0; }

    const GridNode& node_at(const NodeKey& key) const {
        auto it = lookup_.find(key);
        if (it == lookup_.end()) throw std::out_of_range("sparse grid: node not present");
        return nodes_[it->second];
    }

    // Assembles an evaluation-ready grid from raw node data (deserialization).
    static SparseGridFunction from_nodes(int dim, int out_dim, int max_level, double eps_gamma,
                                         BoundaryMode mode, std::vector<GridNode> nodes) {
        SparseGridFunction g;
        g.dim_ = dim;
        g.out_dim_ = out_dim;
        g.max_level_ = max_level;
        g.eps_gamma_ = eps_gamma;
        g.mode_ = mode;
        g.nodes_ = std::move(nodes);
        for (std::size_t i = 0; i < g.nodes_.size(); ++i) {
            if (g.nodes_[i].key.size() != static_cast<std::size_t>(dim))
                throw std::invalid_argument("sparse grid: node key dimension mismatch");
            if (g.nodes_[i].surplus.size() != static_cast<std::size_t>(out_dim))
                throw std::invalid_argument("sparse grid: node surplus length mismatch");
            if (!g.lookup_.emplace(g.nodes_[i].key, i).second)
                throw std::invalid_argument("sparse grid: duplicate node key");
        }
        g.finalize();
        return g;
    }

  private:
    struct FlatDim {
        double center = 0.0;
        double inv_h = 0.0;
        BasisKind kind = BasisKind::hat;
    };

    void check_query(std::span<const double> x, std::span<double> out) const {
        if (x.size() != static_cast<std::size_t>(dim_))
            throw std::invalid_argument("sparse grid: query dimension mismatch");
        if (out.size() != static_cast<std::size_t>(out_dim_))
            throw std::invalid_argument("sparse grid: output length mismatch");
        for (double v : x)
            if (!(v >= 0.0 && v <= 1.0))
                throw std::domain_error("sparse grid: query outside the unit cube");
    }

    double gamma_of(const std::vector<double>& surplus) const {
        double g = 0.0;
        if (norm_ == SurplusNorm::inf) {
            for (double v : surplus) g = std::max(g, std::abs(v));
        } else {
            for (double v : surplus) g += v * v;
            g = std::sqrt(g);
        }
        return g;
    }

    bool significant(const GridNode& node) const {
        return eps_gamma_ == 0.0 || gamma_of(node.surplus) > eps_gamma_;
    }

    // Children of significant nodes at level sum s, closed under missing
    // ancestors, sorted by (level sum, key).
    std::vector<NodeKey> next_candidates(int s) {
        std::unordered_set<NodeKey, NodeKeyHash> seen;
        std::vector<NodeKey> out;
        auto push_missing_ancestors = [&](const NodeKey& key) {
            // Walk up one level per dimension; recursion depth bounded by s.
            std::vector<NodeKey> stack{key};
            while (!stack.empty()) {
                NodeKey cur = std::move(stack.back());
                stack.pop_back();
                for (std::size_t j = 0; j < cur.size(); ++j) {
                    if (!has_parent(cur[j])) continue;
                    NodeKey p = cur;
                    p[j] = parent_key(cur[j]);
                    if (contains(p) || seen.count(p)) continue;
                    seen.insert(p);
                    out.push_back(p);
                    stack.push_back(std::move(p));
                }
            }
        };
        for (auto& node : nodes_) {
            if (level_sum(node.key) != s || !significant(node)) continue;
            node.refined = true;
            for (std::size_t j = 0; j < node.key.size(); ++j) {
                for (HeapKey child : {node.key[j] * 2u, node.key[j] * 2u + 1u}) {
                    NodeKey c = node.key;
                    c[j] = child;
                    if (contains(c) || !seen.insert(c).second) continue;
                    out.push_back(c);
                    push_missing_ancestors(c);
                }
            }
        }
        std::sort(out.begin(), out.end(), [](const NodeKey& a, const NodeKey& b) {
            const int sa = level_sum(a), sb = level_sum(b);
            if (sa != sb) return sa < sb;
            return a < b;
        });
        return out;
    }

    void insert_batch(const std::vector<NodeKey>& batch, const GridEvaluator& f, unsigned workers) {
        const std::size_t m = static_cast<std::size_t>(out_dim_);
        std::vector<std::vector<double>> values(batch.size());
        try {
            evaluate_batch_values(batch, f, workers, values);
        } catch (const task_error& te) {
            te.rethrow_cause(); // surface the evaluator's own error type
        }
        std::vector<double> x, interp(m);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            coordinates_of(batch[i], x);
            interp.assign(m, 0.0);
            interpolate_partial(x, interp);
            GridNode node;
            node.key = batch[i];
            node.surplus.resize(m);
            for (std::size_t c = 0; c < m; ++c) node.surplus[c] = values[i][c] - interp[c];
            lookup_.emplace(node.key, nodes_.size());
            append_flat(node);
            nodes_.push_back(std::move(node));
        }
    }

    void evaluate_batch_values(const std::vector<NodeKey>& batch, const GridEvaluator& f,
                               unsigned workers, std::vector<std::vector<double>>& values) const {
        const std::size_t m = static_cast<std::size_t>(out_dim_);
        detail::for_each_index(batch.size(), workers, [&](std::size_t i) {
            std::vector<double> x;
            coordinates_of(batch[i], x);
            std::vector<double> v(m);
            f(x, v);
            for (double c : v) {
                if (!std::isfinite(c)) {
                    std::ostringstream os;
                    os << "sparse grid: evaluator returned a non-finite value at grid point (";
                    for (std::size_t j = 0; j < x.size(); ++j) os << (j ? ", " : "") << x[j];
                    os << ")";
                    throw build_error(os.str(), x);
                }
            }
            values[i] = std::move(v);
        });
    }

    // Interpolation against the nodes inserted so far (flat arrays are kept
    // in sync incrementally during the build).
    void interpolate_partial(std::span<const double> x, std::span<double> out) const {
        const std::size_t d = static_cast<std::size_t>(dim_);
        for (std::size_t nn = 0; nn < nodes_.size(); ++nn) {
            double w = 1.0;
            const FlatDim* fd = &flat_dims_[nn * d];
            for (std::size_t j = 0; j < d; ++j) {
                w *= basis_value(fd[j].kind, fd[j].center, fd[j].inv_h, x[j]);
                if (w == 0.0) break;
            }
            if (w != 0.0)
                for (int c = 0; c < out_dim_; ++c)
                    out[c] += w * nodes_[nn].surplus[static_cast<std::size_t>(c)];
        }
    }

    void append_flat(const GridNode& node) {
        for (HeapKey hk : node.key) {
            FlatDim fd;
            const int l = level_of(hk);
            fd.inv_h = std::ldexp(1.0, l);
            fd.center = static_cast<double>(index_of(hk)) / fd.inv_h;
            fd.kind = basis_kind(l, index_of(hk), mode_);
            flat_dims_.push_back(fd);
        }
    }

    void finalize() {
        flat_dims_.clear();
        flat_surplus_.clear();
        flat_dims_.reserve(nodes_.size() * static_cast<std::size_t>(dim_));
        flat_surplus_.reserve(nodes_.size() * static_cast<std::size_t>(out_dim_));
        for (const auto& node : nodes_) {
            append_flat(node);
            flat_surplus_.insert(flat_surplus_.end(), node.surplus.begin(), node.surplus.end());
        }
    }

    int dim_ = 0;
    int out_dim_ = 0;
    int max_level_ = 0;
    double eps_gamma_ = 0.0;
    BoundaryMode mode_ = BoundaryMode::zero_boundary;
    SurplusNorm norm_ = SurplusNorm::inf;
    std::vector<GridNode> nodes_;
    std::unordered_map<NodeKey, std::size_t, NodeKeyHash> lookup_;
    std::vector<FlatDim> flat_dims_;
    std::vector<double> flat_surplus_;
};

} // namespace ddsg
