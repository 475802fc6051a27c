#pragma once

// Vectorized form of the decomposition: the telescopic double sum is
// flattened into one slot per distinct cut interpolant plus an integer
// coefficient array, so a function call reduces to the dot product
// f(x) ~ a(x)^T b.  Every cut interpolant is evaluated at most once per
// query; slots with a zero coefficient stay in the table (they keep the
// quadrature bookkeeping consistent) but are skipped by the evaluation loop.

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "ddsg/hdmr.hpp"
#include "ddsg/runtime.hpp"

namespace ddsg {

// Reusable scratch buffers for allocation-free evaluation in hot loops.
struct EvalWorkspace {
    std::vector<double> slot_values; // active-slot rows, slot-major
    std::vector<double> restricted;  // query restricted to a slot's dimensions
};

class VectorizedDdsg {
  public:
    struct Slot {
        ComponentIndex index;
        int b = 0;
        const SparseGridFunction* grid = nullptr; // null for the empty index
    };

    VectorizedDdsg() = default;

    // The source decomposition is shared and must stay immutable; slots hold
    // pointers into its accepted map.
    static VectorizedDdsg compile(std::shared_ptr<const DdsgFunction> source) {
        if (!source) throw std::invalid_argument("vectorized ddsg: null source");
        VectorizedDdsg v;
        v.source_ = std::move(source);
        v.dim_ = v.source_->dim();
        v.out_dim_ = v.source_->out_dim();
        // coeff_b holds the empty index plus every accepted index, already in
        // (order, lexicographic) order.
        for (const auto& [u, b] : v.source_->coeff_b()) {
            Slot s;
            s.index = u;
            s.b = b;
            if (!u.empty()) {
                auto it = v.source_->accepted().find(u);
                if (it == v.source_->accepted().end())
                    throw std::invalid_argument(
                        "vectorized ddsg: coefficient for a non-accepted index " + u.to_string());
                s.grid = &it->second;
            }
            v.slots_.push_back(std::move(s));
        }
        if (v.slots_.empty() || !v.slots_.front().index.empty())
            throw std::invalid_argument("vectorized ddsg: inconsistent accepted family");
        // Closure check: the naive telescoping needs every subset of an
        // accepted index, so a gap would make the two routes disagree.
        for (const auto& [u, grid] : v.source_->accepted())
            for (const auto& sub : all_subsets(u))
                if (!sub.empty() && sub.order() < u.order() &&
                    v.source_->accepted().find(sub) == v.source_->accepted().end())
                    throw std::invalid_argument("vectorized ddsg: accepted family misses subset " +
                                                sub.to_string() + " of " + u.to_string());
        for (std::size_t i = 0; i < v.slots_.size(); ++i)
            if (v.slots_[i].b != 0) v.active_.push_back(i);
        return v;
    }

    int dim() const { return dim_; }
    int out_dim() const { return out_dim_; }
    const std::vector<Slot>& slots() const { return slots_; }
    const DdsgFunction& source() const { return *source_; }

    // Dot product a(x)^T b, accumulated with pairwise summation over the
    // active slots.  `interp_calls`, when given, counts cut evaluations.
    void evaluate(std::span<const double> x, std::span<double> out, EvalWorkspace& ws,
                  std::uint64_t* interp_calls = nullptr) const {
        source_->check_point(x);
        if (out.size() != static_cast<std::size_t>(out_dim_))
            throw std::invalid_argument("vectorized ddsg: output length mismatch");
        const std::size_t m = static_cast<std::size_t>(out_dim_);
        const std::size_t na = active_.size();
        ws.slot_values.resize(na * m);
        for (std::size_t a = 0; a < na; ++a) {
            const Slot& s = slots_[active_[a]];
            double* row = &ws.slot_values[a * m];
            if (s.index.empty()) {
                const auto& fa = source_->anchor().f_anchor;
                for (std::size_t c = 0; c < m; ++c) row[c] = s.b * fa[c];
            } else {
                ws.restricted.resize(s.index.order());
                for (std::size_t j = 0; j < s.index.order(); ++j)
                    ws.restricted[j] = x[static_cast<std::size_t>(s.index.dims[j])];
                if (interp_calls) ++*interp_calls;
                if (source_->exact_cuts()) {
                    std::vector<double> tmp;
                    source_->evaluate_cut(s.index, x, tmp, std::span<double>(row, m));
                } else {
                    s.grid->interpolate(ws.restricted, std::span<double>(row, m));
                }
                for (std::size_t c = 0; c < m; ++c) row[c] *= s.b;
            }
        }
        for (std::size_t c = 0; c < m; ++c)
            out[c] = na == 0 ? 0.0 : pairwise_sum(&ws.slot_values[c], na, m);
    }

    void evaluate(std::span<const double> x, std::span<double> out,
                  std::uint64_t* interp_calls = nullptr) const {
        EvalWorkspace ws;
        evaluate(x, out, ws, interp_calls);
    }

    std::vector<double> evaluate(std::span<const double> x) const {
        std::vector<double> out(static_cast<std::size_t>(out_dim_));
        evaluate(x, out);
        return out;
    }

    // Elementwise equal to evaluate; amortizes workspace setup and may be
    // partitioned across threads (per-point arithmetic is unchanged, so the
    // result is identical for any worker count).
    std::vector<std::vector<double>> evaluate_batch(const std::vector<std::vector<double>>& xs,
                                                    unsigned workers = 1) const {
        std::vector<std::vector<double>> out(xs.size());
        detail::for_each_index(xs.size(), workers, [&](std::size_t i) {
            thread_local EvalWorkspace ws;
            out[i].resize(static_cast<std::size_t>(out_dim_));
            evaluate(xs[i], out[i], ws);
        });
        return out;
    }

    // sum_i b_i * (cut quadrature of slot i); equals the cumulative
    // decomposition quadrature used by the expansion criterion.
    std::vector<double> quadrature() const {
        std::vector<double> q(static_cast<std::size_t>(out_dim_), 0.0);
        for (const Slot& s : slots_) {
            if (s.b == 0) continue;
            const auto& qc = source_->cut_quadrature(s.index);
            for (std::size_t c = 0; c < q.size(); ++c) q[c] += s.b * qc[c];
        }
        return q;
    }

  private:
    static double pairwise_sum(const double* v, std::size_t n, std::size_t stride) {
        if (n == 1) return v[0];
        const std::size_t half = n / 2;
        return pairwise_sum(v, half, stride) + pairwise_sum(v + half * stride, n - half, stride);
    }

    std::shared_ptr<const DdsgFunction> source_;
    int dim_ = 0;
    int out_dim_ = 0;
    std::vector<Slot> slots_;
    std::vector<std::size_t> active_; // indices of slots with b != 0
};

} // namespace ddsg
