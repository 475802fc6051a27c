#pragma once

// Piecewise-linear hierarchical basis functions on [0,1] and their integrals.
//
// zero_boundary: the standard hat phi_{l,i}(x) = max(1 - |x - x_{l,i}| / h_l, 0),
// which implies the interpolant vanishes on the domain boundary.
//
// modified_linear: identical in the interior, but the level-1 function is the
// constant 1 and the outermost functions of each level l >= 2 extrapolate
// linearly towards the boundary (value 2 at the edge).  This variant
// reproduces linear functions exactly and needs no boundary points.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>

#include "ddsg/grid_index.hpp"

namespace ddsg {

enum class BoundaryMode { zero_boundary, modified_linear };

// Shape of the 1-d factor a node contributes in a given dimension.
enum class BasisKind : std::uint8_t { hat, constant_one, left_edge, right_edge };

inline BasisKind basis_kind(int level, std::uint32_t index, BoundaryMode mode) {
    if (mode == BoundaryMode::zero_boundary) return BasisKind::hat;
    if (level == 1) return BasisKind::constant_one;
    if (index == 1u) return BasisKind::left_edge;
    if (index == (1u << level) - 1u) return BasisKind::right_edge;
    return BasisKind::hat;
}

// inv_h = 2^l, center = i * 2^-l.
inline double basis_value(BasisKind kind, double center, double inv_h, double x) {
    switch (kind) {
        case BasisKind::constant_one:
            return 1.0;
        case BasisKind::left_edge: {
            const double v = 2.0 - x * inv_h;
            return v > 0.0 ? v : 0.0;
        }
        case BasisKind::right_edge: {
            const double v = 2.0 - (1.0 - x) * inv_h;
            return v > 0.0 ? v : 0.0;
        }
        case BasisKind::hat:
        default: {
            const double v = 1.0 - std::abs(x - center) * inv_h;
            return v > 0.0 ? v : 0.0;
        }
    }
}

// Integral over [0,1] of the 1-d basis function.
inline double basis_weight(BasisKind kind, double h) {
    switch (kind) {
        case BasisKind::constant_one: return 1.0;
        case BasisKind::left_edge:
        case BasisKind::right_edge: return 2.0 * h;
        case BasisKind::hat:
        default: return h;
    }
}

inline double basis_1d(int level, std::uint32_t index, double x, BoundaryMode mode) {
    heap_key(level, index); // validates the (level, index) pair
    if (x < 0.0 || x > 1.0) throw std::domain_error("basis_1d: x outside [0,1]");
    const double inv_h = std::ldexp(1.0, level);
    const double center = static_cast<double>(index) / inv_h;
    return basis_value(basis_kind(level, index, mode), center, inv_h, x);
}

inline double basis_nd(const NodeKey& key, std::span<const double> x, BoundaryMode mode) {
    if (key.size() != x.size())
        throw std::invalid_argument("basis_nd: dimension mismatch between key and point");
    double w = 1.0;
    for (std::size_t j = 0; j < key.size(); ++j) {
        w *= basis_1d(level_of(key[j]), index_of(key[j]), x[j], mode);
        if (w == 0.0) return 0.0;
    }
    return w;
}

} // namespace ddsg
