#pragma once

// Hierarchical level-index bookkeeping for sparse grids.
//
// A 1-d hierarchical node (l, i) with l >= 1 and i odd, 1 <= i <= 2^l - 1,
// is packed into a single "heap key" hk = 2^(l-1) + (i-1)/2.  This is the
// binary-heap numbering of the node tree: parent(hk) = hk >> 1, children
// are 2*hk and 2*hk + 1, and the root (1,1) is hk = 1.

#include <bit>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddsg {

using HeapKey = std::uint32_t;

// Multi-dimensional node key: one heap key per dimension.
using NodeKey = std::vector<HeapKey>;

inline int level_of(HeapKey hk) { return std::bit_width(hk); }

inline std::uint32_t index_of(HeapKey hk) {
    const int l = level_of(hk);
    return 2u * (hk - (HeapKey{1} << (l - 1))) + 1u;
}

inline HeapKey heap_key(int level, std::uint32_t index) {
    if (level < 1 || level > 30)
        throw std::invalid_argument("heap_key: level out of range [1,30]");
    if (index % 2u == 0u || index < 1u || index > (1u << level) - 1u)
        throw std::invalid_argument("heap_key: index must be odd in [1, 2^l - 1], got l=" +
                                    std::to_string(level) + " i=" + std::to_string(index));
    return (HeapKey{1} << (level - 1)) + (index - 1u) / 2u;
}

// Grid coordinate x = i * 2^-l in (0,1).
inline double coordinate_of(HeapKey hk) {
    const int l = level_of(hk);
    return static_cast<double>(index_of(hk)) * std::ldexp(1.0, -l);
}

inline bool has_parent(HeapKey hk) { return hk > 1u; }
inline HeapKey parent_key(HeapKey hk) { return hk >> 1; }

inline int level_sum(const NodeKey& key) {
    int s = 0;
    for (HeapKey hk : key) s += level_of(hk);
    return s;
}

inline void coordinates_of(const NodeKey& key, std::vector<double>& out) {
    out.resize(key.size());
    for (std::size_t j = 0; j < key.size(); ++j) out[j] = coordinate_of(key[j]);
}

struct NodeKeyHash {
    std::size_t operator()(const NodeKey& k) const noexcept {
        std::size_t h = 0xcbf29ce484222325ull;
        for (HeapKey v : k) {
            h ^= v;
            h *= 0x100000001b3ull;
        }
        return h;
    }
};

} // namespace ddsg
