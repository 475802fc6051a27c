#pragma once

// Component indices u of the dimensional decomposition: strictly increasing
// subsets of {0, .., d-1}.  The empty index denotes the constant term.
// Ordering is (cardinality, lexicographic), which fixes every iteration
// order in the decomposition and the vectorized layout.

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddsg {

struct ComponentIndex {
    std::vector<int> dims; // strictly increasing, 0-based

    std::size_t order() const { return dims.size(); }
    bool empty() const { return dims.empty(); }

    bool operator==(const ComponentIndex& o) const { return dims == o.dims; }

    // (order, lexicographic) ordering.
    bool operator<(const ComponentIndex& o) const {
        if (dims.size() != o.dims.size()) return dims.size() < o.dims.size();
        return dims < o.dims;
    }

    bool contains(int d) const { return std::binary_search(dims.begin(), dims.end(), d); }

    // True if every dimension of `sub` appears in *this.
    bool is_superset_of(const ComponentIndex& sub) const {
        return std::includes(dims.begin(), dims.end(), sub.dims.begin(), sub.dims.end());
    }

    std::string to_string() const {
        if (dims.empty()) return "{}";
        std::string s = "{";
        for (std::size_t i = 0; i < dims.size(); ++i)
            s += (i ? "," : "") + std::to_string(dims[i]);
        return s + "}";
    }

    static ComponentIndex make(std::vector<int> dims, int d) {
        ComponentIndex u{std::move(dims)};
        std::sort(u.dims.begin(), u.dims.end());
        if (std::adjacent_find(u.dims.begin(), u.dims.end()) != u.dims.end())
            throw std::invalid_argument("component index: duplicate dimension");
        if (!u.dims.empty() && (u.dims.front() < 0 || u.dims.back() >= d))
            throw std::invalid_argument("component index: dimension id out of range");
        return u;
    }
};

// All order-k subsets of {0, .., d-1} in lexicographic order.
inline std::vector<ComponentIndex> order_k_indices(int d, std::size_t k) {
    std::vector<ComponentIndex> out;
    if (k > static_cast<std::size_t>(d)) return out;
    std::vector<int> comb(k);
    for (std::size_t i = 0; i < k; ++i) comb[i] = static_cast<int>(i);
    while (true) {
        out.push_back(ComponentIndex{comb});
        // next combination
        std::size_t i = k;
        while (i > 0 && comb[i - 1] == d - static_cast<int>(k - i) - 1) --i;
        if (i == 0) break;
        ++comb[i - 1];
        for (std::size_t j = i; j < k; ++j) comb[j] = comb[j - 1] + 1;
    }
    return out;
}

// All non-empty subsets of u, plus the empty index (2^|u| total).
inline std::vector<ComponentIndex> all_subsets(const ComponentIndex& u) {
    const std::size_t k = u.order();
    std::vector<ComponentIndex> out;
    out.reserve(std::size_t{1} << k);
    for (std::size_t mask = 0; mask < (std::size_t{1} << k); ++mask) {
        ComponentIndex v;
        for (std::size_t b = 0; b < k; ++b)
            if (mask & (std::size_t{1} << b)) v.dims.push_back(u.dims[b]);
        out.push_back(std::move(v));
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace ddsg
