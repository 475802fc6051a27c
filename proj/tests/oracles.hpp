#pragma once

// Test-only oracles, independent of the library's implementation paths:
// brute-force enumerations over the level/subset lattices, Monte Carlo
// integration, and small helpers for sampled error norms.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include "ddsg/component_index.hpp"

namespace oracle {

// Counts the nodes of a non-adaptive sparse grid by enumerating every level
// vector with |l|_1 <= L + n - 1; each vector contributes 2^(l_j - 1) odd
// indices per dimension.
inline std::uint64_t sg_node_count_bruteforce(int n, int L) {
    std::uint64_t total = 0;
    std::vector<int> l(static_cast<std::size_t>(n), 1);
    const int cap = L + n - 1;
    while (true) {
        int sum = 0;
        for (int v : l) sum += v;
        if (sum <= cap) {
            std::uint64_t pts = 1;
            for (int v : l) pts <<= (v - 1);
            total += pts;
        }
        // odometer over level vectors in [1, L]^n
        std::size_t j = 0;
        while (j < l.size()) {
            if (++l[j] <= L) break;
            l[j] = 1;
            ++j;
        }
        if (j == l.size()) break;
    }
    return total;
}

inline std::vector<std::vector<double>> uniform_points(int n, std::size_t count,
                                                       std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::vector<double>> pts(count, std::vector<double>(static_cast<std::size_t>(n)));
    for (auto& p : pts)
        for (auto& c : p) c = unif(rng);
    return pts;
}

// Monte Carlo integral of g over [0,1]^n.
inline double mc_integral(const std::function<double(const std::vector<double>&)>& g, int n,
                          std::size_t samples, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> x(static_cast<std::size_t>(n));
    double acc = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
        for (auto& c : x) c = unif(rng);
        acc += g(x);
    }
    return acc / static_cast<double>(samples);
}

// Telescopic coefficient of cut i in the full expansion of the given family:
// b_i = sum over family members u >= i of (-1)^(|u| - |i|), accumulated by
// walking the (u, v-subset) double loop the naive expansion uses.
inline std::map<ddsg::ComponentIndex, int>
b_coefficients_bruteforce(const std::vector<ddsg::ComponentIndex>& family) {
    std::map<ddsg::ComponentIndex, int> b;
    for (const auto& u : family)
        for (const auto& v : ddsg::all_subsets(u)) {
            const int sign = ((u.order() - v.order()) % 2 == 0) ? 1 : -1;
            b[v] += sign;
        }
    return b;
}

} // namespace oracle
