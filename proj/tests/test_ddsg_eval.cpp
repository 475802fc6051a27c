#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "ddsg/ddsg_eval.hpp"
#include "ddsg/hdmr.hpp"
#include "oracles.hpp"

using namespace ddsg;

namespace {

Evaluator scalar(const std::function<double(std::span<const double>)>& f) {
    return [f](std::span<const double> x, std::span<double> out) { out[0] = f(x); };
}

AnchorPoint center_anchor(const Evaluator& f, int dim, int out_dim) {
    AnchorPoint a;
    a.coords.assign(static_cast<std::size_t>(dim), 0.5);
    a.f_anchor.resize(static_cast<std::size_t>(out_dim));
    f(a.coords, a.f_anchor);
    return a;
}

ComponentIndex idx(std::vector<int> dims) { return ComponentIndex{std::move(dims)}; }

std::shared_ptr<const DdsgFunction> decompose_shared(const Evaluator& f, int d, int m,
                                                     const DdsgOptions& opt) {
    return std::make_shared<const DdsgFunction>(decompose(f, d, m, center_anchor(f, d, m), opt));
}

// mildly coupled test function used across the equivalence checks
double coupled(std::span<const double> x) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += std::exp(-0.5 * x[j]) + 0.2 * x[j] * x[j];
    for (std::size_t j = 0; j + 1 < x.size(); ++j) s += 0.3 * std::sin(x[j] * x[j + 1]);
    return s;
}

} // namespace

TEST_CASE("b coefficients for hand-derived families") {
    auto f = scalar([](std::span<const double> x) {
        double s = 1.0;
        for (double c : x) s += std::exp(c);
        return s;
    });
    DdsgOptions opt;
    opt.max_level = 3;
    opt.mode = BoundaryMode::modified_linear;

    opt.k_max = 1;
    const auto d2k1 = decompose(f, 2, 1, center_anchor(f, 2, 1), opt);
    CHECK(d2k1.coeff_b().at(ComponentIndex{}) == -1);
    CHECK(d2k1.coeff_b().at(idx({0})) == 1);
    CHECK(d2k1.coeff_b().at(idx({1})) == 1);

    const auto d3k1 = decompose(f, 3, 1, center_anchor(f, 3, 1), opt);
    CHECK(d3k1.coeff_b().at(ComponentIndex{}) == -2);
    CHECK(d3k1.coeff_b().at(idx({0})) == 1);
    CHECK(d3k1.coeff_b().at(idx({1})) == 1);
    CHECK(d3k1.coeff_b().at(idx({2})) == 1);

    opt.k_max = 2;
    const auto d2k2 = decompose(f, 2, 1, center_anchor(f, 2, 1), opt);
    CHECK(d2k2.coeff_b().at(ComponentIndex{}) == 0);
    CHECK(d2k2.coeff_b().at(idx({0})) == 0);
    CHECK(d2k2.coeff_b().at(idx({1})) == 0);
    CHECK(d2k2.coeff_b().at(idx({0, 1})) == 1);
}

TEST_CASE("b coefficients match the subset-lattice oracle") {
    // Families produced by real decompositions (full and pruned) across the
    // d <= 5, k_max <= 3 regime; the oracle accumulates the telescoping the
    // naive expansion performs, term by term.
    auto coupled_f = scalar(coupled);
    auto pruned_f = scalar([](std::span<const double> x) {
        double s = x[0] + 0.5;
        for (std::size_t j = 1; j < x.size(); ++j) s += std::exp(x[0] * x[j]);
        return s;
    });
    for (int d = 2; d <= 5; ++d) {
        for (int k = 1; k <= std::min(3, d); ++k) {
            for (double eps_eta : {0.0, 3e-3}) {
                DdsgOptions opt;
                opt.k_max = k;
                opt.max_level = 2;
                opt.eps_eta = eps_eta;
                opt.mode = BoundaryMode::modified_linear;
                const auto& f = (eps_eta > 0.0) ? pruned_f : coupled_f;
                const auto dd = decompose(f, d, 1, center_anchor(f, d, 1), opt);
                std::vector<ComponentIndex> family;
                family.push_back(ComponentIndex{});
                for (const auto& [u, grid] : dd.accepted()) family.push_back(u);
                const auto want = oracle::b_coefficients_bruteforce(family);
                REQUIRE(dd.coeff_b().size() == want.size());
                for (const auto& [u, b] : want) CHECK(dd.coeff_b().at(u) == b);
            }
        }
    }
}

TEST_CASE("vectorized evaluation equals the naive telescoping") {
    const int d = 8;
    auto f = scalar(coupled);
    DdsgOptions opt;
    opt.k_max = 2;
    opt.max_level = 3;
    opt.mode = BoundaryMode::modified_linear;
    auto src = decompose_shared(f, d, 1, opt);
    const auto vec = VectorizedDdsg::compile(src);
    double max_diff = 0.0;
    for (const auto& p : oracle::uniform_points(d, 1000, 321)) {
        max_diff = std::max(max_diff, std::abs(vec.evaluate(p)[0] - src->evaluate_naive(p)[0]));
    }
    CHECK(max_diff <= 1e-12);
}

TEST_CASE("constant functions come back constant") {
    auto f = scalar([](std::span<const double>) { return 4.25; });
    DdsgOptions opt;
    opt.k_max = 2;
    opt.max_level = 3;
    opt.mode = BoundaryMode::modified_linear;
    auto src = decompose_shared(f, 3, 1, opt);
    const auto vec = VectorizedDdsg::compile(src);
    for (const auto& p : oracle::uniform_points(3, 100, 5)) {
        CHECK(vec.evaluate(p)[0] == Catch::Approx(4.25).margin(1e-13));
    }
}

TEST_CASE("slots with zero coefficient are skipped, others evaluated once") {
    auto f = scalar(coupled);
    DdsgOptions opt;
    opt.k_max = 2;
    opt.max_level = 3;
    opt.mode = BoundaryMode::modified_linear;
    auto src = decompose_shared(f, 2, 1, opt);
    const auto vec = VectorizedDdsg::compile(src);
    // full expansion at d = k_max = 2: only the pair slot carries b != 0
    std::size_t active = 0;
    for (const auto& s : vec.slots())
        if (s.b != 0 && !s.index.empty()) ++active;
    REQUIRE(vec.slots().size() == 4);
    CHECK(active == 1);
    std::uint64_t calls = 0;
    std::vector<double> out(1);
    std::vector<double> p{0.3, 0.7};
    vec.evaluate(p, out, &calls);
    CHECK(calls == active);

    // a pruned family keeps several active slots
    auto g = scalar([](std::span<const double> x) {
        return x[0] + std::exp(x[1] * x[2]) + 0.1 * x[2];
    });
    DdsgOptions opt3;
    opt3.k_max = 2;
    opt3.max_level = 3;
    opt3.eps_eta = 1e-4;
    opt3.mode = BoundaryMode::modified_linear;
    auto src3 = decompose_shared(g, 3, 1, opt3);
    const auto vec3 = VectorizedDdsg::compile(src3);
    std::size_t active3 = 0;
    for (const auto& s : vec3.slots())
        if (s.b != 0) ++active3;
    std::uint64_t calls3 = 0;
    std::vector<double> p3{0.3, 0.7, 0.2};
    vec3.evaluate(p3, out, &calls3);
    std::size_t active_nonempty = 0;
    for (const auto& s : vec3.slots())
        if (s.b != 0 && !s.index.empty()) ++active_nonempty;
    CHECK(calls3 == active_nonempty);
    CHECK(vec3.slots().size() == src3->accepted().size() + 1); // deduplicated
}

TEST_CASE("batch evaluation matches looped evaluation bitwise") {
    auto f = scalar(coupled);
    DdsgOptions opt;
    opt.k_max = 2;
    opt.max_level = 3;
    opt.mode = BoundaryMode::modified_linear;
    auto src = decompose_shared(f, 4, 1, opt);
    const auto vec = VectorizedDdsg::compile(src);

    const auto pts = oracle::uniform_points(4, 10000, 8443);
    const auto batch = vec.evaluate_batch(pts);
    REQUIRE(batch.size() == pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        CHECK(batch[i][0] == vec.evaluate(pts[i])[0]); // bitwise
    }

    // batch of one
    const auto one = vec.evaluate_batch({pts[17]});
    CHECK(one[0][0] == vec.evaluate(pts[17])[0]);

    // permuting the batch permutes the outputs
    auto perm = pts;
    std::reverse(perm.begin(), perm.end());
    const auto rbatch = vec.evaluate_batch(perm);
    for (std::size_t i = 0; i < pts.size(); ++i)
        CHECK(rbatch[pts.size() - 1 - i][0] == batch[i][0]);

    // worker count does not change values
    const auto batch4 = vec.evaluate_batch(pts, 4);
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK(batch4[i][0] == batch[i][0]);
}

TEST_CASE("slot quadrature dot product equals the cumulative quadrature") {
    auto f = scalar(coupled);
    DdsgOptions opt;
    opt.k_max = 2;
    opt.max_level = 4;
    opt.mode = BoundaryMode::modified_linear;
    auto src = decompose_shared(f, 4, 1, opt);
    const auto vec = VectorizedDdsg::compile(src);
    const auto lhs = vec.quadrature();
    const auto rhs = src->cumulative_quadrature(2);
    CHECK(lhs[0] == Catch::Approx(rhs[0]).margin(1e-12));
}

TEST_CASE("vector-valued outputs evaluate componentwise") {
    Evaluator f = [](std::span<const double> x, std::span<double> out) {
        out[0] = x[0] + x[1];
        out[1] = std::exp(x[0] * x[1]);
        out[2] = 0.5;
    };
    AnchorPoint a = center_anchor(f, 2, 3);
    DdsgOptions opt;
    opt.k_max = 2;
    opt.max_level = 4;
    opt.mode = BoundaryMode::modified_linear;
    auto src = std::make_shared<const DdsgFunction>(decompose(f, 2, 3, a, opt));
    const auto vec = VectorizedDdsg::compile(src);
    for (const auto& p : oracle::uniform_points(2, 200, 61)) {
        const auto got = vec.evaluate(p);
        const auto want = src->evaluate_naive(p);
        for (int c = 0; c < 3; ++c) CHECK(got[c] == Catch::Approx(want[c]).margin(1e-12));
    }
}
