#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "ddsg/ddsg_eval.hpp"
#include "ddsg/hdmr.hpp"
#include "ddsg/serialize.hpp"
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

} // namespace

TEST_CASE("select_anchor approximates the mean") {
    auto sum2 = scalar([](std::span<const double> x) { return x[0] + x[1]; });
    const auto a = select_anchor(sum2, 2, 1, 4000, 42);
    CHECK(a.f_anchor[0] == Catch::Approx(1.0).margin(0.05));

    // constant function: every candidate ties, lowest sample index wins
    auto c = scalar([](std::span<const double>) { return 3.25; });
    const auto ac = select_anchor(c, 3, 1, 50, 7);
    CHECK(ac.f_anchor[0] == 3.25);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> first{unif(rng), unif(rng), unif(rng)};
    CHECK(ac.coords == first);

    // analytic mean oracle: E[x^2] = 1/3
    auto sq = scalar([](std::span<const double> x) { return x[0] * x[0]; });
    const auto asq = select_anchor(sq, 1, 1, 10000, 99);
    CHECK(std::abs(asq.f_anchor[0] - 1.0 / 3.0) < 0.02);
}

TEST_CASE("cut_evaluator fixes anchored coordinates") {
    auto f = scalar([](std::span<const double> x) { return x[0] * 10.0 + x[1] + 100.0 * x[2]; });
    AnchorPoint a;
    a.coords = {0.1, 0.2, 0.7};
    a.f_anchor = {0.0};

    auto cut01 = cut_evaluator(f, a, idx({0, 1}));
    std::vector<double> y{0.2, 0.9}, out(1);
    cut01(y, out);
    CHECK(out[0] == Catch::Approx(0.2 * 10.0 + 0.9 + 70.0).margin(1e-15));

    auto prod = scalar([](std::span<const double> x) { return x[0] * x[1] * x[2]; });
    AnchorPoint half;
    half.coords = {0.5, 0.5, 0.5};
    auto cut1 = cut_evaluator(prod, half, idx({1}));
    std::vector<double> y1{0.5};
    cut1(y1, out);
    CHECK(out[0] == Catch::Approx(0.125).margin(1e-15));

    // full-order cut reproduces f itself
    auto cutS = cut_evaluator(f, a, idx({0, 1, 2}));
    std::vector<double> y3{0.3, 0.4, 0.5};
    cutS(y3, out);
    std::vector<double> want(1);
    f(y3, want);
    CHECK(out[0] == want[0]);

    CHECK_THROWS_AS(cut_evaluator(f, a, ComponentIndex{}), std::invalid_argument);
}

TEST_CASE("expansion_rho basics") {
    CHECK(expansion_rho({2.0, 0.0}, {2.0, 0.0}) == 0.0);
    CHECK(expansion_rho({2.0, 2.0}, {2.0, 0.0}) == Catch::Approx(1.0));
    CHECK_THROWS_AS(expansion_rho({1.0}, {0.0}), rho_denominator_error);
}

TEST_CASE("eta coefficient: zero numerator and the centered blind spot") {
    CHECK(eta_coefficient({0.0}, {1.0}) == 0.0);
    CHECK(std::isinf(eta_coefficient({1.0}, {0.0}))); // zero denominator => accept

    // f = x0*x1 with the anchor at the center: the pair component function is
    // (x0-1/2)(x1-1/2), whose integral vanishes although the function is not
    // zero.  The criterion cannot see such centered interactions.
    auto f = scalar([](std::span<const double> x) { return x[0] * x[1]; });
    const auto anchor = center_anchor(f, 2, 1);
    DdsgOptions opt;
    opt.k_max = 2;
    opt.max_level = 5;
    opt.mode = BoundaryMode::modified_linear;
    ExpansionDiagnostics diag;
    decompose(f, 2, 1, anchor, opt, &diag);
    REQUIRE(diag.eta_by_order.size() == 2);
    REQUIRE(diag.eta_by_order[1].size() == 1);
    CHECK(diag.eta_by_order[1][0].eta < 1e-12);
}

TEST_CASE("eta matches a Monte Carlo integration oracle within 1%") {
    // f = exp(x0*x2) + x1; eta for the pair {0,2} against a brute-force MC
    // integration of the telescoped component functions (exact cuts).
    auto fn = [](const std::vector<double>& x) { return std::exp(x[0] * x[2]) + x[1]; };
    auto f = scalar([fn](std::span<const double> x) {
        return fn(std::vector<double>(x.begin(), x.end()));
    });
    const auto anchor = center_anchor(f, 3, 1);

    DdsgOptions opt;
    opt.k_max = 2;
    opt.max_level = 7;
    opt.mode = BoundaryMode::modified_linear;
    ExpansionDiagnostics diag;
    decompose(f, 3, 1, anchor, opt, &diag);
    double eta_02 = -1.0;
    for (const auto& rec : diag.eta_by_order[1])
        if (rec.index == idx({0, 2})) eta_02 = rec.eta;
    REQUIRE(eta_02 >= 0.0);

    const std::size_t n_mc = 1000000;
    auto cut = [&](std::vector<int> dims, const std::vector<double>& y) {
        std::vector<double> x(3, 0.5);
        for (std::size_t j = 0; j < dims.size(); ++j) x[static_cast<std::size_t>(dims[j])] = y[j];
        return fn(x);
    };
    const double f0 = cut({}, {});
    const double q0 = oracle::mc_integral(
        [&](const std::vector<double>& y) { return cut({0}, y) - f0; }, 1, n_mc, 11);
    const double q1 = oracle::mc_integral(
        [&](const std::vector<double>& y) { return cut({1}, y) - f0; }, 1, n_mc, 12);
    const double q2 = oracle::mc_integral(
        [&](const std::vector<double>& y) { return cut({2}, y) - f0; }, 1, n_mc, 13);
    const double q02 = oracle::mc_integral(
        [&](const std::vector<double>& y) {
            return cut({0, 2}, y) - cut({0}, {y[0]}) - cut({2}, {y[1]}) + f0;
        },
        2, n_mc, 14);
    const double eta_oracle = std::abs(q02) / std::abs(f0 + q0 + q1 + q2);
    CHECK(eta_02 == Catch::Approx(eta_oracle).epsilon(0.01));
}

TEST_CASE("decompose stops on rho for a separable function") {
    auto f = scalar([](std::span<const double> x) { return x[0] + x[1] + x[2]; });
    // anchor off the function mean, so the order-1 residual is visible and
    // the expansion only stops once the order-2 contribution proves empty
    AnchorPoint anchor;
    anchor.coords = {0.2, 0.8, 0.3};
    DdsgOptions opt;
    opt.k_max = 3;
    opt.eps_rho = 1e-4;
    opt.max_level = 4;
    opt.mode = BoundaryMode::modified_linear;
    ExpansionDiagnostics diag;
    const auto dd = decompose(f, 3, 1, anchor, opt, &diag);

    CHECK(dd.order_reached() == 2); // order 3 never built
    REQUIRE(diag.rho_by_order.size() == 2);
    CHECK(diag.rho_by_order[1] == Catch::Approx(0.0).margin(1e-13));
    CHECK(dd.accepted().count(idx({0})) == 1);
    CHECK(dd.accepted().count(idx({1})) == 1);
    CHECK(dd.accepted().count(idx({2})) == 1);
    CHECK(dd.accepted().count(idx({0, 1})) == 1); // kept, contributes nothing
    CHECK(dd.accepted().count(idx({0, 1, 2})) == 0);
    for (const auto& u : {idx({0, 1}), idx({0, 2}), idx({1, 2})}) {
        const auto q = dd.component_quadrature(u);
        CHECK(std::abs(q[0]) < 1e-13);
    }

    // linear functions are exact in modified mode: the decomposition and the
    // plain sparse grid are both tight; the decomposition may not be worse
    SgBuildOptions sgo;
    sgo.max_level = 4;
    sgo.mode = BoundaryMode::modified_linear;
    const auto sg = SparseGridFunction::build(f, 3, 1, sgo);
    double err_dd = 0.0, err_sg = 0.0;
    for (const auto& p : oracle::uniform_points(3, 1000, 5150)) {
        std::vector<double> want(1);
        f(p, want);
        err_dd = std::max(err_dd, std::abs(dd.evaluate_naive(p)[0] - want[0]));
        err_sg = std::max(err_sg, std::abs(sg.interpolate(p)[0] - want[0]));
    }
    CHECK(err_dd <= err_sg + 1e-12);
}

TEST_CASE("eta pruning removes supersets of rejected indices") {
    auto f = scalar([](std::span<const double> x) {
        return x[0] + x[1] + std::exp(x[0] * x[2]) + std::exp(x[1] * x[2]);
    });
    const auto anchor = center_anchor(f, 3, 1);
    DdsgOptions opt;
    opt.k_max = 3;
    opt.eps_eta = 1e-5;
    opt.max_level = 5;
    opt.mode = BoundaryMode::modified_linear;
    const auto dd = decompose(f, 3, 1, anchor, opt);

    // no {0,1} interaction: eta vanishes and the index lands in the reject set
    CHECK(dd.rejected().count(idx({0, 1})) == 1);
    CHECK(dd.accepted().count(idx({0, 2})) == 1);
    CHECK(dd.accepted().count(idx({1, 2})) == 1);
    // the full-order index is a superset of the rejected pair: never built
    CHECK(dd.accepted().count(idx({0, 1, 2})) == 0);
    CHECK(dd.rejected().count(idx({0, 1, 2})) == 0);

    // structural soundness: no accepted index is a superset of a rejected one,
    // and the accepted family is downward closed
    for (const auto& [u, grid] : dd.accepted()) {
        for (const auto& z : dd.rejected()) CHECK_FALSE(u.is_superset_of(z));
        for (const auto& v : all_subsets(u))
            if (!v.empty()) CHECK(dd.accepted().count(v) == 1);
    }
}

TEST_CASE("full expansion with zero thresholds equals the plain sparse grid") {
    auto f = scalar([](std::span<const double> x) {
        return std::exp(x[0]) * (1.0 + 0.5 * std::sin(3.0 * x[1])) + x[1] * x[2];
    });
    const int d = 3, L = 4;
    const auto anchor = center_anchor(f, d, 1);
    DdsgOptions opt;
    opt.k_max = d;
    opt.eps_rho = 0.0;
    opt.eps_eta = 0.0;
    opt.max_level = L;
    opt.mode = BoundaryMode::modified_linear;
    const auto dd = decompose(f, d, 1, anchor, opt);

    // telescoping collapses: b = 1 on the full index, 0 elsewhere
    for (const auto& [u, b] : dd.coeff_b()) {
        if (u.order() == static_cast<std::size_t>(d))
            CHECK(b == 1);
        else
            CHECK(b == 0);
    }

    SgBuildOptions sgo;
    sgo.max_level = L;
    sgo.mode = BoundaryMode::modified_linear;
    const auto sg = SparseGridFunction::build(f, d, 1, sgo);
    for (const auto& p : oracle::uniform_points(d, 200, 909)) {
        CHECK(dd.evaluate_naive(p)[0] == Catch::Approx(sg.interpolate(p)[0]).margin(1e-12));
    }
}

TEST_CASE("truncation exactness with exact cut evaluation") {
    // every term touches at most two variables, so the order-2 expansion with
    // exact cuts reproduces f pointwise
    auto f = scalar([](std::span<const double> x) {
        return x[0] * x[1] + std::sin(x[2]) * x[3] + x[4] * x[4] + 0.5 * x[1] * x[3];
    });
    const int d = 5;
    const auto anchor = center_anchor(f, d, 1);
    DdsgOptions opt;
    opt.k_max = 2;
    opt.max_level = 3;
    opt.mode = BoundaryMode::modified_linear;
    opt.exact_cuts = true;
    const auto dd = decompose(f, d, 1, anchor, opt);
    for (const auto& p : oracle::uniform_points(d, 1000, 31337)) {
        std::vector<double> want(1);
        f(p, want);
        CHECK(dd.evaluate_naive(p)[0] == Catch::Approx(want[0]).margin(1e-10));
    }
}

TEST_CASE("anchor invariance for separable functions at order 1") {
    auto f = scalar([](std::span<const double> x) {
        return std::exp(x[0]) + std::sin(2.0 * x[1]) + x[2] * x[2];
    });
    const int d = 3;
    DdsgOptions opt;
    opt.k_max = 1;
    opt.max_level = 3;
    opt.exact_cuts = true;
    AnchorPoint a1, a2;
    a1.coords = {0.2, 0.8, 0.5};
    a2.coords = {0.9, 0.1, 0.3};
    const auto d1 = decompose(f, d, 1, a1, opt);
    const auto d2 = decompose(f, d, 1, a2, opt);
    for (const auto& p : oracle::uniform_points(d, 300, 2718)) {
        CHECK(d1.evaluate_naive(p)[0] == Catch::Approx(d2.evaluate_naive(p)[0]).margin(1e-10));
    }
}

TEST_CASE("grid point count formula") {
    CHECK(ddsg_grid_count(4, 1, 3) == 29);
    CHECK(ddsg_grid_count(2, 2, 2) == 12);
    CHECK(ddsg_grid_count(5, 0, 4) == 1); // anchor only
    // enumeration oracle across the whole small regime
    for (int d = 1; d <= 6; ++d)
        for (int k = 1; k <= std::min(d, 3); ++k)
            for (int L = 1; L <= 5; ++L) {
                std::uint64_t want = 1;
                for (int kk = 1; kk <= k; ++kk) {
                    std::uint64_t binom = 1;
                    for (int i = 1; i <= kk; ++i)
                        binom = binom * static_cast<std::uint64_t>(d - kk + i) /
                                static_cast<std::uint64_t>(i);
                    want += binom * oracle::sg_node_count_bruteforce(kk, L);
                }
                CHECK(ddsg_grid_count(d, k, L) == want);
            }
    CHECK_THROWS_AS(ddsg_grid_count(300, 10, 10), std::overflow_error);
    CHECK_THROWS_AS(ddsg_grid_count(3, 4, 2), std::invalid_argument);
}

TEST_CASE("ddsg serialization round-trip") {
    auto f = scalar([](std::span<const double> x) { return std::exp(x[0] * x[1]) + x[1]; });
    const auto anchor = center_anchor(f, 2, 1);
    DdsgOptions opt;
    opt.k_max = 2;
    opt.max_level = 4;
    opt.eps_gamma = 1e-5;
    opt.mode = BoundaryMode::modified_linear;
    const auto dd = decompose(f, 2, 1, anchor, opt);
    const auto doc = to_json(dd);
    const auto dd2 = ddsg_from_json(nlohmann::json::parse(doc.dump()));
    REQUIRE(dd2.accepted().size() == dd.accepted().size());
    CHECK(dd2.coeff_b() == dd.coeff_b());
    for (const auto& p : oracle::uniform_points(2, 50, 40)) {
        CHECK(dd2.evaluate_naive(p)[0] == dd.evaluate_naive(p)[0]); // bit-exact
    }
}
