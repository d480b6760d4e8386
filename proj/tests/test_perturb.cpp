#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "lapddpm/perturb.hpp"
#include "lapddpm/rng.hpp"

using namespace lapddpm;
using graph::CellGraph;
using perturb::PerturbConfig;

namespace {

CellGraph from_pairs(int n, const std::vector<std::pair<int, int>>& und, double w = 1.0) {
    std::vector<std::pair<int, int>> directed;
    for (auto [a, b] : und) {
        directed.push_back({a, b});
        directed.push_back({b, a});
    }
    std::sort(directed.begin(), directed.end());
    CellGraph g;
    g.n_nodes = n;
    g.edges = directed;
    g.weights.assign(directed.size(), w);
    return g;
}

Mat dense_weighted_adj(const CellGraph& g, const std::vector<double>& w) {
    Mat a = Mat::Zero(g.n_nodes, g.n_nodes);
    for (std::size_t e = 0; e < g.edges.size(); ++e)
        a(g.edges[e].first, g.edges[e].second) = w[e];
    return a;
}

CellGraph random_connected_graph(int n, Rng& rng) {
    std::vector<std::pair<int, int>> und;
    for (int i = 1; i < n; ++i)
        und.push_back({static_cast<int>(rng.uniform_index(i)), i});  // random spanning tree
    for (int extra = 0; extra < n; ++extra) {
        int a = static_cast<int>(rng.uniform_index(n));
        int b = static_cast<int>(rng.uniform_index(n));
        if (a == b) continue;
        if (a > b) std::swap(a, b);
        if (std::find(und.begin(), und.end(), std::make_pair(a, b)) == und.end())
            und.push_back({a, b});
    }
    return from_pairs(n, und);
}

}  // namespace

TEST_CASE("init_weights: degenerate interval, range, determinism, symmetry") {
    Rng rng(5);
    CellGraph g = from_pairs(4, {{0, 1}, {1, 2}, {2, 3}, {0, 3}});

    PerturbConfig degenerate;
    degenerate.alpha_min = degenerate.alpha_max = 1.0;
    auto w = perturb::init_weights(g, degenerate, rng);
    CHECK(w == std::vector<double>(g.n_edges(), 1.0));

    PerturbConfig cfg;
    cfg.alpha_min = 0.4;
    cfg.alpha_max = 0.9;
    Rng r1(7), r2(7);
    auto w1 = perturb::init_weights(g, cfg, r1);
    auto w2 = perturb::init_weights(g, cfg, r2);
    CHECK(w1 == w2);
    for (double x : w1) {
        CHECK(x >= 0.4);
        CHECK(x <= 0.9);
    }
    auto rev = g.reverse_index();
    for (std::size_t e = 0; e < g.n_edges(); ++e) CHECK(w1[e] == w1[rev[e]]);
}

TEST_CASE("principal_eigenvector: K2 closed form") {
    CellGraph g = from_pairs(2, {{0, 1}}, 0.7);
    auto [v, lambda] = perturb::principal_eigenvector(g, g.weights, 100, 1e-12);
    CHECK(lambda == doctest::Approx(0.7).epsilon(1e-10));
    CHECK(v(0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-10));
    CHECK(v(1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-10));
}

TEST_CASE("principal_eigenvector: star graph oracle") {
    CellGraph g = from_pairs(4, {{0, 1}, {0, 2}, {0, 3}});
    auto [v, lambda] = perturb::principal_eigenvector(g, g.weights, 500, 1e-13);
    CHECK(lambda == doctest::Approx(std::sqrt(3.0)).epsilon(1e-9));

    Eigen::SelfAdjointEigenSolver<Mat> es(dense_weighted_adj(g, g.weights));
    Vec dense_v = es.eigenvectors().col(3);
    CHECK(std::fabs(dense_v.dot(v)) == doctest::Approx(1.0).epsilon(1e-9));
    // v proportional to (sqrt(3), 1, 1, 1).
    CHECK(v(0) / v(1) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-8));
}

TEST_CASE("principal_eigenvector: mass concentrates on the heavier component") {
    CellGraph g = from_pairs(4, {{0, 1}, {2, 3}});
    std::vector<double> w(g.n_edges());
    for (std::size_t e = 0; e < g.n_edges(); ++e)
        w[e] = g.edges[e].first <= 1 && g.edges[e].second <= 1 ? 2.0 : 1.0;
    auto [v, lambda] = perturb::principal_eigenvector(g, w, 2000, 1e-14);
    CHECK(lambda == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(std::fabs(v(0)) > 0.7);
    CHECK(std::fabs(v(2)) < 1e-3);
}

TEST_CASE("adversarial_perturb: epsilon 0 is the identity inside the clip range") {
    CellGraph g = from_pairs(3, {{0, 1}, {1, 2}});
    PerturbConfig cfg;
    cfg.epsilon = 0.0;
    auto out = perturb::adversarial_perturb(g, g.weights, cfg);
    CHECK(out == g.weights);
}

TEST_CASE("adversarial_perturb: K2 one-step hand computation") {
    CellGraph g = from_pairs(2, {{0, 1}});
    PerturbConfig cfg;
    cfg.epsilon = 0.5;
    cfg.ip = 1;
    auto out = perturb::adversarial_perturb(g, g.weights, cfg);
    CHECK(out[0] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("adversarial_perturb: bounds, symmetry, determinism") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        CellGraph g = random_connected_graph(10 + static_cast<int>(rng.uniform_index(10)), rng);
        PerturbConfig cfg;
        cfg.epsilon = 50.0;  // force clipping at the top
        cfg.ip = 2;
        Rng r1(trial), r2(trial);
        auto w0a = perturb::init_weights(g, cfg, r1);
        auto w0b = perturb::init_weights(g, cfg, r2);
        auto wa = perturb::adversarial_perturb(g, w0a, cfg);
        auto wb = perturb::adversarial_perturb(g, w0b, cfg);
        CHECK(wa == wb);
        auto rev = g.reverse_index();
        for (std::size_t e = 0; e < g.n_edges(); ++e) {
            CHECK(wa[e] >= cfg.clip_lo);
            CHECK(wa[e] <= cfg.clip_hi);
            CHECK(wa[e] == wa[rev[e]]);
        }
    }
}

TEST_CASE("adversarial_perturb: Rayleigh quotient non-decreasing per step") {
    Rng rng(29);
    for (int trial = 0; trial < 10; ++trial) {
        CellGraph g = random_connected_graph(8 + static_cast<int>(rng.uniform_index(24)), rng);
        PerturbConfig cfg;
        cfg.epsilon = 0.3;
        cfg.ip = 1;

        auto [v0, r0] = perturb::principal_eigenvector(g, g.weights, 20000, 1e-14);
        auto w1 = perturb::adversarial_perturb(g, g.weights, cfg);
        auto [v1, r1] = perturb::principal_eigenvector(g, w1, 20000, 1e-14);
        CHECK(r1 >= r0 - 1e-10);
    }
}

TEST_CASE("perturb call counter tracks invocations") {
    perturb::reset_call_count();
    CellGraph g = from_pairs(2, {{0, 1}});
    PerturbConfig cfg;
    perturb::adversarial_perturb(g, g.weights, cfg);
    perturb::adversarial_perturb(g, g.weights, cfg);
    CHECK(perturb::call_count() == 2);
}

TEST_CASE("config invariants are enforced") {
    PerturbConfig cfg;
    cfg.alpha_min = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = PerturbConfig{};
    cfg.clip_lo = 11.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
