#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "lapddpm/eval.hpp"
#include "lapddpm/rng.hpp"

using namespace lapddpm;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double shift = 0.0) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal() + shift;
    return m;
}

// Brute-force 2-Wasserstein by enumerating all matchings (n <= 8).
double w2_bruteforce(const Mat& x, const Mat& y) {
    const int n = static_cast<int>(x.rows());
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0;
        for (int i = 0; i < n; ++i) total += (x.row(i) - y.row(perm[i])).squaredNorm();
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return std::sqrt(best / n);
}

graph::CellGraph random_graph(int n, int k, Rng& rng) {
    return graph::build_knn_graph(random_mat(n, 3, rng), k);
}

ingest::CountMatrix poisson_dataset(int n_per_label, int genes, const std::vector<double>& base,
                                    Rng& rng) {
    ingest::CountMatrix cm;
    cm.label_vocab = {"A", "B"};
    cm.counts.resize(2 * n_per_label, genes);
    for (int i = 0; i < 2 * n_per_label; ++i) {
        const int label = i < n_per_label ? 0 : 1;
        cm.cell_labels.push_back(label);
        for (int j = 0; j < genes; ++j) {
            const double rate = base[j] * (label == 0 ? 1.0 : 2.0);
            cm.counts(i, j) = static_cast<std::int64_t>(rng.poisson(rate));
        }
        if (cm.counts.row(i).sum() == 0) cm.counts(i, 0) = 1;
    }
    for (int j = 0; j < genes; ++j) cm.gene_names.push_back("g" + std::to_string(j));
    return cm;
}

}  // namespace

TEST_CASE("rbf_mmd: identical inputs give exactly zero") {
    Rng rng(1);
    Mat x = random_mat(20, 4, rng);
    CHECK(eval::rbf_mmd(x, x) == 0.0);
    CHECK(eval::rbf_mmd(x, x, 0.7) == 0.0);
}

TEST_CASE("rbf_mmd: singleton closed form") {
    Mat x(1, 2), y(1, 2);
    x << 0, 0;
    y << 3, 4;  // distance 5
    const double gamma = 2.0;
    const double expect = std::sqrt(2.0 - 2.0 * std::exp(-25.0 / (2.0 * gamma * gamma)));
    CHECK(eval::rbf_mmd(x, y, gamma) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("rbf_mmd: symmetric bitwise and monotone over mean shifts") {
    Rng rng(2);
    Mat x = random_mat(500, 1, rng);
    double last = -1.0;
    for (double delta : {0.0, 1.0, 2.0}) {
        Rng r2(3);
        Mat y = random_mat(500, 1, r2, delta);
        const double m = eval::rbf_mmd(x, y);
        CHECK(m >= 0.0);
        CHECK(m > last);
        last = m;
        CHECK(eval::rbf_mmd(x, y) == eval::rbf_mmd(y, x));
    }
}

TEST_CASE("rbf_mmd is invariant to row shuffles") {
    Rng rng(4);
    Mat x = random_mat(50, 3, rng);
    Mat y = random_mat(60, 3, rng, 0.5);
    Mat xs = x;
    // Rotate the rows.
    for (int i = 0; i < 50; ++i) xs.row(i) = x.row((i + 17) % 50);
    CHECK(eval::rbf_mmd(x, y) == eval::rbf_mmd(xs, y));
}

TEST_CASE("wasserstein2: identity and singleton forms") {
    Rng rng(5);
    Mat x = random_mat(12, 3, rng);
    CHECK(eval::wasserstein2(x, x) == 0.0);
    Mat a(1, 2), b(1, 2);
    a << 0, 0;
    b << 3, 4;
    CHECK(eval::wasserstein2(a, b) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("wasserstein2 equals the permutation brute force on small sets") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_index(7));
        const int p = 1 + static_cast<int>(rng.uniform_index(3));
        Mat x = random_mat(n, p, rng);
        Mat y = random_mat(n, p, rng, 0.3);
        CHECK(eval::wasserstein2(x, y) == doctest::Approx(w2_bruteforce(x, y)).epsilon(1e-9));
    }
}

TEST_CASE("wasserstein2 metric axioms on random triples") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 3 + static_cast<int>(rng.uniform_index(5));
        Mat x = random_mat(n, 2, rng);
        Mat y = random_mat(n, 2, rng, 0.4);
        Mat z = random_mat(n, 2, rng, -0.3);
        const double dxy = eval::wasserstein2(x, y);
        const double dyx = eval::wasserstein2(y, x);
        const double dxz = eval::wasserstein2(x, z);
        const double dzy = eval::wasserstein2(z, y);
        CHECK(dxy == dyx);
        CHECK(dxy <= dxz + dzy + 1e-9);
        CHECK(eval::wasserstein2(x, x) == 0.0);
    }
}

TEST_CASE("wasserstein2 subsampling is canonical under row shuffles") {
    Rng rng(8);
    Mat x = random_mat(40, 2, rng);
    Mat y = random_mat(50, 2, rng, 1.0);
    Mat xs = x;
    for (int i = 0; i < 40; ++i) xs.row(i) = x.row((i + 13) % 40);
    CHECK(eval::wasserstein2(x, y, 16, 5) == eval::wasserstein2(xs, y, 16, 5));
}

TEST_CASE("evaluation_protocol: self-comparison is near zero") {
    Rng rng(9);
    auto cm = poisson_dataset(30, 8, {1, 2, 3, 1, 2, 3, 1, 2}, rng);
    eval::EvalOptions opts;
    opts.pcs = 4;
    eval::MetricReport rep = eval::evaluation_protocol(cm, cm, opts);
    CHECK(rep.mmd < 1e-9);
    CHECK(rep.wd < 1e-9);
    CHECK(rep.n_real == 60);
    CHECK(rep.n_gen == 60);
}

TEST_CASE("evaluation_protocol: per-label mode averages shared labels and flags missing ones") {
    Rng rng(10);
    auto real = poisson_dataset(25, 6, {1, 2, 3, 4, 2, 1}, rng);
    eval::EvalOptions opts;
    opts.pcs = 3;
    opts.per_label = true;

    // Same data: per-label metrics near zero, average matches.
    eval::MetricReport rep = eval::evaluation_protocol(real, real, opts);
    REQUIRE(rep.per_label.size() == 2);
    CHECK(rep.per_label.at("A").mmd < 1e-9);
    CHECK(rep.per_label.at("B").mmd < 1e-9);
    CHECK(rep.mmd ==
          doctest::Approx(0.5 * (rep.per_label.at("A").mmd + rep.per_label.at("B").mmd)));

    // Remove label B from the generated set.
    ingest::CountMatrix gen_only_a;
    gen_only_a.label_vocab = {"A"};
    gen_only_a.gene_names = real.gene_names;
    gen_only_a.counts = real.counts.topRows(25);
    gen_only_a.cell_labels.assign(25, 0);
    eval::MetricReport rep2 = eval::evaluation_protocol(real, gen_only_a, opts);
    CHECK(rep2.per_label.at("B").missing_in_generated);
    CHECK(!rep2.per_label.at("B").missing_in_real);
    CHECK(rep2.mmd == doctest::Approx(rep2.per_label.at("A").mmd));
}

TEST_CASE("evaluation_protocol: gene mismatch and row-shuffle invariance") {
    Rng rng(11);
    auto real = poisson_dataset(20, 5, {1, 2, 3, 2, 1}, rng);
    auto gen = poisson_dataset(20, 5, {1, 2, 3, 2, 1}, rng);

    auto renamed = gen;
    renamed.gene_names[0] = "other";
    eval::EvalOptions opts;
    opts.pcs = 3;
    CHECK_THROWS_AS(eval::evaluation_protocol(real, renamed, opts), std::invalid_argument);

    eval::MetricReport a = eval::evaluation_protocol(real, gen, opts);
    auto shuffled = real;
    const Eigen::Index n = real.n_cells();
    for (Eigen::Index i = 0; i < n; ++i) {
        shuffled.counts.row(i) = real.counts.row((i + 7) % n);
        shuffled.cell_labels[i] = real.cell_labels[(i + 7) % n];
    }
    eval::MetricReport b = eval::evaluation_protocol(shuffled, gen, opts);
    CHECK(a.mmd == b.mmd);
    CHECK(a.wd == b.wd);
}

TEST_CASE("evaluation_protocol: PCA depends on the real side only") {
    Rng rng(12);
    auto real = poisson_dataset(20, 5, {1, 2, 3, 2, 1}, rng);
    auto gen1 = poisson_dataset(20, 5, {2, 2, 2, 2, 2}, rng);
    auto gen2 = poisson_dataset(20, 5, {5, 1, 4, 1, 5}, rng);

    // Internal check by construction: protocol fits PCA on real only, so its
    // projection of `real` must agree across generated inputs. We verify via
    // the self-metric: real-vs-real embedded alongside different generated
    // data keeps mmd(real, real) at zero.
    eval::EvalOptions opts;
    opts.pcs = 3;
    eval::MetricReport r1 = eval::evaluation_protocol(real, gen1, opts);
    eval::MetricReport r2 = eval::evaluation_protocol(real, gen2, opts);
    CHECK(r1.mmd != r2.mmd);  // generated side matters
    eval::MetricReport self1 = eval::evaluation_protocol(real, real, opts);
    CHECK(self1.mmd < 1e-9);
}

TEST_CASE("attack_random: edge count preserved, no self loops, deterministic") {
    Rng graph_rng(13);
    graph::CellGraph g = random_graph(20, 3, graph_rng);
    const std::size_t before = g.n_edges();

    Rng a1(4), a2(4);
    graph::CellGraph ga = eval::attack_random(g, 0.3, a1);
    graph::CellGraph gb = eval::attack_random(g, 0.3, a2);
    CHECK(ga.edges == gb.edges);
    CHECK(ga.n_edges() == before);
    ga.validate();

    // Tiny fraction rounds to zero edges.
    Rng a3(4);
    graph::CellGraph same = eval::attack_random(g, 1e-6, a3);
    CHECK(same.edges == g.edges);
}

TEST_CASE("attack_dice: deletions internal, insertions external") {
    Rng graph_rng(14);
    graph::CellGraph g = random_graph(24, 3, graph_rng);
    std::vector<int> labels(24);
    for (int i = 0; i < 24; ++i) labels[i] = i % 2;

    std::set<std::pair<int, int>> original(g.edges.begin(), g.edges.end());
    Rng arng(5);
    graph::CellGraph attacked = eval::attack_dice(g, labels, 0.25, arng);
    attacked.validate();
    CHECK(attacked.n_edges() == g.n_edges());

    std::set<std::pair<int, int>> now(attacked.edges.begin(), attacked.edges.end());
    for (const auto& e : now)
        if (!original.count(e)) CHECK(labels[e.first] != labels[e.second]);  // inserted: external
    for (const auto& e : original)
        if (!now.count(e)) CHECK(labels[e.first] == labels[e.second]);  // deleted: internal
}

TEST_CASE("attack_random: complete graph has no room to insert") {
    Rng rng(16);
    Mat coords = random_mat(5, 2, rng);
    graph::CellGraph g = graph::build_knn_graph(coords, 4);  // complete
    Rng arng(1);
    CHECK_THROWS_WITH_AS(eval::attack_random(g, 0.5, arng), doctest::Contains("too dense"),
                         std::runtime_error);
}

TEST_CASE("attack_dice: all-same-label graph cannot insert") {
    Rng graph_rng(15);
    graph::CellGraph g = random_graph(10, 2, graph_rng);
    std::vector<int> labels(10, 0);
    Rng arng(6);
    CHECK_THROWS_WITH_AS(eval::attack_dice(g, labels, 0.5, arng),
                         doctest::Contains("no cross-label pair"), std::runtime_error);
}
