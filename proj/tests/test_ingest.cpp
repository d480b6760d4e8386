#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lapddpm/ingest.hpp"
#include "lapddpm/io.hpp"
#include "lapddpm/rng.hpp"

namespace fs = std::filesystem;
using namespace lapddpm;
using ingest::CountMatrix;
using ingest::CountsMat;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("lapddpm_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

CountMatrix make_cm(const CountsMat& counts, std::vector<int> labels,
                    std::vector<std::string> vocab) {
    CountMatrix cm;
    cm.counts = counts;
    cm.cell_labels = std::move(labels);
    cm.label_vocab = std::move(vocab);
    for (Eigen::Index j = 0; j < counts.cols(); ++j) cm.gene_names.push_back("g" + std::to_string(j));
    return cm;
}

}  // namespace

TEST_CASE("load_dataset: dense CSV with labels") {
    auto dir = temp_dir("csv");
    io::write_file(dir / "counts.csv", "1,0\n3,2\n");
    io::write_file(dir / "labels.tsv", "A\nB\n");
    CountMatrix cm = ingest::load_dataset(dir);
    CHECK(cm.n_cells() == 2);
    CHECK(cm.n_genes() == 2);
    CHECK(cm.counts(0, 0) == 1);
    CHECK(cm.counts(0, 1) == 0);
    CHECK(cm.counts(1, 0) == 3);
    CHECK(cm.counts(1, 1) == 2);
    CHECK(cm.label_vocab == std::vector<std::string>{"A", "B"});
}

TEST_CASE("load_dataset: matrix market single entry") {
    auto dir = temp_dir("mtx1");
    io::write_file(dir / "matrix.mtx",
                   "%%MatrixMarket matrix coordinate integer general\n1 1 1\n1 1 5\n");
    io::write_file(dir / "labels.tsv", "x\n");
    CountMatrix cm = ingest::load_dataset(dir);
    CHECK(cm.counts(0, 0) == 5);
}

TEST_CASE("load_dataset: label count mismatch") {
    auto dir = temp_dir("badlabels");
    io::write_file(dir / "counts.csv", "1,0\n3,2\n");
    io::write_file(dir / "labels.tsv", "A\nB\nC\n");
    CHECK_THROWS_WITH_AS(ingest::load_dataset(dir), doctest::Contains("label count mismatch"),
                         std::runtime_error);
}

TEST_CASE("load_dataset: malformed matrix market header") {
    auto dir = temp_dir("badmtx");
    io::write_file(dir / "matrix.mtx", "%%NotMatrixMarket nope\n1 1 1\n1 1 5\n");
    io::write_file(dir / "labels.tsv", "x\n");
    CHECK_THROWS_AS(ingest::load_dataset(dir), std::runtime_error);
}

TEST_CASE("load_dataset: negative and non-integer entries rejected") {
    auto dir = temp_dir("neg");
    io::write_file(dir / "counts.csv", "1,-2\n3,2\n");
    io::write_file(dir / "labels.tsv", "A\nB\n");
    CHECK_THROWS_AS(ingest::load_dataset(dir), std::runtime_error);
    io::write_file(dir / "counts.csv", "1,0.5\n3,2\n");
    CHECK_THROWS_AS(ingest::load_dataset(dir), std::runtime_error);
}

TEST_CASE("load_dataset: zero-count cell rejected") {
    auto dir = temp_dir("zerocell");
    io::write_file(dir / "counts.csv", "0,0\n3,2\n");
    io::write_file(dir / "labels.tsv", "A\nB\n");
    CHECK_THROWS_WITH_AS(ingest::load_dataset(dir), doctest::Contains("zero total count"),
                         std::runtime_error);
}

TEST_CASE("save/load dataset round trip") {
    CountsMat counts(3, 2);
    counts << 1, 0, 2, 3, 0, 7;
    CountMatrix cm = make_cm(counts, {0, 1, 0}, {"a", "b"});
    auto dir = temp_dir("roundtrip");
    ingest::save_dataset(dir / "out", cm);
    CountMatrix back = ingest::load_dataset(dir / "out");
    CHECK(back.counts == cm.counts);
    CHECK(back.cell_labels == cm.cell_labels);
    CHECK(back.label_vocab == cm.label_vocab);
    CHECK(back.gene_names == cm.gene_names);
}

TEST_CASE("filter_genes: hand-computed nonzero columns") {
    CountsMat counts(2, 3);
    counts << 1, 0, 2, 0, 0, 3;
    CountMatrix cm = make_cm(counts, {0, 0}, {"x"});
    auto [filtered, mask] = ingest::filter_genes(cm, 2);
    CHECK(mask == std::vector<std::uint8_t>{0, 0, 1});
    CHECK(filtered.n_genes() == 1);
    CHECK(filtered.counts(0, 0) == 2);
    CHECK(filtered.counts(1, 0) == 3);
    CHECK(filtered.gene_names == std::vector<std::string>{"g2"});
}

TEST_CASE("filter_genes: zero column removed at min_cells=1; no-op otherwise") {
    CountsMat counts(2, 2);
    counts << 1, 0, 2, 0;
    CountMatrix cm = make_cm(counts, {0, 0}, {"x"});
    auto [filtered, mask] = ingest::filter_genes(cm, 1);
    CHECK(mask == std::vector<std::uint8_t>{1, 0});

    CountsMat dense(2, 2);
    dense << 1, 2, 3, 4;
    CountMatrix cm2 = make_cm(dense, {0, 0}, {"x"});
    auto [filtered2, mask2] = ingest::filter_genes(cm2, 1);
    CHECK(mask2 == std::vector<std::uint8_t>{1, 1});
    CHECK(filtered2.counts == dense);
}

TEST_CASE("filter_genes: empty gene set errors; idempotence") {
    CountsMat counts(2, 2);
    counts << 1, 0, 1, 0;
    CountMatrix cm = make_cm(counts, {0, 0}, {"x"});
    CHECK_THROWS_AS(ingest::filter_genes(cm, 3), std::invalid_argument);

    auto [f1, m1] = ingest::filter_genes(cm, 1);
    auto [f2, m2] = ingest::filter_genes(f1, 1);
    CHECK(f2.counts == f1.counts);
    CHECK(m2 == std::vector<std::uint8_t>(f1.n_genes(), 1));
}

TEST_CASE("normalize_log closed forms") {
    CountsMat counts(2, 2);
    counts << 2, 2, 0, 4;
    Mat out = ingest::normalize_log(counts, 4.0);
    CHECK(out(0, 0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(out(0, 1) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(out(1, 0) == 0.0);
    CHECK(out(1, 1) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("normalize_log median target") {
    CountsMat counts(2, 2);
    counts << 1, 1, 2, 4;  // row sums 2 and 6, median 4
    CHECK(ingest::median_row_sum(counts) == 4.0);
    Mat out = ingest::normalize_log(counts, 0);
    CHECK(out(0, 0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("normalize_log is invariant to uniform row scaling") {
    CountsMat counts(1, 3);
    counts << 2, 5, 3;
    CountsMat scaled = 7 * counts;
    Mat a = ingest::normalize_log(counts, 10.0);
    Mat b = ingest::normalize_log(scaled, 10.0);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fit_pca on rank-1 line captures all variance") {
    Mat x(5, 3);
    Vec dir(3);
    dir << 1, 2, -1;
    for (int i = 0; i < 5; ++i) x.row(i) = (i - 2.0) * dir.transpose();
    ingest::PcaModel m = ingest::fit_pca(x, 1);
    const double total_var =
        (x.rowwise() - x.colwise().mean()).squaredNorm() / (x.rows() - 1);
    CHECK(m.explained_variance(0) == doctest::Approx(total_var).epsilon(1e-10));
}

TEST_CASE("fit_pca loadings are orthonormal; variances non-increasing; variance sum matches") {
    Rng rng(4);
    Mat x(20, 6);
    for (int r = 0; r < 20; ++r)
        for (int c = 0; c < 6; ++c) x(r, c) = rng.normal() * (c + 1);
    ingest::PcaModel m = ingest::fit_pca(x, 6);
    Mat eye = m.loadings.transpose() * m.loadings;
    CHECK((eye - Mat::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-6);
    for (int c = 1; c < 6; ++c) CHECK(m.explained_variance(c) <= m.explained_variance(c - 1));
    const double total_var =
        (x.rowwise() - x.colwise().mean()).squaredNorm() / (x.rows() - 1);
    CHECK(m.explained_variance.sum() == doctest::Approx(total_var).epsilon(1e-8));
}

TEST_CASE("fit_pca rank-2 reconstruction oracle") {
    Rng rng(9);
    Mat basis(2, 4);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c) basis(r, c) = rng.normal();
    Mat coef(10, 2);
    for (int r = 0; r < 10; ++r)
        for (int c = 0; c < 2; ++c) coef(r, c) = rng.normal();
    Mat x = coef * basis;
    ingest::PcaModel m = ingest::fit_pca(x, 2);
    Mat centered = x.rowwise() - m.mean.transpose();
    Mat recon = ingest::pca_project(m, x) * m.loadings.transpose();
    CHECK((recon - centered).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("pca_project contracts") {
    Rng rng(2);
    Mat x(9, 4);
    for (int r = 0; r < 9; ++r)
        for (int c = 0; c < 4; ++c) x(r, c) = rng.normal();
    ingest::PcaModel m = ingest::fit_pca(x, 3);

    // Repeated mean projects to zero.
    Mat means = m.mean.transpose().replicate(3, 1);
    CHECK(ingest::pca_project(m, means).cwiseAbs().maxCoeff() < 1e-12);

    // Unit step along PC1.
    Mat step = (m.mean + m.loadings.col(0)).transpose();
    Mat s = ingest::pca_project(m, step);
    CHECK(s(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
    for (int c = 1; c < 3; ++c) CHECK(std::fabs(s(0, c)) < 1e-10);

    // Brute-force matmul oracle.
    Mat q(5, 4);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 4; ++c) q(r, c) = rng.normal();
    Mat direct = (q.rowwise() - m.mean.transpose()) * m.loadings;
    CHECK((ingest::pca_project(m, q) - direct).cwiseAbs().maxCoeff() < 1e-12);

    // Training-score variance equals explained variance.
    Mat scores = ingest::pca_project(m, x);
    for (int c = 0; c < 3; ++c) {
        const double v =
            (scores.col(c).array() - scores.col(c).mean()).square().sum() / (x.rows() - 1);
        CHECK(v == doctest::Approx(m.explained_variance(c)).epsilon(1e-6));
    }
}

TEST_CASE("processed cache round-trips bit-exactly") {
    Rng rng(6);
    CountsMat counts(12, 5);
    for (int r = 0; r < 12; ++r)
        for (int c = 0; c < 5; ++c) counts(r, c) = static_cast<std::int64_t>(rng.poisson(3.0)) + (c == 0 ? 1 : 0);
    CountMatrix cm = make_cm(counts, std::vector<int>(12, 0), {"only"});
    ingest::ProcessedDataset ds = ingest::preprocess(cm, 1, 0, 3);

    auto dir = temp_dir("cache");
    ingest::save_processed(dir / "cache.bin", ds);
    ingest::ProcessedDataset back = ingest::load_processed(dir / "cache.bin");
    ingest::save_processed(dir / "cache2.bin", back);
    CHECK(io::read_file(dir / "cache.bin") == io::read_file(dir / "cache2.bin"));
    CHECK(back.lognorm == ds.lognorm);
    CHECK(back.pca_scores == ds.pca_scores);
    CHECK(back.gene_mask == ds.gene_mask);
}
