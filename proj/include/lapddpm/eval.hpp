#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lapddpm/graph.hpp"
#include "lapddpm/ingest.hpp"
#include "lapddpm/model.hpp"
#include "lapddpm/rng.hpp"
#include "lapddpm/train.hpp"

namespace lapddpm::eval {

struct PerLabelMetric {
    double mmd = 0;
    double wd = 0;
    std::int64_t n_real = 0;
    std::int64_t n_gen = 0;
    bool missing_in_real = false;
    bool missing_in_generated = false;
};

struct MetricReport {
    double mmd = 0;
    double wd = 0;
    std::map<std::string, PerLabelMetric> per_label;
    std::int64_t n_real = 0;
    std::int64_t n_gen = 0;
    int pcs = 0;
    std::vector<std::uint64_t> seeds;
};

struct EvalOptions {
    int pcs = 30;
    bool per_label = false;
    double gamma = 0.0;       // <= 0 selects the median heuristic
    int max_support = 1000;   // Wasserstein subsample cap
    std::uint64_t seed = 0;   // subsample seed
};

// RBF-kernel MMD (biased V-statistic, square-rooted). gamma <= 0 selects the
// median pairwise distance over the pooled sample as the bandwidth.
double rbf_mmd(const Mat& x, const Mat& y, double gamma = 0.0);

// Exact 2-Wasserstein on subsamples: both sets reduced to
// min(n, m, max_support) points, optimal assignment under squared Euclidean
// cost, square root of the mean matched cost.
double wasserstein2(const Mat& x, const Mat& y, int max_support = 1000, std::uint64_t seed = 0);

// Exact solution of the square assignment problem; returns the minimal total
// cost and the column assigned to each row.
double solve_assignment(const Mat& cost, std::vector<int>& row_to_col);

// The full protocol: shared normalization (median target from the real
// rows), PCA fit on real only, metrics overall or per shared label.
MetricReport evaluation_protocol(const ingest::CountMatrix& real_test,
                                 const ingest::CountMatrix& generated, const EvalOptions& opts);

struct AttackSpec {
    enum class Kind { random, dice };
    Kind kind = Kind::random;
    double fraction = 0.1;
    std::uint64_t seed = 0;
};

// Removes fraction*|E|/2 undirected edges uniformly and inserts the same
// number of uniformly random non-edges.
graph::CellGraph attack_random(const graph::CellGraph& g, double frac, Rng& rng);

// DICE: delete internally (same-label edges), connect externally
// (cross-label non-edges).
graph::CellGraph attack_dice(const graph::CellGraph& g, const std::vector<int>& labels,
                             double frac, Rng& rng);

struct RobustnessRow {
    std::string attack;
    double fraction = 0;
    std::string model;
    double mean_drift = 0;  // mean per-cell 2-norm change of mu
};

// Encodes the dataset through each checkpoint's encoder on clean and
// attacked graphs; reports the mean latent drift per (attack, model).
std::vector<RobustnessRow> robustness_report(const ingest::CountMatrix& data,
                                             const train::Checkpoint& ckpt_a,
                                             const train::Checkpoint& ckpt_b,
                                             const std::vector<AttackSpec>& attacks);

}  // namespace lapddpm::eval
