#include "lapddpm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include "lapddpm/config.hpp"

namespace lapddpm::eval {

namespace {

// Lexicographic comparison of matrix rows; ties by index keep sorts stable.
bool row_less(const Mat& m, Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if (m(a, c) < m(b, c)) return true;
        if (m(a, c) > m(b, c)) return false;
    }
    return false;
}

bool matrix_lex_less(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows()) return a.rows() < b.rows();
    if (a.cols() != b.cols()) return a.cols() < b.cols();
    for (Eigen::Index r = 0; r < a.rows(); ++r)
        for (Eigen::Index c = 0; c < a.cols(); ++c) {
            if (a(r, c) < b(r, c)) return true;
            if (a(r, c) > b(r, c)) return false;
        }
    return false;
}

// Rows reordered into a canonical (row-content) order so metric values do
// not depend on input row order.
Mat canonical_rows(const Mat& m) {
    std::vector<Eigen::Index> idx(m.rows());
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return row_less(m, a, b); });
    Mat out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(idx[i]);
    return out;
}

double median_pairwise_distance(const Mat& pooled) {
    const Eigen::Index n = pooled.rows();
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            d.push_back((pooled.row(i) - pooled.row(j)).norm());
    if (d.empty()) return 1.0;
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    double med = d[d.size() / 2];
    if (d.size() % 2 == 0) {
        double lo = *std::max_element(d.begin(), d.begin() + d.size() / 2);
        med = 0.5 * (lo + med);
    }
    return med > 0 ? med : 1.0;
}

double kernel_sum(const Mat& a, const Mat& b, double inv_two_gamma_sq) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j)
            s += std::exp(-(a.row(i) - b.row(j)).squaredNorm() * inv_two_gamma_sq);
    return s;
}

std::vector<Eigen::Index> subsample_indices(Eigen::Index n, Eigen::Index s, std::uint64_t seed) {
    std::vector<Eigen::Index> idx(n);
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    if (s >= n) return idx;
    Rng rng(mix_seed(seed, 0x73756273ULL));
    for (Eigen::Index i = 0; i < s; ++i) {
        const auto j =
            i + static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(n - i)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(s);
    return idx;
}

}  // namespace

double rbf_mmd(const Mat& x_in, const Mat& y_in, double gamma) {
    if (x_in.cols() != y_in.cols()) throw std::invalid_argument("rbf_mmd dimension mismatch");
    if (x_in.rows() < 1 || y_in.rows() < 1) throw std::invalid_argument("rbf_mmd needs samples");
    if (!x_in.allFinite() || !y_in.allFinite())
        throw std::invalid_argument("non-finite input to rbf_mmd");

    // Canonical row order, then canonical operand order: the computation is
    // identical under row shuffles and argument swaps, so the symmetry and
    // invariance properties hold bitwise.
    Mat x = canonical_rows(x_in);
    Mat y = canonical_rows(y_in);
    if (matrix_lex_less(y, x)) std::swap(x, y);

    if (gamma <= 0) {
        Mat pooled(x.rows() + y.rows(), x.cols());
        pooled << x, y;
        gamma = median_pairwise_distance(pooled);
    }
    const double inv = 1.0 / (2.0 * gamma * gamma);
    const double nx = static_cast<double>(x.rows());
    const double ny = static_cast<double>(y.rows());
    const double mmd_sq = kernel_sum(x, x, inv) / (nx * nx) + kernel_sum(y, y, inv) / (ny * ny) -
                          2.0 * kernel_sum(x, y, inv) / (nx * ny);
    return std::sqrt(std::max(0.0, mmd_sq));
}

double solve_assignment(const Mat& cost, std::vector<int>& row_to_col) {
    // Jonker-Volgenant style shortest augmenting path on a square matrix.
    const int n = static_cast<int>(cost.rows());
    if (cost.cols() != n) throw std::invalid_argument("assignment matrix must be square");
    constexpr double inf = std::numeric_limits<double>::infinity();

    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }

    row_to_col.assign(n, -1);
    double total = 0.0;
    for (int j = 1; j <= n; ++j)
        if (p[j]) {
            row_to_col[p[j] - 1] = j - 1;
            total += cost(p[j] - 1, j - 1);
        }
    return total;
}

double wasserstein2(const Mat& x_in, const Mat& y_in, int max_support, std::uint64_t seed) {
    if (x_in.cols() != y_in.cols()) throw std::invalid_argument("wasserstein2 dimension mismatch");
    if (x_in.rows() < 1 || y_in.rows() < 1)
        throw std::invalid_argument("wasserstein2 needs samples");

    Mat x = canonical_rows(x_in);
    Mat y = canonical_rows(y_in);
    if (matrix_lex_less(y, x)) std::swap(x, y);

    const Eigen::Index s =
        std::min<Eigen::Index>({x.rows(), y.rows(), static_cast<Eigen::Index>(max_support)});
    auto xi = subsample_indices(x.rows(), s, seed);
    auto yi = subsample_indices(y.rows(), s, seed);

    Mat cost(s, s);
    for (Eigen::Index i = 0; i < s; ++i)
        for (Eigen::Index j = 0; j < s; ++j)
            cost(i, j) = (x.row(xi[i]) - y.row(yi[j])).squaredNorm();

    std::vector<int> assign;
    const double total = solve_assignment(cost, assign);
    return std::sqrt(std::max(0.0, total / static_cast<double>(s)));
}

namespace {

// Rows sorted by (label string, count vector): metric results become a pure
// function of the data multiset, independent of input row order.
ingest::CountMatrix canonical_dataset(const ingest::CountMatrix& cm) {
    std::vector<Eigen::Index> idx(cm.n_cells());
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    auto counts_less = [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index c = 0; c < cm.counts.cols(); ++c) {
            if (cm.counts(a, c) < cm.counts(b, c)) return -1;
            if (cm.counts(a, c) > cm.counts(b, c)) return 1;
        }
        return 0;
    };
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
        const std::string& la = cm.label_vocab[cm.cell_labels[a]];
        const std::string& lb = cm.label_vocab[cm.cell_labels[b]];
        if (la != lb) return la < lb;
        return counts_less(a, b) < 0;
    });
    ingest::CountMatrix out;
    out.label_vocab = cm.label_vocab;
    out.gene_names = cm.gene_names;
    out.counts.resize(cm.counts.rows(), cm.counts.cols());
    for (Eigen::Index i = 0; i < cm.n_cells(); ++i) {
        out.counts.row(i) = cm.counts.row(idx[i]);
        out.cell_labels.push_back(cm.cell_labels[idx[i]]);
    }
    return out;
}

}  // namespace

MetricReport evaluation_protocol(const ingest::CountMatrix& real_in,
                                 const ingest::CountMatrix& generated_in,
                                 const EvalOptions& opts) {
    if (real_in.gene_names != generated_in.gene_names)
        throw std::invalid_argument("gene sets differ between real and generated data");
    if (opts.pcs < 1 ||
        opts.pcs > std::min<Eigen::Index>(real_in.n_cells() - 1, real_in.n_genes()))
        throw std::invalid_argument("pcs out of range for the real test set");

    const ingest::CountMatrix real_test = canonical_dataset(real_in);
    const ingest::CountMatrix generated = canonical_dataset(generated_in);

    // Shared normalization rule: per-cell scaling to the median total of the
    // real test cells, then ln(1+x), for both datasets.
    const double target = ingest::median_row_sum(real_test.counts);
    Mat real_ln = ingest::normalize_log(real_test.counts, target);
    Mat gen_ln = ingest::normalize_log(generated.counts, target);

    // PCA is a function of the real test data only.
    ingest::PcaModel pca = ingest::fit_pca(real_ln, opts.pcs);
    Mat rx = ingest::pca_project(pca, real_ln);
    Mat gx = ingest::pca_project(pca, gen_ln);

    MetricReport rep;
    rep.n_real = real_test.n_cells();
    rep.n_gen = generated.n_cells();
    rep.pcs = opts.pcs;

    if (!opts.per_label) {
        rep.mmd = rbf_mmd(rx, gx, opts.gamma);
        rep.wd = wasserstein2(rx, gx, opts.max_support, opts.seed);
        return rep;
    }

    std::set<std::string> all_labels(real_test.label_vocab.begin(), real_test.label_vocab.end());
    all_labels.insert(generated.label_vocab.begin(), generated.label_vocab.end());

    auto rows_for = [](const ingest::CountMatrix& cm, const std::string& label) {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < cm.n_cells(); ++i)
            if (cm.label_vocab[cm.cell_labels[i]] == label) rows.push_back(i);
        return rows;
    };
    auto take_rows = [](const Mat& m, const std::vector<Eigen::Index>& rows) {
        Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
        for (std::size_t i = 0; i < rows.size(); ++i)
            out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
        return out;
    };

    double mmd_sum = 0, wd_sum = 0;
    int shared = 0;
    for (const auto& label : all_labels) {
        PerLabelMetric pm;
        auto rr = rows_for(real_test, label);
        auto gr = rows_for(generated, label);
        pm.n_real = static_cast<std::int64_t>(rr.size());
        pm.n_gen = static_cast<std::int64_t>(gr.size());
        pm.missing_in_real = rr.empty();
        pm.missing_in_generated = gr.empty();
        if (!rr.empty() && !gr.empty()) {
            pm.mmd = rbf_mmd(take_rows(rx, rr), take_rows(gx, gr), opts.gamma);
            pm.wd = wasserstein2(take_rows(rx, rr), take_rows(gx, gr), opts.max_support, opts.seed);
            mmd_sum += pm.mmd;
            wd_sum += pm.wd;
            ++shared;
        }
        rep.per_label[label] = pm;
    }
    if (shared == 0) throw std::runtime_error("no label shared between real and generated data");
    rep.mmd = mmd_sum / shared;
    rep.wd = wd_sum / shared;
    return rep;
}

namespace {

struct UndirectedEdges {
    std::vector<std::pair<int, int>> pairs;  // i < j
    std::vector<double> weights;
    std::set<std::pair<int, int>> pair_set;
};

UndirectedEdges collect_undirected(const graph::CellGraph& g) {
    UndirectedEdges u;
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const auto& [s, d] = g.edges[e];
        if (s < d) {
            u.pairs.emplace_back(s, d);
            u.weights.push_back(g.weights[e]);
            u.pair_set.insert({s, d});
        }
    }
    return u;
}

graph::CellGraph rebuild(int n_nodes, const std::vector<std::pair<int, int>>& pairs,
                         const std::vector<double>& weights) {
    std::vector<std::pair<std::pair<int, int>, double>> directed;
    directed.reserve(pairs.size() * 2);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        directed.push_back({pairs[i], weights[i]});
        directed.push_back({{pairs[i].second, pairs[i].first}, weights[i]});
    }
    std::sort(directed.begin(), directed.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    graph::CellGraph out;
    out.n_nodes = n_nodes;
    for (const auto& [edge, w] : directed) {
        out.edges.push_back(edge);
        out.weights.push_back(w);
    }
    return out;
}

std::vector<std::size_t> pick_without_replacement(std::size_t n, std::size_t r, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t j = i + rng.uniform_index(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(r);
    return idx;
}

}  // namespace

graph::CellGraph attack_random(const graph::CellGraph& g, double frac, Rng& rng) {
    if (!(frac > 0 && frac < 1)) throw std::invalid_argument("fraction must lie in (0, 1)");
    UndirectedEdges u = collect_undirected(g);
    const std::size_t m = u.pairs.size();
    const auto r = static_cast<std::size_t>(std::llround(frac * static_cast<double>(m)));
    if (r == 0) return g;

    const std::size_t total_pairs =
        static_cast<std::size_t>(g.n_nodes) * (g.n_nodes - 1) / 2;
    if (total_pairs - m < r)
        throw std::runtime_error("graph too dense to insert " + std::to_string(r) + " edges");

    auto removed = pick_without_replacement(m, r, rng);
    std::set<std::size_t> removed_set(removed.begin(), removed.end());

    std::vector<std::pair<int, int>> pairs;
    std::vector<double> weights;
    for (std::size_t i = 0; i < m; ++i)
        if (!removed_set.count(i)) {
            pairs.push_back(u.pairs[i]);
            weights.push_back(u.weights[i]);
        }

    std::set<std::pair<int, int>> inserted;
    while (inserted.size() < r) {
        int a = static_cast<int>(rng.uniform_index(g.n_nodes));
        int b = static_cast<int>(rng.uniform_index(g.n_nodes));
        if (a == b) continue;
        if (a > b) std::swap(a, b);
        if (u.pair_set.count({a, b}) || inserted.count({a, b})) continue;
        inserted.insert({a, b});
    }
    for (const auto& e : inserted) {
        pairs.push_back(e);
        weights.push_back(1.0);
    }
    return rebuild(g.n_nodes, pairs, weights);
}

graph::CellGraph attack_dice(const graph::CellGraph& g, const std::vector<int>& labels,
                             double frac, Rng& rng) {
    if (!(frac > 0 && frac < 1)) throw std::invalid_argument("fraction must lie in (0, 1)");
    if (static_cast<int>(labels.size()) != g.n_nodes)
        throw std::invalid_argument("need one label per node");
    UndirectedEdges u = collect_undirected(g);
    const std::size_t m = u.pairs.size();

    std::vector<std::size_t> internal;  // same-label edge slots
    for (std::size_t i = 0; i < m; ++i)
        if (labels[u.pairs[i].first] == labels[u.pairs[i].second]) internal.push_back(i);

    const auto r_target = static_cast<std::size_t>(std::llround(frac * static_cast<double>(m)));
    const std::size_t r = std::min(r_target, internal.size());
    if (r == 0) return g;

    // Cross-label capacity check.
    std::map<int, std::size_t> label_counts;
    for (int l : labels) ++label_counts[l];
    std::size_t cross_pairs = 0;
    {
        std::size_t total = labels.size();
        for (const auto& [l, c] : label_counts) {
            cross_pairs += c * (total - c);
        }
        cross_pairs /= 2;
    }
    std::size_t existing_cross = 0;
    for (std::size_t i = 0; i < m; ++i)
        if (labels[u.pairs[i].first] != labels[u.pairs[i].second]) ++existing_cross;
    if (cross_pairs - existing_cross < r)
        throw std::runtime_error("no cross-label pair available for DICE insertion");

    auto picked = pick_without_replacement(internal.size(), r, rng);
    std::set<std::size_t> removed_set;
    for (auto k : picked) removed_set.insert(internal[k]);

    std::vector<std::pair<int, int>> pairs;
    std::vector<double> weights;
    for (std::size_t i = 0; i < m; ++i)
        if (!removed_set.count(i)) {
            pairs.push_back(u.pairs[i]);
            weights.push_back(u.weights[i]);
        }

    std::set<std::pair<int, int>> inserted;
    while (inserted.size() < r) {
        int a = static_cast<int>(rng.uniform_index(g.n_nodes));
        int b = static_cast<int>(rng.uniform_index(g.n_nodes));
        if (a == b || labels[a] == labels[b]) continue;
        if (a > b) std::swap(a, b);
        if (u.pair_set.count({a, b}) || inserted.count({a, b})) continue;
        inserted.insert({a, b});
    }
    for (const auto& e : inserted) {
        pairs.push_back(e);
        weights.push_back(1.0);
    }
    return rebuild(g.n_nodes, pairs, weights);
}

namespace {

std::string attack_name(AttackSpec::Kind k) {
    return k == AttackSpec::Kind::random ? "random" : "dice";
}

Mat encode_mu(const train::Checkpoint& ckpt, const graph::CellGraph& g, const Mat& lognorm,
              const model::ModelConfig& mcfg, bool lpe_disabled) {
    Mat lpe = lpe_disabled ? Mat::Zero(g.n_nodes, mcfg.k_pe)
                           : graph::compute_lpe_padded(g, mcfg.k_pe);
    Mat feats(lognorm.rows(), lognorm.cols() + lpe.cols());
    feats << lognorm, lpe;
    return model::encoder_forward(feats, g, g.weights, ckpt.params, mcfg).mu;
}

}  // namespace

std::vector<RobustnessRow> robustness_report(const ingest::CountMatrix& data,
                                             const train::Checkpoint& ckpt_a,
                                             const train::Checkpoint& ckpt_b,
                                             const std::vector<AttackSpec>& attacks) {
    std::vector<RobustnessRow> rows;
    const train::Checkpoint* ckpts[2] = {&ckpt_a, &ckpt_b};
    const char* names[2] = {"model_a", "model_b"};

    for (int mdl = 0; mdl < 2; ++mdl) {
        const train::Checkpoint& ckpt = *ckpts[mdl];
        config::RunConfig rc = config::config_from_json(ckpt.config_echo);

        if (data.gene_names != ckpt.gene_names)
            throw std::invalid_argument("dataset genes do not match the checkpoint");
        std::vector<Eigen::Index> kept;
        for (std::size_t j = 0; j < ckpt.gene_mask.size(); ++j)
            if (ckpt.gene_mask[j]) kept.push_back(static_cast<Eigen::Index>(j));
        ingest::CountsMat filtered(data.n_cells(), static_cast<Eigen::Index>(kept.size()));
        for (std::size_t c = 0; c < kept.size(); ++c)
            filtered.col(static_cast<Eigen::Index>(c)) = data.counts.col(kept[c]);

        Mat lognorm = ingest::normalize_log(filtered, ckpt.norm_target);
        Mat coords = ingest::pca_project(ckpt.pca, lognorm);
        const int k = std::min<int>(rc.preprocess.knn_k, static_cast<int>(data.n_cells()) - 1);
        graph::CellGraph g = graph::build_knn_graph(coords, k);

        model::ModelConfig mcfg = rc.model;
        mcfg.feature_dim = static_cast<int>(lognorm.cols());
        mcfg.label_count = static_cast<int>(ckpt.label_vocab.size());

        Mat mu_clean = encode_mu(ckpt, g, lognorm, mcfg, rc.train.disable_lpe);

        for (const auto& spec : attacks) {
            Rng rng(mix_seed(spec.seed, 0x61747463ULL));
            graph::CellGraph attacked;
            if (spec.fraction <= 0) {
                attacked = g;
            } else if (spec.kind == AttackSpec::Kind::random) {
                attacked = attack_random(g, spec.fraction, rng);
            } else {
                attacked = attack_dice(g, data.cell_labels, spec.fraction, rng);
            }
            Mat mu_att = encode_mu(ckpt, attacked, lognorm, mcfg, rc.train.disable_lpe);
            const double drift = (mu_att - mu_clean).rowwise().norm().mean();
            rows.push_back({attack_name(spec.kind), spec.fraction, names[mdl], drift});
        }
    }
    return rows;
}

}  // namespace lapddpm::eval
