#include "lapddpm/graph.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

#include "lapddpm/io.hpp"

namespace lapddpm::graph {

std::vector<std::size_t> CellGraph::undirected_slots() const {
    std::vector<std::size_t> slots;
    for (std::size_t e = 0; e < edges.size(); ++e)
        if (edges[e].first < edges[e].second) slots.push_back(e);
    return slots;
}

std::vector<std::size_t> CellGraph::reverse_index() const {
    std::map<std::pair<int, int>, std::size_t> pos;
    for (std::size_t e = 0; e < edges.size(); ++e) pos[edges[e]] = e;
    std::vector<std::size_t> rev(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
        auto it = pos.find({edges[e].second, edges[e].first});
        if (it == pos.end()) throw std::runtime_error("graph not symmetric");
        rev[e] = it->second;
    }
    return rev;
}

void CellGraph::validate() const {
    if (weights.size() != edges.size()) throw std::runtime_error("weights/edges misaligned");
    std::set<std::pair<int, int>> seen;
    for (std::size_t e = 0; e < edges.size(); ++e) {
        auto [s, d] = edges[e];
        if (s == d) throw std::runtime_error("self-loop at node " + std::to_string(s));
        if (s < 0 || s >= n_nodes || d < 0 || d >= n_nodes)
            throw std::runtime_error("edge endpoint out of range");
        if (!seen.insert({s, d}).second) throw std::runtime_error("duplicate edge");
        if (!(weights[e] > 0)) throw std::runtime_error("non-positive edge weight");
    }
    auto rev = reverse_index();
    for (std::size_t e = 0; e < edges.size(); ++e)
        if (weights[e] != weights[rev[e]]) throw std::runtime_error("asymmetric weights");
}

AdjacencyView make_adjacency_view(const CellGraph& g, const std::vector<double>& weights) {
    if (weights.size() != g.edges.size())
        throw std::invalid_argument("weight vector length mismatch");
    AdjacencyView v;
    v.n = g.n_nodes;
    v.offsets.assign(g.n_nodes + 1, 0);
    for (const auto& [s, d] : g.edges) ++v.offsets[s + 1];
    for (int i = 0; i < g.n_nodes; ++i) v.offsets[i + 1] += v.offsets[i];
    v.nbr.resize(g.edges.size());
    v.w.resize(g.edges.size());
    std::vector<int> cursor(v.offsets.begin(), v.offsets.end() - 1);
    // Edges are canonically sorted, so CSR rows stay sorted by dst.
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const int s = g.edges[e].first;
        v.nbr[cursor[s]] = g.edges[e].second;
        v.w[cursor[s]] = weights[e];
        ++cursor[s];
    }
    v.deg.assign(g.n_nodes, 0.0);
    for (int i = 0; i < g.n_nodes; ++i)
        for (int p = v.offsets[i]; p < v.offsets[i + 1]; ++p) v.deg[i] += v.w[p];
    for (int i = 0; i < g.n_nodes; ++i)
        if (!(v.deg[i] > 0)) throw std::runtime_error("isolated node " + std::to_string(i));
    return v;
}

Vec AdjacencyView::norm_adj_apply(const Vec& x) const {
    if (x.size() != n) throw std::invalid_argument("vector length mismatch");
    Vec y = Vec::Zero(n);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int p = offsets[i]; p < offsets[i + 1]; ++p)
            acc += w[p] / std::sqrt(deg[i] * deg[nbr[p]]) * x(nbr[p]);
        y(i) = acc;
    }
    return y;
}

Mat AdjacencyView::norm_adj_apply(const Mat& x) const {
    if (x.rows() != n) throw std::invalid_argument("row count mismatch");
    Mat y = Mat::Zero(x.rows(), x.cols());
    for (int i = 0; i < n; ++i) {
        for (int p = offsets[i]; p < offsets[i + 1]; ++p)
            y.row(i) += w[p] / std::sqrt(deg[i] * deg[nbr[p]]) * x.row(nbr[p]);
    }
    return y;
}

Vec AdjacencyView::adj_apply(const Vec& x) const {
    if (x.size() != n) throw std::invalid_argument("vector length mismatch");
    Vec y = Vec::Zero(n);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int p = offsets[i]; p < offsets[i + 1]; ++p) acc += w[p] * x(nbr[p]);
        y(i) = acc;
    }
    return y;
}

CellGraph build_knn_graph(const Mat& coords, int k) {
    const int n = static_cast<int>(coords.rows());
    if (n < 2) throw std::invalid_argument("need at least 2 nodes");
    if (k < 1 || k >= n) throw std::invalid_argument("k must satisfy 1 <= k < N");
    if (!coords.allFinite()) throw std::invalid_argument("non-finite coordinates");

    std::set<std::pair<int, int>> edge_set;
    std::vector<std::pair<double, int>> cand(n - 1);
    for (int i = 0; i < n; ++i) {
        int m = 0;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            cand[m++] = {(coords.row(i) - coords.row(j)).squaredNorm(), j};
        }
        // Ties broken toward the lower index via the pair ordering.
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (int t = 0; t < k; ++t) {
            const int j = cand[t].second;
            edge_set.insert({i, j});
            edge_set.insert({j, i});
        }
    }

    CellGraph g;
    g.n_nodes = n;
    g.edges.assign(edge_set.begin(), edge_set.end());
    g.weights.assign(g.edges.size(), 1.0);
    return g;
}

Vec degree_vector(const CellGraph& g) {
    Vec d = Vec::Zero(g.n_nodes);
    for (std::size_t e = 0; e < g.edges.size(); ++e) d(g.edges[e].first) += g.weights[e];
    for (int i = 0; i < g.n_nodes; ++i)
        if (!(d(i) > 0)) throw std::runtime_error("isolated node " + std::to_string(i));
    return d;
}

Vec normalized_laplacian_apply(const CellGraph& g, const Vec& x) {
    if (x.size() != g.n_nodes) throw std::invalid_argument("dimension mismatch");
    auto view = make_adjacency_view(g);
    return x - view.norm_adj_apply(x);
}

std::vector<int> connected_components(const CellGraph& g, int* n_components) {
    std::vector<std::vector<int>> adj(g.n_nodes);
    for (const auto& [s, d] : g.edges) adj[s].push_back(d);
    std::vector<int> comp(g.n_nodes, -1);
    int c = 0;
    for (int start = 0; start < g.n_nodes; ++start) {
        if (comp[start] >= 0) continue;
        std::queue<int> q;
        q.push(start);
        comp[start] = c;
        while (!q.empty()) {
            int u = q.front();
            q.pop();
            for (int v : adj[u])
                if (comp[v] < 0) {
                    comp[v] = c;
                    q.push(v);
                }
        }
        ++c;
    }
    if (n_components) *n_components = c;
    return comp;
}

namespace {

void fix_sign(Vec& v) {
    Eigen::Index argmax = 0;
    v.cwiseAbs().maxCoeff(&argmax);
    if (v(argmax) < 0) v = -v;
}

// Dense L_norm spectrum, ascending.
std::pair<Vec, Mat> dense_spectrum(const AdjacencyView& view) {
    const int n = view.n;
    Mat l = Mat::Identity(n, n);
    for (int i = 0; i < n; ++i)
        for (int p = view.offsets[i]; p < view.offsets[i + 1]; ++p)
            l(i, view.nbr[p]) -= view.w[p] / std::sqrt(view.deg[i] * view.deg[view.nbr[p]]);
    // Symmetrize against rounding before the solver.
    Mat ls = 0.5 * (l + l.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(ls);
    if (es.info() != Eigen::Success) throw std::runtime_error("dense eigensolver failed");
    return {es.eigenvalues(), es.eigenvectors()};
}

// Lanczos with full reorthogonalization on B = 2I - L_norm. The largest
// eigenvalues of B are the smallest of L_norm. Returns the `want` smallest
// eigenpairs of L_norm (ascending).
std::pair<Vec, Mat> lanczos_smallest(const AdjacencyView& view, int want, double tol,
                                     int max_iters) {
    const int n = view.n;
    auto apply_b = [&](const Vec& x) -> Vec {
        // B x = 2x - (x - P x) = x + P x, with P = D^{-1/2} A D^{-1/2}.
        return x + view.norm_adj_apply(x);
    };

    // Deterministic pseudo-random start vector.
    Vec v = Vec::Zero(n);
    std::uint64_t s = 0x5eed5eed5eed5eedULL;
    for (int i = 0; i < n; ++i) {
        std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        v(i) = static_cast<double>((z ^ (z >> 31)) >> 11) * 0x1.0p-53 - 0.5;
    }
    v.normalize();

    std::vector<Vec> basis;
    std::vector<double> alpha, beta;
    Vec prev = Vec::Zero(n);
    double beta_prev = 0.0;

    const int m_max = std::min(n, max_iters);
    Vec ritz_vals;
    Mat tri_vecs;
    int m = 0;
    bool settled = false;
    while (m < m_max) {
        basis.push_back(v);
        Vec w = apply_b(v);
        const double a = v.dot(w);
        alpha.push_back(a);
        w -= a * v + beta_prev * prev;
        // Full reorthogonalization, twice for stability.
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& b : basis) w -= b.dot(w) * b;
        const double nb = w.norm();
        ++m;

        const bool breakdown = nb < 1e-14;
        const bool enough = m >= std::min(n, 2 * want + 10);
        if (breakdown || enough || m == m_max || m == n) {
            // Ritz pairs from the tridiagonal matrix.
            Mat t = Mat::Zero(m, m);
            for (int i = 0; i < m; ++i) {
                t(i, i) = alpha[i];
                if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[i];
            }
            Eigen::SelfAdjointEigenSolver<Mat> es(t);
            ritz_vals = es.eigenvalues();
            tri_vecs = es.eigenvectors();
            if (breakdown || m == n) {
                // Invariant subspace reached: factorization is exact.
                settled = m >= want;
                break;
            }
            // Residual estimate |beta_m * s_last| for the top `want` pairs.
            bool converged = m >= want;
            for (int j = 0; converged && j < want; ++j) {
                const int col = m - 1 - j;
                if (nb * std::abs(tri_vecs(m - 1, col)) > tol) converged = false;
            }
            if (converged) {
                settled = true;
                break;
            }
            if (m == m_max) break;
        }
        beta.push_back(nb);
        beta_prev = nb;
        prev = basis.back();
        v = w / nb;
    }
    if (!settled)
        throw std::runtime_error("Lanczos did not converge within " + std::to_string(m_max) +
                                 " iterations");

    const int m_used = static_cast<int>(alpha.size());
    Vec lam(want);
    Mat vecs(n, want);
    for (int j = 0; j < want; ++j) {
        const int col = m_used - 1 - j;  // largest B eigenvalues first
        lam(j) = 2.0 - ritz_vals(col);   // back to L_norm
        Vec rv = Vec::Zero(n);
        for (int i = 0; i < m_used; ++i) rv += tri_vecs(i, col) * basis[i];
        rv.normalize();
        vecs.col(j) = rv;
    }
    // lam is ascending in L_norm terms already (largest B first).
    return {lam, vecs};
}

}  // namespace

LpeMatrix compute_lpe(const CellGraph& g, int k_pe, int dense_threshold) {
    return compute_lpe(g, g.weights, k_pe, dense_threshold);
}

LpeMatrix compute_lpe(const CellGraph& g, const std::vector<double>& weights, int k_pe,
                      int dense_threshold) {
    if (k_pe < 1) throw std::invalid_argument("k_pe must be positive");
    int n_comp = 0;
    connected_components(g, &n_comp);
    const int n = g.n_nodes;
    if (n_comp > 1) {
        static std::atomic<int> warn_count{0};
        const int seen = warn_count.fetch_add(1);
        if (seen < 3)
            std::cerr << "warning: LPE on a disconnected graph (" << n_comp
                      << " components); excluding one zero-direction per component\n";
        else if (seen == 3)
            std::cerr << "warning: further disconnected-graph LPE warnings suppressed\n";
    }
    if (k_pe > n - n_comp)
        throw std::invalid_argument("k_pe too large: only " + std::to_string(n - n_comp) +
                                    " non-trivial directions available");

    auto view = make_adjacency_view(g, weights);
    const int want = k_pe + n_comp;

    Vec vals;
    Mat vecs;
    if (n <= dense_threshold) {
        auto [all_vals, all_vecs] = dense_spectrum(view);
        vals = all_vals.head(want);
        vecs = all_vecs.leftCols(want);
    } else {
        auto [l_vals, l_vecs] = lanczos_smallest(view, want, 1e-8, 5000);
        vals = l_vals;
        vecs = l_vecs;
    }

    LpeMatrix lpe;
    lpe.vectors.resize(n, k_pe);
    lpe.eigenvalues.resize(k_pe);
    for (int j = 0; j < k_pe; ++j) {
        Vec v = vecs.col(n_comp + j);
        fix_sign(v);
        lpe.vectors.col(j) = v;
        lpe.eigenvalues(j) = std::max(0.0, vals(n_comp + j));
    }
    return lpe;
}

Mat compute_lpe_padded(const CellGraph& g, int k_pe, int dense_threshold) {
    Mat out = Mat::Zero(g.n_nodes, k_pe);
    int n_comp = 0;
    connected_components(g, &n_comp);
    const int avail = std::min(k_pe, g.n_nodes - n_comp);
    if (avail < 1) return out;
    LpeMatrix lpe = compute_lpe(g, avail, dense_threshold);
    out.leftCols(avail) = lpe.vectors;
    return out;
}

void dump_edges_tsv(const CellGraph& g, const std::filesystem::path& file) {
    std::ostringstream os;
    for (std::size_t e = 0; e < g.edges.size(); ++e)
        os << g.edges[e].first << '\t' << g.edges[e].second << '\t' << g.weights[e] << '\n';
    io::write_file(file, os.str());
}

}  // namespace lapddpm::graph
