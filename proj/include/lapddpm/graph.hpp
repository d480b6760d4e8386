#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "lapddpm/tensor.hpp"

namespace lapddpm::graph {

// Directed-symmetrized k-NN edge list with positive per-edge weights.
// Edges are kept in canonical order (src ascending, then dst) and always
// appear in both directions with equal weight.
struct CellGraph {
    int n_nodes = 0;
    std::vector<std::pair<int, int>> edges;
    std::vector<double> weights;

    std::size_t n_edges() const { return edges.size(); }
    // Indices into `edges` of the canonical (src < dst) representatives.
    std::vector<std::size_t> undirected_slots() const;
    // For each directed edge, the index of its reverse edge.
    std::vector<std::size_t> reverse_index() const;
    void validate() const;
};

struct LpeMatrix {
    Mat vectors;      // N x k_pe, orthonormal columns
    Vec eigenvalues;  // non-decreasing, in [0, 2]
};

// CSR view over a weighted graph for repeated matrix-free products.
struct AdjacencyView {
    int n = 0;
    std::vector<int> offsets;  // size n+1
    std::vector<int> nbr;      // dst per edge, grouped by src
    std::vector<double> w;     // weight per edge
    std::vector<double> deg;   // weighted degree per node

    // y = D^{-1/2} A D^{-1/2} x, column-wise for matrices.
    Vec norm_adj_apply(const Vec& x) const;
    Mat norm_adj_apply(const Mat& x) const;
    // y = A x (plain weighted adjacency).
    Vec adj_apply(const Vec& x) const;
};

AdjacencyView make_adjacency_view(const CellGraph& g, const std::vector<double>& weights);
inline AdjacencyView make_adjacency_view(const CellGraph& g) {
    return make_adjacency_view(g, g.weights);
}

// Each node gains directed edges to its k nearest Euclidean neighbors
// (ties toward the lower index); the union symmetrizes the result.
// All weights start at 1.0.
CellGraph build_knn_graph(const Mat& coords, int k);

// Weighted out-degrees. Errors on isolated nodes.
Vec degree_vector(const CellGraph& g);

// (I - D^{-1/2} A D^{-1/2}) x without materializing the matrix.
Vec normalized_laplacian_apply(const CellGraph& g, const Vec& x);

// Connected components via BFS; returns component id per node.
std::vector<int> connected_components(const CellGraph& g, int* n_components = nullptr);

// Eigenvectors of the k_pe smallest non-trivial eigenvalues of L_norm.
// One zero-eigenvalue direction per connected component is excluded.
// Sign convention: largest-magnitude entry positive. `dense_threshold`
// selects the dense solver for small graphs and Lanczos above it.
LpeMatrix compute_lpe(const CellGraph& g, int k_pe, int dense_threshold = 512);
LpeMatrix compute_lpe(const CellGraph& g, const std::vector<double>& weights, int k_pe,
                      int dense_threshold = 512);

// LPE truncated or zero-padded to exactly k_pe columns, so encoder input
// widths stay fixed on graphs with too few non-trivial directions.
Mat compute_lpe_padded(const CellGraph& g, int k_pe, int dense_threshold = 512);

// Edge-list TSV dump (src, dst, weight), canonical order.
void dump_edges_tsv(const CellGraph& g, const std::filesystem::path& file);

}  // namespace lapddpm::graph
