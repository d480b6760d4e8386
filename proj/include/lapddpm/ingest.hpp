#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lapddpm/tensor.hpp"

namespace lapddpm::ingest {

using CountsMat = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

// N x D non-negative integer gene-expression counts with per-cell labels.
struct CountMatrix {
    CountsMat counts;
    std::vector<int> cell_labels;           // label ids, < label_vocab.size()
    std::vector<std::string> label_vocab;   // sorted unique label strings
    std::vector<std::string> gene_names;

    Eigen::Index n_cells() const { return counts.rows(); }
    Eigen::Index n_genes() const { return counts.cols(); }
    void validate() const;
};

struct PcaModel {
    Vec mean;                 // length D_f
    Mat loadings;             // D_f x P, orthonormal columns
    Vec explained_variance;   // length P, non-increasing
};

struct ProcessedDataset {
    CountMatrix filtered;                    // D_f genes
    Mat lognorm;                             // N x D_f
    Mat pca_scores;                          // N x P
    std::vector<std::uint8_t> gene_mask;     // length D, 1 = kept
    std::vector<std::string> all_gene_names; // length D (pre-filter)
    PcaModel pca;
    double norm_target = 0.0;                // resolved target sum used for lognorm
};

// Reads `matrix.mtx` + `labels.tsv` (+ optional `genes.tsv`) or
// `counts.csv` + `labels.tsv` from a directory. Cells with zero total count
// are rejected with an error.
CountMatrix load_dataset(const std::filesystem::path& dir);

// Writes a dataset in the same layout load_dataset reads (mtx + tsv files).
void save_dataset(const std::filesystem::path& dir, const CountMatrix& cm);

// Keeps gene j iff it is expressed (count > 0) in at least min_cells cells.
// Returns the filtered matrix and the length-D keep mask.
std::pair<CountMatrix, std::vector<std::uint8_t>> filter_genes(const CountMatrix& cm,
                                                               int min_cells);

// Scales each row to sum to target_sum, then applies ln(1+x) entrywise.
// target_sum <= 0 selects the median of the raw row sums.
Mat normalize_log(const CountsMat& counts, double target_sum);

// Median of per-cell total counts.
double median_row_sum(const CountsMat& counts);

// PCA of the column-centered matrix via symmetric eigendecomposition.
// Deterministic sign: each loading column has its largest-magnitude entry
// positive. explained_variance uses the (N-1) divisor.
PcaModel fit_pca(const Mat& x, int n_components);

// (X - mean) * loadings.
Mat pca_project(const PcaModel& model, const Mat& x);

// The full preprocessing pipeline: filter, normalize+log, fit+apply PCA.
ProcessedDataset preprocess(const CountMatrix& cm, int min_cells, double target_sum,
                            int n_components);

// Binary cache with bit-exact round-trip.
void save_processed(const std::filesystem::path& file, const ProcessedDataset& ds);
ProcessedDataset load_processed(const std::filesystem::path& file);

}  // namespace lapddpm::ingest
