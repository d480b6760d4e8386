#include "lapddpm/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "lapddpm/io.hpp"

namespace fs = std::filesystem;

namespace lapddpm::ingest {

namespace {

std::vector<std::string> split(const std::string& s, char delim) {
    std::vector<std::string> out;
    std::string tok;
    std::istringstream is(s);
    while (std::getline(is, tok, delim)) out.push_back(tok);
    if (!s.empty() && s.back() == delim) out.push_back("");
    return out;
}

bool parse_i64(const std::string& s, std::int64_t& out) {
    if (s.empty()) return false;
    std::size_t pos = 0;
    try {
        out = std::stoll(s, &pos);
    } catch (...) {
        return false;
    }
    return pos == s.size();
}

CountsMat load_mtx(const fs::path& file) {
    std::ifstream f(file);
    if (!f) throw std::runtime_error("cannot open: " + file.string());
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("empty Matrix Market file: " + file.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream hs(line);
    std::string banner, object, format, field, symmetry;
    hs >> banner >> object >> format >> field >> symmetry;
    if (banner != "%%MatrixMarket" || object != "matrix" || format != "coordinate")
        throw std::runtime_error("malformed Matrix Market header in " + file.string());
    if (field != "integer")
        throw std::runtime_error("Matrix Market field must be integer, got '" + field + "'");
    if (symmetry != "general")
        throw std::runtime_error("Matrix Market symmetry must be general, got '" + symmetry + "'");

    // Skip comments, read the size line.
    std::int64_t n = -1, d = -1, nnz = -1;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '%') continue;
        std::istringstream ls(line);
        if (!(ls >> n >> d >> nnz)) throw std::runtime_error("malformed size line in " + file.string());
        break;
    }
    if (n < 0 || d < 0 || nnz < 0) throw std::runtime_error("missing size line in " + file.string());

    CountsMat counts = CountsMat::Zero(n, d);
    std::int64_t seen = 0;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '%') continue;
        std::istringstream ls(line);
        std::int64_t i, j, v;
        if (!(ls >> i >> j >> v)) throw std::runtime_error("malformed entry line in " + file.string());
        std::string extra;
        if (ls >> extra) throw std::runtime_error("trailing tokens on entry line in " + file.string());
        if (i < 1 || i > n || j < 1 || j > d)
            throw std::runtime_error("entry index out of range in " + file.string());
        if (v < 0) throw std::runtime_error("negative count in " + file.string());
        counts(i - 1, j - 1) += v;
        ++seen;
    }
    if (seen != nnz)
        throw std::runtime_error("entry count mismatch in " + file.string() + ": header says " +
                                 std::to_string(nnz) + ", found " + std::to_string(seen));
    return counts;
}

std::pair<CountsMat, std::vector<std::string>> load_csv(const fs::path& file) {
    auto lines = io::read_lines(file);
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty()) throw std::runtime_error("empty CSV: " + file.string());

    std::vector<std::string> gene_names;
    std::size_t first_row = 0;
    {
        // A header row is one whose tokens are not all integers.
        auto toks = split(lines[0], ',');
        bool all_int = true;
        std::int64_t tmp;
        for (const auto& t : toks)
            if (!parse_i64(t, tmp)) {
                all_int = false;
                break;
            }
        if (!all_int) {
            gene_names = toks;
            first_row = 1;
        }
    }
    if (first_row >= lines.size()) throw std::runtime_error("CSV has a header but no rows: " + file.string());

    const std::size_t n = lines.size() - first_row;
    const auto first_toks = split(lines[first_row], ',');
    const std::size_t d = first_toks.size();
    if (!gene_names.empty() && gene_names.size() != d)
        throw std::runtime_error("CSV header width mismatch in " + file.string());

    CountsMat counts(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t r = 0; r < n; ++r) {
        auto toks = split(lines[first_row + r], ',');
        if (toks.size() != d)
            throw std::runtime_error("ragged CSV row " + std::to_string(r) + " in " + file.string());
        for (std::size_t c = 0; c < d; ++c) {
            std::int64_t v;
            if (!parse_i64(toks[c], v))
                throw std::runtime_error("non-integer entry '" + toks[c] + "' in " + file.string());
            if (v < 0) throw std::runtime_error("negative count in " + file.string());
            counts(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
        }
    }
    return {counts, gene_names};
}

}  // namespace

void CountMatrix::validate() const {
    if (static_cast<Eigen::Index>(cell_labels.size()) != counts.rows())
        throw std::runtime_error("label count mismatch: " + std::to_string(cell_labels.size()) +
                                 " labels for " + std::to_string(counts.rows()) + " cells");
    for (int id : cell_labels)
        if (id < 0 || id >= static_cast<int>(label_vocab.size()))
            throw std::runtime_error("label id out of range");
    if (static_cast<Eigen::Index>(gene_names.size()) != counts.cols())
        throw std::runtime_error("gene name count mismatch");
    std::set<std::string> uniq(gene_names.begin(), gene_names.end());
    if (uniq.size() != gene_names.size()) throw std::runtime_error("duplicate gene names");
    if ((counts.array() < 0).any()) throw std::runtime_error("negative counts");
}

CountMatrix load_dataset(const fs::path& dir) {
    const fs::path mtx = dir / "matrix.mtx";
    const fs::path csv = dir / "counts.csv";
    const fs::path labels_file = dir / "labels.tsv";
    if (!fs::exists(labels_file))
        throw std::runtime_error("missing file: " + labels_file.string());

    CountMatrix cm;
    if (fs::exists(mtx)) {
        cm.counts = load_mtx(mtx);
        const fs::path genes_file = dir / "genes.tsv";
        if (fs::exists(genes_file)) {
            cm.gene_names = io::read_lines(genes_file);
            while (!cm.gene_names.empty() && cm.gene_names.back().empty()) cm.gene_names.pop_back();
        }
    } else if (fs::exists(csv)) {
        auto [counts, names] = load_csv(csv);
        cm.counts = counts;
        cm.gene_names = names;
    } else {
        throw std::runtime_error("missing file: " + mtx.string() + " (or counts.csv)");
    }

    if (cm.gene_names.empty()) {
        for (Eigen::Index j = 0; j < cm.counts.cols(); ++j)
            cm.gene_names.push_back("g" + std::to_string(j));
    }
    if (static_cast<Eigen::Index>(cm.gene_names.size()) != cm.counts.cols())
        throw std::runtime_error("gene name count mismatch: " + std::to_string(cm.gene_names.size()) +
                                 " names for " + std::to_string(cm.counts.cols()) + " genes");

    auto label_lines = io::read_lines(labels_file);
    while (!label_lines.empty() && label_lines.back().empty()) label_lines.pop_back();
    if (static_cast<Eigen::Index>(label_lines.size()) != cm.counts.rows())
        throw std::runtime_error("label count mismatch: " + std::to_string(label_lines.size()) +
                                 " labels for " + std::to_string(cm.counts.rows()) + " cells");

    std::set<std::string> uniq(label_lines.begin(), label_lines.end());
    cm.label_vocab.assign(uniq.begin(), uniq.end());
    std::map<std::string, int> to_id;
    for (std::size_t i = 0; i < cm.label_vocab.size(); ++i) to_id[cm.label_vocab[i]] = static_cast<int>(i);
    for (const auto& l : label_lines) cm.cell_labels.push_back(to_id[l]);

    for (Eigen::Index i = 0; i < cm.counts.rows(); ++i)
        if (cm.counts.row(i).sum() == 0)
            throw std::runtime_error("cell " + std::to_string(i) + " has zero total count");

    cm.validate();
    return cm;
}

void save_dataset(const fs::path& dir, const CountMatrix& cm) {
    fs::create_directories(dir);
    std::ostringstream os;
    os << "%%MatrixMarket matrix coordinate integer general\n";
    std::int64_t nnz = 0;
    for (Eigen::Index i = 0; i < cm.counts.rows(); ++i)
        for (Eigen::Index j = 0; j < cm.counts.cols(); ++j)
            if (cm.counts(i, j) != 0) ++nnz;
    os << cm.counts.rows() << ' ' << cm.counts.cols() << ' ' << nnz << '\n';
    for (Eigen::Index i = 0; i < cm.counts.rows(); ++i)
        for (Eigen::Index j = 0; j < cm.counts.cols(); ++j)
            if (cm.counts(i, j) != 0)
                os << (i + 1) << ' ' << (j + 1) << ' ' << cm.counts(i, j) << '\n';
    io::write_file(dir / "matrix.mtx", os.str());

    std::vector<std::string> labels;
    for (int id : cm.cell_labels) labels.push_back(cm.label_vocab[id]);
    io::write_lines(dir / "labels.tsv", labels);
    io::write_lines(dir / "genes.tsv", cm.gene_names);
}

std::pair<CountMatrix, std::vector<std::uint8_t>> filter_genes(const CountMatrix& cm,
                                                               int min_cells) {
    if (min_cells < 1) throw std::invalid_argument("min_cells must be >= 1");
    const Eigen::Index d = cm.counts.cols();
    std::vector<std::uint8_t> mask(d, 0);
    std::vector<Eigen::Index> kept;
    for (Eigen::Index j = 0; j < d; ++j) {
        int expressed = 0;
        for (Eigen::Index i = 0; i < cm.counts.rows(); ++i)
            if (cm.counts(i, j) > 0) ++expressed;
        if (expressed >= min_cells) {
            mask[j] = 1;
            kept.push_back(j);
        }
    }
    if (kept.empty()) throw std::invalid_argument("empty gene set after filtering");

    CountMatrix out;
    out.counts.resize(cm.counts.rows(), static_cast<Eigen::Index>(kept.size()));
    for (std::size_t c = 0; c < kept.size(); ++c) {
        out.counts.col(static_cast<Eigen::Index>(c)) = cm.counts.col(kept[c]);
        out.gene_names.push_back(cm.gene_names[kept[c]]);
    }
    out.cell_labels = cm.cell_labels;
    out.label_vocab = cm.label_vocab;
    return {out, mask};
}

double median_row_sum(const CountsMat& counts) {
    std::vector<double> sums;
    sums.reserve(counts.rows());
    for (Eigen::Index i = 0; i < counts.rows(); ++i)
        sums.push_back(static_cast<double>(counts.row(i).sum()));
    std::sort(sums.begin(), sums.end());
    const std::size_t n = sums.size();
    if (n == 0) throw std::runtime_error("empty matrix");
    return n % 2 == 1 ? sums[n / 2] : 0.5 * (sums[n / 2 - 1] + sums[n / 2]);
}

Mat normalize_log(const CountsMat& counts, double target_sum) {
    const double target = target_sum > 0 ? target_sum : median_row_sum(counts);
    Mat out(counts.rows(), counts.cols());
    for (Eigen::Index i = 0; i < counts.rows(); ++i) {
        const double s = static_cast<double>(counts.row(i).sum());
        if (s <= 0) throw std::runtime_error("zero row sum at cell " + std::to_string(i));
        const double scale = target / s;
        for (Eigen::Index j = 0; j < counts.cols(); ++j)
            out(i, j) = std::log1p(static_cast<double>(counts(i, j)) * scale);
    }
    return out;
}

PcaModel fit_pca(const Mat& x, int n_components) {
    const Eigen::Index n = x.rows(), d = x.cols();
    if (n_components < 1 || n_components > std::min<Eigen::Index>(n - 1, d))
        throw std::invalid_argument("n_components out of range");
    if (!x.allFinite()) throw std::invalid_argument("non-finite input to fit_pca");

    PcaModel m;
    m.mean = x.colwise().mean();
    Mat centered = x.rowwise() - m.mean.transpose();

    // Covariance eigendecomposition (deterministic), descending order.
    Mat cov = centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Mat> es(cov);
    if (es.info() != Eigen::Success) throw std::runtime_error("PCA eigendecomposition failed");

    m.loadings.resize(d, n_components);
    m.explained_variance.resize(n_components);
    for (int c = 0; c < n_components; ++c) {
        const Eigen::Index src = d - 1 - c;  // largest first
        Vec v = es.eigenvectors().col(src);
        Eigen::Index argmax = 0;
        v.cwiseAbs().maxCoeff(&argmax);
        if (v(argmax) < 0) v = -v;
        m.loadings.col(c) = v;
        m.explained_variance(c) = std::max(0.0, es.eigenvalues()(src));
    }
    return m;
}

Mat pca_project(const PcaModel& model, const Mat& x) {
    if (x.cols() != model.loadings.rows())
        throw std::invalid_argument("pca_project: column count mismatch");
    return (x.rowwise() - model.mean.transpose()) * model.loadings;
}

ProcessedDataset preprocess(const CountMatrix& cm, int min_cells, double target_sum,
                            int n_components) {
    ProcessedDataset ds;
    auto [filtered, mask] = filter_genes(cm, min_cells);
    ds.filtered = std::move(filtered);
    ds.gene_mask = std::move(mask);
    ds.all_gene_names = cm.gene_names;
    ds.norm_target = target_sum > 0 ? target_sum : median_row_sum(ds.filtered.counts);
    ds.lognorm = normalize_log(ds.filtered.counts, ds.norm_target);
    ds.pca = fit_pca(ds.lognorm, n_components);
    ds.pca_scores = pca_project(ds.pca, ds.lognorm);
    return ds;
}

void save_processed(const fs::path& file, const ProcessedDataset& ds) {
    io::Container c;
    c.magic = "LAPDPRC1";
    c.header["version"] = 1;
    c.header["label_vocab"] = ds.filtered.label_vocab;
    c.header["cell_labels"] = ds.filtered.cell_labels;
    c.header["gene_names"] = ds.filtered.gene_names;
    c.header["all_gene_names"] = ds.all_gene_names;
    c.header["gene_mask"] = ds.gene_mask;
    c.header["norm_target"] = ds.norm_target;

    Mat counts_d = ds.filtered.counts.cast<double>();
    c.tensors.push_back(io::encode_f64("counts", counts_d));
    c.tensors.push_back(io::encode_f64("lognorm", ds.lognorm));
    c.tensors.push_back(io::encode_f64("pca_scores", ds.pca_scores));
    c.tensors.push_back(io::encode_f64("pca.mean", ds.pca.mean.transpose()));
    c.tensors.push_back(io::encode_f64("pca.loadings", ds.pca.loadings));
    c.tensors.push_back(
        io::encode_f64("pca.explained_variance", ds.pca.explained_variance.transpose()));
    io::write_container(file, c);
}

ProcessedDataset load_processed(const fs::path& file) {
    io::Container c = io::read_container(file, "LAPDPRC1");
    const int version = c.header.at("version").get<int>();
    if (version != 1)
        throw std::runtime_error("unsupported processed-cache version: " + std::to_string(version));

    ProcessedDataset ds;
    ds.filtered.label_vocab = c.header.at("label_vocab").get<std::vector<std::string>>();
    ds.filtered.cell_labels = c.header.at("cell_labels").get<std::vector<int>>();
    ds.filtered.gene_names = c.header.at("gene_names").get<std::vector<std::string>>();
    ds.all_gene_names = c.header.at("all_gene_names").get<std::vector<std::string>>();
    ds.gene_mask = c.header.at("gene_mask").get<std::vector<std::uint8_t>>();
    ds.norm_target = c.header.at("norm_target").get<double>();

    auto find = [&](const std::string& name) -> const io::TensorBlob& {
        for (const auto& t : c.tensors)
            if (t.name == name) return t;
        throw std::runtime_error("processed cache missing tensor: " + name);
    };
    ds.filtered.counts = io::decode_matrix(find("counts")).cast<std::int64_t>();
    ds.lognorm = io::decode_matrix(find("lognorm"));
    ds.pca_scores = io::decode_matrix(find("pca_scores"));
    ds.pca.mean = io::decode_matrix(find("pca.mean")).transpose();
    ds.pca.loadings = io::decode_matrix(find("pca.loadings"));
    ds.pca.explained_variance = io::decode_matrix(find("pca.explained_variance")).transpose();
    ds.filtered.validate();
    return ds;
}

}  // namespace lapddpm::ingest
