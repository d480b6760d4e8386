#include "lapddpm/train.hpp"

#include "lapddpm/errors.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "lapddpm/io.hpp"

namespace lapddpm::train {

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be positive");
    if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
    if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
    if (w_diff < 0 || w_kl < 0 || w_rec < 0)
        throw std::invalid_argument("loss weights must be non-negative");
    if (!(mask_fraction >= 0 && mask_fraction < 1))
        throw std::invalid_argument("mask_fraction must lie in [0, 1)");
    if (!(grad_clip_norm > 0)) throw std::invalid_argument("grad_clip_norm must be positive");
    if (knn_k < 1) throw std::invalid_argument("knn_k must be positive");
}

std::pair<Mat, MaskMat> mask_inputs(const Mat& x, double m, Rng& rng) {
    if (!(m >= 0 && m < 1)) throw std::invalid_argument("mask fraction must lie in [0, 1)");
    Mat out = x;
    MaskMat mask = MaskMat::Zero(x.rows(), x.cols());
    if (m > 0) {
        for (Eigen::Index r = 0; r < x.rows(); ++r)
            for (Eigen::Index c = 0; c < x.cols(); ++c)
                if (rng.bernoulli(m)) {
                    out(r, c) = 0.0;
                    mask(r, c) = 1;
                }
    }
    return {out, mask};
}

ad::Var kl_loss_t(ad::Tape& t, ad::Var mu, ad::Var log_var) {
    const double n = static_cast<double>(t.val(mu).rows());
    ad::Var term = t.add(t.hadamard(mu, mu), t.exp(log_var));
    term = t.add_const(t.sub(term, log_var), -1.0);
    return t.scale(t.sum_all(term), 0.5 / n);
}

double kl_loss(const model::LatentGaussian& lg) {
    ad::Tape t;
    return t.val(kl_loss_t(t, t.constant(lg.mu), t.constant(lg.log_var)))(0, 0);
}

ad::Var recon_loss_t(ad::Tape& t, ad::Var log_rates, const ingest::CountsMat& counts) {
    const Mat& lr = t.val(log_rates);
    if (lr.rows() != counts.rows() || lr.cols() != counts.cols())
        throw std::invalid_argument("recon_loss shape mismatch");
    if ((counts.array() < 0).any()) throw std::invalid_argument("negative counts");
    const double nd = static_cast<double>(counts.rows()) * static_cast<double>(counts.cols());

    Mat x = counts.cast<double>();
    double lgamma_sum = 0.0;
    for (Eigen::Index r = 0; r < counts.rows(); ++r)
        for (Eigen::Index c = 0; c < counts.cols(); ++c)
            lgamma_sum += std::lgamma(static_cast<double>(counts(r, c)) + 1.0);

    ad::Var inner = t.sub(t.mul_const(log_rates, x), t.exp(log_rates));
    return t.add_const(t.scale(t.sum_all(inner), -1.0 / nd), lgamma_sum / nd);
}

double recon_loss(const Mat& log_rates, const ingest::CountsMat& counts) {
    ad::Tape t;
    return t.val(recon_loss_t(t, t.constant(log_rates), counts))(0, 0);
}

double total_loss(double l_diff, double l_kl, double l_rec, const TrainConfig& cfg) {
    return cfg.w_diff * l_diff + cfg.w_kl * l_kl + cfg.w_rec * l_rec;
}

OptState make_opt_state(const ParamStore& params, double base_lr, std::int64_t total_steps) {
    OptState s;
    s.m = params.zeros_like();
    s.v = params.zeros_like();
    s.base_lr = base_lr;
    s.total_steps = total_steps;
    return s;
}

double lr_at(const OptState& opt) {
    if (opt.total_steps <= 0) return opt.base_lr;
    const double frac =
        std::min(1.0, static_cast<double>(opt.step) / static_cast<double>(opt.total_steps));
    return 0.1 * opt.base_lr + 0.9 * opt.base_lr * 0.5 * (1.0 + std::cos(M_PI * frac));
}

void optimizer_step(ParamStore& params, const ParamStore& grads, OptState& opt, double lr) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double t = static_cast<double>(opt.step + 1);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, p] = params.entry(i);
        const Mat& g = grads.at(name);
        Mat& m = opt.m.at(name);
        Mat& v = opt.v.at(name);
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
        Mat m_hat = m / bc1;
        Mat v_hat = v / bc2;
        p -= lr * (m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();
    }
    ++opt.step;
}

double clip_gradients(ParamStore& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) sq += g.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        const double s = max_norm / norm;
        for (auto& [name, g] : grads) g *= s;
    }
    return norm;
}

LossParts build_losses_t(ad::Tape& tape, const model::ParamVars& pv, const BatchInputs& batch,
                         const TrainConfig& cfg, const model::ModelConfig& mcfg) {
    model::EncoderOut enc = model::encoder_forward_t(tape, tape.constant(batch.features),
                                                     batch.graph, batch.weights, pv, mcfg);
    ad::Var z0 = model::reparameterize_t(tape, enc.mu, enc.log_var, batch.xi);
    LossParts parts;
    parts.diff = diffusion::diffusion_loss_t(tape, z0, batch.labels, pv, mcfg, batch.draws);
    parts.kl = kl_loss_t(tape, enc.mu, enc.log_var);
    ad::Var log_rates = model::decoder_forward_t(tape, enc.mu, pv, mcfg);
    parts.rec = recon_loss_t(tape, log_rates, batch.counts);
    parts.total =
        tape.add(tape.add(tape.scale(parts.diff, cfg.w_diff), tape.scale(parts.kl, cfg.w_kl)),
                 tape.scale(parts.rec, cfg.w_rec));
    return parts;
}

EpochMetrics train_epoch(const ingest::ProcessedDataset& ds, ParamStore& params, OptState& opt,
                         const TrainConfig& cfg, const model::ModelConfig& mcfg,
                         const diffusion::DiffusionSchedule& sched,
                         const perturb::PerturbConfig& pcfg, Rng& rng) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    const Eigen::Index n = ds.lognorm.rows();
    if (n == 0) throw std::invalid_argument("empty dataset");
    if (cfg.batch_size > n) throw std::invalid_argument("batch_size exceeds dataset size");

    // Shuffled batch order (Fisher-Yates).
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    for (Eigen::Index i = n - 1; i > 0; --i) {
        const auto j = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
        std::swap(order[i], order[j]);
    }

    EpochMetrics em;
    Eigen::Index rows_done = 0;
    int batch_index = 0;
    for (Eigen::Index at = 0; at < n; at += cfg.batch_size, ++batch_index) {
        const Eigen::Index nb = std::min<Eigen::Index>(cfg.batch_size, n - at);
        if (nb < 2) continue;  // a 1-row remainder cannot form a graph

        // Column-outer gathers keep each source column (contiguous in
        // column-major storage) cache-resident regardless of dataset size.
        Mat coords(nb, ds.pca_scores.cols());
        Mat feats(nb, ds.lognorm.cols());
        ingest::CountsMat counts(nb, ds.filtered.counts.cols());
        std::vector<int> labels(nb);
        for (Eigen::Index c = 0; c < coords.cols(); ++c)
            for (Eigen::Index i = 0; i < nb; ++i)
                coords(i, c) = ds.pca_scores(order[at + i], c);
        for (Eigen::Index c = 0; c < feats.cols(); ++c)
            for (Eigen::Index i = 0; i < nb; ++i)
                feats(i, c) = ds.lognorm(order[at + i], c);
        for (Eigen::Index c = 0; c < counts.cols(); ++c)
            for (Eigen::Index i = 0; i < nb; ++i)
                counts(i, c) = ds.filtered.counts(order[at + i], c);
        for (Eigen::Index i = 0; i < nb; ++i)
            labels[i] = ds.filtered.cell_labels[order[at + i]];

        const int k_eff = std::min<int>(cfg.knn_k, static_cast<int>(nb) - 1);
        graph::CellGraph g = graph::build_knn_graph(coords, k_eff);
        Mat lpe = cfg.disable_lpe ? Mat::Zero(nb, mcfg.k_pe)
                                  : graph::compute_lpe_padded(g, mcfg.k_pe);

        Mat x_masked = feats;
        if (!cfg.disable_mask && cfg.mask_fraction > 0)
            x_masked = mask_inputs(feats, cfg.mask_fraction, rng).first;

        std::vector<double> weights = g.weights;
        if (!cfg.disable_perturb) {
            std::vector<double> w0 = perturb::init_weights(g, pcfg, rng);
            weights = perturb::adversarial_perturb(g, w0, pcfg);
        }

        Mat features(nb, x_masked.cols() + lpe.cols());
        features << x_masked, lpe;

        BatchInputs batch;
        batch.features = std::move(features);
        batch.graph = std::move(g);
        batch.weights = std::move(weights);
        batch.counts = std::move(counts);
        batch.labels = std::move(labels);
        batch.xi.resize(nb, mcfg.d_lat);
        for (Eigen::Index r = 0; r < nb; ++r)
            for (int c = 0; c < mcfg.d_lat; ++c) batch.xi(r, c) = rng.normal();
        batch.draws = diffusion::sample_diffusion_draws(nb, mcfg.d_lat, sched, mcfg.p_uncond, rng);

        ad::Tape tape;
        model::ParamVars pv = model::make_param_vars(tape, params);
        LossParts parts = build_losses_t(tape, pv, batch, cfg, mcfg);

        const double v_diff = tape.val(parts.diff)(0, 0);
        const double v_kl = tape.val(parts.kl)(0, 0);
        const double v_rec = tape.val(parts.rec)(0, 0);
        const double v_total = tape.val(parts.total)(0, 0);
        if (!std::isfinite(v_total))
            throw NumericalError("non-finite loss at batch " + std::to_string(batch_index));

        tape.backward(parts.total);
        ParamStore grads = tape.param_grads();
        clip_gradients(grads, cfg.grad_clip_norm);
        const double lr = lr_at(opt);
        optimizer_step(params, grads, opt, lr);

        const double w = static_cast<double>(nb);
        em.l_diff += w * v_diff;
        em.l_kl += w * v_kl;
        em.l_rec += w * v_rec;
        em.l_total += w * v_total;
        em.lr = lr;
        rows_done += nb;
    }

    if (rows_done > 0) {
        em.l_diff /= rows_done;
        em.l_kl /= rows_done;
        em.l_rec /= rows_done;
        em.l_total /= rows_done;
    }
    em.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::steady_clock::now() - start)
                     .count();
    return em;
}

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt) {
    io::Container c;
    c.magic = "LAPDDPM1";
    c.header["version"] = ckpt.version;
    c.header["config"] = ckpt.config_echo;
    c.header["label_vocab"] = ckpt.label_vocab;
    c.header["gene_names"] = ckpt.gene_names;
    c.header["gene_mask"] = ckpt.gene_mask;
    c.header["label_counts"] = ckpt.label_counts;
    c.header["norm_target"] = ckpt.norm_target;
    c.header["rng_state"] = ckpt.rng_state;
    c.header["epoch"] = ckpt.epoch;

    for (const auto& [name, value] : ckpt.params)
        c.tensors.push_back(io::encode_f32("param." + name, value));
    c.tensors.push_back(io::encode_f32("pca.mean", ckpt.pca.mean.transpose()));
    c.tensors.push_back(io::encode_f32("pca.loadings", ckpt.pca.loadings));
    c.tensors.push_back(
        io::encode_f32("pca.explained_variance", ckpt.pca.explained_variance.transpose()));
    io::write_container(file, c);
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
    io::Container c = io::read_container(file, "LAPDDPM1");
    Checkpoint ckpt;
    ckpt.version = c.header.at("version").get<int>();
    if (ckpt.version != 1)
        throw std::runtime_error("unsupported checkpoint version: " + std::to_string(ckpt.version));
    ckpt.config_echo = c.header.at("config");
    ckpt.label_vocab = c.header.at("label_vocab").get<std::vector<std::string>>();
    ckpt.gene_names = c.header.at("gene_names").get<std::vector<std::string>>();
    ckpt.gene_mask = c.header.at("gene_mask").get<std::vector<std::uint8_t>>();
    ckpt.label_counts = c.header.at("label_counts").get<std::vector<std::int64_t>>();
    ckpt.norm_target = c.header.at("norm_target").get<double>();
    ckpt.rng_state = c.header.at("rng_state").get<std::string>();
    ckpt.epoch = c.header.at("epoch").get<int>();

    for (const auto& t : c.tensors) {
        if (t.name.rfind("param.", 0) == 0) {
            ckpt.params.insert(t.name.substr(6), io::decode_matrix(t));
        } else if (t.name == "pca.mean") {
            ckpt.pca.mean = io::decode_matrix(t).transpose();
        } else if (t.name == "pca.loadings") {
            ckpt.pca.loadings = io::decode_matrix(t);
        } else if (t.name == "pca.explained_variance") {
            ckpt.pca.explained_variance = io::decode_matrix(t).transpose();
        } else {
            throw std::runtime_error("unexpected tensor in checkpoint: " + t.name);
        }
    }
    return ckpt;
}

Checkpoint train(const ingest::ProcessedDataset& ds, const TrainConfig& cfg,
                 model::ModelConfig mcfg, const diffusion::DiffusionSchedule& sched,
                 const perturb::PerturbConfig& pcfg, const nlohmann::json& config_echo,
                 std::ostream* log) {
    cfg.validate();
    sched.validate();
    pcfg.validate();

    mcfg.feature_dim = static_cast<int>(ds.lognorm.cols());
    mcfg.label_count = static_cast<int>(ds.filtered.label_vocab.size());
    mcfg.validate();

    ParamStore params = model::init_params(mcfg, cfg.seed);
    const Eigen::Index n = ds.lognorm.rows();
    const std::int64_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    OptState opt = make_opt_state(params, cfg.learning_rate,
                                  static_cast<std::int64_t>(cfg.epochs) * batches_per_epoch);
    Rng rng(mix_seed(cfg.seed, 0x7472696eULL));

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochMetrics em = train_epoch(ds, params, opt, cfg, mcfg, sched, pcfg, rng);
        if (log) {
            nlohmann::json line = {{"epoch", epoch},     {"l_diff", em.l_diff},
                                   {"l_kl", em.l_kl},    {"l_rec", em.l_rec},
                                   {"l_total", em.l_total}, {"lr", em.lr},
                                   {"wall_ms", em.wall_ms}};
            if (cfg.disable_perturb) line["perturb"] = "disabled";
            (*log) << line.dump() << '\n';
        }
    }

    Checkpoint ckpt;
    ckpt.config_echo = config_echo;
    ckpt.label_vocab = ds.filtered.label_vocab;
    ckpt.gene_names = ds.all_gene_names;
    ckpt.gene_mask = ds.gene_mask;
    ckpt.label_counts.assign(ds.filtered.label_vocab.size(), 0);
    for (int id : ds.filtered.cell_labels) ++ckpt.label_counts[id];
    ckpt.norm_target = ds.norm_target;
    ckpt.pca = ds.pca;
    ckpt.params = std::move(params);
    ckpt.rng_state = rng.serialize();
    ckpt.epoch = cfg.epochs;
    return ckpt;
}

}  // namespace lapddpm::train
