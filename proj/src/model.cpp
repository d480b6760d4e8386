#include "lapddpm/model.hpp"

#include "lapddpm/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace lapddpm::model {

namespace {

constexpr double kLogVarLo = -10.0, kLogVarHi = 10.0;
constexpr double kLogRateLo = -20.0, kLogRateHi = 15.0;

Mat xavier_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-a, a);
    return m;
}

}  // namespace

void ModelConfig::validate() const {
    if (d_lat < 1 || d_hid < 1 || d_hid_mlp < 1 || k_cheb < 1 || n_enc_layers < 1 ||
        n_score_layers < 1 || k_pe < 1 || time_embed_dim < 1 || label_embed_dim < 1)
        throw std::invalid_argument("model dimensions must be positive");
    if (time_embed_dim % 2 != 0) throw std::invalid_argument("time_embed_dim must be even");
    if (!(p_uncond >= 0.0 && p_uncond < 1.0))
        throw std::invalid_argument("p_uncond must lie in [0, 1)");
}

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (cfg.label_count < 1 || cfg.feature_dim < 1)
        throw std::invalid_argument("label_count and feature_dim must be set before init");
    Rng rng(mix_seed(seed, 0x70617261));  // independent of the training stream

    ParamStore p;
    int in = cfg.encoder_input_dim();
    for (int l = 0; l < cfg.n_enc_layers; ++l) {
        const int out = cfg.d_hid;
        for (int k = 0; k < cfg.k_cheb; ++k)
            p.insert("enc.layer" + std::to_string(l) + ".theta" + std::to_string(k),
                     xavier_uniform(in, out, rng));
        p.insert("enc.layer" + std::to_string(l) + ".bias", xavier_uniform(1, out, rng));
        in = out;
    }
    p.insert("enc.mu.W", xavier_uniform(cfg.d_hid, cfg.d_lat, rng));
    p.insert("enc.mu.b", xavier_uniform(1, cfg.d_lat, rng));
    p.insert("enc.logvar.W", xavier_uniform(cfg.d_hid, cfg.d_lat, rng));
    p.insert("enc.logvar.b", xavier_uniform(1, cfg.d_lat, rng));

    p.insert("score.time.W1", xavier_uniform(cfg.time_embed_dim, cfg.time_embed_dim, rng));
    p.insert("score.time.b1", xavier_uniform(1, cfg.time_embed_dim, rng));
    p.insert("score.time.W2", xavier_uniform(cfg.time_embed_dim, cfg.time_embed_dim, rng));
    p.insert("score.time.b2", xavier_uniform(1, cfg.time_embed_dim, rng));
    p.insert("score.label.table", xavier_uniform(cfg.label_count, cfg.label_embed_dim, rng));
    p.insert("score.label.null", xavier_uniform(1, cfg.label_embed_dim, rng));

    in = cfg.d_lat + cfg.time_embed_dim + cfg.label_embed_dim;
    for (int l = 0; l < cfg.n_score_layers; ++l) {
        const std::string pre = "score.block" + std::to_string(l);
        p.insert(pre + ".W", xavier_uniform(in, cfg.d_hid_mlp, rng));
        p.insert(pre + ".b", xavier_uniform(1, cfg.d_hid_mlp, rng));
        p.insert(pre + ".ln_scale", Mat::Ones(1, cfg.d_hid_mlp));
        p.insert(pre + ".ln_shift", Mat::Zero(1, cfg.d_hid_mlp));
        in = cfg.d_hid_mlp;
    }
    p.insert("score.head.W", xavier_uniform(cfg.d_hid_mlp, cfg.d_lat, rng));
    p.insert("score.head.b", xavier_uniform(1, cfg.d_lat, rng));

    p.insert("dec.fc1.W", xavier_uniform(cfg.d_lat, cfg.d_hid, rng));
    p.insert("dec.fc1.b", xavier_uniform(1, cfg.d_hid, rng));
    p.insert("dec.fc2.W", xavier_uniform(cfg.d_hid, cfg.feature_dim, rng));
    p.insert("dec.fc2.b", xavier_uniform(1, cfg.feature_dim, rng));
    return p;
}

ad::Var ParamVars::at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::out_of_range("no tracked parameter named: " + name);
    return it->second;
}

ParamVars make_param_vars(ad::Tape& tape, const ParamStore& params) {
    ParamVars pv;
    pv.tape = &tape;
    for (const auto& [name, value] : params) pv.vars[name] = tape.param(name, value);
    return pv;
}

ad::Var chebconv_t(ad::Tape& t, ad::Var x, std::shared_ptr<const graph::AdjacencyView> view,
                   const std::vector<ad::Var>& thetas, ad::Var bias) {
    if (thetas.empty()) throw std::invalid_argument("chebconv needs at least one theta");
    // T_0 = X.
    ad::Var acc = t.matmul(x, thetas[0]);
    if (thetas.size() > 1) {
        // T_1 = (L_norm - I) X.
        ad::Var t_prev = x;
        ad::Var t_cur = t.scaled_laplacian_apply(view, x);
        acc = t.add(acc, t.matmul(t_cur, thetas[1]));
        for (std::size_t k = 2; k < thetas.size(); ++k) {
            // T_k = 2 (L_norm - I) T_{k-1} - T_{k-2}.
            ad::Var t_next =
                t.sub(t.scale(t.scaled_laplacian_apply(view, t_cur), 2.0), t_prev);
            acc = t.add(acc, t.matmul(t_next, thetas[k]));
            t_prev = t_cur;
            t_cur = t_next;
        }
    }
    return t.add_row(acc, bias);
}

EncoderOut encoder_forward_t(ad::Tape& t, ad::Var features, const graph::CellGraph& g,
                             const std::vector<double>& weights, const ParamVars& pv,
                             const ModelConfig& cfg) {
    if (t.val(features).cols() != cfg.encoder_input_dim())
        throw std::invalid_argument("encoder feature width must be D_f + k_pe");
    auto view = std::make_shared<const graph::AdjacencyView>(graph::make_adjacency_view(g, weights));

    ad::Var h = features;
    for (int l = 0; l < cfg.n_enc_layers; ++l) {
        const std::string pre = "enc.layer" + std::to_string(l);
        std::vector<ad::Var> thetas;
        for (int k = 0; k < cfg.k_cheb; ++k) thetas.push_back(pv.at(pre + ".theta" + std::to_string(k)));
        h = t.silu(chebconv_t(t, h, view, thetas, pv.at(pre + ".bias")));
    }
    EncoderOut out;
    out.mu = t.add_row(t.matmul(h, pv.at("enc.mu.W")), pv.at("enc.mu.b"));
    out.log_var = t.clamp(t.add_row(t.matmul(h, pv.at("enc.logvar.W")), pv.at("enc.logvar.b")),
                          kLogVarLo, kLogVarHi);
    return out;
}

ad::Var reparameterize_t(ad::Tape& t, ad::Var mu, ad::Var log_var, const Mat& xi) {
    ad::Var sigma = t.exp(t.scale(log_var, 0.5));
    return t.add(mu, t.mul_const(sigma, xi));
}

Mat sinusoidal_features(const Vec& times, int dim) {
    if (dim % 2 != 0) throw std::invalid_argument("time embedding dim must be even");
    const int n_freq = dim / 2;
    Vec omega(n_freq);
    for (int i = 0; i < n_freq; ++i) {
        const double frac = n_freq > 1 ? static_cast<double>(i) / (n_freq - 1) : 0.0;
        omega(i) = std::exp(frac * std::log(1000.0));  // log-spaced in [1, 1000]
    }
    Mat f(times.size(), dim);
    for (Eigen::Index r = 0; r < times.size(); ++r)
        for (int i = 0; i < n_freq; ++i) {
            f(r, 2 * i) = std::sin(times(r) * omega(i));
            f(r, 2 * i + 1) = std::cos(times(r) * omega(i));
        }
    return f;
}

namespace {

ad::Var time_mlp_t(ad::Tape& t, const Mat& sinusoid, const ParamVars& pv) {
    ad::Var f = t.constant(sinusoid);
    ad::Var h = t.silu(t.add_row(t.matmul(f, pv.at("score.time.W1")), pv.at("score.time.b1")));
    return t.add_row(t.matmul(h, pv.at("score.time.W2")), pv.at("score.time.b2"));
}

}  // namespace

ad::Var scorenet_forward_t(ad::Tape& t, ad::Var z_t, const Vec& times,
                           const std::vector<int>& labels, const std::vector<std::uint8_t>& drop,
                           const ParamVars& pv, const ModelConfig& cfg,
                           std::vector<Mat>* ln_taps) {
    const Eigen::Index n = t.val(z_t).rows();
    if (times.size() != n || static_cast<Eigen::Index>(labels.size()) != n ||
        static_cast<Eigen::Index>(drop.size()) != n)
        throw std::invalid_argument("scorenet row-aligned inputs mismatch");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (!drop[i] && (labels[i] < 0 || labels[i] >= cfg.label_count))
            throw std::out_of_range("invalid label id: " + std::to_string(labels[i]));

    ad::Var temb = time_mlp_t(t, sinusoidal_features(times, cfg.time_embed_dim), pv);
    ad::Var lemb = t.embed_rows(pv.at("score.label.table"), pv.at("score.label.null"), labels, drop);
    ad::Var h = t.concat_cols({z_t, temb, lemb});

    for (int l = 0; l < cfg.n_score_layers; ++l) {
        const std::string pre = "score.block" + std::to_string(l);
        ad::Var lin = t.add_row(t.matmul(h, pv.at(pre + ".W")), pv.at(pre + ".b"));
        Mat tap;
        ad::Var normed = t.layernorm_rows(lin, pv.at(pre + ".ln_scale"), pv.at(pre + ".ln_shift"),
                                          ln_taps ? &tap : nullptr);
        if (ln_taps) ln_taps->push_back(std::move(tap));
        h = t.silu(normed);
    }
    return t.add_row(t.matmul(h, pv.at("score.head.W")), pv.at("score.head.b"));
}

ad::Var decoder_forward_t(ad::Tape& t, ad::Var z, const ParamVars& pv, const ModelConfig& cfg) {
    if (t.val(z).cols() != cfg.d_lat) throw std::invalid_argument("decoder latent width mismatch");
    ad::Var h = t.silu(t.add_row(t.matmul(z, pv.at("dec.fc1.W")), pv.at("dec.fc1.b")));
    ad::Var raw = t.add_row(t.matmul(h, pv.at("dec.fc2.W")), pv.at("dec.fc2.b"));
    return t.clamp(raw, kLogRateLo, kLogRateHi);
}

Mat chebconv_forward(const Mat& x, const graph::CellGraph& g, const std::vector<double>& weights,
                     const std::vector<Mat>& thetas, const Mat& bias) {
    ad::Tape t;
    auto view = std::make_shared<const graph::AdjacencyView>(graph::make_adjacency_view(g, weights));
    std::vector<ad::Var> tv;
    for (const auto& th : thetas) tv.push_back(t.constant(th));
    return t.val(chebconv_t(t, t.constant(x), view, tv, t.constant(bias)));
}

LatentGaussian encoder_forward(const Mat& features, const graph::CellGraph& g,
                               const std::vector<double>& weights, const ParamStore& params,
                               const ModelConfig& cfg) {
    ad::Tape t;
    ParamVars pv = make_param_vars(t, params);
    EncoderOut out = encoder_forward_t(t, t.constant(features), g, weights, pv, cfg);
    LatentGaussian lg{t.val(out.mu), t.val(out.log_var)};
    if (!lg.mu.allFinite() || !lg.log_var.allFinite())
        throw NumericalError("non-finite encoder activations");
    return lg;
}

Mat reparameterize(const LatentGaussian& lg, Rng& rng) {
    Mat xi(lg.mu.rows(), lg.mu.cols());
    for (Eigen::Index r = 0; r < xi.rows(); ++r)
        for (Eigen::Index c = 0; c < xi.cols(); ++c) xi(r, c) = rng.normal();
    return lg.mu + (0.5 * lg.log_var).array().exp().matrix().cwiseProduct(xi);
}

Mat scorenet_forward(const Mat& z_t, const Vec& times, const std::vector<int>& labels,
                     const std::vector<std::uint8_t>& drop, const ParamStore& params,
                     const ModelConfig& cfg, std::vector<Mat>* ln_taps) {
    ad::Tape t;
    ParamVars pv = make_param_vars(t, params);
    return t.val(scorenet_forward_t(t, t.constant(z_t), times, labels, drop, pv, cfg, ln_taps));
}

Mat decoder_forward(const Mat& z, const ParamStore& params, const ModelConfig& cfg) {
    ad::Tape t;
    ParamVars pv = make_param_vars(t, params);
    return t.val(decoder_forward_t(t, t.constant(z), pv, cfg));
}

Vec time_embedding(double t_value, int dim, const ParamStore& params) {
    ad::Tape t;
    ParamVars pv = make_param_vars(t, params);
    Vec one(1);
    one(0) = t_value;
    return t.val(time_mlp_t(t, sinusoidal_features(one, dim), pv)).row(0).transpose();
}

ParamStore grad(const std::function<ad::Var(ad::Tape&, const ParamVars&)>& loss_builder,
                const ParamStore& params, double* loss_value) {
    ad::Tape t;
    ParamVars pv = make_param_vars(t, params);
    ad::Var loss = loss_builder(t, pv);
    if (loss_value) *loss_value = t.val(loss)(0, 0);
    t.backward(loss);
    return t.param_grads();
}

}  // namespace lapddpm::model
