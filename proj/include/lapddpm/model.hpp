#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lapddpm/autodiff.hpp"
#include "lapddpm/graph.hpp"
#include "lapddpm/rng.hpp"
#include "lapddpm/tensor.hpp"

namespace lapddpm::model {

struct ModelConfig {
    int d_lat = 32;
    int d_hid = 128;
    int d_hid_mlp = 256;
    int k_cheb = 3;
    int n_enc_layers = 2;
    int n_score_layers = 3;
    int k_pe = 8;
    int label_count = 0;     // set from the dataset vocabulary
    int time_embed_dim = 64;
    int label_embed_dim = 32;
    double p_uncond = 0.1;
    int feature_dim = 0;     // D_f, set from the dataset

    int encoder_input_dim() const { return feature_dim + k_pe; }
    void validate() const;
};

struct LatentGaussian {
    Mat mu;
    Mat log_var;
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)) per tensor;
// LayerNorm scale 1, shift 0. Registration order is fixed.
ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

// Tracked parameter handles on a tape, one per ParamStore entry.
struct ParamVars {
    ad::Tape* tape = nullptr;
    std::unordered_map<std::string, ad::Var> vars;
    ad::Var at(const std::string& name) const;
};
ParamVars make_param_vars(ad::Tape& tape, const ParamStore& params);

// ----- tape builders (training / gradient path) -----

// Chebyshev graph convolution: sum_k T_k(L_norm - I) X theta_k + bias.
ad::Var chebconv_t(ad::Tape& t, ad::Var x, std::shared_ptr<const graph::AdjacencyView> view,
                   const std::vector<ad::Var>& thetas, ad::Var bias);

struct EncoderOut {
    ad::Var mu;
    ad::Var log_var;
};
EncoderOut encoder_forward_t(ad::Tape& t, ad::Var features, const graph::CellGraph& g,
                             const std::vector<double>& weights, const ParamVars& pv,
                             const ModelConfig& cfg);

// z0 = mu + exp(0.5 * log_var) .* xi with xi given.
ad::Var reparameterize_t(ad::Tape& t, ad::Var mu, ad::Var log_var, const Mat& xi);

ad::Var scorenet_forward_t(ad::Tape& t, ad::Var z_t, const Vec& times,
                           const std::vector<int>& labels, const std::vector<std::uint8_t>& drop,
                           const ParamVars& pv, const ModelConfig& cfg,
                           std::vector<Mat>* ln_taps = nullptr);

ad::Var decoder_forward_t(ad::Tape& t, ad::Var z, const ParamVars& pv, const ModelConfig& cfg);

// ----- plain forwards (inference path; same builders, throwaway tape) -----

Mat chebconv_forward(const Mat& x, const graph::CellGraph& g, const std::vector<double>& weights,
                     const std::vector<Mat>& thetas, const Mat& bias);

LatentGaussian encoder_forward(const Mat& features, const graph::CellGraph& g,
                               const std::vector<double>& weights, const ParamStore& params,
                               const ModelConfig& cfg);

Mat reparameterize(const LatentGaussian& lg, Rng& rng);

Mat scorenet_forward(const Mat& z_t, const Vec& times, const std::vector<int>& labels,
                     const std::vector<std::uint8_t>& drop, const ParamStore& params,
                     const ModelConfig& cfg, std::vector<Mat>* ln_taps = nullptr);

Mat decoder_forward(const Mat& z, const ParamStore& params, const ModelConfig& cfg);

// Sinusoidal features for a batch of times: columns interleave
// [sin(t w_0), cos(t w_0), sin(t w_1), ...] with w log-spaced in [1, 1000].
Mat sinusoidal_features(const Vec& times, int dim);

// Sinusoidal features passed through the two-layer time map.
Vec time_embedding(double t, int dim, const ParamStore& params);

// Exact reverse-mode gradients of a scalar loss built from tape operations.
ParamStore grad(const std::function<ad::Var(ad::Tape&, const ParamVars&)>& loss_builder,
                const ParamStore& params, double* loss_value = nullptr);

}  // namespace lapddpm::model
