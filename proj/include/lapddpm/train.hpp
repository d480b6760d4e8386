#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lapddpm/diffusion.hpp"
#include "lapddpm/ingest.hpp"
#include "lapddpm/model.hpp"
#include "lapddpm/perturb.hpp"
#include "lapddpm/rng.hpp"

namespace lapddpm::train {

struct TrainConfig {
    int epochs = 200;
    int batch_size = 256;
    double learning_rate = 1e-3;
    double w_diff = 1.0;
    double w_kl = 1e-3;
    double w_rec = 1.0;
    double mask_fraction = 0.2;
    double grad_clip_norm = 1.0;
    int knn_k = 15;
    std::uint64_t seed = 0;
    bool disable_perturb = false;
    bool disable_mask = false;
    bool disable_lpe = false;

    void validate() const;
};

using MaskMat = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Zeroes each entry independently with probability m; mask is 1 where zeroed.
std::pair<Mat, MaskMat> mask_inputs(const Mat& x, double m, Rng& rng);

// 0.5 * sum_dims(mu^2 + exp(lv) - 1 - lv), averaged over rows.
double kl_loss(const model::LatentGaussian& lg);
ad::Var kl_loss_t(ad::Tape& t, ad::Var mu, ad::Var log_var);

// Poisson negative log-likelihood of integer counts under exp(log_rates),
// averaged over all entries.
double recon_loss(const Mat& log_rates, const ingest::CountsMat& counts);
ad::Var recon_loss_t(ad::Tape& t, ad::Var log_rates, const ingest::CountsMat& counts);

double total_loss(double l_diff, double l_kl, double l_rec, const TrainConfig& cfg);

// Adam with bias correction.
struct OptState {
    ParamStore m;
    ParamStore v;
    std::int64_t step = 0;         // completed updates
    std::int64_t total_steps = 0;  // for the cosine schedule; <= 0 disables decay
    double base_lr = 1e-3;
};
OptState make_opt_state(const ParamStore& params, double base_lr, std::int64_t total_steps);

// Cosine decay from base_lr to 0.1 * base_lr across total_steps.
double lr_at(const OptState& opt);

void optimizer_step(ParamStore& params, const ParamStore& grads, OptState& opt, double lr);

// Scales gradients so the global norm is at most max_norm; returns the
// pre-clip norm.
double clip_gradients(ParamStore& grads, double max_norm);

struct EpochMetrics {
    double l_diff = 0, l_kl = 0, l_rec = 0, l_total = 0, lr = 0;
    std::int64_t wall_ms = 0;
};

// All inputs for one training batch with the randomness pre-sampled, so the
// total loss is a pure function of the parameters.
struct BatchInputs {
    Mat features;  // masked log-normalized features with LPE columns appended
    graph::CellGraph graph;
    std::vector<double> weights;
    ingest::CountsMat counts;  // unmasked reconstruction targets
    std::vector<int> labels;
    Mat xi;  // reparameterization noise
    diffusion::DiffusionDraws draws;
};

struct LossParts {
    ad::Var diff, kl, rec, total;
};

LossParts build_losses_t(ad::Tape& tape, const model::ParamVars& pv, const BatchInputs& batch,
                         const TrainConfig& cfg, const model::ModelConfig& mcfg);

// One shuffled pass over the dataset per Algorithm 1: per-batch k-NN graph
// and LPE, input masking, spectral weight perturbation, the three losses,
// gradient clipping, Adam update, LR step.
EpochMetrics train_epoch(const ingest::ProcessedDataset& ds, ParamStore& params, OptState& opt,
                         const TrainConfig& cfg, const model::ModelConfig& mcfg,
                         const diffusion::DiffusionSchedule& sched,
                         const perturb::PerturbConfig& pcfg, Rng& rng);

struct Checkpoint {
    int version = 1;
    nlohmann::json config_echo;
    std::vector<std::string> label_vocab;
    std::vector<std::string> gene_names;  // pre-filter, length D
    std::vector<std::uint8_t> gene_mask;  // length D
    std::vector<std::int64_t> label_counts;
    double norm_target = 0.0;
    ingest::PcaModel pca;
    ParamStore params;
    std::string rng_state;
    int epoch = 0;
};

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& file);

// Full training run. Emits one JSON object per epoch to `log` when given.
Checkpoint train(const ingest::ProcessedDataset& ds, const TrainConfig& cfg,
                 model::ModelConfig mcfg, const diffusion::DiffusionSchedule& sched,
                 const perturb::PerturbConfig& pcfg, const nlohmann::json& config_echo,
                 std::ostream* log = nullptr);

}  // namespace lapddpm::train
