#pragma once

#include <functional>
#include <vector>

#include "lapddpm/model.hpp"
#include "lapddpm/rng.hpp"
#include "lapddpm/tensor.hpp"

namespace lapddpm::diffusion {

struct DiffusionSchedule {
    double horizon = 3.0;  // T
    double t_min = 1e-3;
    int n_steps = 500;

    void validate() const;
};

struct GuidanceConfig {
    double scale = 1.0;  // 1 = plain conditional, 0 = unconditional
};

// alpha_t = e^{-t}.
double alpha(double t);
// sigma_t = sqrt(1 - e^{-2t}).
double marginal_std(double t);

// z_t = alpha_t z0 + sigma_t eps, each row using its own t.
Mat perturb_latent(const Mat& z0, const Vec& t, const Mat& eps);

// Pre-sampled randomness for one diffusion-loss evaluation, so the loss is a
// pure function of the parameters (used by the finite-difference oracle).
struct DiffusionDraws {
    Vec t;
    Mat eps;
    std::vector<std::uint8_t> drop;
};
DiffusionDraws sample_diffusion_draws(Eigen::Index n, int d_lat, const DiffusionSchedule& sched,
                                      double p_uncond, Rng& rng);

// Mean over rows and latent dims of (eps_hat - eps)^2, on the tape.
ad::Var diffusion_loss_t(ad::Tape& tape, ad::Var z0, const std::vector<int>& labels,
                         const model::ParamVars& pv, const model::ModelConfig& cfg,
                         const DiffusionDraws& draws);

// Convenience wrapper sampling its own randomness.
double diffusion_loss(const Mat& z0, const std::vector<int>& labels, const ParamStore& params,
                      const model::ModelConfig& cfg, const DiffusionSchedule& sched, Rng& rng);

// Noise predictor interface for the sampler: (z, t, use_null) -> eps_hat.
using NoisePredictor = std::function<Mat(const Mat&, double, bool)>;

// Network-backed predictor for a fixed label assignment.
NoisePredictor make_scorenet_predictor(const ParamStore& params, const model::ModelConfig& cfg,
                                       const std::vector<int>& labels);

// Euler-Maruyama on the reverse VP-SDE from T down to t_min, then the
// denoised posterior mean. Per-row RNG streams are derived from row_seeds.
Mat sample(Eigen::Index n, int d_lat, const NoisePredictor& predictor,
           const DiffusionSchedule& sched, const GuidanceConfig& guidance,
           const std::vector<std::uint64_t>& row_seeds);

// Network-backed sampling for labelled rows.
Mat sample_latents(const std::vector<int>& labels, const ParamStore& params,
                   const model::ModelConfig& cfg, const DiffusionSchedule& sched,
                   const GuidanceConfig& guidance, const std::vector<std::uint64_t>& row_seeds);

}  // namespace lapddpm::diffusion
