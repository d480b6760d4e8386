#include "lapddpm/diffusion.hpp"

#include "lapddpm/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace lapddpm::diffusion {

void DiffusionSchedule::validate() const {
    if (!(t_min > 0) || !(t_min < horizon)) throw std::invalid_argument("require 0 < t_min < T");
    if (n_steps < 1) throw std::invalid_argument("n_steps must be positive");
}

double alpha(double t) {
    if (t < 0) throw std::invalid_argument("t must be non-negative");
    return std::exp(-t);
}

double marginal_std(double t) {
    if (t < 0) throw std::invalid_argument("t must be non-negative");
    return std::sqrt(-std::expm1(-2.0 * t));
}

Mat perturb_latent(const Mat& z0, const Vec& t, const Mat& eps) {
    if (z0.rows() != t.size() || z0.rows() != eps.rows() || z0.cols() != eps.cols())
        throw std::invalid_argument("perturb_latent shape mismatch");
    Mat z_t(z0.rows(), z0.cols());
    for (Eigen::Index i = 0; i < z0.rows(); ++i)
        z_t.row(i) = alpha(t(i)) * z0.row(i) + marginal_std(t(i)) * eps.row(i);
    return z_t;
}

DiffusionDraws sample_diffusion_draws(Eigen::Index n, int d_lat, const DiffusionSchedule& sched,
                                      double p_uncond, Rng& rng) {
    sched.validate();
    DiffusionDraws d;
    d.t.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) d.t(i) = rng.uniform(sched.t_min, sched.horizon);
    d.eps.resize(n, d_lat);
    for (Eigen::Index r = 0; r < n; ++r)
        for (int c = 0; c < d_lat; ++c) d.eps(r, c) = rng.normal();
    d.drop.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) d.drop[i] = rng.bernoulli(p_uncond) ? 1 : 0;
    return d;
}

ad::Var diffusion_loss_t(ad::Tape& tape, ad::Var z0, const std::vector<int>& labels,
                         const model::ParamVars& pv, const model::ModelConfig& cfg,
                         const DiffusionDraws& draws) {
    const Eigen::Index n = tape.val(z0).rows();
    Vec alpha_v(n), sigma_v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        alpha_v(i) = alpha(draws.t(i));
        sigma_v(i) = marginal_std(draws.t(i));
    }
    ad::Var eps_leaf = tape.constant(draws.eps);
    ad::Var z_t = tape.add(tape.row_scale(z0, alpha_v), tape.row_scale(eps_leaf, sigma_v));
    ad::Var eps_hat = model::scorenet_forward_t(tape, z_t, draws.t, labels, draws.drop, pv, cfg);
    ad::Var diff = tape.sub(eps_hat, eps_leaf);
    return tape.mean_all(tape.hadamard(diff, diff));
}

double diffusion_loss(const Mat& z0, const std::vector<int>& labels, const ParamStore& params,
                      const model::ModelConfig& cfg, const DiffusionSchedule& sched, Rng& rng) {
    ad::Tape tape;
    model::ParamVars pv = model::make_param_vars(tape, params);
    DiffusionDraws draws =
        sample_diffusion_draws(z0.rows(), static_cast<int>(z0.cols()), sched, cfg.p_uncond, rng);
    ad::Var loss = diffusion_loss_t(tape, tape.constant(z0), labels, pv, cfg, draws);
    return tape.val(loss)(0, 0);
}

NoisePredictor make_scorenet_predictor(const ParamStore& params, const model::ModelConfig& cfg,
                                       const std::vector<int>& labels) {
    return [&params, cfg, labels](const Mat& z, double t, bool use_null) -> Mat {
        const Eigen::Index n = z.rows();
        Vec times = Vec::Constant(n, t);
        std::vector<std::uint8_t> drop(n, use_null ? 1 : 0);
        return model::scorenet_forward(z, times, labels, drop, params, cfg);
    };
}

Mat sample(Eigen::Index n, int d_lat, const NoisePredictor& predictor,
           const DiffusionSchedule& sched, const GuidanceConfig& guidance,
           const std::vector<std::uint64_t>& row_seeds) {
    sched.validate();
    if (static_cast<Eigen::Index>(row_seeds.size()) != n)
        throw std::invalid_argument("need one seed per row");
    if (!std::isfinite(guidance.scale) || guidance.scale < 0)
        throw std::invalid_argument("guidance scale must be finite and non-negative");

    std::vector<Rng> row_rng;
    row_rng.reserve(n);
    for (auto s : row_seeds) row_rng.emplace_back(s);

    Mat z(n, d_lat);
    for (Eigen::Index r = 0; r < n; ++r)
        for (int c = 0; c < d_lat; ++c) z(r, c) = row_rng[r].normal();

    auto eps_hat_at = [&](const Mat& state, double t) -> Mat {
        if (guidance.scale == 1.0) return predictor(state, t, false);
        if (guidance.scale == 0.0) return predictor(state, t, true);
        Mat uncond = predictor(state, t, true);
        Mat cond = predictor(state, t, false);
        return uncond + guidance.scale * (cond - uncond);
    };

    const double dt = (sched.horizon - sched.t_min) / sched.n_steps;
    const double noise_scale = std::sqrt(2.0 * dt);
    for (int step = 0; step < sched.n_steps; ++step) {
        const double t = sched.horizon - step * dt;
        const double sigma = marginal_std(t);
        Mat eps_hat = eps_hat_at(z, t);
        // score s = -eps_hat / sigma; z += dt (z + 2 s) + sqrt(2 dt) xi.
        Mat drift = z - (2.0 / sigma) * eps_hat;
        Mat xi(n, d_lat);
        for (Eigen::Index r = 0; r < n; ++r)
            for (int c = 0; c < d_lat; ++c) xi(r, c) = row_rng[r].normal();
        z += dt * drift + noise_scale * xi;
        if (!z.allFinite())
            throw NumericalError("non-finite sampler state at step " + std::to_string(step) +
                                     " (t=" + std::to_string(t) + ")");
    }

    // Denoised posterior mean at t_min.
    const double a0 = alpha(sched.t_min);
    const double s0 = marginal_std(sched.t_min);
    Mat eps_hat = eps_hat_at(z, sched.t_min);
    Mat z0 = (z - s0 * eps_hat) / a0;
    if (!z0.allFinite()) throw NumericalError("non-finite denoised latent");
    return z0;
}

Mat sample_latents(const std::vector<int>& labels, const ParamStore& params,
                   const model::ModelConfig& cfg, const DiffusionSchedule& sched,
                   const GuidanceConfig& guidance, const std::vector<std::uint64_t>& row_seeds) {
    NoisePredictor pred = make_scorenet_predictor(params, cfg, labels);
    return sample(static_cast<Eigen::Index>(labels.size()), cfg.d_lat, pred, sched, guidance,
                  row_seeds);
}

}  // namespace lapddpm::diffusion
