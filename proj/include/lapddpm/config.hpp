#pragma once

#include <string>

#include "json.hpp"
#include "lapddpm/diffusion.hpp"
#include "lapddpm/model.hpp"
#include "lapddpm/perturb.hpp"
#include "lapddpm/train.hpp"

namespace lapddpm::config {

struct PreprocessConfig {
    int min_cells = 3;
    double target_sum = 0;  // <= 0 selects the median of per-cell totals
    int p_pca = 30;
    int knn_k = 15;
    int k_pe = 8;
};

struct EvalConfig {
    int pcs = 30;
    int max_support = 1000;
    double gamma = 0;  // <= 0 selects the median heuristic
};

// The single experiment manifest: every module's knobs in one place.
struct RunConfig {
    std::uint64_t seed = 0;
    PreprocessConfig preprocess;
    model::ModelConfig model;
    perturb::PerturbConfig perturb;
    diffusion::DiffusionSchedule diffusion;
    diffusion::GuidanceConfig guidance;
    train::TrainConfig train;
    EvalConfig eval;

    // Cross-section copies (seed, knn_k, k_pe) applied; throws on invalid
    // values before any work starts.
    void finalize_and_validate();
};

// Strict parse: unknown keys at any level are rejected.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig config_from_file(const std::string& path);

// Canonical echo; config_from_json(config_to_json(c)) reproduces c.
nlohmann::json config_to_json(const RunConfig& c);

}  // namespace lapddpm::config
