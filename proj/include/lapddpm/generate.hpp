#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "lapddpm/diffusion.hpp"
#include "lapddpm/ingest.hpp"
#include "lapddpm/rng.hpp"
#include "lapddpm/train.hpp"

namespace lapddpm::gen {

struct GenerationRequest {
    // Exactly one of the two modes: explicit per-label counts, or a total
    // with labels drawn from the checkpoint's training label frequencies.
    std::map<int, std::int64_t> n_per_label;
    std::optional<std::int64_t> total;
    double guidance_scale = 1.0;
    std::uint64_t seed = 0;

    void validate(std::size_t label_count) const;
};

// Exact Poisson draw (sequential inversion below rate 10, PTRS rejection
// above).
std::uint64_t poisson_sample(double rate, Rng& rng);

// Algorithm 2: sample latents with the reverse SDE, decode to log-rates,
// draw Poisson counts. Rows are grouped by label in vocabulary order; each
// row's stream is keyed by (seed, label, index within label).
ingest::CountMatrix generate(const train::Checkpoint& ckpt, const model::ModelConfig& mcfg,
                             const diffusion::DiffusionSchedule& sched,
                             const GenerationRequest& req);

}  // namespace lapddpm::gen
