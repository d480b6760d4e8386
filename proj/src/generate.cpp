#include "lapddpm/generate.hpp"

#include "lapddpm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lapddpm::gen {

void GenerationRequest::validate(std::size_t label_count) const {
    if (total.has_value() == !n_per_label.empty())
        throw std::invalid_argument("request exactly one of: total count, per-label counts");
    if (total && *total < 0) throw std::invalid_argument("total must be non-negative");
    for (const auto& [label, count] : n_per_label) {
        if (label < 0 || label >= static_cast<int>(label_count))
            throw std::invalid_argument("unknown label id: " + std::to_string(label));
        if (count < 0) throw std::invalid_argument("per-label counts must be non-negative");
    }
    if (!std::isfinite(guidance_scale) || guidance_scale < 0)
        throw std::invalid_argument("guidance scale must be finite and non-negative");
}

std::uint64_t poisson_sample(double rate, Rng& rng) {
    if (!(rate >= 0) || !std::isfinite(rate))
        throw std::invalid_argument("Poisson rate must be finite and non-negative");
    return rng.poisson(rate);
}

ingest::CountMatrix generate(const train::Checkpoint& ckpt, const model::ModelConfig& mcfg,
                             const diffusion::DiffusionSchedule& sched,
                             const GenerationRequest& req) {
    req.validate(ckpt.label_vocab.size());

    // Resolve the per-label plan. Total-mode draws labels from the training
    // frequencies, then regroups them in vocabulary order.
    std::map<int, std::int64_t> plan = req.n_per_label;
    if (req.total) {
        plan.clear();
        std::int64_t total_train = 0;
        for (auto c : ckpt.label_counts) total_train += c;
        if (total_train <= 0) throw std::runtime_error("checkpoint has no label frequencies");
        Rng label_rng(mix_seed(req.seed, 0x6c61626cULL));
        for (std::int64_t i = 0; i < *req.total; ++i) {
            std::int64_t u = static_cast<std::int64_t>(
                label_rng.uniform_index(static_cast<std::uint64_t>(total_train)));
            int label = 0;
            for (std::size_t l = 0; l < ckpt.label_counts.size(); ++l) {
                if (u < ckpt.label_counts[l]) {
                    label = static_cast<int>(l);
                    break;
                }
                u -= ckpt.label_counts[l];
            }
            ++plan[label];
        }
    }

    std::vector<int> labels;
    std::vector<std::uint64_t> row_seeds;
    for (const auto& [label, count] : plan)
        for (std::int64_t k = 0; k < count; ++k) {
            labels.push_back(label);
            row_seeds.push_back(mix_seed(req.seed, static_cast<std::uint64_t>(label) + 1,
                                         static_cast<std::uint64_t>(k)));
        }

    ingest::CountMatrix out;
    out.label_vocab = ckpt.label_vocab;
    for (std::size_t j = 0; j < ckpt.gene_names.size(); ++j)
        if (ckpt.gene_mask[j]) out.gene_names.push_back(ckpt.gene_names[j]);
    const Eigen::Index d_f = static_cast<Eigen::Index>(out.gene_names.size());
    const Eigen::Index n = static_cast<Eigen::Index>(labels.size());
    out.counts = ingest::CountsMat::Zero(n, d_f);
    out.cell_labels = labels;
    if (n == 0) return out;

    diffusion::GuidanceConfig guidance{req.guidance_scale};
    Mat z0 = diffusion::sample_latents(labels, ckpt.params, mcfg, sched, guidance, row_seeds);
    Mat log_rates = model::decoder_forward(z0, ckpt.params, mcfg);
    if (log_rates.cols() != d_f) throw std::runtime_error("decoder width mismatch");
    if (!log_rates.allFinite()) throw NumericalError("non-finite rates");

    for (Eigen::Index i = 0; i < n; ++i) {
        Rng row_rng(mix_seed(row_seeds[i], 0x706f6973ULL));
        for (Eigen::Index j = 0; j < d_f; ++j)
            out.counts(i, j) =
                static_cast<std::int64_t>(poisson_sample(std::exp(log_rates(i, j)), row_rng));
    }
    return out;
}

}  // namespace lapddpm::gen
