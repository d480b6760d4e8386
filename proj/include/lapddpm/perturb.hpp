#pragma once

#include <cstdint>
#include <vector>

#include "lapddpm/graph.hpp"
#include "lapddpm/rng.hpp"
#include "lapddpm/tensor.hpp"

namespace lapddpm::perturb {

struct PerturbConfig {
    double alpha_min = 0.8;
    double alpha_max = 1.2;
    double epsilon = 0.5;   // total perturbation budget (infinity norm)
    int ip = 3;             // refinement steps
    double clip_lo = 1e-4;
    double clip_hi = 10.0;
    int power_iters = 50;
    double power_tol = 1e-6;

    void validate() const;
};

// Number of times adversarial_perturb has run in this process; used by the
// training ablation checks.
std::uint64_t call_count();
void reset_call_count();

// One uniform(alpha_min, alpha_max) draw per undirected edge, mirrored to
// both directions.
std::vector<double> init_weights(const graph::CellGraph& g, const PerturbConfig& cfg, Rng& rng);

// Power iteration on the symmetric weighted adjacency from the all-ones
// start vector. Returns the unit eigenvector (largest-magnitude entry
// positive) and the Rayleigh quotient.
std::pair<Vec, double> principal_eigenvector(const graph::CellGraph& g,
                                             const std::vector<double>& weights, int iters,
                                             double tol);

// ip rounds of: recompute the principal eigenvector, take a rank-1 step of
// size epsilon/ip along v_i * v_j (normalized to unit infinity norm), applied
// symmetrically. Weights are clipped to [clip_lo, clip_hi] at the end.
std::vector<double> adversarial_perturb(const graph::CellGraph& g,
                                        const std::vector<double>& weights,
                                        const PerturbConfig& cfg);

}  // namespace lapddpm::perturb
