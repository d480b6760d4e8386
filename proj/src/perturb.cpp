#include "lapddpm/perturb.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

namespace lapddpm::perturb {

namespace {
std::atomic<std::uint64_t> g_calls{0};
}

std::uint64_t call_count() { return g_calls.load(); }
void reset_call_count() { g_calls.store(0); }

void PerturbConfig::validate() const {
    if (!(alpha_min > 0) || !(alpha_min <= alpha_max))
        throw std::invalid_argument("require 0 < alpha_min <= alpha_max");
    if (epsilon < 0) throw std::invalid_argument("epsilon must be non-negative");
    if (ip < 1) throw std::invalid_argument("ip must be positive");
    if (!(clip_lo > 0) || !(clip_lo < clip_hi))
        throw std::invalid_argument("require 0 < clip_lo < clip_hi");
    if (power_iters < 1 || !(power_tol > 0))
        throw std::invalid_argument("invalid power-iteration settings");
}

std::vector<double> init_weights(const graph::CellGraph& g, const PerturbConfig& cfg, Rng& rng) {
    cfg.validate();
    auto rev = g.reverse_index();
    std::vector<double> w(g.edges.size(), 0.0);
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        if (g.edges[e].first > g.edges[e].second) continue;  // canonical direction first
        const double x = cfg.alpha_min == cfg.alpha_max
                             ? cfg.alpha_min
                             : rng.uniform(cfg.alpha_min, cfg.alpha_max);
        w[e] = x;
        w[rev[e]] = x;
    }
    return w;
}

std::pair<Vec, double> principal_eigenvector(const graph::CellGraph& g,
                                             const std::vector<double>& weights, int iters,
                                             double tol) {
    if (g.n_nodes == 0 || g.edges.empty()) throw std::runtime_error("graph has no edges");
    auto view = graph::make_adjacency_view(g, weights);

    // Diagonal shift: on bipartite graphs the +/- lambda_max pair ties in
    // magnitude and plain iteration oscillates; A + sI has the same
    // eigenvectors with the Perron root strictly dominant.
    const double shift = 0.5 * *std::max_element(view.deg.begin(), view.deg.end());

    Vec v = Vec::Constant(g.n_nodes, 1.0 / std::sqrt(static_cast<double>(g.n_nodes)));
    for (int it = 0; it < iters; ++it) {
        Vec u = view.adj_apply(v) + shift * v;
        const double nu = u.norm();
        if (!(nu > 0)) throw std::runtime_error("power iteration hit the zero vector");
        u /= nu;
        const double diff = (u - v).norm();
        v = u;
        if (diff < tol) break;
    }
    const double lambda = v.dot(view.adj_apply(v));
    Eigen::Index argmax = 0;
    v.cwiseAbs().maxCoeff(&argmax);
    if (v(argmax) < 0) v = -v;
    return {v, lambda};
}

std::vector<double> adversarial_perturb(const graph::CellGraph& g,
                                        const std::vector<double>& weights,
                                        const PerturbConfig& cfg) {
    cfg.validate();
    g_calls.fetch_add(1);
    std::vector<double> w = weights;

    if (cfg.epsilon > 0) {
        const double step = cfg.epsilon / static_cast<double>(cfg.ip);
        for (int round = 0; round < cfg.ip; ++round) {
            auto [v, lambda] = principal_eigenvector(g, w, cfg.power_iters, cfg.power_tol);
            (void)lambda;
            std::vector<double> delta(g.edges.size());
            double max_abs = 0.0;
            for (std::size_t e = 0; e < g.edges.size(); ++e) {
                delta[e] = v(g.edges[e].first) * v(g.edges[e].second);
                max_abs = std::max(max_abs, std::fabs(delta[e]));
            }
            if (max_abs < 1e-300) continue;  // eigenvector vanishes on every edge
            for (std::size_t e = 0; e < g.edges.size(); ++e)
                w[e] += step * delta[e] / max_abs;
        }
    }

    for (auto& x : w) x = std::clamp(x, cfg.clip_lo, cfg.clip_hi);
    return w;
}

}  // namespace lapddpm::perturb
