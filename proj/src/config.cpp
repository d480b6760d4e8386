#include "lapddpm/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace lapddpm::config {

namespace {

using nlohmann::json;

class SectionReader {
public:
    SectionReader(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw std::invalid_argument("config section '" + name_ + "' must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw std::invalid_argument("config key '" + name_ + "." + key + "' has the wrong type");
        }
    }

    // A value that may be the string "median" (meaning: pick automatically).
    void get_median_or_number(const char* key, double& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const json& v = j_.at(key);
        if (v.is_string()) {
            if (v.get<std::string>() != "median")
                throw std::invalid_argument("config key '" + name_ + "." + key +
                                            "' must be a number or \"median\"");
            out = 0;
        } else if (v.is_number()) {
            out = v.get<double>();
            if (!(out > 0))
                throw std::invalid_argument("config key '" + name_ + "." + key + "' must be positive");
        } else {
            throw std::invalid_argument("config key '" + name_ + "." + key +
                                        "' must be a number or \"median\"");
        }
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw std::invalid_argument("unknown config key '" + name_ + "." + it.key() + "'");
    }

private:
    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

json median_or_number(double v) {
    if (v > 0) return v;
    return "median";
}

}  // namespace

void RunConfig::finalize_and_validate() {
    train.seed = seed;
    train.knn_k = preprocess.knn_k;
    model.k_pe = preprocess.k_pe;

    if (preprocess.min_cells < 1) throw std::invalid_argument("preprocess.min_cells must be >= 1");
    if (preprocess.p_pca < 1) throw std::invalid_argument("preprocess.p_pca must be >= 1");
    if (preprocess.knn_k < 1) throw std::invalid_argument("preprocess.knn_k must be >= 1");
    if (preprocess.k_pe < 1) throw std::invalid_argument("preprocess.k_pe must be >= 1");
    if (eval.pcs < 1) throw std::invalid_argument("eval.pcs must be >= 1");
    if (eval.max_support < 1) throw std::invalid_argument("eval.max_support must be >= 1");

    // Module invariants (label_count/feature_dim are dataset-dependent, so
    // the model section is checked without them).
    model::ModelConfig probe = model;
    probe.label_count = 1;
    probe.feature_dim = 1;
    probe.validate();
    perturb.validate();
    diffusion.validate();
    train.validate();
    if (!std::isfinite(guidance.scale) || guidance.scale < 0)
        throw std::invalid_argument("guidance.scale must be finite and non-negative");
}

RunConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("config root must be a JSON object");
    RunConfig c;
    const std::set<std::string> sections = {"seed",      "preprocess", "model", "perturb",
                                            "diffusion", "guidance",   "train", "eval"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!sections.count(it.key()))
            throw std::invalid_argument("unknown config key '" + it.key() + "'");

    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer())
            throw std::invalid_argument("config key 'seed' must be an integer");
        c.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("preprocess")) {
        SectionReader s(j.at("preprocess"), "preprocess");
        s.get("min_cells", c.preprocess.min_cells);
        s.get_median_or_number("target_sum", c.preprocess.target_sum);
        s.get("p_pca", c.preprocess.p_pca);
        s.get("knn_k", c.preprocess.knn_k);
        s.get("k_pe", c.preprocess.k_pe);
        s.finish();
    }
    if (j.contains("model")) {
        SectionReader s(j.at("model"), "model");
        s.get("d_lat", c.model.d_lat);
        s.get("d_hid", c.model.d_hid);
        s.get("d_hid_mlp", c.model.d_hid_mlp);
        s.get("k_cheb", c.model.k_cheb);
        s.get("n_enc_layers", c.model.n_enc_layers);
        s.get("n_score_layers", c.model.n_score_layers);
        s.get("time_embed_dim", c.model.time_embed_dim);
        s.get("label_embed_dim", c.model.label_embed_dim);
        s.get("p_uncond", c.model.p_uncond);
        s.finish();
    }
    if (j.contains("perturb")) {
        SectionReader s(j.at("perturb"), "perturb");
        s.get("alpha_min", c.perturb.alpha_min);
        s.get("alpha_max", c.perturb.alpha_max);
        s.get("epsilon", c.perturb.epsilon);
        s.get("ip", c.perturb.ip);
        s.get("clip_lo", c.perturb.clip_lo);
        s.get("clip_hi", c.perturb.clip_hi);
        s.get("power_iters", c.perturb.power_iters);
        s.get("power_tol", c.perturb.power_tol);
        s.finish();
    }
    if (j.contains("diffusion")) {
        SectionReader s(j.at("diffusion"), "diffusion");
        s.get("T", c.diffusion.horizon);
        s.get("t_min", c.diffusion.t_min);
        s.get("n_steps", c.diffusion.n_steps);
        s.finish();
    }
    if (j.contains("guidance")) {
        SectionReader s(j.at("guidance"), "guidance");
        s.get("scale", c.guidance.scale);
        s.finish();
    }
    if (j.contains("train")) {
        SectionReader s(j.at("train"), "train");
        s.get("epochs", c.train.epochs);
        s.get("batch_size", c.train.batch_size);
        s.get("learning_rate", c.train.learning_rate);
        s.get("w_diff", c.train.w_diff);
        s.get("w_kl", c.train.w_kl);
        s.get("w_rec", c.train.w_rec);
        s.get("mask_fraction", c.train.mask_fraction);
        s.get("grad_clip_norm", c.train.grad_clip_norm);
        s.get("disable_perturb", c.train.disable_perturb);
        s.get("disable_mask", c.train.disable_mask);
        s.get("disable_lpe", c.train.disable_lpe);
        s.finish();
    }
    if (j.contains("eval")) {
        SectionReader s(j.at("eval"), "eval");
        s.get("pcs", c.eval.pcs);
        s.get("max_support", c.eval.max_support);
        s.get_median_or_number("gamma", c.eval.gamma);
        s.finish();
    }
    c.finalize_and_validate();
    return c;
}

RunConfig config_from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw std::invalid_argument("malformed config JSON: " + std::string(e.what()));
    }
    return config_from_json(j);
}

nlohmann::json config_to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["preprocess"] = {{"min_cells", c.preprocess.min_cells},
                       {"target_sum", median_or_number(c.preprocess.target_sum)},
                       {"p_pca", c.preprocess.p_pca},
                       {"knn_k", c.preprocess.knn_k},
                       {"k_pe", c.preprocess.k_pe}};
    j["model"] = {{"d_lat", c.model.d_lat},
                  {"d_hid", c.model.d_hid},
                  {"d_hid_mlp", c.model.d_hid_mlp},
                  {"k_cheb", c.model.k_cheb},
                  {"n_enc_layers", c.model.n_enc_layers},
                  {"n_score_layers", c.model.n_score_layers},
                  {"time_embed_dim", c.model.time_embed_dim},
                  {"label_embed_dim", c.model.label_embed_dim},
                  {"p_uncond", c.model.p_uncond}};
    j["perturb"] = {{"alpha_min", c.perturb.alpha_min},
                    {"alpha_max", c.perturb.alpha_max},
                    {"epsilon", c.perturb.epsilon},
                    {"ip", c.perturb.ip},
                    {"clip_lo", c.perturb.clip_lo},
                    {"clip_hi", c.perturb.clip_hi},
                    {"power_iters", c.perturb.power_iters},
                    {"power_tol", c.perturb.power_tol}};
    j["diffusion"] = {{"T", c.diffusion.horizon},
                      {"t_min", c.diffusion.t_min},
                      {"n_steps", c.diffusion.n_steps}};
    j["guidance"] = {{"scale", c.guidance.scale}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"batch_size", c.train.batch_size},
                  {"learning_rate", c.train.learning_rate},
                  {"w_diff", c.train.w_diff},
                  {"w_kl", c.train.w_kl},
                  {"w_rec", c.train.w_rec},
                  {"mask_fraction", c.train.mask_fraction},
                  {"grad_clip_norm", c.train.grad_clip_norm},
                  {"disable_perturb", c.train.disable_perturb},
                  {"disable_mask", c.train.disable_mask},
                  {"disable_lpe", c.train.disable_lpe}};
    j["eval"] = {{"pcs", c.eval.pcs},
                 {"max_support", c.eval.max_support},
                 {"gamma", median_or_number(c.eval.gamma)}};
    return j;
}

}  // namespace lapddpm::config
