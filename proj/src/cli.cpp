#include "lapddpm/cli.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lapddpm/config.hpp"
#include "lapddpm/errors.hpp"
#include "lapddpm/eval.hpp"
#include "lapddpm/generate.hpp"
#include "lapddpm/ingest.hpp"
#include "lapddpm/io.hpp"
#include "lapddpm/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lapddpm::cli {

namespace {

const char* kConfigReference = R"(Config file keys (JSON; flags override):
  seed                      master RNG seed (integer)
  preprocess.min_cells      keep genes expressed in at least this many cells
  preprocess.target_sum     per-cell normalization target, or "median"
  preprocess.p_pca          PCA components for graph coordinates
  preprocess.knn_k          k-NN neighbours per cell
  preprocess.k_pe           Laplacian positional encoding width
  model.d_lat               latent dimension
  model.d_hid               graph-encoder hidden width
  model.d_hid_mlp           score-network hidden width
  model.k_cheb              Chebyshev filter order
  model.n_enc_layers        encoder ChebConv layers
  model.n_score_layers      score-network dense blocks
  model.time_embed_dim      time embedding width (even)
  model.label_embed_dim     label embedding width
  model.p_uncond            conditional-dropout probability
  perturb.alpha_min         uniform init lower bound for edge weights
  perturb.alpha_max         uniform init upper bound for edge weights
  perturb.epsilon           total adversarial perturbation budget
  perturb.ip                perturbation refinement steps
  perturb.clip_lo           weight clip lower bound
  perturb.clip_hi           weight clip upper bound
  perturb.power_iters       power-iteration cap per eigenvector solve
  perturb.power_tol         power-iteration convergence tolerance
  diffusion.T               forward SDE horizon
  diffusion.t_min           sampling floor
  diffusion.n_steps         reverse-SDE discretization steps
  guidance.scale            classifier-free guidance scale (1 = conditional)
  train.epochs              training epochs
  train.batch_size          cells per batch
  train.learning_rate       Adam base learning rate
  train.w_diff              diffusion loss weight
  train.w_kl                KL loss weight
  train.w_rec               reconstruction loss weight
  train.mask_fraction       input gene masking fraction
  train.grad_clip_norm      global gradient norm cap
  train.disable_perturb     ablation: skip edge-weight perturbation
  train.disable_mask        ablation: skip input masking
  train.disable_lpe         ablation: zero the positional encodings
  eval.pcs                  PCs for the evaluation embedding
  eval.max_support          Wasserstein subsample cap
  eval.gamma                RBF bandwidth, or "median")";

struct CliError {
    int code;
    std::string message;
};

config::RunConfig load_config_with_overrides(const std::string& config_path,
                                             const std::function<void(config::RunConfig&)>& apply) {
    config::RunConfig rc;
    if (!config_path.empty()) rc = config::config_from_file(config_path);
    apply(rc);
    rc.finalize_and_validate();
    return rc;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::istringstream is(text);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        if (tok.empty()) continue;
        std::size_t pos = 0;
        const std::uint64_t v = std::stoull(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument("bad seed list entry: " + tok);
        seeds.push_back(v);
    }
    if (seeds.empty()) throw std::invalid_argument("empty seed list");
    return seeds;
}

int cmd_preprocess(const std::string& input_dir, const std::string& out_file,
                   const config::RunConfig& rc, std::ostream& out) {
    ingest::CountMatrix cm = ingest::load_dataset(input_dir);
    ingest::ProcessedDataset ds =
        ingest::preprocess(cm, rc.preprocess.min_cells, rc.preprocess.target_sum,
                           std::min<int>(rc.preprocess.p_pca,
                                         static_cast<int>(std::min<Eigen::Index>(
                                             cm.n_cells() - 1, cm.n_genes()))));
    ingest::save_processed(out_file, ds);

    json hist;
    for (std::size_t l = 0; l < cm.label_vocab.size(); ++l) {
        int count = 0;
        for (int id : cm.cell_labels)
            if (id == static_cast<int>(l)) ++count;
        hist[cm.label_vocab[l]] = count;
    }
    json summary = {{"N", cm.n_cells()},
                    {"D", cm.n_genes()},
                    {"D_f", ds.filtered.n_genes()},
                    {"labels", hist},
                    {"out", out_file}};
    out << summary.dump() << '\n';
    return 0;
}

int cmd_train(const std::string& data_file, const std::string& out_ckpt,
              const config::RunConfig& rc, std::ostream& out) {
    ingest::ProcessedDataset ds = ingest::load_processed(data_file);
    train::Checkpoint ckpt = train::train(ds, rc.train, rc.model, rc.diffusion, rc.perturb,
                                          config::config_to_json(rc), &out);
    train::save_checkpoint(out_ckpt, ckpt);
    return 0;
}

int cmd_generate(const std::string& ckpt_file, std::optional<std::int64_t> total,
                 const std::string& per_label_spec, std::uint64_t seed, double guidance,
                 const std::string& out_dir, std::ostream& out) {
    train::Checkpoint ckpt = train::load_checkpoint(ckpt_file);
    config::RunConfig rc = config::config_from_json(ckpt.config_echo);

    gen::GenerationRequest req;
    req.seed = seed;
    req.guidance_scale = guidance;
    if (total) {
        req.total = *total;
    } else {
        std::map<std::string, int> vocab_ids;
        for (std::size_t i = 0; i < ckpt.label_vocab.size(); ++i)
            vocab_ids[ckpt.label_vocab[i]] = static_cast<int>(i);
        std::istringstream is(per_label_spec);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("bad per-label entry (want LABEL=COUNT): " + tok);
            const std::string label = tok.substr(0, eq);
            const std::string count_s = tok.substr(eq + 1);
            auto it = vocab_ids.find(label);
            if (it == vocab_ids.end())
                throw std::invalid_argument("unknown label in request: " + label);
            std::size_t pos = 0;
            const std::int64_t count = std::stoll(count_s, &pos);
            if (pos != count_s.size() || count < 0)
                throw std::invalid_argument("bad per-label count: " + count_s);
            req.n_per_label[it->second] += count;
        }
        if (req.n_per_label.empty()) throw std::invalid_argument("empty per-label request");
    }

    model::ModelConfig mcfg = rc.model;
    mcfg.label_count = static_cast<int>(ckpt.label_vocab.size());
    int d_f = 0;
    for (auto b : ckpt.gene_mask)
        if (b) ++d_f;
    mcfg.feature_dim = d_f;

    ingest::CountMatrix generated = gen::generate(ckpt, mcfg, rc.diffusion, req);
    ingest::save_dataset(out_dir, generated);

    json manifest = {{"checkpoint_hash", io::fnv1a_hex(ckpt_file)},
                     {"seed", seed},
                     {"guidance", guidance},
                     {"n_generated", generated.n_cells()}};
    if (total) {
        manifest["request"] = {{"total", *total}};
    } else {
        json per;
        for (const auto& [id, count] : req.n_per_label) per[ckpt.label_vocab[id]] = count;
        manifest["request"] = {{"per_label", per}};
    }
    io::write_file(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");
    out << json({{"out", out_dir}, {"n", generated.n_cells()}}).dump() << '\n';
    return 0;
}

int cmd_eval(const std::string& real_dir, const std::string& gen_dir, int pcs, bool per_label,
             const std::vector<std::uint64_t>& seeds, const config::RunConfig& rc,
             const std::string& csv_path, std::ostream& out) {
    ingest::CountMatrix real = ingest::load_dataset(real_dir);
    ingest::CountMatrix generated = ingest::load_dataset(gen_dir);

    std::ostringstream csv;
    csv << "seed,label,mmd,wd,n_real,n_gen\n";
    json per_seed = json::array();
    std::vector<double> mmds, wds;
    for (auto seed : seeds) {
        eval::EvalOptions opts;
        opts.pcs = pcs;
        opts.per_label = per_label;
        opts.gamma = rc.eval.gamma;
        opts.max_support = rc.eval.max_support;
        opts.seed = seed;
        eval::MetricReport rep = eval::evaluation_protocol(real, generated, opts);
        mmds.push_back(rep.mmd);
        wds.push_back(rep.wd);

        json entry = {{"seed", seed}, {"mmd", rep.mmd}, {"wd", rep.wd}};
        if (per_label) {
            json pl;
            for (const auto& [label, pm] : rep.per_label) {
                if (pm.missing_in_real || pm.missing_in_generated) {
                    pl[label] = {{"missing_in_real", pm.missing_in_real},
                                 {"missing_in_generated", pm.missing_in_generated},
                                 {"n_real", pm.n_real},
                                 {"n_gen", pm.n_gen}};
                } else {
                    pl[label] = {{"mmd", pm.mmd},
                                 {"wd", pm.wd},
                                 {"n_real", pm.n_real},
                                 {"n_gen", pm.n_gen}};
                    char line[256];
                    std::snprintf(line, sizeof(line), "%llu,%s,%.12g,%.12g,%lld,%lld\n",
                                  static_cast<unsigned long long>(seed), label.c_str(), pm.mmd,
                                  pm.wd, static_cast<long long>(pm.n_real),
                                  static_cast<long long>(pm.n_gen));
                    csv << line;
                }
            }
            entry["per_label"] = pl;
        }
        per_seed.push_back(entry);
    }

    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto stdev = [&](const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        const double m = mean(v);
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(v.size() - 1));
    };

    json report = {{"pcs", pcs},
                   {"n_real", real.n_cells()},
                   {"n_gen", generated.n_cells()},
                   {"seeds", seeds},
                   {"per_seed", per_seed},
                   {"mmd_mean", mean(mmds)},
                   {"mmd_std", stdev(mmds)},
                   {"wd_mean", mean(wds)},
                   {"wd_std", stdev(wds)}};
    out << report.dump() << '\n';

    char row[160];
    out << "metric  mean          std\n";
    std::snprintf(row, sizeof(row), "mmd     %-13.6g %.6g\n", mean(mmds), stdev(mmds));
    out << row;
    std::snprintf(row, sizeof(row), "wd      %-13.6g %.6g\n", mean(wds), stdev(wds));
    out << row;

    if (!csv_path.empty()) io::write_file(csv_path, csv.str());
    return 0;
}

std::vector<eval::AttackSpec> parse_attacks(const std::string& text, std::uint64_t seed) {
    std::vector<eval::AttackSpec> specs;
    std::istringstream is(text);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        if (tok.empty()) continue;
        const auto colon = tok.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("bad attack entry (want KIND:FRACTION): " + tok);
        const std::string kind = tok.substr(0, colon);
        eval::AttackSpec spec;
        if (kind == "random") {
            spec.kind = eval::AttackSpec::Kind::random;
        } else if (kind == "dice") {
            spec.kind = eval::AttackSpec::Kind::dice;
        } else {
            throw std::invalid_argument("unknown attack kind: " + kind);
        }
        spec.fraction = std::stod(tok.substr(colon + 1));
        if (!(spec.fraction >= 0 && spec.fraction < 1))
            throw std::invalid_argument("attack fraction must lie in [0, 1)");
        spec.seed = seed;
        specs.push_back(spec);
    }
    if (specs.empty()) throw std::invalid_argument("empty attack list");
    return specs;
}

int cmd_attack(const std::string& data_dir, const std::string& ckpt_a_file,
               const std::string& ckpt_b_file, const std::string& attacks_text,
               std::uint64_t seed, std::ostream& out) {
    ingest::CountMatrix data = ingest::load_dataset(data_dir);
    train::Checkpoint a = train::load_checkpoint(ckpt_a_file);
    train::Checkpoint b = train::load_checkpoint(ckpt_b_file);
    auto specs = parse_attacks(attacks_text, seed);
    auto rows = eval::robustness_report(data, a, b, specs);

    json jrows = json::array();
    for (const auto& r : rows)
        jrows.push_back({{"attack", r.attack},
                         {"fraction", r.fraction},
                         {"model", r.model},
                         {"mean_drift", r.mean_drift}});
    out << json({{"rows", jrows}, {"n_cells", data.n_cells()}}).dump() << '\n';

    // Aligned text table on stderr-style secondary channel is unnecessary;
    // emit it after the JSON for human reading.
    out << "attack     fraction  model     mean_drift\n";
    for (const auto& r : rows) {
        char line[128];
        std::snprintf(line, sizeof(line), "%-10s %-9.3f %-9s %.6f\n", r.attack.c_str(),
                      r.fraction, r.model.c_str(), r.mean_drift);
        out << line;
    }
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    if (const char* threads = std::getenv("LAPDDPM_THREADS")) {
        const int n = std::atoi(threads);
        if (n > 0) Eigen::setNbThreads(n);
    }

    CLI::App app{"LapDDPM: conditional graph-diffusion generation for scRNA-seq counts"};
    app.require_subcommand(1);
    app.footer(kConfigReference);

    std::string config_path, input_dir, out_path, data_file, ckpt_file;
    std::uint64_t seed = 0;
    bool seed_given = false;

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "Filter genes, normalize, fit PCA, write cache");
    pre->footer(kConfigReference);
    pre->add_option("--input", input_dir, "dataset directory (matrix.mtx/labels.tsv or counts.csv)")
        ->required();
    pre->add_option("--out", out_path, "output cache file")->required();
    pre->add_option("--config", config_path, "JSON config file");
    int min_cells_flag = -1;
    pre->add_option("--min-cells", min_cells_flag, "override preprocess.min_cells");

    // train
    auto* tr = app.add_subcommand("train", "Train the model on a processed cache");
    tr->footer(kConfigReference);
    tr->add_option("--data", data_file, "processed cache from `preprocess`")->required();
    tr->add_option("--out", out_path, "output checkpoint file")->required();
    tr->add_option("--config", config_path, "JSON config file");
    int epochs_flag = -1, batch_flag = -1;
    double lr_flag = -1;
    bool no_perturb = false, no_mask = false, no_lpe = false;
    tr->add_option("--epochs", epochs_flag, "override train.epochs");
    tr->add_option("--batch-size", batch_flag, "override train.batch_size");
    tr->add_option("--lr", lr_flag, "override train.learning_rate");
    tr->add_option("--seed", seed, "override seed")->each([&](const std::string&) { seed_given = true; });
    tr->add_flag("--no-perturb", no_perturb, "disable spectral weight perturbation");
    tr->add_flag("--no-mask", no_mask, "disable input gene masking");
    tr->add_flag("--no-lpe", no_lpe, "disable Laplacian positional encodings");

    // generate
    auto* ge = app.add_subcommand("generate", "Sample a synthetic dataset from a checkpoint");
    ge->footer(kConfigReference);
    ge->add_option("--ckpt", ckpt_file, "trained checkpoint")->required();
    std::int64_t n_total = -1;
    std::string per_label_spec;
    double guidance = std::nan("");
    ge->add_option("--n", n_total, "total cells; labels follow training frequencies");
    ge->add_option("--per-label", per_label_spec, "per-label counts, e.g. A=5,B=5");
    ge->add_option("--seed", seed, "generation seed");
    ge->add_option("--guidance", guidance, "guidance scale override");
    ge->add_option("--out", out_path, "output dataset directory")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "Distribution metrics between real and generated data");
    ev->footer(kConfigReference);
    std::string real_dir, gen_dir, seeds_text = "0";
    int pcs_flag = -1;
    bool per_label = false;
    ev->add_option("--real", real_dir, "real dataset directory")->required();
    ev->add_option("--gen", gen_dir, "generated dataset directory")->required();
    ev->add_option("--pcs", pcs_flag, "override eval.pcs");
    ev->add_flag("--per-label", per_label, "average metrics per shared label");
    ev->add_option("--seeds", seeds_text, "comma-separated metric seeds");
    ev->add_option("--config", config_path, "JSON config file");
    std::string csv_path;
    ev->add_option("--csv", csv_path, "write per-label metrics to this CSV file");

    // attack
    auto* at = app.add_subcommand("attack", "Robustness report under graph poisoning");
    at->footer(kConfigReference);
    std::string attack_data_dir, ckpt_a, ckpt_b, attacks_text = "random:0.1,dice:0.1";
    at->add_option("--data", attack_data_dir, "dataset directory to encode")->required();
    at->add_option("--ckpt-a", ckpt_a, "first checkpoint (e.g. with perturbation)")->required();
    at->add_option("--ckpt-b", ckpt_b, "second checkpoint (e.g. without perturbation)")->required();
    at->add_option("--attacks", attacks_text, "comma list of KIND:FRACTION (random|dice)");
    at->add_option("--seed", seed, "attack sampling seed");

    try {
        // CLI11 parses argv-style reversed vectors; args here are in natural
        // order without the program name.
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        if (app.got_subcommand(pre)) {
            auto rc = load_config_with_overrides(config_path, [&](config::RunConfig& c) {
                if (min_cells_flag > 0) c.preprocess.min_cells = min_cells_flag;
            });
            return cmd_preprocess(input_dir, out_path, rc, out);
        }
        if (app.got_subcommand(tr)) {
            auto rc = load_config_with_overrides(config_path, [&](config::RunConfig& c) {
                if (epochs_flag > 0) c.train.epochs = epochs_flag;
                if (batch_flag > 0) c.train.batch_size = batch_flag;
                if (lr_flag > 0) c.train.learning_rate = lr_flag;
                if (seed_given) c.seed = seed;
                if (no_perturb) c.train.disable_perturb = true;
                if (no_mask) c.train.disable_mask = true;
                if (no_lpe) c.train.disable_lpe = true;
            });
            return cmd_train(data_file, out_path, rc, out);
        }
        if (app.got_subcommand(ge)) {
            train::Checkpoint probe;  // guidance default comes from the checkpoint config
            std::optional<std::int64_t> total;
            if (n_total >= 0) total = n_total;
            if (total.has_value() == !per_label_spec.empty())
                throw std::invalid_argument("give exactly one of --n or --per-label");
            double g = guidance;
            if (std::isnan(g)) {
                train::Checkpoint ck = train::load_checkpoint(ckpt_file);
                config::RunConfig rc = config::config_from_json(ck.config_echo);
                g = rc.guidance.scale;
            }
            (void)probe;
            return cmd_generate(ckpt_file, total, per_label_spec, seed, g, out_path, out);
        }
        if (app.got_subcommand(ev)) {
            auto rc = load_config_with_overrides(config_path, [&](config::RunConfig&) {});
            const int pcs = pcs_flag > 0 ? pcs_flag : rc.eval.pcs;
            return cmd_eval(real_dir, gen_dir, pcs, per_label, parse_seed_list(seeds_text), rc,
                            csv_path, out);
        }
        if (app.got_subcommand(at)) {
            return cmd_attack(attack_data_dir, ckpt_a, ckpt_b, attacks_text, seed, out);
        }
        err << "no subcommand given\n";
        return 2;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::invalid_argument& e) {
        err << "validation error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace lapddpm::cli
