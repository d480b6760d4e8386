#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "lapddpm/cli.hpp"
#include "lapddpm/config.hpp"
#include "lapddpm/ingest.hpp"
#include "lapddpm/io.hpp"
#include "lapddpm/rng.hpp"

namespace fs = std::filesystem;
using namespace lapddpm;
using nlohmann::json;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("lapddpm_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run(const std::vector<std::string>& args, std::string* out_text = nullptr,
        std::string* err_text = nullptr) {
    std::ostringstream out, err;
    const int code = cli::run_cli(args, out, err);
    if (out_text) *out_text = out.str();
    if (err_text) *err_text = err.str();
    return code;
}

// A small dataset on disk plus a fast config file.
struct Fixture {
    fs::path dir;
    fs::path data_dir;
    fs::path config;
};

Fixture make_fixture(const std::string& name, int n = 48, int genes = 12) {
    Fixture f;
    f.dir = temp_dir(name);
    f.data_dir = f.dir / "data";

    Rng rng(100);
    ingest::CountMatrix cm;
    cm.counts.resize(n, genes);
    cm.label_vocab = {"typeA", "typeB"};
    for (int i = 0; i < n; ++i) {
        const int label = i % 2;
        cm.cell_labels.push_back(label);
        for (int j = 0; j < genes; ++j)
            cm.counts(i, j) =
                static_cast<std::int64_t>(rng.poisson(label == 0 ? 1.0 + j % 4 : 4.0 - j % 4));
        if (cm.counts.row(i).sum() == 0) cm.counts(i, 0) = 1;
    }
    for (int j = 0; j < genes; ++j) cm.gene_names.push_back("g" + std::to_string(j));
    ingest::save_dataset(f.data_dir, cm);

    json cfg = {
        {"seed", 1},
        {"preprocess", {{"min_cells", 1}, {"p_pca", 6}, {"knn_k", 4}, {"k_pe", 3}}},
        {"model",
         {{"d_lat", 4},
          {"d_hid", 8},
          {"d_hid_mlp", 8},
          {"k_cheb", 2},
          {"n_enc_layers", 1},
          {"n_score_layers", 1},
          {"time_embed_dim", 4},
          {"label_embed_dim", 3}}},
        {"diffusion", {{"n_steps", 20}}},
        {"train", {{"epochs", 2}, {"batch_size", 24}}},
        {"eval", {{"pcs", 3}, {"max_support", 64}}},
    };
    f.config = f.dir / "config.json";
    io::write_file(f.config, cfg.dump(2));
    return f;
}

}  // namespace

TEST_CASE("help exits 0 on every subcommand and documents config keys") {
    for (const std::string sub : {"preprocess", "train", "generate", "eval", "attack"}) {
        std::string out;
        CHECK(run({sub, "--help"}, &out) == 0);
        CHECK(out.find("Config file keys") != std::string::npos);
        CHECK(out.find("train.mask_fraction") != std::string::npos);
        CHECK(out.find("perturb.epsilon") != std::string::npos);
    }
}

TEST_CASE("preprocess: happy path prints a summary; cache is created") {
    auto f = make_fixture("pre");
    std::string out;
    const int code = run({"preprocess", "--input", f.data_dir.string(), "--out",
                          (f.dir / "cache.bin").string(), "--config", f.config.string()},
                         &out);
    CHECK(code == 0);
    CHECK(fs::exists(f.dir / "cache.bin"));
    json summary = json::parse(out);
    CHECK(summary["N"] == 48);
    CHECK(summary["D"] == 12);
    CHECK(summary["labels"].size() == 2);
}

TEST_CASE("preprocess: missing labels file exits 1 naming the file") {
    auto f = make_fixture("premiss");
    fs::remove(f.data_dir / "labels.tsv");
    std::string err;
    const int code = run({"preprocess", "--input", f.data_dir.string(), "--out",
                          (f.dir / "cache.bin").string()},
                         nullptr, &err);
    CHECK(code == 1);
    CHECK(err.find("labels.tsv") != std::string::npos);
}

TEST_CASE("preprocess: over-aggressive filtering exits 2 with empty gene set") {
    auto f = make_fixture("prefilter");
    std::string err;
    const int code = run({"preprocess", "--input", f.data_dir.string(), "--out",
                          (f.dir / "cache.bin").string(), "--config", f.config.string(),
                          "--min-cells", "1000"},
                         nullptr, &err);
    CHECK(code == 2);
    CHECK(err.find("empty gene set") != std::string::npos);
}

TEST_CASE("config validation: unknown keys and invalid values exit 2") {
    auto f = make_fixture("badcfg");
    io::write_file(f.dir / "bad1.json", R"({"unknown_section": {}})");
    std::string err;
    CHECK(run({"preprocess", "--input", f.data_dir.string(), "--out",
               (f.dir / "c.bin").string(), "--config", (f.dir / "bad1.json").string()},
              nullptr, &err) == 2);
    CHECK(err.find("unknown config key") != std::string::npos);

    io::write_file(f.dir / "bad2.json", R"({"train": {"mask_fraction": 1.5}})");
    CHECK(run({"train", "--data", "x", "--out", "y", "--config",
               (f.dir / "bad2.json").string()},
              nullptr, &err) == 2);
}

TEST_CASE("full pipeline: train, generate, eval") {
    auto f = make_fixture("pipe");
    const auto cache = (f.dir / "cache.bin").string();
    const auto ckpt = (f.dir / "model.ckpt").string();
    const auto gen_dir = (f.dir / "generated").string();

    REQUIRE(run({"preprocess", "--input", f.data_dir.string(), "--out", cache, "--config",
                 f.config.string()}) == 0);

    std::string train_log;
    REQUIRE(run({"train", "--data", cache, "--out", ckpt, "--config", f.config.string()},
                &train_log) == 0);
    CHECK(fs::exists(ckpt));
    int lines = 0;
    std::istringstream is(train_log);
    std::string line;
    while (std::getline(is, line)) {
        json j = json::parse(line);
        CHECK(j.contains("epoch"));
        ++lines;
    }
    CHECK(lines == 2);  // --epochs 2 in the config

    std::string gen_out;
    REQUIRE(run({"generate", "--ckpt", ckpt, "--per-label", "typeA=6,typeB=6", "--seed", "5",
                 "--out", gen_dir},
                &gen_out) == 0);
    CHECK(fs::exists(fs::path(gen_dir) / "matrix.mtx"));
    CHECK(fs::exists(fs::path(gen_dir) / "manifest.json"));
    auto labels = io::read_lines(fs::path(gen_dir) / "labels.tsv");
    CHECK(labels.size() == 12);

    // Repeat generation with the same seed: byte-identical matrix.
    const auto gen_dir2 = (f.dir / "generated2").string();
    REQUIRE(run({"generate", "--ckpt", ckpt, "--per-label", "typeA=6,typeB=6", "--seed", "5",
                 "--out", gen_dir2}) == 0);
    CHECK(io::read_file(fs::path(gen_dir) / "matrix.mtx") ==
          io::read_file(fs::path(gen_dir2) / "matrix.mtx"));

    std::string eval_out;
    const auto csv_file = (f.dir / "per_label.csv").string();
    REQUIRE(run({"eval", "--real", f.data_dir.string(), "--gen", gen_dir, "--pcs", "3",
                 "--per-label", "--seeds", "1,2", "--config", f.config.string(), "--csv",
                 csv_file},
                &eval_out) == 0);
    json rep = json::parse(eval_out.substr(0, eval_out.find('\n')));
    CHECK(rep["seeds"].size() == 2);
    CHECK(rep["per_seed"].size() == 2);
    CHECK(rep.contains("mmd_mean"));
    CHECK(rep.contains("mmd_std"));
    CHECK(rep["per_seed"][0].contains("per_label"));

    auto csv_lines = io::read_lines(csv_file);
    CHECK(csv_lines[0] == "seed,label,mmd,wd,n_real,n_gen");
    CHECK(csv_lines.size() == 1 + 2 * 2);  // 2 seeds x 2 labels
}

TEST_CASE("generate: --n mode and unknown label") {
    auto f = make_fixture("genmode");
    const auto cache = (f.dir / "cache.bin").string();
    const auto ckpt = (f.dir / "model.ckpt").string();
    REQUIRE(run({"preprocess", "--input", f.data_dir.string(), "--out", cache, "--config",
                 f.config.string()}) == 0);
    REQUIRE(run({"train", "--data", cache, "--out", ckpt, "--config", f.config.string()}) == 0);

    REQUIRE(run({"generate", "--ckpt", ckpt, "--n", "10", "--seed", "1", "--out",
                 (f.dir / "g1").string()}) == 0);
    CHECK(io::read_lines(f.dir / "g1" / "labels.tsv").size() == 10);

    std::string err;
    CHECK(run({"generate", "--ckpt", ckpt, "--per-label", "nosuch=4", "--seed", "1", "--out",
               (f.dir / "g2").string()},
              nullptr, &err) == 2);
    CHECK(err.find("unknown label") != std::string::npos);
}

TEST_CASE("eval: real vs itself reports near-zero distances") {
    auto f = make_fixture("selfeval");
    std::string out;
    REQUIRE(run({"eval", "--real", f.data_dir.string(), "--gen", f.data_dir.string(), "--pcs",
                 "3", "--seeds", "1", "--config", f.config.string()},
                &out) == 0);
    json rep = json::parse(out.substr(0, out.find('\n')));
    CHECK(rep["mmd_mean"].get<double>() < 1e-9);
    CHECK(rep["wd_mean"].get<double>() < 1e-9);
}

TEST_CASE("eval: gene mismatch exits 2") {
    auto f = make_fixture("genemismatch");
    auto cm = ingest::load_dataset(f.data_dir);
    cm.gene_names[0] = "renamed";
    ingest::save_dataset(f.dir / "other", cm);
    std::string err;
    CHECK(run({"eval", "--real", f.data_dir.string(), "--gen", (f.dir / "other").string(),
               "--pcs", "3", "--seeds", "1"},
              nullptr, &err) == 2);
}

TEST_CASE("train: --no-perturb marks the log") {
    auto f = make_fixture("noperturb");
    const auto cache = (f.dir / "cache.bin").string();
    REQUIRE(run({"preprocess", "--input", f.data_dir.string(), "--out", cache, "--config",
                 f.config.string()}) == 0);
    std::string log;
    REQUIRE(run({"train", "--data", cache, "--out", (f.dir / "m.ckpt").string(), "--config",
                 f.config.string(), "--no-perturb"},
                &log) == 0);
    CHECK(log.find("\"perturb\":\"disabled\"") != std::string::npos);
}

TEST_CASE("attack: robustness table rows = attacks x models") {
    auto f = make_fixture("attack", 40, 10);
    const auto cache = (f.dir / "cache.bin").string();
    const auto ckpt_a = (f.dir / "a.ckpt").string();
    const auto ckpt_b = (f.dir / "b.ckpt").string();
    REQUIRE(run({"preprocess", "--input", f.data_dir.string(), "--out", cache, "--config",
                 f.config.string()}) == 0);
    REQUIRE(run({"train", "--data", cache, "--out", ckpt_a, "--config", f.config.string()}) == 0);
    REQUIRE(run({"train", "--data", cache, "--out", ckpt_b, "--config", f.config.string(),
                 "--no-perturb"}) == 0);

    std::string out;
    REQUIRE(run({"attack", "--data", f.data_dir.string(), "--ckpt-a", ckpt_a, "--ckpt-b", ckpt_b,
                 "--attacks", "random:0.1,dice:0.2", "--seed", "3"},
                &out) == 0);
    json rep = json::parse(out.substr(0, out.find('\n')));
    CHECK(rep["rows"].size() == 4);
    for (const auto& row : rep["rows"]) CHECK(row["mean_drift"].get<double>() >= 0.0);
}
