// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "side/classifier.hpp"
#include "side/dataset.hpp"
#include "side/diffusion.hpp"
#include "side/memometrics.hpp"

namespace side {

constexpr int kConfigSchemaVersion = 1;

/// Objects must carry exactly the listed keys: unknown keys fail fast, and
/// every field is explicit (no silent defaults), seeds included.
inline void expect_keys(const nlohmann::json& j, const std::string& where,
                        std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : keys)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
    for (const char* k : keys)
        if (!j.contains(k)) throw ConfigError(where + ": missing key '" + k + "'");
}

struct DiffusionSection {
    int T = 400;
    std::string schedule = "linear";
    std::vector<std::size_t> widths = {128, 128};
    std::string act = "silu";
    std::size_t time_sin_width = 32;
    std::size_t time_proj_dim = 32;
    int epochs = 2000;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    double weight_decay = 0.0;
    std::uint64_t seed = 2;

    nn::MlpConfig arch(std::size_t dim) const {
        nn::MlpConfig a;
        a.input_dim = dim;
        a.hidden = widths;
        a.output_dim = dim;
        a.act = nn::activation_from_string(act);
        a.time_conditioned = true;
        a.time_sin_width = time_sin_width;
        a.time_proj_dim = time_proj_dim;
        return a;
    }

    DiffusionTrainConfig train() const {
        return {.epochs = epochs,
                .batch_size = batch_size,
                .lr = lr,
                .weight_decay = weight_decay,
                .seed = seed};
    }
};

struct PseudoSection {
    std::size_t size_multiplier = 4;
    int steps = 50;
    double eta = 0.0;
    std::uint64_t seed = 5;
};

struct ExtractSection {
    std::vector<double> lambda_set = {0, 1, 2, 5, 8, 13, 21};
    std::size_t n_g = 1024;
    int steps = 50;
    double eta = 0.0;
    int target_class = -1;  // -1 cycles chains over all classes
    std::uint64_t seed = 7;
};

struct TiersSection {
    double alpha = 0.4, beta = 0.5, gamma = 0.6;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    DiffusionSection diffusion;
    LabelSource label_source;
    ClassifierTrainConfig teacher;
    PseudoSection pseudo;
    DistillConfig distill;
    ExtractSection extract;
    TiersSection tiers;
    std::string scorer = "cosine_normalized";
    std::string out_dir = "runs/out";
    int threads = 1;

    std::vector<SimilarityTier> tier_list() const {
        return standard_tiers(tiers.alpha, tiers.beta, tiers.gamma);
    }
};

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    expect_keys(j, "config",
                {"schema_version", "dataset", "diffusion", "label_source", "teacher", "pseudo",
                 "distill", "extract", "tiers", "scorer", "out_dir", "threads"});
    int ver = j.at("schema_version").get<int>();
    if (ver != kConfigSchemaVersion)
        throw ConfigError("config: unsupported schema_version " + std::to_string(ver));
    ExperimentConfig c;

    const auto& d = j.at("dataset");
    expect_keys(d, "dataset", {"kind", "n", "dim", "k", "spread", "seed"});
    c.dataset.kind = d.at("kind").get<std::string>();
    c.dataset.n = d.at("n").get<std::size_t>();
    c.dataset.dim = d.at("dim").get<std::size_t>();
    c.dataset.k = d.at("k").get<std::size_t>();
    c.dataset.spread = d.at("spread").get<double>();
    c.dataset.seed = d.at("seed").get<std::uint64_t>();

    const auto& f = j.at("diffusion");
    expect_keys(f, "diffusion",
                {"T", "schedule", "widths", "act", "time_sin_width", "time_proj_dim", "epochs",
                 "batch_size", "lr", "weight_decay", "seed"});
    c.diffusion.T = f.at("T").get<int>();
    c.diffusion.schedule = f.at("schedule").get<std::string>();
    c.diffusion.widths = f.at("widths").get<std::vector<std::size_t>>();
    c.diffusion.act = f.at("act").get<std::string>();
    c.diffusion.time_sin_width = f.at("time_sin_width").get<std::size_t>();
    c.diffusion.time_proj_dim = f.at("time_proj_dim").get<std::size_t>();
    c.diffusion.epochs = f.at("epochs").get<int>();
    c.diffusion.batch_size = f.at("batch_size").get<std::size_t>();
    c.diffusion.lr = f.at("lr").get<double>();
    c.diffusion.weight_decay = f.at("weight_decay").get<double>();
    c.diffusion.seed = f.at("seed").get<std::uint64_t>();

    const auto& l = j.at("label_source");
    expect_keys(l, "label_source", {"kind", "k", "pca_dims", "seed"});
    c.label_source.kind = l.at("kind").get<std::string>();
    c.label_source.k = l.at("k").get<std::size_t>();
    c.label_source.pca_dims = l.at("pca_dims").get<std::size_t>();
    c.label_source.seed = l.at("seed").get<std::uint64_t>();

    const auto& t = j.at("teacher");
    expect_keys(t, "teacher", {"widths", "act", "epochs", "batch_size", "lr", "weight_decay", "seed"});
    c.teacher.widths = t.at("widths").get<std::vector<std::size_t>>();
    c.teacher.act = nn::activation_from_string(t.at("act").get<std::string>());
    c.teacher.epochs = t.at("epochs").get<int>();
    c.teacher.batch_size = t.at("batch_size").get<std::size_t>();
    c.teacher.lr = t.at("lr").get<double>();
    c.teacher.weight_decay = t.at("weight_decay").get<double>();
    c.teacher.seed = t.at("seed").get<std::uint64_t>();

    const auto& p = j.at("pseudo");
    expect_keys(p, "pseudo", {"size_multiplier", "steps", "eta", "seed"});
    c.pseudo.size_multiplier = p.at("size_multiplier").get<std::size_t>();
    c.pseudo.steps = p.at("steps").get<int>();
    c.pseudo.eta = p.at("eta").get<double>();
    c.pseudo.seed = p.at("seed").get<std::uint64_t>();

    const auto& s = j.at("distill");
    expect_keys(s, "distill",
                {"widths", "time_sin_width", "time_proj_dim", "epochs", "batch_size", "lr",
                 "weight_decay", "holdout_frac", "seed"});
    c.distill.widths = s.at("widths").get<std::vector<std::size_t>>();
    c.distill.time_sin_width = s.at("time_sin_width").get<std::size_t>();
    c.distill.time_proj_dim = s.at("time_proj_dim").get<std::size_t>();
    c.distill.epochs = s.at("epochs").get<int>();
    c.distill.batch_size = s.at("batch_size").get<std::size_t>();
    c.distill.lr = s.at("lr").get<double>();
    c.distill.weight_decay = s.at("weight_decay").get<double>();
    c.distill.holdout_frac = s.at("holdout_frac").get<double>();
    c.distill.seed = s.at("seed").get<std::uint64_t>();

    const auto& e = j.at("extract");
    expect_keys(e, "extract", {"lambda_set", "n_g", "steps", "eta", "target_class", "seed"});
    c.extract.lambda_set = e.at("lambda_set").get<std::vector<double>>();
    c.extract.n_g = e.at("n_g").get<std::size_t>();
    c.extract.steps = e.at("steps").get<int>();
    c.extract.eta = e.at("eta").get<double>();
    c.extract.target_class = e.at("target_class").get<int>();
    c.extract.seed = e.at("seed").get<std::uint64_t>();

    const auto& tr = j.at("tiers");
    expect_keys(tr, "tiers", {"alpha", "beta", "gamma"});
    c.tiers.alpha = tr.at("alpha").get<double>();
    c.tiers.beta = tr.at("beta").get<double>();
    c.tiers.gamma = tr.at("gamma").get<double>();

    c.scorer = j.at("scorer").get<std::string>();
    c.out_dir = j.at("out_dir").get<std::string>();
    c.threads = j.at("threads").get<int>();

    // cross-field validation
    auto require = [](bool ok, const char* msg) {
        if (!ok) throw ConfigError(msg);
    };
    require(c.dataset.n >= 2, "config: dataset.n must be >= 2");
    require(c.diffusion.T >= 1, "config: diffusion.T must be >= 1");
    require(!c.extract.lambda_set.empty(), "config: extract.lambda_set must be non-empty");
    bool has_zero = false;
    for (double v : c.extract.lambda_set) {
        require(v >= 0.0, "config: lambda values must be >= 0");
        if (v == 0.0) has_zero = true;
    }
    require(has_zero, "config: lambda_set must include 0 (the unguided baseline)");
    require(c.extract.n_g >= 1, "config: extract.n_g must be >= 1");
    require(c.extract.steps >= 1 && c.extract.steps <= c.diffusion.T,
            "config: extract.steps must lie in 1..T");
    require(c.pseudo.steps >= 1 && c.pseudo.steps <= c.diffusion.T,
            "config: pseudo.steps must lie in 1..T");
    require(c.threads >= 1, "config: threads must be >= 1");
    Scorer::by_kind(c.scorer);
    try {
        standard_tiers(c.tiers.alpha, c.tiers.beta, c.tiers.gamma);
    } catch (const ShapeError& e) {
        throw ConfigError(e.what());
    }
    return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["schema_version"] = kConfigSchemaVersion;
    j["dataset"] = {{"kind", c.dataset.kind}, {"n", c.dataset.n},       {"dim", c.dataset.dim},
                    {"k", c.dataset.k},       {"spread", c.dataset.spread}, {"seed", c.dataset.seed}};
    j["diffusion"] = {{"T", c.diffusion.T},
                      {"schedule", c.diffusion.schedule},
                      {"widths", c.diffusion.widths},
                      {"act", c.diffusion.act},
                      {"time_sin_width", c.diffusion.time_sin_width},
                      {"time_proj_dim", c.diffusion.time_proj_dim},
                      {"epochs", c.diffusion.epochs},
                      {"batch_size", c.diffusion.batch_size},
                      {"lr", c.diffusion.lr},
                      {"weight_decay", c.diffusion.weight_decay},
                      {"seed", c.diffusion.seed}};
    j["label_source"] = {{"kind", c.label_source.kind},
                         {"k", c.label_source.k},
                         {"pca_dims", c.label_source.pca_dims},
                         {"seed", c.label_source.seed}};
    j["teacher"] = {{"widths", c.teacher.widths},
                    {"act", nn::to_string(c.teacher.act)},
                    {"epochs", c.teacher.epochs},
                    {"batch_size", c.teacher.batch_size},
                    {"lr", c.teacher.lr},
                    {"weight_decay", c.teacher.weight_decay},
                    {"seed", c.teacher.seed}};
    j["pseudo"] = {{"size_multiplier", c.pseudo.size_multiplier},
                   {"steps", c.pseudo.steps},
                   {"eta", c.pseudo.eta},
                   {"seed", c.pseudo.seed}};
    j["distill"] = {{"widths", c.distill.widths},
                    {"time_sin_width", c.distill.time_sin_width},
                    {"time_proj_dim", c.distill.time_proj_dim},
                    {"epochs", c.distill.epochs},
                    {"batch_size", c.distill.batch_size},
                    {"lr", c.distill.lr},
                    {"weight_decay", c.distill.weight_decay},
                    {"holdout_frac", c.distill.holdout_frac},
                    {"seed", c.distill.seed}};
    j["extract"] = {{"lambda_set", c.extract.lambda_set}, {"n_g", c.extract.n_g},
                    {"steps", c.extract.steps},           {"eta", c.extract.eta},
                    {"target_class", c.extract.target_class}, {"seed", c.extract.seed}};
    j["tiers"] = {{"alpha", c.tiers.alpha}, {"beta", c.tiers.beta}, {"gamma", c.tiers.gamma}};
    j["scorer"] = c.scorer;
    j["out_dir"] = c.out_dir;
    j["threads"] = c.threads;
    return j;
}

/// Identity hash of a config: canonical dump (keys sorted by the json type)
/// minus fields that do not affect results (out_dir, threads).
inline std::uint64_t config_hash(const ExperimentConfig& c) {
    nlohmann::json j = config_to_json(c);
    j.erase("out_dir");
    j.erase("threads");
    return fnv1a64_str(j.dump());
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: invalid json in " + path.string() + ": " + e.what());
    }
    try {
        return parse_config(j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: bad field type in " + path.string() + ": " + e.what());
    }
}

}  // namespace side
