// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "side/config.hpp"
#include "side/dataset.hpp"
#include "side/harness.hpp"
#include "side/io.hpp"
#include "side/svgplot.hpp"

using namespace side;

namespace {

std::filesystem::path fresh_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("side_harness_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

// micro experiment: fast enough for unit testing, exercises every stage
ExperimentConfig micro_config(const std::filesystem::path& out) {
    ExperimentConfig c;
    c.dataset.n = 12;
    c.dataset.dim = 3;
    c.dataset.k = 2;
    c.dataset.spread = 0.1;
    c.dataset.seed = 5;
    c.diffusion.T = 40;
    c.diffusion.widths = {16, 16};
    c.diffusion.time_sin_width = 8;
    c.diffusion.time_proj_dim = 8;
    c.diffusion.epochs = 50;
    c.diffusion.batch_size = 6;
    c.diffusion.lr = 2e-3;
    c.diffusion.seed = 7;
    c.label_source.kind = "cluster_k";
    c.label_source.k = 2;
    c.label_source.seed = 9;
    c.teacher.widths = {12};
    c.teacher.epochs = 60;
    c.teacher.batch_size = 6;
    c.teacher.lr = 3e-3;
    c.teacher.seed = 11;
    c.pseudo.size_multiplier = 2;
    c.pseudo.steps = 8;
    c.pseudo.seed = 13;
    c.distill.widths = {};
    c.distill.time_sin_width = 8;
    c.distill.time_proj_dim = 8;
    c.distill.epochs = 40;
    c.distill.batch_size = 8;
    c.distill.lr = 2e-3;
    c.distill.seed = 15;
    c.extract.lambda_set = {0.0, 3.0};
    c.extract.n_g = 24;
    c.extract.steps = 8;
    c.extract.seed = 17;
    c.out_dir = out.string();
    c.threads = 2;
    return c;
}

}  // namespace

TEST_CASE("gaussian mixture dataset", "[harness]") {
    DatasetSpec spec;
    spec.n = 10;
    spec.dim = 4;
    spec.k = 3;
    spec.spread = 0.05;
    spec.seed = 21;
    auto a = synth_dataset(spec);
    auto b = synth_dataset(spec);
    REQUIRE(a.x.rows() == 10);
    REQUIRE(a.x.cols() == 4);
    REQUIRE(a.means.rows() == 3);
    for (std::size_t i = 0; i < a.x.numel(); ++i) {
        REQUIRE(a.x[i] == b.x[i]);
        REQUIRE(a.x[i] >= -1.0);
        REQUIRE(a.x[i] <= 1.0);
    }
    REQUIRE(a.labels == b.labels);
    // round robin: every component owns at least one sample
    std::set<int> comps(a.labels.begin(), a.labels.end());
    REQUIRE(comps.size() == 3);
    // samples sit near their component mean
    for (std::size_t i = 0; i < 10; ++i) {
        auto mu = a.means.row(std::size_t(a.labels[i]));
        for (std::size_t j = 0; j < 4; ++j)
            REQUIRE(std::abs(a.x.at(i, j) - mu[j]) < 6.0 * spec.spread);
    }

    spec.seed = 22;
    auto c = synth_dataset(spec);
    bool same = true;
    for (std::size_t i = 0; i < a.x.numel(); ++i)
        if (a.x[i] != c.x[i]) same = false;
    REQUIRE_FALSE(same);

    spec.k = 99;
    REQUIRE_THROWS_AS(synth_dataset(spec), ShapeError);
}

TEST_CASE("tiny image grid dataset", "[harness]") {
    DatasetSpec spec;
    spec.kind = "tiny_image_grid";
    spec.n = 8;
    spec.dim = 16;  // 4 x 4
    spec.seed = 23;
    auto ds = synth_dataset(spec);
    REQUIRE(ds.x.rows() == 8);
    REQUIRE(ds.x.cols() == 16);
    for (std::size_t i = 0; i < ds.x.numel(); ++i) {
        REQUIRE(ds.x[i] >= -1.0);
        REQUIRE(ds.x[i] <= 1.0);
    }
    for (int l : ds.labels) {
        REQUIRE(l >= 0);
        REQUIRE(l <= 3);
    }

    spec.dim = 15;  // not a square
    REQUIRE_THROWS_AS(synth_dataset(spec), ShapeError);

    spec.kind = "cifar";
    spec.dim = 16;
    REQUIRE_THROWS_AS(synth_dataset(spec), ConfigError);
}

TEST_CASE("config round trip and strict key checking", "[harness]") {
    ExperimentConfig def;
    auto j = config_to_json(def);
    auto parsed = parse_config(j);
    REQUIRE(config_to_json(parsed).dump() == j.dump());

    auto bad = j;
    bad["surprise"] = 1;
    REQUIRE_THROWS_AS(parse_config(bad), ConfigError);

    bad = j;
    bad["dataset"].erase("spread");
    REQUIRE_THROWS_AS(parse_config(bad), ConfigError);

    bad = j;
    bad["dataset"]["flavour"] = "salt";
    REQUIRE_THROWS_AS(parse_config(bad), ConfigError);

    bad = j;
    bad["schema_version"] = 99;
    REQUIRE_THROWS_AS(parse_config(bad), ConfigError);

    // cross-field validation
    bad = j;
    bad["extract"]["lambda_set"] = {1.0, 2.0};  // missing the 0 baseline
    REQUIRE_THROWS_AS(parse_config(bad), ConfigError);
    bad["extract"]["lambda_set"] = {0.0, -1.0};
    REQUIRE_THROWS_AS(parse_config(bad), ConfigError);

    bad = j;
    bad["extract"]["steps"] = 100000;
    REQUIRE_THROWS_AS(parse_config(bad), ConfigError);

    bad = j;
    bad["scorer"] = "vibes";
    REQUIRE_THROWS_AS(parse_config(bad), ConfigError);
}

TEST_CASE("config hash ignores key order and runtime fields", "[harness]") {
    ExperimentConfig def;
    auto j = config_to_json(def);

    // the same content serialized with different key order
    std::string text = j.dump();
    auto reordered = nlohmann::json::parse(text);
    REQUIRE(config_hash(parse_config(reordered)) == config_hash(parse_config(j)));

    ExperimentConfig a = def, b = def;
    b.out_dir = "elsewhere/else";
    b.threads = 16;
    REQUIRE(config_hash(a) == config_hash(b));

    b.dataset.n += 1;
    REQUIRE(config_hash(a) != config_hash(b));
}

TEST_CASE("svg sweep plot content", "[harness]") {
    svg::Series s1{"ams", {{0.0, 0.1}, {1.0, 0.4}, {2.0, 0.3}}};
    svg::Series s2{"ums", {{0.0, 0.05}, {1.0, 0.2}, {2.0, 0.25}}};
    auto doc = svg::line_plot("sweep", "lambda", "fraction", {s1, s2});
    REQUIRE(doc.find("<svg") != std::string::npos);
    REQUIRE(doc.find("</svg>") != std::string::npos);
    REQUIRE(doc.find("polyline") != std::string::npos);
    REQUIRE(doc.find("ams") != std::string::npos);
    REQUIRE(doc.find("ums") != std::string::npos);
    REQUIRE(doc.find("nan") == std::string::npos);
}

TEST_CASE("harness runs every stage and is reproducible", "[harness]") {
    auto out1 = fresh_dir("run1");
    auto cfg1 = micro_config(out1);
    Harness h1(cfg1);
    auto manifest = h1.run_side();

    for (const char* f : {"dataset.bin", "score_net.bin", "teacher.bin", "student.bin",
                          "pseudo.bin", "labels.tsv", "report.csv", "summary.csv", "config.json",
                          "manifest.json", "sweep_ams.svg", "sweep_ums.svg",
                          "samples_side_lambda_0.bin", "samples_side_lambda_3.bin",
                          "matches_lambda_0.csv", "matches_lambda_3.csv"})
        REQUIRE(std::filesystem::exists(out1 / f));

    REQUIRE(manifest.stages.count("dataset") == 1);
    REQUIRE(manifest.stages.count("score_net") == 1);
    REQUIRE(manifest.stages.count("student") == 1);
    REQUIRE(manifest.error.empty());

    // identical configuration in a fresh directory: byte-identical outputs
    auto out2 = fresh_dir("run2");
    auto cfg2 = micro_config(out2);
    Harness h2(cfg2);
    h2.run_side();
    REQUIRE(io::read_file(out1 / "report.csv") == io::read_file(out2 / "report.csv"));
    REQUIRE(io::read_file(out1 / "summary.csv") == io::read_file(out2 / "summary.csv"));
    REQUIRE(io::read_file(out1 / "matches_lambda_3.csv") ==
            io::read_file(out2 / "matches_lambda_3.csv"));

    // the summary carries the baseline and the guided average
    auto summary = io::read_file(out1 / "summary.csv");
    REQUIRE(summary.find("random,mid,") != std::string::npos);
    REQUIRE(summary.find("side_avg,mid,") != std::string::npos);
}

TEST_CASE("harness resumes from intact artifacts and repairs broken ones", "[harness]") {
    auto out = fresh_dir("resume");
    auto cfg = micro_config(out);
    Harness h(cfg);
    auto m1 = h.run_side();
    auto report1 = io::read_file(out / "report.csv");
    auto score_sum1 = m1.stages.at("score_net").checksum;
    auto student_sum1 = m1.stages.at("student").checksum;

    // deleting a downstream artifact must not disturb upstream checksums
    std::filesystem::remove(out / "samples_side_lambda_3.bin");
    Harness h2(micro_config(out));
    auto m2 = h2.run_side();
    REQUIRE(m2.stages.at("score_net").checksum == score_sum1);
    REQUIRE(m2.stages.at("student").checksum == student_sum1);
    REQUIRE(io::read_file(out / "report.csv") == report1);

    // corrupting an artifact forces a rebuild with the same result
    auto path = out / "samples_side_lambda_0.bin";
    auto bytes = io::read_file(path);
    bytes[bytes.size() / 2] ^= 0x01;
    io::atomic_write(path, bytes);
    Harness h3(micro_config(out));
    h3.run_side();
    REQUIRE(io::read_file(out / "report.csv") == report1);

    // a changed experiment hash starts a fresh manifest
    auto cfg_changed = micro_config(out);
    cfg_changed.extract.seed += 1;
    Harness h4(cfg_changed);
    auto m4 = h4.run_side();
    REQUIRE(m4.config_hash != m1.config_hash);
}

TEST_CASE("sweep and compare over the micro fixture", "[harness]") {
    auto out = fresh_dir("sweepcmp");
    auto cfg = micro_config(out);
    Harness h(cfg);

    auto sweep = h.sweep_lambda({0.0, 1.0, 3.0});
    REQUIRE(sweep.reports.size() == 3);
    REQUIRE((sweep.argmax_ams_lambda == 0.0 || sweep.argmax_ams_lambda == 1.0 ||
             sweep.argmax_ams_lambda == 3.0));
    REQUIRE(std::filesystem::exists(out / "sweep.csv"));
    REQUIRE(sweep.csv.rfind("lambda,tier,", 0) == 0);

    auto cmp = h.compare_variants();
    REQUIRE(cmp.rows.size() == 9);  // 3 variants x 3 tiers
    std::set<std::string> variants;
    for (const auto& r : cmp.rows) variants.insert(r.variant);
    REQUIRE(variants == std::set<std::string>{"random", "ti_guidance", "side"});
    REQUIRE(std::filesystem::exists(out / "compare.csv"));
    REQUIRE(cmp.mid_ams("side") >= 0.0);
    REQUIRE(cmp.mid_ams("side") <= 1.0);
    REQUIRE_THROWS(cmp.mid_ams("sideways"));

    // samples differ across variants at the same lambda when guidance acts
    const Tensor& side3 = h.extract(3.0, "side");
    const Tensor& ti3 = h.extract(3.0, "ti");
    bool same = true;
    for (std::size_t k = 0; k < side3.numel(); ++k)
        if (side3[k] != ti3[k]) same = false;
    REQUIRE_FALSE(same);
}

TEST_CASE("stage failures surface as stage errors", "[harness]") {
    auto out = fresh_dir("fail");
    auto cfg = micro_config(out);
    cfg.label_source.kind = "cluster_k";
    cfg.label_source.k = 1;  // uninformative: one cluster covers everything
    Harness h(cfg);
    REQUIRE_THROWS_AS(h.teacher(), StageError);
}
