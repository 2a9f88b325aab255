// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "side/checkpoint.hpp"
#include "side/classifier.hpp"
#include "side/config.hpp"
#include "side/dataset.hpp"
#include "side/diffusion.hpp"
#include "side/io.hpp"
#include "side/memometrics.hpp"
#include "side/svgplot.hpp"

namespace side {

struct StageInfo {
    std::string path;
    std::string checksum;  // hex file checksum
    double seconds = 0.0;
};

struct RunManifest {
    std::string config_hash;
    std::map<std::string, StageInfo> stages;
    std::map<std::string, std::string> reports;  // logical name -> path
    std::string error;                           // last failed stage, empty if clean
};

inline nlohmann::json manifest_to_json(const RunManifest& m) {
    nlohmann::json j;
    j["config_hash"] = m.config_hash;
    j["stages"] = nlohmann::json::object();
    for (const auto& [name, s] : m.stages)
        j["stages"][name] = {{"path", s.path}, {"checksum", s.checksum}, {"seconds", s.seconds}};
    j["reports"] = m.reports;
    j["error"] = m.error;
    return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
    RunManifest m;
    m.config_hash = j.value("config_hash", "");
    if (j.contains("stages"))
        for (auto it = j["stages"].begin(); it != j["stages"].end(); ++it) {
            StageInfo s;
            s.path = it.value().value("path", "");
            s.checksum = it.value().value("checksum", "");
            s.seconds = it.value().value("seconds", 0.0);
            m.stages[it.key()] = s;
        }
    if (j.contains("reports"))
        for (auto it = j["reports"].begin(); it != j["reports"].end(); ++it)
            m.reports[it.key()] = it.value().get<std::string>();
    m.error = j.value("error", "");
    return m;
}

inline std::string lambda_tag(double v) {
    std::ostringstream os;
    os << v;
    std::string s = os.str();
    for (auto& ch : s)
        if (ch == '.') ch = 'p';
    return s;
}

/// Stage-oriented pipeline driver. Each stage persists one artifact; a stage
/// reruns only when its artifact is missing, corrupt, or from a different
/// config. Deleting a downstream artifact therefore regenerates only the
/// downstream stages.
class Harness {
  public:
    Harness(ExperimentConfig cfg, std::ostream* log = nullptr)
        : cfg_(std::move(cfg)), out_(cfg_.out_dir), log_(log) {
        std::filesystem::create_directories(out_);
        hash_ = hex16(config_hash(cfg_));
        const auto mpath = out_ / "manifest.json";
        if (std::filesystem::exists(mpath)) {
            try {
                RunManifest m = manifest_from_json(nlohmann::json::parse(io::read_file(mpath)));
                if (m.config_hash == hash_) manifest_ = m;
            } catch (...) {
                // unreadable manifest: start fresh
            }
        }
        manifest_.config_hash = hash_;
        io::atomic_write(out_ / "config.json", config_to_json(cfg_).dump(2) + "\n");
    }

    const ExperimentConfig& config() const { return cfg_; }
    const RunManifest& manifest() const { return manifest_; }
    const std::filesystem::path& out_dir() const { return out_; }

    // --- stages --------------------------------------------------------------

    const Dataset& dataset() {
        if (dataset_) return *dataset_;
        const auto path = out_ / "dataset.bin";
        if (stage_valid("dataset", path)) {
            io::Container c = io::load_container(path);
            Dataset ds;
            ds.x = c.array("x");
            const Tensor& lab = c.array("labels");
            ds.labels.resize(lab.numel());
            for (std::size_t i = 0; i < lab.numel(); ++i) ds.labels[i] = int(lab[i]);
            ds.means = c.array("means");
            dataset_ = std::move(ds);
            return *dataset_;
        }
        run_stage("dataset", path, [&] {
            Dataset ds = synth_dataset(cfg_.dataset);
            Tensor lab({ds.labels.size()});
            for (std::size_t i = 0; i < ds.labels.size(); ++i) lab[i] = double(ds.labels[i]);
            io::save_container(path, "dataset", {{"seed", cfg_.dataset.seed}},
                               {{"x", &ds.x}, {"labels", &lab}, {"means", &ds.means}});
            dataset_ = std::move(ds);
        });
        return *dataset_;
    }

    const NoiseSchedule& schedule() {
        if (!sched_) sched_ = make_schedule(cfg_.diffusion.schedule, cfg_.diffusion.T);
        return *sched_;
    }

    const nn::Mlp& score_net() {
        if (score_net_) return *score_net_;
        const auto path = out_ / "score_net.bin";
        if (stage_valid("score_net", path)) {
            score_net_ = load_mlp(path).net;
            return *score_net_;
        }
        const Dataset& ds = dataset();
        run_stage("score_net", path, [&] {
            nn::Mlp net = train_score_net(ds.x, schedule(), cfg_.diffusion.arch(cfg_.dataset.dim),
                                          cfg_.diffusion.train());
            save_mlp(path, net, "score_net", cfg_.diffusion.seed,
                     std::uint64_t(cfg_.diffusion.epochs));
            score_net_ = std::move(net);
        });
        return *score_net_;
    }

    const LabelAssignment& labels() {
        if (labels_) return *labels_;
        const auto path = out_ / "labels.tsv";
        const Dataset& ds = dataset();
        if (stage_valid("labels", path)) {
            LabelAssignment la;
            std::istringstream in(io::read_file(path));
            std::string line;
            std::getline(in, line);  // header
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                std::istringstream ls(line);
                std::size_t idx;
                int lab;
                ls >> idx >> lab >> la.kind >> la.seed;
                la.labels.push_back(lab);
            }
            int mx = 0;
            for (int l : la.labels) mx = std::max(mx, l);
            la.num_classes = la.kind == "random_per_sample" ? la.labels.size()
                                                            : std::size_t(mx) + 1;
            if (la.kind == "random_k" || la.kind == "cluster_k")
                la.num_classes = std::max(la.num_classes, cfg_.label_source.k);
            labels_ = std::move(la);
            return *labels_;
        }
        run_stage("labels", path, [&] {
            LabelAssignment la = assign_labels(ds.x, ds.labels, cfg_.label_source);
            std::ostringstream os;
            os << "index\tlabel\tkind\tseed\n";
            for (std::size_t i = 0; i < la.labels.size(); ++i)
                os << i << '\t' << la.labels[i] << '\t' << la.kind << '\t' << la.seed << '\n';
            io::atomic_write(path, os.str());
            labels_ = std::move(la);
        });
        return *labels_;
    }

    const nn::Mlp& teacher() {
        if (teacher_) return *teacher_;
        const auto path = out_ / "teacher.bin";
        if (stage_valid("teacher", path)) {
            teacher_ = load_mlp(path).net;
            return *teacher_;
        }
        const Dataset& ds = dataset();
        const LabelAssignment& la = labels();
        run_stage("teacher", path, [&] {
            TeacherResult res = train_teacher(ds.x, la, cfg_.teacher);
            if (log_)
                (*log_) << "[teacher] train accuracy " << res.train_accuracy << "\n";
            save_mlp(path, res.net, "teacher", cfg_.teacher.seed,
                     std::uint64_t(cfg_.teacher.epochs));
            teacher_ = std::move(res.net);
        });
        return *teacher_;
    }

    const PseudoDataset& pseudo() {
        if (pseudo_) return *pseudo_;
        const auto path = out_ / "pseudo.bin";
        if (stage_valid("pseudo", path)) {
            io::Container c = io::load_container(path);
            PseudoDataset ps;
            ps.x = c.array("x");
            ps.soft = c.array("soft");
            pseudo_ = std::move(ps);
            return *pseudo_;
        }
        const nn::Mlp& model = score_net();
        const nn::Mlp& tch = teacher();
        run_stage("pseudo", path, [&] {
            const std::size_t n = cfg_.pseudo.size_multiplier * cfg_.dataset.n;
            PseudoDataset ps =
                generate_pseudo_dataset(model, schedule(), tch, n, cfg_.pseudo.seed,
                                        cfg_.pseudo.steps, cfg_.pseudo.eta, cfg_.threads);
            io::save_container(path, "pseudo", {{"seed", cfg_.pseudo.seed}},
                               {{"x", &ps.x}, {"soft", &ps.soft}});
            pseudo_ = std::move(ps);
        });
        return *pseudo_;
    }

    const nn::Mlp& student() {
        if (student_) return *student_;
        const auto path = out_ / "student.bin";
        if (stage_valid("student", path)) {
            student_ = load_mlp(path).net;
            return *student_;
        }
        const nn::Mlp& tch = teacher();
        const PseudoDataset& ps = pseudo();
        run_stage("student", path, [&] {
            DistillResult res = distill(tch, ps, schedule(), cfg_.distill);
            if (log_)
                (*log_) << "[student] holdout KL at t=1: " << res.holdout_kl_t1 << "\n";
            save_mlp(path, res.student, "student", cfg_.distill.seed,
                     std::uint64_t(cfg_.distill.epochs));
            student_ = std::move(res.student);
        });
        return *student_;
    }

    /// Per-chain target labels under the configured policy.
    std::vector<int> chain_labels(std::size_t n) {
        std::vector<int> out(n);
        const std::size_t C = labels().num_classes;
        if (cfg_.extract.target_class >= 0) {
            check(std::size_t(cfg_.extract.target_class) < C, "extract: target_class out of range");
            std::fill(out.begin(), out.end(), cfg_.extract.target_class);
        } else {
            for (std::size_t i = 0; i < n; ++i) out[i] = int(i % C);
        }
        return out;
    }

    /// Guided samples for one lambda. `variant` distinguishes the classifier:
    /// "side" = time-dependent student, "ti" = time-independent teacher.
    const Tensor& extract(double lambda, const std::string& variant = "side") {
        const std::string key = "extract_" + variant + "_" + lambda_tag(lambda);
        if (auto it = samples_.find(key); it != samples_.end()) return it->second;
        const auto path = out_ / ("samples_" + variant + "_lambda_" + lambda_tag(lambda) + ".bin");
        if (stage_valid(key, path)) {
            io::Container c = io::load_container(path);
            return samples_.emplace(key, c.array("samples")).first->second;
        }
        const nn::Mlp& model = score_net();
        const nn::Mlp* clf = nullptr;
        if (lambda > 0.0) clf = variant == "ti" ? &teacher() : &student();
        Tensor result;
        run_stage(key, path, [&] {
            GuidanceSpec spec;
            spec.lambda = lambda;
            spec.steps = cfg_.extract.steps;
            spec.eta = cfg_.extract.eta;
            std::vector<int> targets = chain_labels(cfg_.extract.n_g);
            SampleBatch batch = guided_sample(model, schedule(), spec, clf, cfg_.extract.n_g,
                                              cfg_.extract.seed, cfg_.threads, &targets);
            nlohmann::json meta = {{"seed", batch.seed},
                                   {"lambda", batch.lambda},
                                   {"steps", batch.steps},
                                   {"eta", batch.eta},
                                   {"variant", variant},
                                   {"model_checksum", hex16(mlp_checksum(model))}};
            io::save_container(path, "samples", meta, {{"samples", &batch.samples}});
            result = std::move(batch.samples);
        });
        return samples_.emplace(key, std::move(result)).first->second;
    }

    MemorizationReport evaluate(double lambda, const std::string& variant = "side") {
        const Tensor& gen = extract(lambda, variant);
        auto records = best_matches(gen, dataset().x, Scorer::by_kind(cfg_.scorer), cfg_.threads);
        return make_report(lambda, records, cfg_.tier_list());
    }

    /// Full pipeline: all stages, per-lambda reports, matches, summary and a
    /// sweep plot. Returns the final manifest.
    RunManifest run_side() {
        std::vector<MemorizationReport> reports;
        std::vector<double> lambdas = cfg_.extract.lambda_set;
        std::sort(lambdas.begin(), lambdas.end());
        for (double l : lambdas) {
            MemorizationReport rep = evaluate(l);
            const auto mpath = out_ / ("matches_lambda_" + lambda_tag(l) + ".csv");
            io::atomic_write(mpath, match_csv(rep));
            manifest_.reports["matches_lambda_" + lambda_tag(l)] = mpath.string();
            reports.push_back(std::move(rep));
        }
        const auto rpath = out_ / "report.csv";
        io::atomic_write(rpath, report_csv(reports));
        manifest_.reports["report"] = rpath.string();

        // summary: the lambda=0 baseline row plus the average over lambda > 0
        std::ostringstream sum;
        sum << "variant,tier,ams,ums\n";
        for (const auto& t : cfg_.tier_list()) {
            const MemorizationReport* zero = nullptr;
            for (const auto& r : reports)
                if (r.lambda == 0.0) zero = &r;
            check(zero != nullptr, "run_side: lambda_set must include 0");
            sum << "random," << t.name << ',' << csv_double(tier_of(*zero, t.name).ams) << ','
                << csv_double(tier_of(*zero, t.name).ums) << '\n';
        }
        for (const auto& t : cfg_.tier_list()) {
            double sa = 0.0, su = 0.0;
            std::size_t np = 0;
            for (const auto& r : reports)
                if (r.lambda > 0.0) {
                    sa += tier_of(r, t.name).ams;
                    su += tier_of(r, t.name).ums;
                    ++np;
                }
            if (np == 0) continue;
            sum << "side_avg," << t.name << ',' << csv_double(sa / double(np)) << ','
                << csv_double(su / double(np)) << '\n';
        }
        const auto spath = out_ / "summary.csv";
        io::atomic_write(spath, sum.str());
        manifest_.reports["summary"] = spath.string();

        write_sweep_plot(reports, out_ / "sweep_ams.svg", "ams");
        write_sweep_plot(reports, out_ / "sweep_ums.svg", "ums");
        manifest_.reports["sweep_ams_plot"] = (out_ / "sweep_ams.svg").string();
        manifest_.reports["sweep_ums_plot"] = (out_ / "sweep_ums.svg").string();
        save_manifest();
        return manifest_;
    }

    /// Per-lambda table over an arbitrary lambda range; also reports the
    /// argmax lambda for mid-tier AMS and UMS.
    struct SweepResult {
        std::vector<MemorizationReport> reports;
        double argmax_ams_lambda = 0.0;
        double argmax_ums_lambda = 0.0;
        std::string csv;
    };

    SweepResult sweep_lambda(const std::vector<double>& lambdas) {
        check(!lambdas.empty(), "sweep_lambda: empty range");
        SweepResult res;
        double best_a = -1.0, best_u = -1.0;
        for (double l : lambdas) {
            MemorizationReport rep = evaluate(l);
            const auto& mid = tier_of(rep, "mid");
            if (mid.ams > best_a) {
                best_a = mid.ams;
                res.argmax_ams_lambda = l;
            }
            if (mid.ums > best_u) {
                best_u = mid.ums;
                res.argmax_ums_lambda = l;
            }
            res.reports.push_back(std::move(rep));
        }
        res.csv = report_csv(res.reports);
        const auto path = out_ / "sweep.csv";
        io::atomic_write(path, res.csv);
        manifest_.reports["sweep"] = path.string();
        write_sweep_plot(res.reports, out_ / "sweep_ams.svg", "ams");
        manifest_.reports["sweep_ams_plot"] = (out_ / "sweep_ams.svg").string();
        save_manifest();
        return res;
    }

    /// Random vs time-independent guidance vs SIDE, averaged over the
    /// positive lambdas of the configured set.
    struct CompareRow {
        std::string variant, tier;
        double ams = 0.0, ums = 0.0;
    };
    struct CompareResult {
        std::vector<CompareRow> rows;
        std::string csv;
        double mid_ams(const std::string& variant) const {
            for (const auto& r : rows)
                if (r.variant == variant && r.tier == "mid") return r.ams;
            throw ConfigError("compare: no row for variant '" + variant + "'");
        }
    };

    CompareResult compare_variants() {
        std::vector<double> pos;
        for (double l : cfg_.extract.lambda_set)
            if (l > 0.0) pos.push_back(l);
        std::sort(pos.begin(), pos.end());
        check(!pos.empty(), "compare: lambda_set needs at least one positive value");

        CompareResult res;
        auto add_rows = [&](const std::string& name, const std::vector<MemorizationReport>& reps) {
            for (const auto& t : cfg_.tier_list()) {
                double sa = 0.0, su = 0.0;
                for (const auto& r : reps) {
                    sa += tier_of(r, t.name).ams;
                    su += tier_of(r, t.name).ums;
                }
                res.rows.push_back(
                    {name, t.name, sa / double(reps.size()), su / double(reps.size())});
            }
        };
        std::vector<MemorizationReport> random_rep{evaluate(0.0)};
        add_rows("random", random_rep);
        std::vector<MemorizationReport> ti;
        for (double l : pos) ti.push_back(evaluate(l, "ti"));
        add_rows("ti_guidance", ti);
        std::vector<MemorizationReport> sd;
        for (double l : pos) sd.push_back(evaluate(l));
        add_rows("side", sd);

        std::ostringstream os;
        os << "variant,tier,ams,ums\n";
        for (const auto& r : res.rows)
            os << r.variant << ',' << r.tier << ',' << csv_double(r.ams) << ','
               << csv_double(r.ums) << '\n';
        res.csv = os.str();
        const auto path = out_ / "compare.csv";
        io::atomic_write(path, res.csv);
        manifest_.reports["compare"] = path.string();
        save_manifest();
        return res;
    }

    void save_manifest() {
        io::atomic_write(out_ / "manifest.json", manifest_to_json(manifest_).dump(2) + "\n");
    }

  private:
    bool stage_valid(const std::string& name, const std::filesystem::path& path) {
        auto it = manifest_.stages.find(name);
        if (it == manifest_.stages.end()) return false;
        if (!std::filesystem::exists(path)) return false;
        return hex16(io::file_checksum(path)) == it->second.checksum;
    }

    template <typename F>
    void run_stage(const std::string& name, const std::filesystem::path& path, F&& body) {
        if (log_) (*log_) << "[stage] " << name << "...\n";
        const auto t0 = std::chrono::steady_clock::now();
        try {
            body();
        } catch (const std::exception& e) {
            manifest_.error = name + ": " + e.what();
            save_manifest();
            throw StageError(name, e.what());
        }
        const auto t1 = std::chrono::steady_clock::now();
        StageInfo info;
        info.path = path.string();
        info.checksum = hex16(io::file_checksum(path));
        info.seconds = std::chrono::duration<double>(t1 - t0).count();
        manifest_.stages[name] = info;
        manifest_.error.clear();
        save_manifest();
        if (log_) (*log_) << "[stage] " << name << " done in " << info.seconds << "s\n";
    }

    void write_sweep_plot(const std::vector<MemorizationReport>& reports,
                          const std::filesystem::path& path, const std::string& metric) {
        if (reports.size() < 2) return;
        std::vector<svg::Series> series;
        for (const auto& t : cfg_.tier_list()) {
            svg::Series s;
            s.name = t.name;
            for (const auto& r : reports) {
                const auto& tr = tier_of(r, t.name);
                s.pts.emplace_back(r.lambda, metric == "ums" ? tr.ums : tr.ams);
            }
            series.push_back(std::move(s));
        }
        io::atomic_write(path, svg::line_plot(metric == "ums" ? "UMS vs lambda" : "AMS vs lambda",
                                              "lambda", metric, series));
    }

    ExperimentConfig cfg_;
    std::filesystem::path out_;
    std::ostream* log_ = nullptr;
    std::string hash_;
    RunManifest manifest_;

    std::optional<Dataset> dataset_;
    std::optional<NoiseSchedule> sched_;
    std::optional<nn::Mlp> score_net_;
    std::optional<LabelAssignment> labels_;
    std::optional<nn::Mlp> teacher_;
    std::optional<PseudoDataset> pseudo_;
    std::optional<nn::Mlp> student_;
    std::map<std::string, Tensor> samples_;
};

/// One-call pipeline entry point.
inline RunManifest run_side(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
    Harness h(cfg, log);
    return h.run_side();
}

}  // namespace side
