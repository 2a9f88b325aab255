// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "side/diffusion.hpp"
#include "side/gaussian.hpp"
#include "side/nn.hpp"
#include "side/optim.hpp"

namespace side {

struct LabelSource {
    std::string kind = "cluster_k";  // original | random_per_sample | random_k | cluster_k
    std::size_t k = 8;               // class count for random_k / cluster_k
    std::size_t pca_dims = 0;        // cluster features: 0 = raw vectors, else top components
    std::uint64_t seed = 1;
};

struct LabelAssignment {
    std::vector<int> labels;
    std::size_t num_classes = 0;
    std::string kind;
    std::uint64_t seed = 0;
};

/// Informative labels: every class subset is a strict subset of the dataset.
/// A label set where one class swallows everything carries no information.
inline void check_informative(const std::vector<int>& labels, std::size_t num_classes) {
    if (num_classes < 2)
        throw ConfigError("labels: at least 2 classes required to be informative");
    std::vector<std::size_t> hist(num_classes, 0);
    for (int l : labels) {
        if (l < 0 || std::size_t(l) >= num_classes) throw ConfigError("labels: label out of range");
        ++hist[std::size_t(l)];
    }
    for (std::size_t c = 0; c < num_classes; ++c)
        if (hist[c] == labels.size())
            throw ConfigError("labels: class " + std::to_string(c) + " covers the whole dataset");
}

/// k-means with k-means++ seeding and farthest-point reseeding of emptied
/// clusters. Deterministic for a fixed rng state.
inline std::vector<int> kmeans(const Tensor& x, std::size_t k, Rng& rng, int max_iter = 100) {
    const std::size_t n = x.rows(), d = x.cols();
    check(k >= 1 && k <= n, "kmeans: k out of range");
    Tensor centers({k, d});
    // k-means++ seeding
    std::vector<double> dist2(n, std::numeric_limits<double>::max());
    std::size_t first = rng.uniform_int(0, std::int64_t(n) - 1);
    std::copy(x.row(first).begin(), x.row(first).end(), centers.row(0).begin());
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d2 = 0.0;
            auto xi = x.row(i);
            auto ct = centers.row(c - 1);
            for (std::size_t j = 0; j < d; ++j) {
                double diff = xi[j] - ct[j];
                d2 += diff * diff;
            }
            dist2[i] = std::min(dist2[i], d2);
            total += dist2[i];
        }
        double r = rng.uniform() * total;
        std::size_t pick = n - 1;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += dist2[i];
            if (acc >= r) {
                pick = i;
                break;
            }
        }
        std::copy(x.row(pick).begin(), x.row(pick).end(), centers.row(c).begin());
    }
    std::vector<int> assign(n, -1);
    for (int it = 0; it < max_iter; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            int bc = 0;
            auto xi = x.row(i);
            for (std::size_t c = 0; c < k; ++c) {
                double d2 = 0.0;
                auto ct = centers.row(c);
                for (std::size_t j = 0; j < d; ++j) {
                    double diff = xi[j] - ct[j];
                    d2 += diff * diff;
                }
                if (d2 < best) {
                    best = d2;
                    bc = int(c);
                }
            }
            if (assign[i] != bc) {
                assign[i] = bc;
                changed = true;
            }
        }
        if (!changed && it > 0) break;
        centers.fill(0.0);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto ct = centers.row(std::size_t(assign[i]));
            auto xi = x.row(i);
            for (std::size_t j = 0; j < d; ++j) ct[j] += xi[j];
            ++counts[std::size_t(assign[i])];
        }
        for (std::size_t c = 0; c < k; ++c)
            if (counts[c] > 0) {
                auto ct = centers.row(c);
                for (std::size_t j = 0; j < d; ++j) ct[j] /= double(counts[c]);
            }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            // reseed an emptied cluster at the point farthest from its center
            std::size_t far = 0;
            double fd = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                auto ct = centers.row(std::size_t(assign[i]));
                auto xi = x.row(i);
                double d2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    double diff = xi[j] - ct[j];
                    d2 += diff * diff;
                }
                if (d2 > fd) {
                    fd = d2;
                    far = i;
                }
            }
            std::copy(x.row(far).begin(), x.row(far).end(), centers.row(c).begin());
        }
    }
    return assign;
}

/// Projects rows onto the top-q principal components (eigenvectors of the
/// data covariance found by Jacobi rotations on the accumulated matrix).
inline Tensor pca_project(const Tensor& x, std::size_t q);

/// Produces labels per the source kind and asserts informativeness.
inline LabelAssignment assign_labels(const Tensor& x, const std::vector<int>& original,
                                     const LabelSource& src) {
    const std::size_t n = x.rows();
    check(n >= 2, "assign_labels: dataset too small");
    LabelAssignment out;
    out.kind = src.kind;
    out.seed = src.seed;
    if (src.kind == "original") {
        check(original.size() == n, "assign_labels: original labels missing");
        out.labels = original;
        int mx = 0;
        for (int l : original) mx = std::max(mx, l);
        out.num_classes = std::size_t(mx) + 1;
    } else if (src.kind == "random_per_sample") {
        out.labels.resize(n);
        for (std::size_t i = 0; i < n; ++i) out.labels[i] = int(i);
        out.num_classes = n;
    } else if (src.kind == "random_k") {
        check(src.k >= 2 && src.k <= n, "assign_labels: random_k needs 2 <= k <= N");
        Rng rng(src.seed);
        out.num_classes = src.k;
        for (int attempt = 0; attempt < 100; ++attempt) {
            out.labels.clear();
            for (std::size_t i = 0; i < n; ++i)
                out.labels.push_back(int(rng.uniform_int(0, std::int64_t(src.k) - 1)));
            std::vector<std::size_t> hist(src.k, 0);
            for (int l : out.labels) ++hist[std::size_t(l)];
            if (*std::max_element(hist.begin(), hist.end()) < n) break;
        }
    } else if (src.kind == "cluster_k") {
        check(src.k >= 2 && src.k <= n, "assign_labels: cluster_k needs 2 <= k <= N");
        Rng rng(src.seed);
        const Tensor* feat = &x;
        Tensor projected;
        if (src.pca_dims > 0 && src.pca_dims < x.cols()) {
            projected = pca_project(x, src.pca_dims);
            feat = &projected;
        }
        out.labels = kmeans(*feat, src.k, rng);
        out.num_classes = src.k;
    } else {
        throw ConfigError("assign_labels: unknown kind '" + src.kind + "'");
    }
    check_informative(out.labels, out.num_classes);
    return out;
}

struct ClassifierTrainConfig {
    std::vector<std::size_t> widths = {64, 64};
    nn::Activation act = nn::Activation::silu;
    int epochs = 300;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    double weight_decay = 0.0;
    std::uint64_t seed = 1;
};

struct TeacherResult {
    nn::Mlp net;
    double train_accuracy = 0.0;
    std::vector<double> epoch_loss;
};

/// Cross-entropy on a batch; gradient accumulates when grads != nullptr.
inline double cross_entropy_loss(const nn::Mlp& clf, const Tensor& x, const std::vector<int>& y,
                                 const std::vector<int>& ts, std::vector<Tensor>* grads,
                                 bool update_stats = false) {
    const std::size_t B = x.rows();
    nn::MlpCache cache;
    Tensor logits = clf.forward(x, ts, update_stats, &cache);
    double loss = 0.0;
    Tensor up({B, clf.cfg.output_dim});
    for (std::size_t b = 0; b < B; ++b) {
        auto row = logits.row(b);
        std::vector<double> p = nn::softmax(row);
        loss += -(row[std::size_t(y[b])] - nn::log_sum_exp(row));
        for (std::size_t j = 0; j < p.size(); ++j)
            up.at(b, j) = (p[j] - (int(j) == y[b] ? 1.0 : 0.0)) / double(B);
    }
    loss /= double(B);
    check(std::isfinite(loss), "cross_entropy: non-finite loss");
    if (grads) clf.backward(cache, up, *grads, nullptr);
    return loss;
}

/// Plain time-independent classifier trained on (x, labels) to overfit.
inline TeacherResult train_teacher(const Tensor& x, const LabelAssignment& la,
                                   const ClassifierTrainConfig& cfg) {
    check(x.rows() == la.labels.size(), "train_teacher: one label per sample required");
    std::vector<std::size_t> class_count(la.num_classes, 0);
    for (int l : la.labels) ++class_count[std::size_t(l)];
    nn::MlpConfig arch;
    arch.input_dim = x.cols();
    arch.hidden = cfg.widths;
    arch.output_dim = la.num_classes;
    arch.act = cfg.act;
    arch.time_conditioned = false;
    TeacherResult res;
    res.net = nn::Mlp(arch);
    Rng rng(cfg.seed);
    res.net.init(rng);
    auto params = res.net.trainable();
    nn::AdamW opt(params, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
    const std::size_t N = x.rows();
    std::vector<std::size_t> order(N);
    for (std::size_t i = 0; i < N; ++i) order[i] = i;
    for (int e = 0; e < cfg.epochs; ++e) {
        rng.shuffle(order);
        double esum = 0.0;
        std::size_t nb = 0;
        for (std::size_t off = 0; off < N; off += cfg.batch_size) {
            const std::size_t bsz = std::min(cfg.batch_size, N - off);
            Tensor xb({bsz, x.cols()});
            std::vector<int> yb(bsz);
            for (std::size_t b = 0; b < bsz; ++b) {
                auto src = x.row(order[off + b]);
                std::copy(src.begin(), src.end(), xb.row(b).begin());
                yb[b] = la.labels[order[off + b]];
            }
            auto grads = res.net.zero_grads();
            esum += cross_entropy_loss(res.net, xb, yb, {}, &grads, true);
            opt.step(params, grads);
            ++nb;
        }
        res.epoch_loss.push_back(esum / double(nb));
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < N; ++i) {
        auto logits = res.net.forward_one(x.row(i));
        std::size_t am = 0;
        for (std::size_t j = 1; j < logits.size(); ++j)
            if (logits[j] > logits[am]) am = j;
        if (int(am) == la.labels[i]) ++hits;
    }
    res.train_accuracy = double(hits) / double(N);
    return res;
}

struct PseudoDataset {
    Tensor x;     // {n, d} synthetic samples from the target diffusion model
    Tensor soft;  // {n, C} teacher softmax on the clean samples
};

inline PseudoDataset generate_pseudo_dataset(const nn::Mlp& model, const NoiseSchedule& sched,
                                             const nn::Mlp& teacher, std::size_t n,
                                             std::uint64_t seed, int steps, double eta = 0.0,
                                             int threads = 1) {
    check(n >= 1, "generate_pseudo_dataset: n must be >= 1");
    PseudoDataset ps;
    ps.x = unguided_sample(model, sched, steps, eta, n, seed, threads).samples;
    ps.soft = Tensor({n, teacher.cfg.output_dim});
    parallel_for(n, threads, [&](std::size_t i) {
        auto logits = teacher.forward_one(ps.x.row(i));
        auto p = nn::softmax(logits);
        std::copy(p.begin(), p.end(), ps.soft.row(i).begin());
    });
    return ps;
}

struct DistillConfig {
    std::vector<std::size_t> widths;  // empty = inherit teacher widths + copy weights
    std::size_t time_sin_width = 32;
    std::size_t time_proj_dim = 32;
    int epochs = 400;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double weight_decay = 0.0;
    double holdout_frac = 0.1;
    std::uint64_t seed = 1;
};

struct DistillResult {
    nn::Mlp student;
    double holdout_kl_t1 = 0.0;
    std::vector<double> epoch_loss;
};

/// Distillation KL on a batch of noised samples against fixed soft targets:
///   L = (1/B) sum_b KL( teacher_b || softmax(student(x_t_b, t_b)) ).
/// The teacher distribution is the first KL argument; the gradient on the
/// student logits is (q - p)/B.
inline double distill_loss(const nn::Mlp& student, const Tensor& xt, const std::vector<int>& ts,
                           const Tensor& soft, std::vector<Tensor>* grads,
                           bool update_stats = false) {
    const std::size_t B = xt.rows();
    nn::MlpCache cache;
    Tensor logits = student.forward(xt, ts, update_stats, &cache);
    double loss = 0.0;
    Tensor up({B, student.cfg.output_dim});
    for (std::size_t b = 0; b < B; ++b) {
        auto p = soft.row(b);
        auto q = nn::softmax(logits.row(b));
        loss += nn::kl_div(p, q);
        for (std::size_t j = 0; j < q.size(); ++j) up.at(b, j) = (q[j] - p[j]) / double(B);
    }
    loss /= double(B);
    check(std::isfinite(loss), "distill: non-finite loss");
    if (grads) student.backward(cache, up, *grads, nullptr);
    return loss;
}

/// TDKD: trains a time-conditioned student on teacher soft labels with fresh
/// uniform timesteps and fresh forward-noise draws each visit. When widths
/// are inherited, the student starts from the teacher's weights so it differs
/// only by the inserted time modules.
inline DistillResult distill(const nn::Mlp& teacher, const PseudoDataset& pseudo,
                             const NoiseSchedule& sched, const DistillConfig& cfg) {
    const std::size_t n = pseudo.x.rows();
    check(n >= 2, "distill: pseudo dataset too small");
    check(pseudo.soft.rows() == n, "distill: soft labels must match samples");
    const std::size_t d = pseudo.x.cols();
    const std::size_t C = teacher.cfg.output_dim;
    check(pseudo.soft.cols() == C, "distill: soft label width != teacher classes");

    nn::MlpConfig arch;
    arch.input_dim = d;
    arch.hidden = cfg.widths.empty() ? teacher.cfg.hidden : cfg.widths;
    arch.output_dim = C;
    arch.act = teacher.cfg.act;
    arch.time_conditioned = true;
    arch.time_sin_width = cfg.time_sin_width;
    arch.time_proj_dim = cfg.time_proj_dim;

    DistillResult res;
    res.student = nn::Mlp(arch);
    Rng rng(cfg.seed);
    res.student.init(rng);
    if (cfg.widths.empty() || cfg.widths == teacher.cfg.hidden) {
        // start from the teacher: time modules are zero-initialized, so the
        // initial student computes exactly the teacher function at every t
        for (std::size_t i = 0; i < teacher.lin.size(); ++i) {
            res.student.lin[i].w = teacher.lin[i].w;
            res.student.lin[i].b = teacher.lin[i].b;
        }
        for (std::size_t i = 0; i < teacher.norm.size(); ++i) res.student.norm[i] = teacher.norm[i];
    }

    const std::size_t holdout = std::min(n / 2, std::size_t(std::ceil(cfg.holdout_frac * n)));
    const std::size_t ntrain = n - holdout;
    check(ntrain >= 1, "distill: no training samples left after holdout");

    auto params = res.student.trainable();
    nn::AdamW opt(params, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
    std::vector<std::size_t> order(ntrain);
    for (std::size_t i = 0; i < ntrain; ++i) order[i] = i;
    for (int e = 0; e < cfg.epochs; ++e) {
        rng.shuffle(order);
        double esum = 0.0;
        std::size_t nb = 0;
        for (std::size_t off = 0; off < ntrain; off += cfg.batch_size) {
            const std::size_t bsz = std::min(cfg.batch_size, ntrain - off);
            Tensor xt({bsz, d});
            Tensor soft({bsz, C});
            std::vector<int> ts(bsz);
            std::vector<double> eps(d);
            for (std::size_t b = 0; b < bsz; ++b) {
                const std::size_t i = order[off + b];
                ts[b] = int(rng.uniform_int(1, sched.T));
                forward_noise(sched, pseudo.x.row(i), ts[b], rng, xt.row(b), eps);
                std::copy(pseudo.soft.row(i).begin(), pseudo.soft.row(i).end(),
                          soft.row(b).begin());
            }
            auto grads = res.student.zero_grads();
            esum += distill_loss(res.student, xt, ts, soft, &grads, true);
            opt.step(params, grads);
            ++nb;
        }
        res.epoch_loss.push_back(esum / double(nb));
    }

    // held-out fidelity at the lowest noise level
    if (holdout > 0) {
        double kl = 0.0;
        std::vector<double> xt(d), eps(d);
        for (std::size_t i = ntrain; i < n; ++i) {
            forward_noise(sched, pseudo.x.row(i), 1, rng, xt, eps);
            auto q = nn::softmax(res.student.forward_one(xt, 1));
            kl += nn::kl_div(pseudo.soft.row(i), q);
        }
        res.holdout_kl_t1 = kl / double(holdout);
    }
    return res;
}

inline Tensor pca_project(const Tensor& x, std::size_t q) {
    const std::size_t n = x.rows(), d = x.cols();
    check(q >= 1 && q < d, "pca_project: q must lie in 1..d-1");
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto r = x.row(i);
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
    }
    for (auto& m : mean) m /= double(n);
    Tensor cov({d, d});
    for (std::size_t i = 0; i < n; ++i) {
        auto r = x.row(i);
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b)
                cov.at(a, b) += (r[a] - mean[a]) * (r[b] - mean[b]) / double(n);
    }
    // Jacobi rotations with eigenvector accumulation
    Tensor m = cov;
    Tensor v({d, d});
    for (std::size_t i = 0; i < d; ++i) v.at(i, i) = 1.0;
    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i + 1; j < d; ++j) off += m.at(i, j) * m.at(i, j);
        if (off <= 1e-24) break;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t qq = p + 1; qq < d; ++qq) {
                double apq = m.at(p, qq);
                if (std::abs(apq) < 1e-300) continue;
                double theta = (m.at(qq, qq) - m.at(p, p)) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t k = 0; k < d; ++k) {
                    double mkp = m.at(k, p), mkq = m.at(k, qq);
                    m.at(k, p) = c * mkp - s * mkq;
                    m.at(k, qq) = s * mkp + c * mkq;
                    double vkp = v.at(k, p), vkq = v.at(k, qq);
                    v.at(k, p) = c * vkp - s * vkq;
                    v.at(k, qq) = s * vkp + c * vkq;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    double mpk = m.at(p, k), mqk = m.at(qq, k);
                    m.at(p, k) = c * mpk - s * mqk;
                    m.at(qq, k) = s * mpk + c * mqk;
                }
            }
    }
    std::vector<std::size_t> idx(d);
    for (std::size_t i = 0; i < d; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return m.at(a, a) > m.at(b, b); });
    Tensor out({n, q});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < q; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += (x.at(i, j) - mean[j]) * v.at(j, idx[c]);
            out.at(i, c) = s;
        }
    return out;
}

}  // namespace side
