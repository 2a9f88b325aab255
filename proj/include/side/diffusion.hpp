// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "side/nn.hpp"
#include "side/optim.hpp"
#include "side/parallel.hpp"
#include "side/rng.hpp"
#include "side/schedule.hpp"

namespace side {

/// Epsilon-prediction MSE over a batch with fixed timesteps and noise draws:
///   L = (1/B) sum_b || eps_hat(x_t_b, t_b) - eps_b ||^2.
/// Gradients accumulate into `grads` (trainable() order). The deterministic
/// signature keeps the loss a fixed function of the parameters, which the
/// finite-difference checks rely on.
inline double denoising_loss_at(const nn::Mlp& model, const NoiseSchedule& sched,
                                const Tensor& x0, const std::vector<int>& ts, const Tensor& eps,
                                std::vector<Tensor>* grads, bool update_stats = false) {
    check(x0.rank() == 2 && x0.rows() >= 1, "denoising_loss: non-empty batch required");
    check(eps.same_shape(x0), "denoising_loss: noise shape must match batch");
    check(ts.size() == x0.rows(), "denoising_loss: one timestep per sample required");
    const std::size_t B = x0.rows(), d = x0.cols();
    Tensor xt({B, d});
    for (std::size_t b = 0; b < B; ++b) {
        check(ts[b] >= 1 && ts[b] <= sched.T, "denoising_loss: t out of 1..T");
        const double a = std::sqrt(sched.abar(ts[b]));
        const double s = std::sqrt(1.0 - sched.abar(ts[b]));
        for (std::size_t j = 0; j < d; ++j) xt.at(b, j) = a * x0.at(b, j) + s * eps.at(b, j);
    }
    nn::MlpCache cache;
    Tensor pred = model.forward(xt, ts, update_stats, &cache);
    double loss = 0.0;
    Tensor up({B, d});
    for (std::size_t k = 0; k < pred.numel(); ++k) {
        const double r = pred[k] - eps[k];
        loss += r * r;
        up[k] = 2.0 * r / double(B);
    }
    loss /= double(B);
    check(std::isfinite(loss), "denoising_loss: non-finite loss");
    if (grads) model.backward(cache, up, *grads, nullptr);
    return loss;
}

/// Stochastic version: timesteps uniform on [1, T], fresh standard-normal
/// noise, then the deterministic elbow above.
inline double denoising_loss(const nn::Mlp& model, const NoiseSchedule& sched, const Tensor& x0,
                             Rng& rng, std::vector<Tensor>* grads, bool update_stats = false) {
    std::vector<int> ts(x0.rows());
    for (auto& t : ts) t = int(rng.uniform_int(1, sched.T));
    Tensor eps(x0.shape());
    rng.normal_fill(eps.flat());
    return denoising_loss_at(model, sched, x0, ts, eps, grads, update_stats);
}

struct DiffusionTrainConfig {
    int epochs = 3000;
    std::size_t batch_size = 16;
    double lr = 1e-4;
    double weight_decay = 0.0;
    std::uint64_t seed = 1;
};

struct TrainLog {
    std::vector<double> epoch_loss;
};

/// Trains an epsilon-prediction network by minibatch AdamW. Sample order is
/// reshuffled each epoch; running normalization statistics update during
/// training and stay frozen afterwards.
inline nn::Mlp train_score_net(const Tensor& x0, const NoiseSchedule& sched,
                               const nn::MlpConfig& arch, const DiffusionTrainConfig& cfg,
                               TrainLog* log = nullptr) {
    check(arch.input_dim == x0.cols() && arch.output_dim == x0.cols(),
          "train_score_net: net width must equal data dimension");
    check(arch.time_conditioned, "train_score_net: score net must be time-conditioned");
    nn::Mlp model(arch);
    Rng rng(cfg.seed);
    model.init(rng);
    auto params = model.trainable();
    nn::AdamW opt(params, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
    const std::size_t N = x0.rows();
    std::vector<std::size_t> order(N);
    for (std::size_t i = 0; i < N; ++i) order[i] = i;
    for (int e = 0; e < cfg.epochs; ++e) {
        rng.shuffle(order);
        double esum = 0.0;
        std::size_t nbatches = 0;
        for (std::size_t off = 0; off < N; off += cfg.batch_size) {
            const std::size_t bsz = std::min(cfg.batch_size, N - off);
            Tensor xb({bsz, x0.cols()});
            for (std::size_t b = 0; b < bsz; ++b) {
                auto src = x0.row(order[off + b]);
                std::copy(src.begin(), src.end(), xb.row(b).begin());
            }
            auto grads = model.zero_grads();
            esum += denoising_loss(model, sched, xb, rng, &grads, true);
            opt.step(params, grads);
            ++nbatches;
        }
        if (log) log->epoch_loss.push_back(esum / double(nbatches));
    }
    return model;
}

/// Input gradient of the class-c log-softmax:
///   grad_x log p^t(c | x), via one reverse pass with upstream e_c - softmax.
/// Works for time-conditioned students (t forwarded) and plain teachers
/// (t ignored), which covers the time-independent guidance baseline.
inline std::vector<double> classifier_score(const nn::Mlp& clf, std::span<const double> x, int t,
                                            int c) {
    check(c >= 0 && std::size_t(c) < clf.cfg.output_dim, "classifier_score: class out of range");
    Tensor xb({1, x.size()}, std::vector<double>(x.begin(), x.end()));
    std::vector<int> ts;
    if (clf.cfg.time_conditioned) ts.push_back(t);
    nn::MlpCache cache;
    Tensor logits = clf.forward(xb, ts, false, &cache);
    std::vector<double> p = nn::softmax(logits.row(0));
    Tensor up({1, clf.cfg.output_dim});
    for (std::size_t j = 0; j < p.size(); ++j) up[j] = (int(j) == c ? 1.0 : 0.0) - p[j];
    auto grads = clf.zero_grads();
    Tensor dx;
    clf.backward(cache, up, grads, &dx);
    auto row = dx.row(0);
    return {row.begin(), row.end()};
}

struct GuidanceSpec {
    int target_label = 0;
    double lambda = 0.0;
    int steps = 50;
    double eta = 0.0;  // 0 = deterministic implicit sampler

    void validate() const {
        check(lambda >= 0.0, "GuidanceSpec: lambda must be >= 0");
        check(steps >= 1, "GuidanceSpec: steps must be >= 1");
        check(eta >= 0.0 && eta <= 1.0, "GuidanceSpec: eta must lie in [0,1]");
    }
};

struct SampleBatch {
    Tensor samples;  // {n, d}
    std::uint64_t seed = 0;
    double lambda = 0.0;
    int steps = 0;
    double eta = 0.0;
    int target_label = -1;
};

/// Strictly decreasing sampler timesteps from T down to 1.
inline std::vector<int> sampler_times(int T, int steps) {
    check(steps >= 1 && steps <= T, "sampler_times: steps must lie in 1..T");
    std::vector<int> ts;
    if (steps == 1) {
        ts.push_back(T);
        return ts;
    }
    for (int i = 0; i < steps; ++i) {
        double v = double(T) - double(i) * double(T - 1) / double(steps - 1);
        int t = int(std::lround(v));
        if (!ts.empty()) check(t < ts.back(), "sampler_times: non-decreasing grid");
        ts.push_back(t);
    }
    check(ts.front() == T && ts.back() == 1, "sampler_times: grid must span T..1");
    return ts;
}

/// One reverse chain of the implicit (DDIM-style) sampler. The guidance rule
/// shifts the predicted noise before the update:
///   eps_tilde = eps_hat - lambda * sqrt(1 - abar_t) * grad_x log p^t(c|x_t).
/// lambda = 0 skips the classifier entirely, so the chain is bit-identical to
/// unguided sampling under the same seed.
inline void sample_chain(const nn::Mlp& model, const NoiseSchedule& sched,
                         const GuidanceSpec& spec, const nn::Mlp* clf, Rng& rng,
                         std::span<double> out) {
    const std::size_t d = model.cfg.input_dim;
    check(out.size() == d, "sample_chain: output size mismatch");
    const std::vector<int> ts = sampler_times(sched.T, spec.steps);
    std::vector<double> x(d);
    rng.normal_fill(x);
    std::vector<double> z(d), x0p(d);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int s = i + 1 < ts.size() ? ts[i + 1] : 0;
        const double at = sched.abar(t), as = sched.abar(s);
        std::vector<double> eps = model.forward_one(x, t);
        if (spec.lambda != 0.0) {
            check(clf != nullptr, "sample_chain: lambda > 0 requires a classifier");
            std::vector<double> g = classifier_score(*clf, x, t, spec.target_label);
            const double sc = spec.lambda * std::sqrt(1.0 - at);
            for (std::size_t j = 0; j < d; ++j) eps[j] -= sc * g[j];
        }
        const double sigma =
            spec.eta * std::sqrt((1.0 - as) / (1.0 - at)) * std::sqrt(1.0 - at / as);
        const double dir = std::sqrt(std::max(0.0, 1.0 - as - sigma * sigma));
        for (std::size_t j = 0; j < d; ++j)
            x0p[j] = (x[j] - std::sqrt(1.0 - at) * eps[j]) / std::sqrt(at);
        if (sigma > 0.0)
            rng.normal_fill(z);
        else
            std::fill(z.begin(), z.end(), 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            x[j] = std::sqrt(as) * x0p[j] + dir * eps[j] + sigma * z[j];
            if (!std::isfinite(x[j]))
                throw StageError("sample", "non-finite trajectory value at t=" + std::to_string(t));
        }
    }
    std::copy(x.begin(), x.end(), out.begin());
}

/// Batch sampling with independent chains. Chain i uses the RNG stream
/// derived from (seed, i), so thread count never changes outputs. When
/// `per_chain_labels` is given, chain i conditions on its own class instead
/// of spec.target_label.
inline SampleBatch guided_sample(const nn::Mlp& model, const NoiseSchedule& sched,
                                 const GuidanceSpec& spec, const nn::Mlp* clf, std::size_t n,
                                 std::uint64_t seed, int threads = 1,
                                 const std::vector<int>* per_chain_labels = nullptr) {
    spec.validate();
    if (spec.lambda > 0.0) check(clf != nullptr, "guided_sample: lambda > 0 requires a classifier");
    if (per_chain_labels)
        check(per_chain_labels->size() == n, "guided_sample: one label per chain required");
    SampleBatch batch;
    batch.samples = Tensor({n, model.cfg.input_dim});
    batch.seed = seed;
    batch.lambda = spec.lambda;
    batch.steps = spec.steps;
    batch.eta = spec.eta;
    batch.target_label = spec.lambda > 0.0 ? spec.target_label : -1;
    parallel_for(n, threads, [&](std::size_t i) {
        Rng chain_rng = Rng::derive(seed, i);
        GuidanceSpec chain_spec = spec;
        if (per_chain_labels) chain_spec.target_label = (*per_chain_labels)[i];
        sample_chain(model, sched, chain_spec, clf, chain_rng, batch.samples.row(i));
    });
    return batch;
}

inline SampleBatch unguided_sample(const nn::Mlp& model, const NoiseSchedule& sched, int steps,
                                   double eta, std::size_t n, std::uint64_t seed,
                                   int threads = 1) {
    GuidanceSpec spec;
    spec.lambda = 0.0;
    spec.steps = steps;
    spec.eta = eta;
    return guided_sample(model, sched, spec, nullptr, n, seed, threads);
}

}  // namespace side
