// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "side/dataset.hpp"
#include "side/diffusion.hpp"
#include "side/rng.hpp"
#include "side/schedule.hpp"

using namespace side;

namespace {

nn::Mlp score_net_arch(std::size_t d, std::vector<std::size_t> widths, std::uint64_t seed,
                       bool init = true) {
    nn::MlpConfig cfg;
    cfg.input_dim = d;
    cfg.hidden = std::move(widths);
    cfg.output_dim = d;
    cfg.act = nn::Activation::silu;
    cfg.time_conditioned = true;
    cfg.time_sin_width = 8;
    cfg.time_proj_dim = 8;
    nn::Mlp m(cfg);
    if (init) {
        Rng rng(seed);
        m.init(rng);
        // non-neutral time modules so conditioning matters
        for (auto& t : m.tmod) {
            for (auto& v : t.w_scale.flat()) v = rng.uniform(-0.2, 0.2);
            for (auto& v : t.w_shift.flat()) v = rng.uniform(-0.2, 0.2);
        }
    }
    return m;
}

}  // namespace

TEST_CASE("linear schedule endpoints and monotonicity", "[diffusion]") {
    auto s = make_schedule("linear", 1000);
    REQUIRE(s.beta.front() == Catch::Approx(1e-4).epsilon(1e-12));
    REQUIRE(s.beta.back() == Catch::Approx(0.02).epsilon(1e-12));
    REQUIRE(s.abar(0) == 1.0);
    for (int t = 1; t <= 1000; ++t) {
        REQUIRE(s.beta[t - 1] > 0.0);
        REQUIRE(s.beta[t - 1] < 1.0);
        REQUIRE(s.abar(t) < s.abar(t - 1));
    }
    // the terminal distribution is essentially pure noise
    REQUIRE(s.abar(1000) < 1e-4);

    // alpha_bar is the running product of (1 - beta)
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        prod *= 1.0 - s.beta[t - 1];
        REQUIRE(s.abar(t) == Catch::Approx(prod).epsilon(1e-12));
    }
}

TEST_CASE("schedule edge cases", "[diffusion]") {
    auto s1 = make_schedule("linear", 1);
    REQUIRE(s1.beta.size() == 1);
    REQUIRE(s1.beta[0] == Catch::Approx(1e-4).epsilon(1e-12));
    REQUIRE(s1.abar(1) == Catch::Approx(1.0 - 1e-4).epsilon(1e-12));

    auto s2 = make_schedule("linear", 2);
    REQUIRE(s2.beta[0] == Catch::Approx(1e-4).epsilon(1e-12));
    REQUIRE(s2.beta[1] == Catch::Approx(0.02).epsilon(1e-12));
    REQUIRE(s2.abar(2) == Catch::Approx((1.0 - 1e-4) * 0.98).epsilon(1e-12));

    REQUIRE_THROWS_AS(make_schedule("exponential", 10), ConfigError);
    REQUIRE_THROWS_AS(make_schedule("linear", 0), ShapeError);
    REQUIRE_THROWS_AS(s2.abar(3), ShapeError);
}

TEST_CASE("cosine schedule is a valid decreasing schedule", "[diffusion]") {
    auto s = make_schedule("cosine", 500);
    for (int t = 1; t <= 500; ++t) {
        REQUIRE(s.beta[t - 1] > 0.0);
        REQUIRE(s.beta[t - 1] <= 0.999);
        REQUIRE(s.abar(t) < s.abar(t - 1));
    }
    REQUIRE(s.abar(500) < 1e-3);
    // cosine decays more slowly than linear early on
    auto lin = make_schedule("linear", 500);
    REQUIRE(s.abar(50) > lin.abar(50));
}

TEST_CASE("forward noising identity and moments", "[diffusion]") {
    auto s = make_schedule("linear", 100);
    std::vector<double> x0 = {0.8, -0.3, 0.1};
    std::vector<double> xt(3), eps(3);
    Rng rng(5);
    forward_noise(s, x0, 40, rng, xt, eps);
    for (int j = 0; j < 3; ++j) {
        double want = std::sqrt(s.abar(40)) * x0[j] + std::sqrt(1.0 - s.abar(40)) * eps[j];
        REQUIRE(xt[j] == want);
    }

    // moments at a fixed t over many draws
    const int t = 70, n = 20000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        forward_noise(s, std::vector<double>{0.8}, t, rng, std::span(xt).subspan(0, 1),
                      std::span(eps).subspan(0, 1));
        sum += xt[0];
        sq += xt[0] * xt[0];
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    double want_mean = std::sqrt(s.abar(t)) * 0.8;
    double want_var = 1.0 - s.abar(t);
    REQUIRE(std::abs(mean - want_mean) < 4.0 / std::sqrt(double(n)));
    REQUIRE(std::abs(var - want_var) < 6.0 / std::sqrt(double(n)));
}

TEST_CASE("denoising loss closed cases", "[diffusion]") {
    auto s = make_schedule("linear", 50);
    const std::size_t d = 3;

    // zero network: loss is exactly mean ||eps||^2
    auto zero = score_net_arch(d, {4}, 0, false);
    Tensor x0({2, d}), eps({2, d});
    Rng rng(7);
    rng.normal_fill(x0.flat());
    rng.normal_fill(eps.flat());
    double loss = denoising_loss_at(zero, s, x0, {3, 44}, eps, nullptr);
    double want = 0.0;
    for (std::size_t k = 0; k < eps.numel(); ++k) want += eps[k] * eps[k];
    want /= 2.0;
    REQUIRE(loss == Catch::Approx(want).epsilon(1e-12));

    // network that emits exactly the injected noise: loss 0
    auto memo = score_net_arch(d, {4}, 0, false);
    Tensor x1({1, d}), e1({1, d});
    rng.normal_fill(x1.flat());
    rng.normal_fill(e1.flat());
    for (std::size_t j = 0; j < d; ++j) memo.lin.back().b[j] = e1[j];
    REQUIRE(denoising_loss_at(memo, s, x1, {17}, e1, nullptr) == Catch::Approx(0.0).margin(1e-18));
}

TEST_CASE("denoising loss gradient matches finite differences", "[diffusion]") {
    auto s = make_schedule("linear", 20);
    auto m = score_net_arch(3, {6}, 13);
    Tensor x0({4, 3}), eps({4, 3});
    Rng rng(17);
    rng.normal_fill(x0.flat());
    rng.normal_fill(eps.flat());
    std::vector<int> ts = {1, 7, 15, 20};

    auto grads = m.zero_grads();
    denoising_loss_at(m, s, x0, ts, eps, &grads);

    auto params = m.trainable();
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::size_t k = 0; k < params[pi]->numel(); ++k) {
            double& pv = (*params[pi])[k];
            double keep = pv;
            pv = keep + h;
            double up = denoising_loss_at(m, s, x0, ts, eps, nullptr);
            pv = keep - h;
            double dn = denoising_loss_at(m, s, x0, ts, eps, nullptr);
            pv = keep;
            double fd = (up - dn) / (2 * h);
            double an = grads[pi][k];
            double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            worst = std::max(worst, rel);
        }
    }
    INFO("worst relative error " << worst);
    REQUIRE(worst <= 1e-4);
}

TEST_CASE("classifier score closed form for a linear softmax model", "[diffusion]") {
    nn::MlpConfig cfg;
    cfg.input_dim = 2;
    cfg.hidden = {};
    cfg.output_dim = 3;
    nn::Mlp clf(cfg);
    Rng rng(3);
    for (auto& v : clf.lin[0].w.flat()) v = rng.uniform(-1.0, 1.0);
    for (auto& v : clf.lin[0].b.flat()) v = rng.uniform(-0.5, 0.5);

    std::vector<double> x = {0.3, -0.7};
    for (int c = 0; c < 3; ++c) {
        auto g = classifier_score(clf, x, 0, c);
        // grad = W^T (e_c - softmax(Wx + b))
        std::vector<double> logits(3);
        for (int j = 0; j < 3; ++j)
            logits[j] = clf.lin[0].w.at(j, 0) * x[0] + clf.lin[0].w.at(j, 1) * x[1] +
                        clf.lin[0].b[j];
        auto p = nn::softmax(logits);
        for (int i = 0; i < 2; ++i) {
            double want = 0.0;
            for (int j = 0; j < 3; ++j)
                want += clf.lin[0].w.at(j, i) * ((j == c ? 1.0 : 0.0) - p[j]);
            REQUIRE(g[i] == Catch::Approx(want).epsilon(1e-12));
        }
    }

    // constant logits: zero gradient
    nn::Mlp flat(cfg);
    auto g0 = classifier_score(flat, x, 0, 1);
    REQUIRE(g0[0] == 0.0);
    REQUIRE(g0[1] == 0.0);
}

TEST_CASE("classifier score matches finite differences through an mlp", "[diffusion]") {
    nn::MlpConfig cfg;
    cfg.input_dim = 3;
    cfg.hidden = {6};
    cfg.output_dim = 4;
    cfg.act = nn::Activation::silu;
    cfg.time_conditioned = true;
    cfg.time_sin_width = 8;
    cfg.time_proj_dim = 6;
    nn::Mlp clf(cfg);
    Rng rng(29);
    clf.init(rng);
    for (auto& v : clf.time_w_proj.flat()) v = rng.uniform(-0.3, 0.3);
    for (auto& t : clf.tmod) {
        for (auto& v : t.w_scale.flat()) v = rng.uniform(-0.3, 0.3);
        for (auto& v : t.w_shift.flat()) v = rng.uniform(-0.3, 0.3);
    }

    std::vector<double> x = {0.4, -0.2, 0.9};
    const int t = 11, c = 2;
    auto g = classifier_score(clf, x, t, c);

    auto logp = [&](const std::vector<double>& xv) {
        auto logits = clf.forward_one(xv, t);
        return logits[c] - nn::log_sum_exp(logits);
    };
    const double h = 1e-5;
    for (int i = 0; i < 3; ++i) {
        auto xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        double fd = (logp(xp) - logp(xm)) / (2 * h);
        REQUIRE(g[i] == Catch::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("sampler time grids", "[diffusion]") {
    auto g = sampler_times(400, 50);
    REQUIRE(g.size() == 50);
    REQUIRE(g.front() == 400);
    REQUIRE(g.back() == 1);
    for (std::size_t i = 1; i < g.size(); ++i) REQUIRE(g[i] < g[i - 1]);

    REQUIRE(sampler_times(400, 1) == std::vector<int>{400});
    auto full = sampler_times(10, 10);
    REQUIRE(full == std::vector<int>{10, 9, 8, 7, 6, 5, 4, 3, 2, 1});
    REQUIRE_THROWS_AS(sampler_times(10, 11), ShapeError);
    REQUIRE_THROWS_AS(sampler_times(10, 0), ShapeError);
}

TEST_CASE("lambda zero is bit-identical to unguided sampling", "[diffusion]") {
    auto s = make_schedule("linear", 60);
    auto model = score_net_arch(3, {8}, 71);
    nn::MlpConfig ccfg;
    ccfg.input_dim = 3;
    ccfg.hidden = {5};
    ccfg.output_dim = 2;
    nn::Mlp clf(ccfg);
    Rng crng(72);
    clf.init(crng);

    GuidanceSpec spec;
    spec.lambda = 0.0;
    spec.steps = 12;
    spec.eta = 0.7;
    spec.target_label = 1;

    auto a = guided_sample(model, s, spec, &clf, 9, 2024, 1);
    auto b = unguided_sample(model, s, 12, 0.7, 9, 2024, 3);
    REQUIRE(a.samples.numel() == b.samples.numel());
    for (std::size_t k = 0; k < a.samples.numel(); ++k) REQUIRE(a.samples[k] == b.samples[k]);

    // guided run with the same seed differs
    spec.lambda = 4.0;
    auto c = guided_sample(model, s, spec, &clf, 9, 2024, 2);
    bool same = true;
    for (std::size_t k = 0; k < a.samples.numel(); ++k)
        if (a.samples[k] != c.samples[k]) same = false;
    REQUIRE_FALSE(same);
}

TEST_CASE("sampling is seed deterministic across thread counts", "[diffusion]") {
    auto s = make_schedule("linear", 40);
    auto model = score_net_arch(2, {6}, 81);
    auto a = unguided_sample(model, s, 10, 1.0, 17, 5, 1);
    auto b = unguided_sample(model, s, 10, 1.0, 17, 5, 4);
    auto c = unguided_sample(model, s, 10, 1.0, 17, 6, 1);
    for (std::size_t k = 0; k < a.samples.numel(); ++k) REQUIRE(a.samples[k] == b.samples[k]);
    bool same = true;
    for (std::size_t k = 0; k < a.samples.numel(); ++k)
        if (a.samples[k] != c.samples[k]) same = false;
    REQUIRE_FALSE(same);
}

TEST_CASE("full-step eta=1 sampler matches the ancestral oracle", "[diffusion]") {
    const int T = 8;
    const std::size_t d = 3;
    auto s = make_schedule("linear", T);
    auto model = score_net_arch(d, {6}, 91);

    GuidanceSpec spec;
    spec.lambda = 0.0;
    spec.steps = T;
    spec.eta = 1.0;

    const std::uint64_t seed = 314;
    auto got = guided_sample(model, s, spec, nullptr, 1, seed, 1);

    // ancestral oracle: x_{t-1} = (x_t - beta_t/sqrt(1-abar_t) eps)/sqrt(alpha_t)
    //                   + sqrt(beta_tilde_t) z,  beta_tilde_t = (1-abar_{t-1})/(1-abar_t) beta_t
    Rng rng = Rng::derive(seed, 0);
    std::vector<double> x(d), z(d);
    rng.normal_fill(x);
    for (int t = T; t >= 1; --t) {
        auto eps = model.forward_one(x, t);
        double beta = s.beta[std::size_t(t - 1)];
        double alpha = 1.0 - beta;
        double abar_t = s.abar(t), abar_p = s.abar(t - 1);
        double btilde = (1.0 - abar_p) / (1.0 - abar_t) * beta;
        double sigma = std::sqrt(btilde);
        if (sigma > 0.0)
            rng.normal_fill(z);
        else
            std::fill(z.begin(), z.end(), 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            double mean = (x[j] - beta / std::sqrt(1.0 - abar_t) * eps[j]) / std::sqrt(alpha);
            x[j] = mean + sigma * z[j];
        }
    }
    for (std::size_t j = 0; j < d; ++j)
        REQUIRE(got.samples[j] == Catch::Approx(x[j]).margin(1e-8));
}

TEST_CASE("guidance strength raises classifier confidence", "[diffusion]") {
    const std::size_t d = 2;
    auto s = make_schedule("linear", 30);
    auto zero = score_net_arch(d, {4}, 0, false);  // eps_hat = 0

    nn::MlpConfig ccfg;
    ccfg.input_dim = d;
    ccfg.hidden = {};
    ccfg.output_dim = 2;
    nn::Mlp clf(ccfg);
    clf.lin[0].w.at(0, 0) = 2.0;
    clf.lin[0].w.at(1, 0) = -2.0;

    auto confidence = [&](double lambda) {
        GuidanceSpec spec;
        spec.lambda = lambda;
        spec.steps = 15;
        spec.eta = 0.0;
        spec.target_label = 0;
        auto batch = guided_sample(zero, s, spec, &clf, 16, 99, 1);
        double acc = 0.0;
        for (std::size_t i = 0; i < 16; ++i) {
            auto row = batch.samples.row(i);
            auto logits = clf.forward_one(std::vector<double>(row.begin(), row.end()), 0);
            auto p = nn::softmax(logits);
            acc += p[0];
        }
        return acc / 16.0;
    };

    double c0 = confidence(0.0), c1 = confidence(1.0), c3 = confidence(3.0), c10 = confidence(10.0);
    REQUIRE(c1 > c0);
    REQUIRE(c3 > c1);
    REQUIRE(c10 > c3);
}

TEST_CASE("sampling aborts on a divergent model", "[diffusion]") {
    auto s = make_schedule("linear", 10);
    auto model = score_net_arch(2, {4}, 3);
    model.lin[0].w.fill(1e200);
    REQUIRE_THROWS(unguided_sample(model, s, 5, 0.0, 1, 1, 1));
}

TEST_CASE("training the score net reduces the loss", "[diffusion]") {
    DatasetSpec dspec;
    dspec.n = 12;
    dspec.dim = 2;
    dspec.k = 1;
    dspec.spread = 0.08;
    dspec.seed = 9;
    auto data = synth_dataset(dspec);

    auto s = make_schedule("linear", 40);
    nn::MlpConfig arch;
    arch.input_dim = 2;
    arch.hidden = {24, 24};
    arch.output_dim = 2;
    arch.act = nn::Activation::silu;
    arch.time_conditioned = true;
    arch.time_sin_width = 16;
    arch.time_proj_dim = 16;

    DiffusionTrainConfig tc;
    tc.epochs = 80;
    tc.batch_size = 6;
    tc.lr = 2e-3;
    tc.seed = 31;
    TrainLog log;
    auto model = train_score_net(data.x, s, arch, tc, &log);

    REQUIRE(log.epoch_loss.size() == 80);
    double head = (log.epoch_loss[0] + log.epoch_loss[1] + log.epoch_loss[2]) / 3.0;
    double tail = (log.epoch_loss[77] + log.epoch_loss[78] + log.epoch_loss[79]) / 3.0;
    REQUIRE(tail < 0.7 * head);

    // a fresh untrained net starts near loss = dim
    auto zero = score_net_arch(2, {4}, 0, false);
    Rng rng(44);
    double acc = 0.0;
    for (int r = 0; r < 200; ++r) acc += denoising_loss(zero, s, data.x, rng, nullptr);
    REQUIRE(acc / 200.0 == Catch::Approx(2.0).epsilon(0.15));
}

TEST_CASE("trained sampler stays near the data distribution", "[diffusion]") {
    DatasetSpec dspec;
    dspec.n = 16;
    dspec.dim = 2;
    dspec.k = 1;
    dspec.spread = 0.05;
    dspec.seed = 13;
    auto data = synth_dataset(dspec);

    auto s = make_schedule("linear", 50);
    nn::MlpConfig arch;
    arch.input_dim = 2;
    arch.hidden = {32, 32};
    arch.output_dim = 2;
    arch.act = nn::Activation::silu;
    arch.time_conditioned = true;
    arch.time_sin_width = 16;
    arch.time_proj_dim = 16;

    DiffusionTrainConfig tc;
    tc.epochs = 400;
    tc.batch_size = 8;
    tc.lr = 2e-3;
    tc.seed = 37;
    auto model = train_score_net(data.x, s, arch, tc);

    auto batch = unguided_sample(model, s, 25, 0.0, 200, 77, 2);
    double data_mean[2] = {0, 0}, gen_mean[2] = {0, 0};
    for (std::size_t i = 0; i < data.x.rows(); ++i)
        for (int j = 0; j < 2; ++j) data_mean[j] += data.x.at(i, j) / double(data.x.rows());
    for (std::size_t i = 0; i < 200; ++i)
        for (int j = 0; j < 2; ++j) gen_mean[j] += batch.samples.at(i, j) / 200.0;
    for (int j = 0; j < 2; ++j) REQUIRE(std::abs(gen_mean[j] - data_mean[j]) < 0.3);
    REQUIRE(batch.samples.all_finite());
}
