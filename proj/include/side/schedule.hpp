// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "side/common.hpp"
#include "side/rng.hpp"
#include "side/tensor.hpp"

namespace side {

/// Variance schedule for the forward noising process. Timesteps run 1..T;
/// alpha_bar is indexed 0..T with alpha_bar[0] = 1 so that t = 0 recovers the
/// clean sample.
struct NoiseSchedule {
    std::string kind;               // "linear" or "cosine"
    int T = 0;
    std::vector<double> beta;       // beta[t-1] is the step-t variance, t in 1..T
    std::vector<double> alpha_bar;  // alpha_bar[t], t in 0..T

    double abar(int t) const {
        check(t >= 0 && t <= T, "abar: t out of range");
        return alpha_bar[std::size_t(t)];
    }
};

inline NoiseSchedule make_schedule(const std::string& kind, int T) {
    check(T >= 1, "make_schedule: T must be >= 1");
    NoiseSchedule s;
    s.kind = kind;
    s.T = T;
    s.beta.resize(std::size_t(T));
    s.alpha_bar.resize(std::size_t(T) + 1);
    s.alpha_bar[0] = 1.0;
    if (kind == "linear") {
        const double b0 = 1e-4, b1 = 0.02;
        for (int t = 1; t <= T; ++t) {
            double frac = T > 1 ? double(t - 1) / double(T - 1) : 0.0;
            s.beta[std::size_t(t - 1)] = b0 + (b1 - b0) * frac;
        }
    } else if (kind == "cosine") {
        const double eps = 0.008;
        auto f = [&](double u) {
            double v = std::cos((u + eps) / (1.0 + eps) * std::numbers::pi / 2.0);
            return v * v;
        };
        const double f0 = f(0.0);
        std::vector<double> abar(std::size_t(T) + 1);
        for (int t = 0; t <= T; ++t) abar[std::size_t(t)] = f(double(t) / double(T)) / f0;
        for (int t = 1; t <= T; ++t) {
            double b = 1.0 - abar[std::size_t(t)] / abar[std::size_t(t - 1)];
            s.beta[std::size_t(t - 1)] = std::min(std::max(b, 0.0), 0.999);
        }
    } else {
        throw ConfigError("make_schedule: unknown kind '" + kind + "'");
    }
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        prod *= 1.0 - s.beta[std::size_t(t - 1)];
        s.alpha_bar[std::size_t(t)] = prod;
        check(s.beta[std::size_t(t - 1)] > 0.0 && s.beta[std::size_t(t - 1)] < 1.0,
              "make_schedule: beta out of (0,1)");
    }
    for (int t = 1; t <= T; ++t)
        check(s.alpha_bar[std::size_t(t)] < s.alpha_bar[std::size_t(t - 1)],
              "make_schedule: alpha_bar must decrease");
    return s;
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, with eps drawn here and
/// returned through `eps_out` for the epsilon-prediction target.
inline void forward_noise(const NoiseSchedule& s, std::span<const double> x0, int t, Rng& rng,
                          std::span<double> xt, std::span<double> eps_out) {
    check(t >= 1 && t <= s.T, "forward_noise: t out of 1..T");
    check(x0.size() == xt.size() && x0.size() == eps_out.size(), "forward_noise: length mismatch");
    const double a = std::sqrt(s.abar(t));
    const double b = std::sqrt(1.0 - s.abar(t));
    rng.normal_fill(eps_out);
    for (std::size_t i = 0; i < x0.size(); ++i) xt[i] = a * x0[i] + b * eps_out[i];
}

}  // namespace side
