// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "side/rng.hpp"
#include "side/tensor.hpp"

namespace side {

struct DatasetSpec {
    std::string kind = "gaussian_mixture";  // or "tiny_image_grid"
    std::size_t n = 64;
    std::size_t dim = 2;
    std::size_t k = 1;       // mixture components / blob count basis
    double spread = 0.15;    // within-component standard deviation
    std::uint64_t seed = 1;
};

struct Dataset {
    Tensor x;                 // {n, dim}, values in [-1, 1]
    std::vector<int> labels;  // component / structural label per sample
    Tensor means;             // {k, dim} mixture component means (empty for image grids)
};

/// Mixture of k isotropic Gaussians with means in [-0.7, 0.7]^d, samples
/// clamped to [-1, 1]. Labels record the generating component.
inline Dataset synth_gaussian_mixture(const DatasetSpec& spec) {
    check(spec.n >= 2, "synth_dataset: N must be >= 2");
    check(spec.k >= 1 && spec.k <= spec.n, "synth_dataset: k out of range");
    check(spec.dim >= 1, "synth_dataset: dim must be >= 1");
    Rng rng(spec.seed);
    Dataset ds;
    ds.means = Tensor({spec.k, spec.dim});
    for (auto& v : ds.means.flat()) v = rng.uniform(-0.7, 0.7);
    ds.x = Tensor({spec.n, spec.dim});
    ds.labels.resize(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        // round-robin over components keeps every component populated
        std::size_t c = i % spec.k;
        ds.labels[i] = int(c);
        auto row = ds.x.row(i);
        auto mu = ds.means.row(c);
        for (std::size_t j = 0; j < spec.dim; ++j) {
            double v = mu[j] + spec.spread * rng.normal();
            row[j] = std::clamp(v, -1.0, 1.0);
        }
    }
    return ds;
}

/// Tiny grayscale "images": p x p grids (dim must be a perfect square) holding
/// one or two smooth bumps of random sign and position. Labels record the
/// quadrant of the dominant bump (4 classes).
inline Dataset synth_tiny_image_grid(const DatasetSpec& spec) {
    check(spec.n >= 2, "synth_dataset: N must be >= 2");
    std::size_t p = std::size_t(std::lround(std::sqrt(double(spec.dim))));
    check(p * p == spec.dim && p >= 2, "synth_dataset: tiny_image_grid needs a square dim >= 4");
    Rng rng(spec.seed);
    Dataset ds;
    ds.x = Tensor({spec.n, spec.dim});
    ds.labels.resize(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        auto img = ds.x.row(i);
        std::size_t bumps = 1 + (rng.uniform() < 0.5 ? 1 : 0);
        double best_amp = 0.0;
        for (std::size_t bi = 0; bi < bumps; ++bi) {
            double cx = rng.uniform(0.15, 0.85) * double(p - 1);
            double cy = rng.uniform(0.15, 0.85) * double(p - 1);
            double amp = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.6, 1.0);
            double width = rng.uniform(0.15, 0.35) * double(p);
            if (bi == 0 || std::abs(amp) > std::abs(best_amp)) {
                best_amp = amp;
                int qx = cx >= 0.5 * double(p - 1) ? 1 : 0;
                int qy = cy >= 0.5 * double(p - 1) ? 1 : 0;
                ds.labels[i] = qy * 2 + qx;
            }
            for (std::size_t r = 0; r < p; ++r)
                for (std::size_t cc = 0; cc < p; ++cc) {
                    double d2 = (double(r) - cy) * (double(r) - cy) +
                                (double(cc) - cx) * (double(cc) - cx);
                    img[r * p + cc] += amp * std::exp(-d2 / (2.0 * width * width));
                }
        }
        for (std::size_t j = 0; j < spec.dim; ++j) img[j] = std::clamp(img[j], -1.0, 1.0);
    }
    return ds;
}

inline Dataset synth_dataset(const DatasetSpec& spec) {
    if (spec.kind == "gaussian_mixture") return synth_gaussian_mixture(spec);
    if (spec.kind == "tiny_image_grid") return synth_tiny_image_grid(spec);
    throw ConfigError("synth_dataset: unknown kind '" + spec.kind + "'");
}

}  // namespace side
