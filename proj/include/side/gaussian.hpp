// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "side/rng.hpp"
#include "side/tensor.hpp"

namespace side::gauss {

constexpr double kSymTol = 1e-10;

/// Lower-triangular Cholesky factor of an SPD matrix. Throws on asymmetry or
/// a non-positive pivot.
inline Tensor cholesky(const Tensor& a) {
    check(a.rank() == 2 && a.rows() == a.cols(), "cholesky: square matrix required");
    const std::size_t d = a.rows();
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j)
            check(std::abs(a.at(i, j) - a.at(j, i)) <= kSymTol * (1.0 + std::abs(a.at(i, j))),
                  "cholesky: matrix not symmetric");
    Tensor l({d, d});
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a.at(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
            if (i == j) {
                check(s > 0.0, "cholesky: matrix not positive definite");
                l.at(i, i) = std::sqrt(s);
            } else {
                l.at(i, j) = s / l.at(j, j);
            }
        }
    }
    return l;
}

inline double logdet_from_cholesky(const Tensor& l) {
    double s = 0.0;
    for (std::size_t i = 0; i < l.rows(); ++i) s += std::log(l.at(i, i));
    return 2.0 * s;
}

/// Solves L y = b for lower-triangular L, in place over `b`.
inline void forward_solve(const Tensor& l, std::span<double> b) {
    const std::size_t d = l.rows();
    for (std::size_t i = 0; i < d; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l.at(i, k) * b[k];
        b[i] = s / l.at(i, i);
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// descending. Dimensions here stay small, so robustness wins over speed.
inline std::vector<double> sym_eigenvalues(const Tensor& a) {
    check(a.rank() == 2 && a.rows() == a.cols(), "sym_eigenvalues: square matrix required");
    const std::size_t d = a.rows();
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j)
            check(std::abs(a.at(i, j) - a.at(j, i)) <= kSymTol * (1.0 + std::abs(a.at(i, j))),
                  "sym_eigenvalues: matrix not symmetric");
    Tensor m = a;
    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i + 1; j < d; ++j) off += m.at(i, j) * m.at(i, j);
        if (off <= 1e-26) break;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) {
                double apq = m.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                double theta = (m.at(q, q) - m.at(p, p)) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t k = 0; k < d; ++k) {
                    double mkp = m.at(k, p), mkq = m.at(k, q);
                    m.at(k, p) = c * mkp - s * mkq;
                    m.at(k, q) = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    double mpk = m.at(p, k), mqk = m.at(q, k);
                    m.at(p, k) = c * mpk - s * mqk;
                    m.at(q, k) = s * mpk + c * mqk;
                }
            }
    }
    std::vector<double> eig(d);
    for (std::size_t i = 0; i < d; ++i) eig[i] = m.at(i, i);
    std::sort(eig.rbegin(), eig.rend());
    return eig;
}

struct Gaussian {
    Tensor mu;     // {d}
    Tensor sigma;  // {d, d}

    Gaussian() = default;
    Gaussian(Tensor mean, Tensor cov) : mu(std::move(mean)), sigma(std::move(cov)) {
        check(mu.rank() == 1, "Gaussian: mean must be a vector");
        check(sigma.rank() == 2 && sigma.rows() == dim() && sigma.cols() == dim(),
              "Gaussian: covariance must be d x d");
    }

    std::size_t dim() const { return mu.numel(); }

    static Gaussian isotropic(const std::vector<double>& mean, double var) {
        std::size_t d = mean.size();
        Tensor mu({d}, mean);
        Tensor s({d, d});
        for (std::size_t i = 0; i < d; ++i) s.at(i, i) = var;
        return {std::move(mu), std::move(s)};
    }
};

inline double trace(const Tensor& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) s += m.at(i, i);
    return s;
}

/// Differential entropy: (d/2)(1 + log 2 pi) + (1/2) log det Sigma.
inline double gaussian_entropy(const Gaussian& p) {
    Tensor l = cholesky(p.sigma);
    double d = double(p.dim());
    return 0.5 * d * (1.0 + std::log(2.0 * std::numbers::pi)) + 0.5 * logdet_from_cholesky(l);
}

/// KL(p || q) for multivariate normals:
///   (1/2) [ (mu_p-mu_q)^T Sigma_q^{-1} (mu_p-mu_q)
///           - log det(Sigma_q^{-1} Sigma_p) + tr(Sigma_q^{-1} Sigma_p) - d ].
inline double gaussian_kl(const Gaussian& p, const Gaussian& q) {
    check(p.dim() == q.dim(), "gaussian_kl: dimension mismatch");
    const std::size_t d = p.dim();
    Tensor lq = cholesky(q.sigma);
    Tensor lp = cholesky(p.sigma);

    std::vector<double> diff(d);
    for (std::size_t i = 0; i < d; ++i) diff[i] = p.mu[i] - q.mu[i];
    forward_solve(lq, diff);
    double quad = sq_norm(diff);

    // tr(Sigma_q^{-1} Sigma_p) = ||Lq^{-1} Lp||_F^2
    double tr = 0.0;
    std::vector<double> col(d);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < d; ++i) col[i] = i >= j ? lp.at(i, j) : 0.0;
        forward_solve(lq, col);
        tr += sq_norm(col);
    }

    double logdet_ratio = logdet_from_cholesky(lp) - logdet_from_cholesky(lq);
    return 0.5 * (quad - logdet_ratio + tr - double(d));
}

/// Per-point memorization term: KL(p || N(x, eps I)) in closed form,
///   (1/2) [ ||mu-x||^2/eps - log det Sigma + d log eps + tr(Sigma)/eps - d ].
inline double point_mem_kl(const Gaussian& p, std::span<const double> x, double eps) {
    check(eps > 0.0 && eps < 1.0, "point_mem_kl: eps must lie in (0,1)");
    check(x.size() == p.dim(), "point_mem_kl: point dimension mismatch");
    const double d = double(p.dim());
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double dd = p.mu[i] - x[i];
        sq += dd * dd;
    }
    Tensor l = cholesky(p.sigma);
    return 0.5 * (sq / eps - logdet_from_cholesky(l) + d * std::log(eps) + trace(p.sigma) / eps -
                  d);
}

/// Summed per-point metric over a dataset (rows of `data`); smaller values
/// indicate more memorization.
inline double dataset_mem_metric(const Gaussian& p, const Tensor& data, double eps) {
    check(data.rank() == 2 && data.rows() >= 1, "dataset_mem_metric: non-empty rank-2 data");
    check(data.cols() == p.dim(), "dataset_mem_metric: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < data.rows(); ++i) s += point_mem_kl(p, data.row(i), eps);
    return s;
}

/// Small-eps limit of the per-point KL ratio between the conditional and
/// pooled models:
///   ( ||z-mu_c||^2 + tr Sigma_c ) / ( ||z-mu||^2 + tr Sigma ).
inline double theorem1_ratio(const Gaussian& cond, const Gaussian& pooled,
                             std::span<const double> z) {
    check(cond.dim() == pooled.dim() && z.size() == cond.dim(),
          "theorem1_ratio: dimension mismatch");
    double num = trace(cond.sigma), den = trace(pooled.sigma);
    for (std::size_t i = 0; i < z.size(); ++i) {
        double a = z[i] - cond.mu[i];
        double b = z[i] - pooled.mu[i];
        num += a * a;
        den += b * b;
    }
    check(den > 0.0, "theorem1_ratio: degenerate pooled model");
    return num / den;
}

/// Draw x = mu + L z with z standard normal; `l` must be cholesky(sigma).
inline void sample_gaussian(const Gaussian& g, const Tensor& l, Rng& rng, std::span<double> out) {
    const std::size_t d = g.dim();
    check(out.size() == d, "sample_gaussian: output size mismatch");
    std::vector<double> z(d);
    rng.normal_fill(z);
    for (std::size_t i = 0; i < d; ++i) {
        double s = g.mu[i];
        for (std::size_t k = 0; k <= i; ++k) s += l.at(i, k) * z[k];
        out[i] = s;
    }
}

/// Log-density of a multivariate normal, used by Monte Carlo verification.
inline double log_density(const Gaussian& g, const Tensor& l, std::span<const double> x) {
    const std::size_t d = g.dim();
    std::vector<double> diff(d);
    for (std::size_t i = 0; i < d; ++i) diff[i] = x[i] - g.mu[i];
    forward_solve(l, diff);
    return -0.5 * (double(d) * std::log(2.0 * std::numbers::pi) + logdet_from_cholesky(l) +
                   sq_norm(diff));
}

struct ClassStats {
    int label = 0;
    std::size_t count = 0;
    Tensor mu;                    // {d}
    Tensor sigma;                 // {d, d}, population covariance
    std::vector<double> eig;      // spectrum of sigma, descending
    double scatter = 0.0;         // sum over members of ||z - mu||^2
    double nuclear_norm = 0.0;    // sum of eigenvalues = trace for SPD
};

struct LatentStats {
    std::vector<ClassStats> per_class;
    ClassStats pooled;
};

namespace detail {
inline ClassStats stats_of(const Tensor& z, const std::vector<std::size_t>& idx, int label) {
    const std::size_t d = z.cols(), n = idx.size();
    ClassStats cs;
    cs.label = label;
    cs.count = n;
    cs.mu = Tensor({d});
    for (std::size_t i : idx)
        for (std::size_t j = 0; j < d; ++j) cs.mu[j] += z.at(i, j);
    for (std::size_t j = 0; j < d; ++j) cs.mu[j] /= double(n);
    cs.sigma = Tensor({d, d});
    for (std::size_t i : idx) {
        auto row = z.row(i);
        double sq = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
            double da = row[a] - cs.mu[a];
            sq += da * da;
            for (std::size_t b = 0; b < d; ++b) cs.sigma.at(a, b) += da * (row[b] - cs.mu[b]);
        }
        cs.scatter += sq;
    }
    for (auto& v : cs.sigma.flat()) v /= double(n);
    cs.eig = sym_eigenvalues(cs.sigma);
    for (double e : cs.eig) cs.nuclear_norm += std::max(e, 0.0);
    return cs;
}
}  // namespace detail

/// Empirical per-class and pooled moments of labeled latents. Every class
/// needs at least 2 members so covariances are meaningful.
inline LatentStats latent_stats(const Tensor& z, const std::vector<int>& labels) {
    check(z.rank() == 2 && z.rows() == labels.size(), "latent_stats: one label per row required");
    check(z.rows() >= 2, "latent_stats: at least 2 samples required");
    int max_label = 0;
    for (int l : labels) {
        check(l >= 0, "latent_stats: labels must be non-negative");
        max_label = std::max(max_label, l);
    }
    LatentStats out;
    std::vector<std::size_t> all(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) all[i] = i;
    out.pooled = detail::stats_of(z, all, -1);
    for (int c = 0; c <= max_label; ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == c) idx.push_back(i);
        if (idx.empty()) continue;
        check(idx.size() >= 2, "latent_stats: class " + std::to_string(c) + " has < 2 samples");
        out.per_class.push_back(detail::stats_of(z, idx, c));
    }
    return out;
}

}  // namespace side::gauss
