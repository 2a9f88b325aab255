// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "side/rng.hpp"
#include "side/tensor.hpp"

namespace side::nn {

enum class Activation { relu, silu };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "silu"; }

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "silu") return Activation::silu;
    throw ConfigError("unknown activation: " + s);
}

inline double act_value(Activation a, double x) {
    if (a == Activation::relu) return x > 0.0 ? x : 0.0;
    double s = 1.0 / (1.0 + std::exp(-x));
    return x * s;
}

inline double act_deriv(Activation a, double x) {
    if (a == Activation::relu) return x > 0.0 ? 1.0 : 0.0;
    double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

// --- shared probability helpers ---------------------------------------------

inline double log_sum_exp(std::span<const double> v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

inline std::vector<double> softmax(std::span<const double> logits) {
    double lse = log_sum_exp(logits);
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(logits[i] - lse);
    return p;
}

/// KL(p || q) = sum p log(p/q), with the 0*log0 = 0 convention. The first
/// argument is the reference distribution.
inline double kl_div(std::span<const double> p, std::span<const double> q) {
    check(p.size() == q.size(), "kl_div: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        s += p[i] * (std::log(p[i]) - std::log(q[i]));
    }
    return s;
}

// --- MLP with optional timestep conditioning --------------------------------

struct MlpConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden;
    std::size_t output_dim = 0;
    Activation act = Activation::silu;
    bool time_conditioned = false;
    std::size_t time_sin_width = 32;  // sinusoidal embedding width, even
    std::size_t time_proj_dim = 32;   // projected embedding width

    std::size_t blocks() const { return hidden.size(); }

    void validate() const {
        check(input_dim > 0 && output_dim > 0, "MlpConfig: zero input/output width");
        for (auto h : hidden) check(h > 0, "MlpConfig: zero hidden width");
        if (time_conditioned) {
            check(time_sin_width >= 2 && time_sin_width % 2 == 0,
                  "MlpConfig: time_sin_width must be even and >= 2");
            check(time_proj_dim > 0, "MlpConfig: time_proj_dim must be positive");
        }
    }
};

inline void to_json(nlohmann::json& j, const MlpConfig& c) {
    j = {{"input_dim", c.input_dim},   {"hidden", c.hidden},
         {"output_dim", c.output_dim}, {"act", to_string(c.act)},
         {"time_conditioned", c.time_conditioned}, {"time_sin_width", c.time_sin_width},
         {"time_proj_dim", c.time_proj_dim}};
}

inline void from_json(const nlohmann::json& j, MlpConfig& c) {
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.output_dim = j.at("output_dim").get<std::size_t>();
    c.act = activation_from_string(j.at("act").get<std::string>());
    c.time_conditioned = j.at("time_conditioned").get<bool>();
    c.time_sin_width = j.at("time_sin_width").get<std::size_t>();
    c.time_proj_dim = j.at("time_proj_dim").get<std::size_t>();
}

struct LinearParams {
    Tensor w;  // {out, in}
    Tensor b;  // {out}
};

/// Per-feature affine normalization with running statistics. The statistics
/// are buffers, treated as constants by backward, so per-sample input
/// gradients stay well-defined; the time module hooks in right after this
/// stage.
struct NormParams {
    Tensor gamma, beta;        // trainable, {width}
    Tensor run_mean, run_var;  // buffers, {width}
};

/// Scale/shift projections driven by the timestep embedding. Zero-initialized,
/// so a fresh time module leaves the block output untouched at every t.
struct TimeModParams {
    Tensor w_scale, b_scale;  // {width, proj}, {width}
    Tensor w_shift, b_shift;
};

struct MlpCache {
    Tensor x;
    std::vector<int> ts;
    Tensor emb_raw, emb_pre, emb;
    std::vector<Tensor> a, nrm, scale, shift, z, h;
    std::vector<Tensor> used_mean, used_inv_std;  // stats snapshot per block
    Tensor out;
};

constexpr double kNormEps = 1e-5;
constexpr double kNormMomentum = 0.1;

class Mlp {
  public:
    MlpConfig cfg;
    std::vector<LinearParams> lin;    // blocks() + 1 layers
    std::vector<NormParams> norm;     // one per hidden block
    Tensor time_w_proj, time_b_proj;  // {proj, sin_width}, {proj}
    std::vector<TimeModParams> tmod;  // one per hidden block when time-conditioned

    Mlp() = default;

    explicit Mlp(MlpConfig c) : cfg(std::move(c)) {
        cfg.validate();
        std::size_t prev = cfg.input_dim;
        for (std::size_t h : cfg.hidden) {
            lin.push_back({Tensor({h, prev}), Tensor({h})});
            NormParams n{Tensor({h}), Tensor({h}), Tensor({h}), Tensor({h})};
            n.gamma.fill(1.0);
            n.run_var.fill(1.0);
            norm.push_back(std::move(n));
            if (cfg.time_conditioned)
                tmod.push_back({Tensor({h, cfg.time_proj_dim}), Tensor({h}),
                                Tensor({h, cfg.time_proj_dim}), Tensor({h})});
            prev = h;
        }
        lin.push_back({Tensor({cfg.output_dim, prev}), Tensor({cfg.output_dim})});
        if (cfg.time_conditioned) {
            time_w_proj = Tensor({cfg.time_proj_dim, cfg.time_sin_width});
            time_b_proj = Tensor({cfg.time_proj_dim});
        }
    }

    /// Glorot-uniform weights, zero biases. Time-module projections stay zero
    /// so the freshly built network ignores t until trained.
    void init(Rng& rng) {
        for (auto& l : lin) {
            double s = std::sqrt(6.0 / double(l.w.rows() + l.w.cols()));
            for (auto& v : l.w.flat()) v = rng.uniform(-s, s);
            l.b.fill(0.0);
        }
        if (cfg.time_conditioned) {
            double s = std::sqrt(6.0 / double(cfg.time_proj_dim + cfg.time_sin_width));
            for (auto& v : time_w_proj.flat()) v = rng.uniform(-s, s);
        }
    }

    std::vector<Tensor*> trainable() {
        std::vector<Tensor*> out;
        for (auto& l : lin) {
            out.push_back(&l.w);
            out.push_back(&l.b);
        }
        for (auto& n : norm) {
            out.push_back(&n.gamma);
            out.push_back(&n.beta);
        }
        if (cfg.time_conditioned) {
            out.push_back(&time_w_proj);
            out.push_back(&time_b_proj);
            for (auto& t : tmod) {
                out.push_back(&t.w_scale);
                out.push_back(&t.b_scale);
                out.push_back(&t.w_shift);
                out.push_back(&t.b_shift);
            }
        }
        return out;
    }

    std::vector<const Tensor*> trainable() const {
        auto mut = const_cast<Mlp*>(this)->trainable();
        return {mut.begin(), mut.end()};
    }

    std::vector<Tensor*> buffers() {
        std::vector<Tensor*> out;
        for (auto& n : norm) {
            out.push_back(&n.run_mean);
            out.push_back(&n.run_var);
        }
        return out;
    }

    std::size_t num_trainable() const {
        std::size_t n = 0;
        for (const Tensor* t : trainable()) n += t->numel();
        return n;
    }

    std::vector<Tensor> zero_grads() const {
        std::vector<Tensor> g;
        for (const Tensor* t : trainable()) g.emplace_back(t->shape());
        return g;
    }

    /// Sinusoidal embedding of a non-negative integer timestep.
    void sin_embed(int t, std::span<double> out) const {
        std::size_t half = cfg.time_sin_width / 2;
        for (std::size_t k = 0; k < half; ++k) {
            double f = half > 1
                           ? std::exp(-std::log(10000.0) * double(k) / double(half - 1))
                           : 1.0;
            out[k] = std::sin(double(t) * f);
            out[half + k] = std::cos(double(t) * f);
        }
    }

    /// Forward pass over a batch. `ts` is one timestep per row (ignored and
    /// may be empty for time-independent networks). When `update_stats` is
    /// set, running normalization statistics take an EMA step toward the
    /// batch statistics after the outputs are computed.
    Tensor forward(const Tensor& x, const std::vector<int>& ts, bool update_stats,
                   MlpCache* cache) const {
        check(x.rank() == 2 && x.cols() == cfg.input_dim,
              "forward: input width " +
                  std::to_string(x.rank() == 2 ? x.cols() : 0) + " does not match layer 0 (expects " +
                  std::to_string(cfg.input_dim) + ")");
        const std::size_t B = x.rows();
        if (cfg.time_conditioned)
            check(ts.size() == B, "forward: one timestep per batch row required");
        check(x.all_finite(), "forward: non-finite input");

        MlpCache local;
        MlpCache& cc = cache ? *cache : local;
        cc = MlpCache{};
        cc.x = x;
        cc.ts = ts;

        // timestep embedding
        Tensor emb;  // {B, proj}
        if (cfg.time_conditioned) {
            cc.emb_raw = Tensor({B, cfg.time_sin_width});
            for (std::size_t b = 0; b < B; ++b) sin_embed(ts[b], cc.emb_raw.row(b));
            cc.emb_pre = Tensor({B, cfg.time_proj_dim});
            matmul_bt(cc.emb_raw, time_w_proj, time_b_proj, cc.emb_pre);
            cc.emb = Tensor({B, cfg.time_proj_dim});
            for (std::size_t i = 0; i < cc.emb.numel(); ++i)
                cc.emb[i] = act_value(Activation::silu, cc.emb_pre[i]);
            emb = cc.emb;
        }

        const Tensor* cur = &cc.x;
        const std::size_t L = cfg.blocks();
        cc.a.resize(L);
        cc.nrm.resize(L);
        cc.scale.resize(L);
        cc.shift.resize(L);
        cc.z.resize(L);
        cc.h.resize(L);
        cc.used_mean.resize(L);
        cc.used_inv_std.resize(L);

        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t H = cfg.hidden[i];
            cc.a[i] = Tensor({B, H});
            matmul_bt(*cur, lin[i].w, lin[i].b, cc.a[i]);
            if (!cc.a[i].all_finite())
                throw ShapeError("forward: non-finite activation in layer " + std::to_string(i));

            // normalize with the current running statistics
            cc.used_mean[i] = norm[i].run_mean;
            cc.used_inv_std[i] = Tensor({H});
            for (std::size_t j = 0; j < H; ++j)
                cc.used_inv_std[i][j] = 1.0 / std::sqrt(norm[i].run_var[j] + kNormEps);
            cc.nrm[i] = Tensor({B, H});
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < H; ++j)
                    cc.nrm[i].at(b, j) = norm[i].gamma[j] * (cc.a[i].at(b, j) - cc.used_mean[i][j]) *
                                             cc.used_inv_std[i][j] +
                                         norm[i].beta[j];

            if (cfg.time_conditioned) {
                cc.scale[i] = Tensor({B, H});
                cc.shift[i] = Tensor({B, H});
                matmul_bt(emb, tmod[i].w_scale, tmod[i].b_scale, cc.scale[i]);
                matmul_bt(emb, tmod[i].w_shift, tmod[i].b_shift, cc.shift[i]);
                cc.z[i] = Tensor({B, H});
                for (std::size_t k = 0; k < cc.z[i].numel(); ++k)
                    cc.z[i][k] = cc.nrm[i][k] * (1.0 + cc.scale[i][k]) + cc.shift[i][k];
            } else {
                cc.z[i] = cc.nrm[i];
            }

            cc.h[i] = Tensor({B, H});
            for (std::size_t k = 0; k < cc.h[i].numel(); ++k)
                cc.h[i][k] = act_value(cfg.act, cc.z[i][k]);
            cur = &cc.h[i];
        }

        cc.out = Tensor({B, cfg.output_dim});
        matmul_bt(*cur, lin[L].w, lin[L].b, cc.out);
        if (!cc.out.all_finite()) throw ShapeError("forward: non-finite output");

        if (update_stats) {
            Mlp* self = const_cast<Mlp*>(this);
            for (std::size_t i = 0; i < L; ++i) {
                const std::size_t H = cfg.hidden[i];
                for (std::size_t j = 0; j < H; ++j) {
                    double m = 0.0;
                    for (std::size_t b = 0; b < B; ++b) m += cc.a[i].at(b, j);
                    m /= double(B);
                    double v = 0.0;
                    for (std::size_t b = 0; b < B; ++b) {
                        double d = cc.a[i].at(b, j) - m;
                        v += d * d;
                    }
                    v /= double(B);
                    self->norm[i].run_mean[j] =
                        (1.0 - kNormMomentum) * norm[i].run_mean[j] + kNormMomentum * m;
                    self->norm[i].run_var[j] =
                        (1.0 - kNormMomentum) * norm[i].run_var[j] + kNormMomentum * v;
                }
            }
        }
        return cc.out;
    }

    Tensor forward(const Tensor& x, const std::vector<int>& ts = {}) const {
        return forward(x, ts, false, nullptr);
    }

    /// Single-sample convenience wrapper.
    std::vector<double> forward_one(std::span<const double> x, int t = 0) const {
        Tensor xb({1, x.size()}, std::vector<double>(x.begin(), x.end()));
        std::vector<int> ts;
        if (cfg.time_conditioned) ts.push_back(t);
        Tensor out = forward(xb, ts, false, nullptr);
        return {out.flat().begin(), out.flat().end()};
    }

    /// Reverse pass. `upstream` is dL/dout for the cached batch; gradients
    /// come back in trainable() order, plus dL/dx.
    void backward(const MlpCache& cc, const Tensor& upstream, std::vector<Tensor>& grads,
                  Tensor* dx_out) const {
        check(upstream.same_shape(cc.out), "backward: upstream shape must match output shape");
        const std::size_t B = cc.x.rows();
        const std::size_t L = cfg.blocks();

        // locate gradient slots (trainable() order)
        std::size_t gi = 0;
        std::vector<Tensor*> g_lin_w(L + 1), g_lin_b(L + 1), g_gamma(L), g_beta(L);
        for (std::size_t i = 0; i <= L; ++i) {
            g_lin_w[i] = &grads[gi++];
            g_lin_b[i] = &grads[gi++];
        }
        for (std::size_t i = 0; i < L; ++i) {
            g_gamma[i] = &grads[gi++];
            g_beta[i] = &grads[gi++];
        }
        Tensor *g_wproj = nullptr, *g_bproj = nullptr;
        std::vector<Tensor*> g_ws(L), g_bs(L), g_wu(L), g_bu(L);
        if (cfg.time_conditioned) {
            g_wproj = &grads[gi++];
            g_bproj = &grads[gi++];
            for (std::size_t i = 0; i < L; ++i) {
                g_ws[i] = &grads[gi++];
                g_bs[i] = &grads[gi++];
                g_wu[i] = &grads[gi++];
                g_bu[i] = &grads[gi++];
            }
        }

        Tensor demb;  // {B, proj}, accumulated across blocks
        if (cfg.time_conditioned) demb = Tensor({B, cfg.time_proj_dim});

        // output layer
        const Tensor& h_last = L > 0 ? cc.h[L - 1] : cc.x;
        Tensor dh({B, h_last.cols()});
        linear_backward(upstream, h_last, lin[L].w, *g_lin_w[L], *g_lin_b[L], dh);

        for (std::size_t i = L; i-- > 0;) {
            const std::size_t H = cfg.hidden[i];
            // activation
            Tensor dz({B, H});
            for (std::size_t k = 0; k < dz.numel(); ++k)
                dz[k] = dh[k] * act_deriv(cfg.act, cc.z[i][k]);

            // time module
            Tensor dnrm({B, H});
            if (cfg.time_conditioned) {
                Tensor ds({B, H});
                for (std::size_t k = 0; k < dz.numel(); ++k) {
                    dnrm[k] = dz[k] * (1.0 + cc.scale[i][k]);
                    ds[k] = dz[k] * cc.nrm[i][k];
                }
                linear_backward_acc(ds, cc.emb, tmod[i].w_scale, *g_ws[i], *g_bs[i], demb);
                linear_backward_acc(dz, cc.emb, tmod[i].w_shift, *g_wu[i], *g_bu[i], demb);
            } else {
                dnrm = dz;
            }

            // normalization (stats are constants)
            Tensor da({B, H});
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < H; ++j) {
                    double centered = (cc.a[i].at(b, j) - cc.used_mean[i][j]) * cc.used_inv_std[i][j];
                    (*g_gamma[i])[j] += dnrm.at(b, j) * centered;
                    (*g_beta[i])[j] += dnrm.at(b, j);
                    da.at(b, j) = dnrm.at(b, j) * norm[i].gamma[j] * cc.used_inv_std[i][j];
                }

            const Tensor& h_prev = i > 0 ? cc.h[i - 1] : cc.x;
            Tensor dh_prev({B, h_prev.cols()});
            linear_backward(da, h_prev, lin[i].w, *g_lin_w[i], *g_lin_b[i], dh_prev);
            dh = std::move(dh_prev);
        }

        if (cfg.time_conditioned) {
            // through the embedding projection activation
            Tensor demb_pre({B, cfg.time_proj_dim});
            for (std::size_t k = 0; k < demb.numel(); ++k)
                demb_pre[k] = demb[k] * act_deriv(Activation::silu, cc.emb_pre[k]);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t o = 0; o < cfg.time_proj_dim; ++o) {
                    double u = demb_pre.at(b, o);
                    (*g_bproj)[o] += u;
                    for (std::size_t k = 0; k < cfg.time_sin_width; ++k)
                        g_wproj->at(o, k) += u * cc.emb_raw.at(b, k);
                }
        }

        if (dx_out) *dx_out = std::move(dh);
    }

  private:
    // y = x W^T + b, x:{B,in}, W:{out,in}, y:{B,out}
    static void matmul_bt(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
        const std::size_t B = x.rows(), in = x.cols(), out = w.rows();
        check(w.cols() == in, "linear layer input width mismatch (expects " +
                                  std::to_string(w.cols()) + ", got " + std::to_string(in) + ")");
        for (std::size_t r = 0; r < B; ++r) {
            const double* xr = x.row(r).data();
            double* yr = y.row(r).data();
            for (std::size_t o = 0; o < out; ++o) {
                const double* wr = w.row(o).data();
                double s = b[o];
                for (std::size_t i = 0; i < in; ++i) s += wr[i] * xr[i];
                yr[o] = s;
            }
        }
    }

    // Accumulates dW, db and writes dx for y = x W^T + b given dy.
    static void linear_backward(const Tensor& dy, const Tensor& x, const Tensor& w, Tensor& dw,
                                Tensor& db, Tensor& dx) {
        dx.fill(0.0);
        linear_backward_acc(dy, x, w, dw, db, dx);
    }

    static void linear_backward_acc(const Tensor& dy, const Tensor& x, const Tensor& w, Tensor& dw,
                                    Tensor& db, Tensor& dx) {
        const std::size_t B = x.rows(), in = x.cols(), out = w.rows();
        for (std::size_t r = 0; r < B; ++r) {
            const double* xr = x.row(r).data();
            const double* dyr = dy.row(r).data();
            double* dxr = dx.row(r).data();
            for (std::size_t o = 0; o < out; ++o) {
                const double u = dyr[o];
                db[o] += u;
                double* dwr = dw.row(o).data();
                const double* wr = w.row(o).data();
                for (std::size_t i = 0; i < in; ++i) {
                    dwr[i] += u * xr[i];
                    dxr[i] += u * wr[i];
                }
            }
        }
    }
};

}  // namespace side::nn
