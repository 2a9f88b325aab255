// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "side/tensor.hpp"

namespace side::nn {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// AdamW with decoupled weight decay: the bias-corrected Adam step is applied
/// first, then parameters shrink by lr * weight_decay * param. Gradients must
/// be finite; a NaN/Inf gradient aborts the step with an exception.
class AdamW {
  public:
    AdamW(const std::vector<Tensor*>& params, AdamWConfig cfg) : cfg_(cfg) {
        for (const Tensor* p : params) {
            m_.emplace_back(p->shape());
            v_.emplace_back(p->shape());
        }
    }

    std::size_t step_count() const { return t_; }

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        check(params.size() == m_.size() && grads.size() == m_.size(),
              "AdamW::step: parameter/gradient list size mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            check(params[i]->same_shape(m_[i]), "AdamW::step: parameter shape changed");
            check(grads[i].same_shape(m_[i]), "AdamW::step: gradient shape mismatch");
            check(grads[i].all_finite(), "AdamW::step: non-finite gradient");
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        const double shrink = 1.0 - cfg_.lr * cfg_.weight_decay;
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto p = params[i]->flat();
            auto g = grads[i].flat();
            auto m = m_[i].flat();
            auto v = v_[i].flat();
            for (std::size_t k = 0; k < p.size(); ++k) {
                m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
                v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
                const double mhat = m[k] / bc1;
                const double vhat = v[k] / bc2;
                p[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                p[k] *= shrink;
            }
        }
    }

  private:
    AdamWConfig cfg_;
    std::size_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace side::nn
