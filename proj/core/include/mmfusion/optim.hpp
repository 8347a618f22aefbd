#pragma once

#include <cmath>
#include <vector>

#include "mmfusion/params.hpp"

namespace mmf {

// Linear warmup from 0 to lr_peak over warmup_steps, then cosine annealing
// from lr_peak to 0 at total_steps.
inline double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                    double lr_peak) {
    if (warmup_steps > 0 && step < warmup_steps) {
        return lr_peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    if (total_steps <= warmup_steps) return lr_peak;
    double progress = static_cast<double>(step - warmup_steps) /
                      static_cast<double>(total_steps - warmup_steps);
    progress = std::min(1.0, std::max(0.0, progress));
    return lr_peak * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// AdamW with decoupled weight decay:
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
// with bias-corrected first/second moments.
template <typename S>
class AdamW {
public:
    AdamW(ParamStore<S>& params, AdamWConfig cfg) : params_(&params), cfg_(cfg) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].tensor.numel(), S(0));
            v_[i].assign(params[i].tensor.numel(), S(0));
        }
    }

    void zero_grad() { params_->zero_grad(); }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_->size(); ++i) {
            Tensor<S>& p = (*params_)[i].tensor;
            p.ensure_grad();
            const std::vector<S>& g = p.grad_view();
            std::vector<S>& m = m_[i];
            std::vector<S>& v = v_[i];
            S* w = p.data();
            for (std::size_t j = 0; j < g.size(); ++j) {
                const double gj = static_cast<double>(g[j]);
                const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
                const double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
                m[j] = static_cast<S>(mj);
                v[j] = static_cast<S>(vj);
                const double m_hat = mj / bc1;
                const double v_hat = vj / bc2;
                const double wj = static_cast<double>(w[j]);
                w[j] = static_cast<S>(wj - lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps)) -
                                      lr * cfg_.weight_decay * wj);
            }
        }
    }

    std::uint64_t step_count() const { return t_; }
    void set_step_count(std::uint64_t t) { t_ = t; }
    std::vector<std::vector<S>>& moments_m() { return m_; }
    std::vector<std::vector<S>>& moments_v() { return v_; }

private:
    ParamStore<S>* params_;
    AdamWConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<S>> m_;
    std::vector<std::vector<S>> v_;
};

}  // namespace mmf
