#pragma once

#include <cmath>
#include <vector>

#include "avmae/blocks.hpp"
#include "avmae/errors.hpp"

namespace avmae {

// Adaptive-moment optimizer with decoupled weight decay:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (mhat / (sqrt(vhat) + eps) + wd * p)
class AdamW {
public:
    AdamW(ParamList params, double beta1, double beta2, double weight_decay, double eps)
        : params_(std::move(params)),
          beta1_(beta1),
          beta2_(beta2),
          weight_decay_(weight_decay),
          eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t k = 0; k < params_.size(); ++k) {
            m_[k].assign(params_[k].tensor.size(), 0.0);
            v_[k].assign(params_[k].tensor.size(), 0.0);
        }
    }

    size_t step_count() const { return step_; }

    void zero_grad() {
        for (ParamRef& p : params_) p.tensor.zero_grad();
    }

    void step(double lr) {
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (size_t k = 0; k < params_.size(); ++k) {
            Tensor& t = params_[k].tensor;
            const auto& g = t.grad();
            auto& m = m_[k];
            auto& v = v_[k];
            for (size_t i = 0; i < g.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                t.at(i) -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * t.at(i));
            }
        }
    }

private:
    ParamList params_;
    double beta1_, beta2_, weight_decay_, eps_;
    size_t step_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace avmae
