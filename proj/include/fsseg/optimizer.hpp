#ifndef FSSEG_OPTIMIZER_HPP
#define FSSEG_OPTIMIZER_HPP

#include <cmath>
#include <string>
#include <vector>

#include "fsseg/tensor.hpp"

namespace fsseg {

/// Named view onto a parameter tensor owned by a params struct.
template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* tensor;
};

/// Adam with decoupled weight decay. Moments are keyed by position in the
/// params list, which therefore must be stable across steps.
template <typename T>
class AdamW {
public:
    AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

    double base_lr() const { return lr_; }
    int steps_taken() const { return t_; }

    /// One update with an explicit learning rate (schedules live outside).
    void step(const std::vector<ParamRef<T>>& params, const std::vector<Tensor<T>>& grads,
              double lr_now) {
        if (params.size() != grads.size())
            throw std::invalid_argument("AdamW::step: params/grads size mismatch");
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.tensor->shape, T(0));
                v_.emplace_back(p.tensor->shape, T(0));
            }
        }
        if (m_.size() != params.size())
            throw std::invalid_argument("AdamW::step: params list changed size");
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& p = *params[i].tensor;
            const Tensor<T>& g = grads[i];
            if (p.shape != g.shape)
                throw std::invalid_argument("AdamW::step: grad shape mismatch at " + params[i].name);
            for (int64_t j = 0; j < p.size(); ++j) {
                double gj = static_cast<double>(g[j]);
                double mj = b1_ * m_[i][j] + (1 - b1_) * gj;
                double vj = b2_ * v_[i][j] + (1 - b2_) * gj * gj;
                m_[i][j] = static_cast<T>(mj);
                v_[i][j] = static_cast<T>(vj);
                double update = (mj / bc1) / (std::sqrt(vj / bc2) + eps_) + wd_ * p[j];
                p[j] = static_cast<T>(p[j] - lr_now * update);
            }
        }
    }

private:
    double lr_, wd_, b1_, b2_, eps_;
    int t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

}  // namespace fsseg

#endif
