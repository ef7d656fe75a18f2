#ifndef VIDFUSE_ADAM_HPP
#define VIDFUSE_ADAM_HPP

#include <cmath>
#include <map>
#include <string>

#include "vidfuse/tensor.hpp"

namespace vidfuse {

// Plain Adam with bias correction; state keyed by parameter name.
class Adam {
public:
    explicit Adam(double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(b1), b2_(b2), eps_(eps) {}

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void step(const std::string& key, Tensor& param, const Tensor& grad) {
        require_same_shape(param, grad, "adam");
        State& s = states_[key];
        if (s.m.v.empty()) {
            s.m = Tensor(param.shape);
            s.v = Tensor(param.shape);
        }
        s.t += 1;
        double bc1 = 1.0 - std::pow(b1_, static_cast<double>(s.t));
        double bc2 = 1.0 - std::pow(b2_, static_cast<double>(s.t));
        for (int64_t i = 0; i < param.numel(); ++i) {
            double g = grad[i];
            s.m[i] = b1_ * s.m[i] + (1.0 - b1_) * g;
            s.v[i] = b2_ * s.v[i] + (1.0 - b2_) * g * g;
            double mhat = s.m[i] / bc1;
            double vhat = s.v[i] / bc2;
            param[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }

private:
    struct State {
        Tensor m, v;
        int64_t t = 0;
    };
    double lr_, b1_, b2_, eps_;
    std::map<std::string, State> states_;
};

}  // namespace vidfuse

#endif
