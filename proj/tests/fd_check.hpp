#ifndef VIDFUSE_TESTS_FD_CHECK_HPP
#define VIDFUSE_TESTS_FD_CHECK_HPP

#include <cmath>
#include <functional>

#include "vidfuse/rng.hpp"
#include "vidfuse/tensor.hpp"

// Central-difference gradient oracle. Evaluates loss(x) while perturbing one
// coordinate at a time on a sampled subset and compares against an analytic
// gradient; returns the norm-relative error over the sampled coordinates.
inline double fd_rel_error(const std::function<double(const vidfuse::Tensor&)>& loss,
                           const vidfuse::Tensor& x, const vidfuse::Tensor& analytic_grad,
                           int max_coords = 64, double h = 1e-5, uint64_t seed = 17) {
    using vidfuse::Tensor;
    vidfuse::RandomStream rs(seed);
    int64_t n = x.numel();
    std::vector<int64_t> coords;
    if (n <= max_coords) {
        for (int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
        for (int i = 0; i < max_coords; ++i) coords.push_back(rs.uniform_int(0, n - 1));
    }
    double num = 0.0, den = 0.0;
    Tensor xp = x;
    for (int64_t c : coords) {
        double orig = xp[c];
        xp[c] = orig + h;
        double lp = loss(xp);
        xp[c] = orig - h;
        double lm = loss(xp);
        xp[c] = orig;
        double fd = (lp - lm) / (2.0 * h);
        double ad = analytic_grad[c];
        num += (fd - ad) * (fd - ad);
        den += fd * fd;
    }
    if (den == 0.0) return std::sqrt(num);
    return std::sqrt(num / den);
}

#endif
