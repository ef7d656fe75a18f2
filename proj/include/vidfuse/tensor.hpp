#ifndef VIDFUSE_TENSOR_HPP
#define VIDFUSE_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "vidfuse/errors.hpp"

namespace vidfuse {

// Dense row-major float64 array. All model math runs in double so the
// finite-difference gradient checks are meaningful.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        v.assign(static_cast<size_t>(numel_of(shape)), 0.0);
    }
    Tensor(std::vector<int64_t> s, double fill) : shape(std::move(s)) {
        v.assign(static_cast<size_t>(numel_of(shape)), fill);
    }
    Tensor(std::vector<int64_t> s, std::vector<double> data)
        : shape(std::move(s)), v(std::move(data)) {
        if (numel_of(shape) != static_cast<int64_t>(v.size()))
            throw contract_violation("tensor: data size does not match shape");
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    int64_t dim(size_t i) const { return shape[i]; }
    size_t ndim() const { return shape.size(); }

    double& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    double min() const;
    double max() const;
    double sum() const;
    double mean() const { return numel() > 0 ? sum() / static_cast<double>(numel()) : 0.0; }
    double sq_norm() const;
    double norm() const { return std::sqrt(sq_norm()); }
    double max_abs() const;

    Tensor reshaped(std::vector<int64_t> s) const {
        if (numel_of(s) != numel()) throw contract_violation("reshape: element count changed");
        Tensor out;
        out.shape = std::move(s);
        out.v = v;
        return out;
    }
};

std::string shape_str(const std::vector<int64_t>& s);

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b))
        throw contract_violation(std::string(where) + ": shape mismatch " + shape_str(a.shape) +
                                 " vs " + shape_str(b.shape));
}

// out = a + s*b, shapes equal
Tensor axpy(const Tensor& a, double s, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace vidfuse

#endif
