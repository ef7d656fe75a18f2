#include "vidfuse/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace vidfuse {

double Tensor::min() const {
    double m = v.empty() ? 0.0 : v[0];
    for (double x : v) m = std::min(m, x);
    return m;
}

double Tensor::max() const {
    double m = v.empty() ? 0.0 : v[0];
    for (double x : v) m = std::max(m, x);
    return m;
}

double Tensor::sum() const {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

double Tensor::sq_norm() const {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
}

std::string shape_str(const std::vector<int64_t>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

Tensor axpy(const Tensor& a, double s, const Tensor& b) {
    require_same_shape(a, b, "axpy");
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += s * b[i];
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace vidfuse
