#include "vidfuse/rng.hpp"

#include <cmath>

namespace vidfuse {

// FNV-1a 64-bit over the label, mixed with the root seed.
uint64_t derive_seed(uint64_t root, const std::string& label) {
    uint64_t h = 1469598103934665603ull;
    auto eat = [&h](uint8_t b) {
        h ^= b;
        h *= 1099511628211ull;
    };
    for (int i = 0; i < 8; ++i) eat(static_cast<uint8_t>(root >> (8 * i)));
    for (char c : label) eat(static_cast<uint8_t>(c));
    // avoid the zero seed
    return h == 0 ? 0x9e3779b97f4a7c15ull : h;
}

double RandomStream::uniform() {
    // 53-bit mantissa from the top bits
    return static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0);
}

double RandomStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int64_t RandomStream::uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(eng_() % span);
}

double RandomStream::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 1e-300);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

Tensor RandomStream::normal_tensor(std::vector<int64_t> shape, double stddev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = stddev * normal();
    return t;
}

Tensor RandomStream::uniform_tensor(std::vector<int64_t> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
    return t;
}

RandomStream RandomStream::fork(const std::string& label) {
    return RandomStream(derive_seed(eng_(), label));
}

}  // namespace vidfuse
