#ifndef VIDFUSE_RNG_HPP
#define VIDFUSE_RNG_HPP

#include <cstdint>
#include <random>
#include <string>

#include "vidfuse/tensor.hpp"

namespace vidfuse {

// All randomness flows from one root seed; each component derives its own
// stream by name so runs replay bit-exactly regardless of call order.
uint64_t derive_seed(uint64_t root, const std::string& label);

// mt19937_64 plus hand-rolled distributions. std::normal_distribution is
// implementation-defined, so Box-Muller keeps draws reproducible.
class RandomStream {
public:
    explicit RandomStream(uint64_t seed) : eng_(seed) {}

    double uniform();                       // [0,1)
    double uniform(double lo, double hi);   // [lo,hi)
    int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive
    double normal();

    Tensor normal_tensor(std::vector<int64_t> shape, double stddev = 1.0);
    Tensor uniform_tensor(std::vector<int64_t> shape, double lo, double hi);

    RandomStream fork(const std::string& label);

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace vidfuse

#endif
