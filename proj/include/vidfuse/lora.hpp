#ifndef VIDFUSE_LORA_HPP
#define VIDFUSE_LORA_HPP

#include <string>
#include <vector>

#include "vidfuse/rng.hpp"
#include "vidfuse/tensor.hpp"

namespace vidfuse {

struct DenoiserConfig;  // denoiser.hpp

enum class TargetSet { Spatial, Temporal };

inline const char* target_set_name(TargetSet t) {
    return t == TargetSet::Spatial ? "spatial" : "temporal";
}

// One projection's low-rank factors. The effective weight delta is
// scale * down * up, rank <= r. Fresh adapters have up == 0 so they
// contribute nothing until trained.
struct LoraLayer {
    Tensor down;  // [d_in, r]
    Tensor up;    // [r, d_out]
};

struct LoraDelta {
    int64_t rank = 4;
    TargetSet target_set = TargetSet::Spatial;
    double scale = 1.0;
    uint64_t base_fingerprint = 0;
    std::vector<std::pair<std::string, LoraLayer>> layers;

    const LoraLayer* find(const std::string& layer) const;
    Tensor merged_delta(const std::string& layer) const;  // scale * down * up
    bool is_zero() const;  // all up factors zero
};

// down factors small-random, up factors zero
LoraDelta new_lora(const DenoiserConfig& cfg, TargetSet target_set, int64_t rank, uint64_t seed,
                   double scale = 8.0);

// factor-space elementwise average; inputs must agree on target set, rank
// and layer shapes
LoraDelta average_loras(const std::vector<const LoraDelta*>& deltas);

// Adapters active for one denoiser pass. Two deltas may not claim the same
// layer; disjoint target sets always compose.
struct AdapterSet {
    std::vector<const LoraDelta*> deltas;

    AdapterSet() = default;
    AdapterSet(std::initializer_list<const LoraDelta*> ds) : deltas(ds) {}

    // overlap -> composition_error; unknown layer name -> config_error
    void validate(const DenoiserConfig& cfg) const;
    // at most one (delta, layer) pair owns `layer`
    std::pair<const LoraDelta*, const LoraLayer*> lookup(const std::string& layer) const;
};

}  // namespace vidfuse

#endif
