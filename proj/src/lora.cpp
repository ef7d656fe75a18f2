#include "vidfuse/lora.hpp"

#include <set>

#include "vidfuse/denoiser.hpp"

namespace vidfuse {

const LoraLayer* LoraDelta::find(const std::string& layer) const {
    for (auto& [name, l] : layers)
        if (name == layer) return &l;
    return nullptr;
}

Tensor LoraDelta::merged_delta(const std::string& layer) const {
    const LoraLayer* l = find(layer);
    if (!l) throw config_error("lora: layer not targeted: " + layer);
    int64_t din = l->down.shape[0], r = l->down.shape[1], dout = l->up.shape[1];
    Tensor out({din, dout});
    for (int64_t i = 0; i < din; ++i)
        for (int64_t k = 0; k < r; ++k) {
            double dv = l->down[i * r + k];
            if (dv == 0.0) continue;
            for (int64_t j = 0; j < dout; ++j) out[i * dout + j] += scale * dv * l->up[k * dout + j];
        }
    return out;
}

bool LoraDelta::is_zero() const {
    for (auto& [_, l] : layers)
        if (l.up.max_abs() != 0.0) return false;
    return true;
}

LoraDelta new_lora(const DenoiserConfig& cfg, TargetSet target_set, int64_t rank, uint64_t seed,
                   double scale) {
    if (rank < 1) throw contract_violation("new_lora: rank >= 1 required");
    std::vector<std::string> targets = cfg.lora_target_layers(target_set);
    if (targets.empty()) throw config_error("new_lora: empty target set");
    LoraDelta d;
    d.rank = rank;
    d.target_set = target_set;
    d.scale = scale;
    RandomStream rs(derive_seed(seed, std::string("lora:") + target_set_name(target_set)));
    for (const std::string& name : targets) {
        LoraLayer l;
        int64_t din = cfg.layer_in_dim(name), dout = cfg.layer_out_dim(name);
        l.down = rs.normal_tensor({din, rank}, 1.0 / std::sqrt(static_cast<double>(din)));
        l.up = Tensor({rank, dout});
        d.layers.emplace_back(name, std::move(l));
    }
    return d;
}

LoraDelta average_loras(const std::vector<const LoraDelta*>& deltas) {
    if (deltas.empty()) throw contract_violation("average_loras: empty input");
    const LoraDelta& ref = *deltas[0];
    for (const LoraDelta* d : deltas) {
        if (d->target_set != ref.target_set || d->rank != ref.rank ||
            d->layers.size() != ref.layers.size() || d->scale != ref.scale)
            throw contract_violation("average_loras: mismatched adapters");
        for (size_t i = 0; i < ref.layers.size(); ++i) {
            if (d->layers[i].first != ref.layers[i].first ||
                !d->layers[i].second.down.same_shape(ref.layers[i].second.down) ||
                !d->layers[i].second.up.same_shape(ref.layers[i].second.up))
                throw contract_violation("average_loras: layer shape mismatch");
        }
    }
    LoraDelta out = ref;
    double inv = 1.0 / static_cast<double>(deltas.size());
    for (size_t i = 0; i < out.layers.size(); ++i) {
        Tensor& dn = out.layers[i].second.down;
        Tensor& up = out.layers[i].second.up;
        dn = Tensor(dn.shape);
        up = Tensor(up.shape);
        for (const LoraDelta* d : deltas) {
            for (int64_t k = 0; k < dn.numel(); ++k) dn[k] += inv * d->layers[i].second.down[k];
            for (int64_t k = 0; k < up.numel(); ++k) up[k] += inv * d->layers[i].second.up[k];
        }
    }
    return out;
}

void AdapterSet::validate(const DenoiserConfig& cfg) const {
    std::set<std::string> seen;
    for (const LoraDelta* d : deltas) {
        if (!d) throw contract_violation("adapter set: null adapter");
        for (auto& [name, _] : d->layers) {
            if (!cfg.is_attention_layer(name))
                throw config_error("adapter targets unknown layer: " + name);
            if (!seen.insert(name).second)
                throw composition_error("two adapters target layer " + name);
        }
    }
}

std::pair<const LoraDelta*, const LoraLayer*> AdapterSet::lookup(const std::string& layer) const {
    for (const LoraDelta* d : deltas) {
        if (const LoraLayer* l = d->find(layer)) return {d, l};
    }
    return {nullptr, nullptr};
}

}  // namespace vidfuse
