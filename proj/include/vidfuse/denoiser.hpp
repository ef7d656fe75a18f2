#ifndef VIDFUSE_DENOISER_HPP
#define VIDFUSE_DENOISER_HPP

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "vidfuse/lora.hpp"
#include "vidfuse/tape.hpp"
#include "vidfuse/token_space.hpp"
#include "vidfuse/video.hpp"

namespace vidfuse {

// Miniature text-conditioned video denoiser. Latents are patch-embedded to a
// token grid at half resolution; attention blocks run there and at quarter
// resolution. Each block is [per-frame conv -> per-frame self-attention ->
// cross-attention(text) -> temporal self-attention]. Temporal attention uses
// the inter-frame form O((A - I)V), which makes single-frame inputs exact
// no-ops for the temporal path.
struct DenoiserConfig {
    int64_t channels = 4;
    int64_t height = 16;
    int64_t width = 16;
    int64_t frames = 8;
    int64_t model_width = 32;
    int64_t heads = 2;
    int64_t text_dim = 32;
    int64_t mid_blocks = 2;  // blocks at the half-resolution grid (plus one up block)
    int64_t vocab_size = 0;
    int64_t max_t = 1000;
    std::vector<std::string> map_layers;  // blocks feeding map aggregation (middle resolution)

    // block names in forward order: m0..m{mid-1} at H/2, b0 at H/4, u0 at H/2
    std::vector<std::string> block_names() const;
    std::vector<std::string> spatial_layers() const;   // attention projections
    std::vector<std::string> temporal_layers() const;  // attention projections
    std::vector<std::string> lora_target_layers(TargetSet ts) const;
    int64_t layer_in_dim(const std::string& layer) const;
    int64_t layer_out_dim(const std::string& layer) const;
    bool is_attention_layer(const std::string& layer) const;

    void validate() const;
    std::vector<std::string> default_map_layers() const;  // the H/2 blocks
};

// Post-softmax attention maps captured during one pass, head-averaged per
// layer. sca: [F, P, L] per block; tsa: [P, F, F] per block.
struct AttentionBundle {
    std::vector<std::pair<std::string, Tensor>> sca;
    std::vector<std::pair<std::string, Tensor>> tsa;
};

// On-tape handles to the same maps, for losses that differentiate through
// attention.
struct AttnMapIds {
    std::vector<std::pair<std::string, int>> sca;
    std::vector<std::pair<std::string, int>> tsa;
};

struct ForwardOpts {
    bool train_base = false;
    bool train_adapters = false;
    bool train_specials = false;
    bool temporal_enabled = true;
    bool capture_maps = true;
};

// Where each trainable leaf landed on the tape; trainers read gradients
// through this after backward().
struct ParamBinding {
    std::map<std::string, int> base;                     // param name -> leaf id
    std::map<std::string, int> lora;                     // "<i>:<layer>:down|up" -> leaf id
    std::vector<std::pair<size_t, int>> special_slots;   // prompt slot -> leaf id
    static std::string lora_key(size_t adapter_idx, const std::string& layer, const char* which);
};

struct DenoiseResult {
    int eps = -1;  // VarId, [F, C, H, W]
    AttnMapIds map_ids;
};

class Denoiser {
public:
    Denoiser(DenoiserConfig cfg, uint64_t seed);

    const DenoiserConfig& config() const { return cfg_; }

    // Graph-building forward pass. x_id must be a [F, C, H, W] leaf on the
    // tape; F may differ from cfg.frames (single-frame batches are valid).
    DenoiseResult forward(Tape& tape, int x_id, const PromptEmbedding& prompt, int64_t t,
                          const AdapterSet& adapters, const ForwardOpts& opts,
                          ParamBinding* binding = nullptr) const;

    // Plain evaluation: predicted noise plus detached attention maps.
    std::pair<Tensor, AttentionBundle> denoise(const VideoTensor& x_t,
                                               const PromptEmbedding& prompt, int64_t t,
                                               const AdapterSet& adapters = {},
                                               bool temporal_enabled = true) const;

    Tensor timestep_embed(int64_t t) const;  // sinusoid, [model_width]

    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
    const Tensor& param(const std::string& name) const;
    Tensor& param_mut(const std::string& name);
    uint64_t weights_fingerprint() const;

    // vocabulary table lives in the parameter set as "text.embed"
    static constexpr const char* kTextEmbed = "text.embed";

private:
    DenoiserConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::map<std::string, size_t> index_;
    mutable std::mutex plan_mu_;
    mutable std::map<std::string, std::shared_ptr<GatherPlan>> plans_;

    std::shared_ptr<GatherPlan> plan(const std::string& key,
                                     const std::function<std::shared_ptr<GatherPlan>()>& make) const;
    void add_param(const std::string& name, Tensor t);

    struct Ctx;  // per-forward state
    int proj(Ctx& c, int x, const std::string& layer) const;
    int attn_block(Ctx& c, int tok, const std::string& blk, int64_t F, int64_t h, int64_t w) const;
    int rms(Ctx& c, int x, const std::string& gain) const;
    int base_leaf(Ctx& c, const std::string& name) const;
};

// average the selected per-layer maps into one tensor on the tape
int aggregate_maps(Tape& tape, const std::vector<std::pair<std::string, int>>& maps,
                   const std::vector<std::string>& select);
Tensor aggregate_maps_value(const std::vector<std::pair<std::string, Tensor>>& maps,
                            const std::vector<std::string>& select);

}  // namespace vidfuse

#endif
