#include "vidfuse/denoiser.hpp"

#include <algorithm>
#include <cmath>

namespace vidfuse {

std::vector<std::string> DenoiserConfig::block_names() const {
    std::vector<std::string> out;
    for (int64_t i = 0; i < mid_blocks; ++i) out.push_back("m" + std::to_string(i));
    out.push_back("b0");
    out.push_back("u0");
    return out;
}

std::vector<std::string> DenoiserConfig::default_map_layers() const {
    std::vector<std::string> out;
    for (int64_t i = 0; i < mid_blocks; ++i) out.push_back("m" + std::to_string(i));
    out.push_back("u0");
    return out;
}

std::vector<std::string> DenoiserConfig::spatial_layers() const {
    std::vector<std::string> out;
    for (const std::string& b : block_names())
        for (const char* a : {"sattn", "xattn"})
            for (const char* p : {"q", "k", "v", "o"}) out.push_back(b + "." + a + "." + p);
    return out;
}

std::vector<std::string> DenoiserConfig::temporal_layers() const {
    std::vector<std::string> out;
    for (const std::string& b : block_names())
        for (const char* p : {"q", "k", "v", "o"}) out.push_back(b + ".tattn." + p);
    return out;
}

std::vector<std::string> DenoiserConfig::lora_target_layers(TargetSet ts) const {
    return ts == TargetSet::Spatial ? spatial_layers() : temporal_layers();
}

int64_t DenoiserConfig::layer_in_dim(const std::string& layer) const {
    // cross-attention k/v project from text space, everything else is d -> d
    if (layer.find(".xattn.k") != std::string::npos || layer.find(".xattn.v") != std::string::npos)
        return text_dim;
    return model_width;
}

int64_t DenoiserConfig::layer_out_dim(const std::string&) const { return model_width; }

bool DenoiserConfig::is_attention_layer(const std::string& layer) const {
    for (const std::string& n : spatial_layers())
        if (n == layer) return true;
    for (const std::string& n : temporal_layers())
        if (n == layer) return true;
    return false;
}

void DenoiserConfig::validate() const {
    if (height % 4 != 0 || width % 4 != 0)
        throw contract_violation("denoiser: H and W must be divisible by 4");
    if (model_width % heads != 0) throw contract_violation("denoiser: heads must divide width");
    if (mid_blocks < 1) throw contract_violation("denoiser: at least one mid block");
    if (vocab_size < 1) throw contract_violation("denoiser: vocabulary required");
    // map layers must exist, and each attention layer belongs to exactly one registry
    auto blocks = block_names();
    for (const std::string& m : map_layers)
        if (std::find(blocks.begin(), blocks.end(), m) == blocks.end())
            throw config_error("map layer not in model: " + m);
    auto sp = spatial_layers();
    for (const std::string& t : temporal_layers())
        if (std::find(sp.begin(), sp.end(), t) != sp.end())
            throw contract_violation("layer in both registries: " + t);
}

std::string ParamBinding::lora_key(size_t idx, const std::string& layer, const char* which) {
    return std::to_string(idx) + ":" + layer + ":" + which;
}

namespace {
double xavier(int64_t fan_in, int64_t fan_out) {
    return std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
}
}  // namespace

Denoiser::Denoiser(DenoiserConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    if (cfg_.map_layers.empty()) cfg_.map_layers = cfg_.default_map_layers();
    cfg_.validate();
    RandomStream rs(derive_seed(seed, "denoiser-init"));
    int64_t d = cfg_.model_width, C = cfg_.channels, td = cfg_.text_dim;

    auto w = [&](std::vector<int64_t> shape, double sd) { return rs.normal_tensor(shape, sd); };

    add_param("patch_in.w", w({C * 4, d}, xavier(C * 4, d)));
    add_param("patch_in.b", Tensor({d}));
    add_param("temb.l1.w", w({d, d}, xavier(d, d)));
    add_param("temb.l1.b", Tensor({d}));
    add_param("temb.l2.w", w({d, d}, xavier(d, d)));
    add_param("temb.l2.b", Tensor({d}));
    for (const std::string& b : cfg_.block_names()) {
        add_param(b + ".temb.w", w({d, d}, 0.5 * xavier(d, d)));
        add_param(b + ".temb.b", Tensor({d}));
        add_param(b + ".conv_norm", Tensor({d}, 1.0));
        add_param(b + ".conv.w", w({d * 9, d}, xavier(d * 9, d)));
        add_param(b + ".conv.b", Tensor({d}));
        add_param(b + ".sattn_norm", Tensor({d}, 1.0));
        add_param(b + ".xattn_norm", Tensor({d}, 1.0));
        add_param(b + ".tattn_norm", Tensor({d}, 1.0));
        for (const char* a : {"sattn", "xattn", "tattn"})
            for (const char* p : {"q", "k", "v", "o"}) {
                std::string name = b + "." + std::string(a) + "." + p;
                int64_t din = cfg_.layer_in_dim(name);
                add_param(name, w({din, d}, xavier(din, d)));
            }
    }
    add_param("down.w", w({d * 4, d}, xavier(d * 4, d)));
    add_param("down.b", Tensor({d}));
    add_param("up.w", w({d, d}, xavier(d, d)));
    add_param("up.b", Tensor({d}));
    add_param("out_norm", Tensor({d}, 1.0));
    add_param("out.w", w({d, C * 4}, 0.2 * xavier(d, C * 4)));
    add_param("out.b", Tensor({C * 4}));
    add_param(kTextEmbed, w({cfg_.vocab_size, td}, 0.7));
}

void Denoiser::add_param(const std::string& name, Tensor t) {
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(t));
}

const Tensor& Denoiser::param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw config_error("denoiser: unknown parameter " + name);
    return params_[it->second].second;
}

Tensor& Denoiser::param_mut(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw config_error("denoiser: unknown parameter " + name);
    return params_[it->second].second;
}

uint64_t Denoiser::weights_fingerprint() const {
    uint64_t h = 1469598103934665603ull;
    auto eat_bytes = [&h](const void* p, size_t n) {
        const uint8_t* b = static_cast<const uint8_t*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (auto& [name, t] : params_) {
        eat_bytes(name.data(), name.size());
        eat_bytes(t.v.data(), t.v.size() * sizeof(double));
    }
    return h;
}

Tensor Denoiser::timestep_embed(int64_t t) const {
    if (t < 0 || t >= cfg_.max_t) throw range_error("timestep_embed: t out of range");
    int64_t d = cfg_.model_width;
    Tensor e({d});
    int64_t half = d / 2;
    for (int64_t i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                               static_cast<double>(half));
        double ang = static_cast<double>(t) * freq;
        e[i] = std::sin(ang);
        e[half + i] = std::cos(ang);
    }
    return e;
}

std::shared_ptr<GatherPlan> Denoiser::plan(
    const std::string& key, const std::function<std::shared_ptr<GatherPlan>()>& make) const {
    std::lock_guard<std::mutex> lock(plan_mu_);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    auto p = make();
    plans_[key] = p;
    return p;
}

struct Denoiser::Ctx {
    Tape& tape;
    const ForwardOpts& opts;
    const AdapterSet& adapters;
    ParamBinding* binding;
    AttnMapIds* maps;
    int temb = -1;  // [1, d] after the MLP
    std::map<std::string, int> base_cache;
    int64_t F = 0;
};

int Denoiser::base_leaf(Ctx& c, const std::string& name) const {
    auto it = c.base_cache.find(name);
    if (it != c.base_cache.end()) return it->second;
    int id = c.tape.leaf(param(name), c.opts.train_base);
    c.base_cache[name] = id;
    if (c.binding) c.binding->base[name] = id;
    return id;
}

int Denoiser::rms(Ctx& c, int x, const std::string& gain) const {
    Tape& t = c.tape;
    int ms = t.mean_last(t.mul(x, x));
    int inv = t.rsqrt_eps(ms, 1e-6);
    return t.mul_lastvec(t.mul(x, inv), base_leaf(c, gain));
}

// x @ (W + scale * down * up) for whichever adapter owns the layer
int Denoiser::proj(Ctx& c, int x, const std::string& layer) const {
    Tape& t = c.tape;
    int out = t.matmul(x, base_leaf(c, layer));
    auto [delta, ll] = c.adapters.lookup(layer);
    if (delta) {
        size_t idx = 0;
        for (; idx < c.adapters.deltas.size(); ++idx)
            if (c.adapters.deltas[idx] == delta) break;
        int down = t.leaf(ll->down, c.opts.train_adapters);
        int up = t.leaf(ll->up, c.opts.train_adapters);
        if (c.binding) {
            c.binding->lora[ParamBinding::lora_key(idx, layer, "down")] = down;
            c.binding->lora[ParamBinding::lora_key(idx, layer, "up")] = up;
        }
        out = t.add(out, t.scale(t.matmul(t.matmul(x, down), up), delta->scale));
    }
    return out;
}

namespace {
// [F, P, d] -> [F*h, P, dh]
int split_heads(Tape& t, int x, int64_t F, int64_t P, int64_t h, int64_t dh) {
    int r = t.reshape(x, {F, P, h, dh});
    int p = t.permute(r, {0, 2, 1, 3});
    return t.reshape(p, {F * h, P, dh});
}
int merge_heads(Tape& t, int x, int64_t F, int64_t P, int64_t h, int64_t dh) {
    int r = t.reshape(x, {F, h, P, dh});
    int p = t.permute(r, {0, 2, 1, 3});
    return t.reshape(p, {F, P, h * dh});
}
}  // namespace

int Denoiser::attn_block(Ctx& c, int tok, const std::string& blk, int64_t F, int64_t h,
                         int64_t w) const {
    Tape& t = c.tape;
    int64_t d = cfg_.model_width, H = cfg_.heads, dh = d / H, P = h * w;
    double qscale = 1.0 / std::sqrt(static_cast<double>(dh));

    // timestep conditioning
    int bt = t.add_lastvec(t.matmul(t.silu(c.temb), base_leaf(c, blk + ".temb.w")),
                           base_leaf(c, blk + ".temb.b"));
    tok = t.add_lastvec(tok, t.reshape(bt, {d}));

    // per-frame conv (residual)
    {
        int n = rms(c, tok, blk + ".conv_norm");
        int act = t.silu(n);
        int chw = t.reshape(t.permute(act, {0, 2, 1}), {F, d, h, w});
        auto key = "im2col3:" + std::to_string(F) + ":" + std::to_string(h) + ":" +
                   std::to_string(w);
        int cols = t.gather(chw, plan(key, [&] { return plan_im2col(F, d, h, w, 3, 1, 1); }));
        int conv = t.add_lastvec(t.matmul(cols, base_leaf(c, blk + ".conv.w")),
                                 base_leaf(c, blk + ".conv.b"));
        tok = t.add(tok, conv);
    }

    // per-frame self-attention
    {
        int n = rms(c, tok, blk + ".sattn_norm");
        int q = split_heads(t, proj(c, n, blk + ".sattn.q"), F, P, H, dh);
        int k = split_heads(t, proj(c, n, blk + ".sattn.k"), F, P, H, dh);
        int v = split_heads(t, proj(c, n, blk + ".sattn.v"), F, P, H, dh);
        int scores = t.scale(t.matmul(q, t.transpose_last(k)), qscale);
        int attn = t.softmax_last(scores);
        int o = merge_heads(t, t.matmul(attn, v), F, P, H, dh);
        tok = t.add(tok, proj(c, o, blk + ".sattn.o"));
    }

    // cross-attention to the prompt; maps captured here
    {
        int n = rms(c, tok, blk + ".xattn_norm");
        int q = split_heads(t, proj(c, n, blk + ".xattn.q"), F, P, H, dh);
        int ktxt = c.base_cache.at("__prompt__");
        int64_t L = t.val(ktxt).shape[0];
        auto txt_heads = [&](const std::string& layer) {
            int kv = proj(c, ktxt, layer);                       // [L, d]
            int r = t.reshape(kv, {L, H, dh});
            int p = t.permute(r, {1, 0, 2});                     // [h, L, dh]
            int e = t.expand0(p, F);                             // [F, h, L, dh]
            return t.reshape(e, {F * H, L, dh});
        };
        int k = txt_heads(blk + ".xattn.k");
        int v = txt_heads(blk + ".xattn.v");
        int scores = t.scale(t.matmul(q, t.transpose_last(k)), qscale);
        int attn = t.softmax_last(scores);  // [F*H, P, L]
        if (c.opts.capture_maps && c.maps) {
            int m = t.mean_heads(attn, H);  // [F, P, L]
            c.maps->sca.emplace_back(blk, m);
        }
        int o = merge_heads(t, t.matmul(attn, v), F, P, H, dh);
        tok = t.add(tok, proj(c, o, blk + ".xattn.o"));
    }

    // temporal self-attention per spatial location, inter-frame form (A - I)V
    if (c.opts.temporal_enabled) {
        int n = rms(c, tok, blk + ".tattn_norm");
        auto key = "t_perm:" + std::to_string(F) + ":" + std::to_string(P) + ":" +
                   std::to_string(d);
        int loc = t.permute(n, {1, 0, 2});  // [P, F, d]
        int q = split_heads(t, proj(c, loc, blk + ".tattn.q"), P, F, H, dh);
        int k = split_heads(t, proj(c, loc, blk + ".tattn.k"), P, F, H, dh);
        int v = split_heads(t, proj(c, loc, blk + ".tattn.v"), P, F, H, dh);
        int scores = t.scale(t.matmul(q, t.transpose_last(k)), qscale);
        int attn = t.softmax_last(scores);  // [P*H, F, F]
        if (c.opts.capture_maps && c.maps) {
            int m = t.mean_heads(attn, H);  // [P, F, F]
            c.maps->tsa.emplace_back(blk, m);
        }
        int mixed = t.sub(t.matmul(attn, v), v);  // zero when F == 1
        int o = merge_heads(t, mixed, P, F, H, dh);
        int out = proj(c, o, blk + ".tattn.o");
        tok = t.add(tok, t.permute(out, {1, 0, 2}));
        (void)key;
    }
    return tok;
}

DenoiseResult Denoiser::forward(Tape& tape, int x_id, const PromptEmbedding& prompt, int64_t t,
                                const AdapterSet& adapters, const ForwardOpts& opts,
                                ParamBinding* binding) const {
    const Tensor& xv = tape.val(x_id);
    if (xv.ndim() != 4 || xv.shape[1] != cfg_.channels || xv.shape[2] != cfg_.height ||
        xv.shape[3] != cfg_.width)
        throw contract_violation("denoise: input dims do not match config");
    if (prompt.dim != cfg_.text_dim) throw contract_violation("denoise: prompt dim mismatch");
    adapters.validate(cfg_);
    if (t < 0 || t >= cfg_.max_t) throw range_error("denoise: t out of range");

    int64_t F = xv.shape[0], d = cfg_.model_width, C = cfg_.channels;
    int64_t h1 = cfg_.height / 2, w1 = cfg_.width / 2, P1 = h1 * w1;
    int64_t h2 = cfg_.height / 4, w2 = cfg_.width / 4;

    DenoiseResult res;
    Ctx c{tape, opts, adapters, binding, &res.map_ids, -1, {}, F};

    // prompt embedding: fixed slots from the table, learnable slots as leaves
    {
        std::vector<int> slot_nodes;
        int table = base_leaf(c, kTextEmbed);
        for (size_t i = 0; i < prompt.tokens.size(); ++i) {
            if (prompt.is_learnable(i)) {
                int leaf = tape.leaf(prompt.special_vecs[i].reshaped({1, cfg_.text_dim}),
                                     opts.train_specials);
                if (binding) binding->special_slots.emplace_back(i, leaf);
                slot_nodes.push_back(leaf);
            } else {
                slot_nodes.push_back(tape.rows(table, {prompt.vocab_ids[i]}));
            }
        }
        c.base_cache["__prompt__"] = tape.concat0(slot_nodes);  // [L, text_dim]
    }

    // timestep embedding MLP
    {
        int sinu = tape.constant(timestep_embed(t).reshaped({1, d}));
        int l1 = tape.silu(tape.add_lastvec(tape.matmul(sinu, base_leaf(c, "temb.l1.w")),
                                            base_leaf(c, "temb.l1.b")));
        c.temb = tape.add_lastvec(tape.matmul(l1, base_leaf(c, "temb.l2.w")),
                                  base_leaf(c, "temb.l2.b"));  // [1, d]
    }

    // patch embed to the half-resolution token grid
    auto key_in = "patch_in:" + std::to_string(F);
    int cols = tape.gather(x_id, plan(key_in, [&] {
                               return plan_im2col(F, C, cfg_.height, cfg_.width, 2, 2, 0);
                           }));
    int tok = tape.add_lastvec(tape.matmul(cols, base_leaf(c, "patch_in.w")),
                               base_leaf(c, "patch_in.b"));  // [F, P1, d]

    for (int64_t i = 0; i < cfg_.mid_blocks; ++i)
        tok = attn_block(c, tok, "m" + std::to_string(i), F, h1, w1);
    int skip = tok;

    // down to quarter resolution
    {
        int chw = tape.reshape(tape.permute(tok, {0, 2, 1}), {F, d, h1, w1});
        auto key = "down:" + std::to_string(F);
        int dcols = tape.gather(chw, plan(key, [&] { return plan_im2col(F, d, h1, w1, 2, 2, 0); }));
        tok = tape.add_lastvec(tape.matmul(dcols, base_leaf(c, "down.w")),
                               base_leaf(c, "down.b"));
    }
    tok = attn_block(c, tok, "b0", F, h2, w2);

    // up and fuse with the skip
    {
        int lin = tape.add_lastvec(tape.matmul(tok, base_leaf(c, "up.w")), base_leaf(c, "up.b"));
        int chw = tape.reshape(tape.permute(lin, {0, 2, 1}), {F, d, h2, w2});
        auto key = "up:" + std::to_string(F);
        int up = tape.gather(chw, plan(key, [&] { return plan_upsample2x(F, d, h2, w2); }));
        int tok_up = tape.permute(tape.reshape(up, {F, d, P1}), {0, 2, 1});
        tok = tape.add(tok_up, skip);
    }
    tok = attn_block(c, tok, "u0", F, h1, w1);

    // decode: norm, 1x1 to 4C, pixel-shuffle back to full resolution
    {
        int n = rms(c, tok, "out_norm");
        int act = tape.silu(n);
        int dec = tape.add_lastvec(tape.matmul(act, base_leaf(c, "out.w")),
                                   base_leaf(c, "out.b"));  // [F, P1, 4C]
        int chw = tape.reshape(tape.permute(dec, {0, 2, 1}), {F, 4 * C, h1, w1});
        auto key = "unshuffle:" + std::to_string(F);
        res.eps = tape.gather(chw, plan(key, [&] {
                                  return plan_pixel_unshuffle_inv(F, 4 * C, h1, w1);
                              }));
    }

    if (!tape.val(res.eps).all_finite()) throw numerical_failure("denoise: NaN in output");
    return res;
}

std::pair<Tensor, AttentionBundle> Denoiser::denoise(const VideoTensor& x_t,
                                                     const PromptEmbedding& prompt, int64_t t,
                                                     const AdapterSet& adapters,
                                                     bool temporal_enabled) const {
    Tape tape;
    ForwardOpts opts;
    opts.temporal_enabled = temporal_enabled;
    int x = tape.leaf(x_t.data, false);
    DenoiseResult r = forward(tape, x, prompt, t, adapters, opts);
    AttentionBundle bundle;
    for (auto& [name, id] : r.map_ids.sca) bundle.sca.emplace_back(name, tape.val(id));
    for (auto& [name, id] : r.map_ids.tsa) bundle.tsa.emplace_back(name, tape.val(id));
    return {tape.val(r.eps), std::move(bundle)};
}

int aggregate_maps(Tape& tape, const std::vector<std::pair<std::string, int>>& maps,
                   const std::vector<std::string>& select) {
    int acc = -1;
    int count = 0;
    for (auto& [name, id] : maps) {
        if (std::find(select.begin(), select.end(), name) == select.end()) continue;
        acc = acc < 0 ? id : tape.add(acc, id);
        ++count;
    }
    if (count == 0) throw config_error("aggregate_maps: no selected layers present");
    return tape.scale(acc, 1.0 / static_cast<double>(count));
}

Tensor aggregate_maps_value(const std::vector<std::pair<std::string, Tensor>>& maps,
                            const std::vector<std::string>& select) {
    Tensor acc;
    int count = 0;
    for (auto& [name, t] : maps) {
        if (std::find(select.begin(), select.end(), name) == select.end()) continue;
        if (count == 0)
            acc = t;
        else
            for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += t[i];
        ++count;
    }
    if (count == 0) throw config_error("aggregate_maps: no selected layers present");
    for (int64_t i = 0; i < acc.numel(); ++i) acc[i] /= static_cast<double>(count);
    return acc;
}

}  // namespace vidfuse
