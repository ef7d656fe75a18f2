#include "vidfuse/token_space.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vidfuse/adam.hpp"
#include "vidfuse/denoiser.hpp"
#include "vidfuse/scheduler.hpp"
#include "vidfuse/synthworld.hpp"

namespace vidfuse {

const std::vector<std::string>& Vocabulary::standard_words() {
    static const std::vector<std::string> words = [] {
        std::vector<std::string> w = {"<null>", "a",     "static", "video", "of",
                                      "and",    "on",    "is",     "being", "still",
                                      "circle", "square", "triangle", "star",
                                      "bounces", "orbits", "chases", "rides", "crosses", "rests"};
        for (auto& [name, _] : synthworld::palette()) w.push_back(name);
        for (auto& bg : synthworld::background_words()) w.push_back(bg);
        return w;
    }();
    return words;
}

Vocabulary Vocabulary::standard(int64_t dim) {
    Vocabulary v;
    v.words = standard_words();
    v.dim = dim;
    return v;
}

int64_t Vocabulary::id(const std::string& word) const {
    for (size_t i = 0; i < words.size(); ++i)
        if (words[i] == word) return static_cast<int64_t>(i);
    throw config_error("unknown vocabulary token: " + word);
}

bool Vocabulary::contains(const std::string& word) const {
    return std::find(words.begin(), words.end(), word) != words.end();
}

int64_t PromptEmbedding::learnable_count() const {
    int64_t n = 0;
    for (int64_t id : vocab_ids) n += id < 0 ? 1 : 0;
    return n;
}

std::vector<int64_t> PromptEmbedding::token_indices(const std::string& token) const {
    std::vector<int64_t> out;
    for (size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] == token) out.push_back(static_cast<int64_t>(i));
    return out;
}

PromptEmbedding build_prompt(const Vocabulary& vocab, const std::string& template_str,
                             const std::map<std::string, Binding>& bindings) {
    PromptEmbedding p;
    p.dim = vocab.dim;
    std::istringstream in(template_str);
    std::string tok;
    while (in >> tok) {
        bool placeholder = tok.size() > 2 && tok.front() == '<' && tok.back() == '>';
        if (placeholder) {
            auto it = bindings.find(tok);
            if (it == bindings.end()) throw config_error("unbound placeholder: " + tok);
            if (std::holds_alternative<std::string>(it->second)) {
                const std::string& word = std::get<std::string>(it->second);
                p.tokens.push_back(word);
                p.vocab_ids.push_back(vocab.id(word));
                p.special_vecs.emplace_back();
                p.superclasses.emplace_back();
            } else {
                const SpecialToken& st = std::get<SpecialToken>(it->second);
                if (st.embedding.numel() != vocab.dim)
                    throw contract_violation("special token dim mismatch: " + st.name);
                p.tokens.push_back(st.name);
                p.vocab_ids.push_back(-1);
                p.special_vecs.push_back(st.embedding.reshaped({vocab.dim}));
                p.superclasses.push_back(st.superclass);
            }
        } else {
            p.tokens.push_back(tok);
            p.vocab_ids.push_back(vocab.id(tok));
            p.special_vecs.emplace_back();
            p.superclasses.emplace_back();
        }
    }
    if (p.tokens.empty()) throw contract_violation("empty prompt template");
    return p;
}

PromptEmbedding superclass_prompt(const Vocabulary& vocab, const PromptEmbedding& prompt) {
    PromptEmbedding p;
    p.dim = prompt.dim;
    for (size_t i = 0; i < prompt.tokens.size(); ++i) {
        if (prompt.is_learnable(i)) {
            const std::string& sup = prompt.superclasses[i];
            if (sup.empty() || !vocab.contains(sup))
                throw config_error("special token has no registered superclass: " +
                                   prompt.tokens[i]);
            p.tokens.push_back(sup);
            p.vocab_ids.push_back(vocab.id(sup));
        } else {
            p.tokens.push_back(prompt.tokens[i]);
            p.vocab_ids.push_back(prompt.vocab_ids[i]);
        }
        p.special_vecs.emplace_back();
        p.superclasses.emplace_back();
    }
    return p;
}

PromptEmbedding null_prompt(const Vocabulary& vocab) {
    PromptEmbedding p;
    p.dim = vocab.dim;
    p.tokens = {"<null>"};
    p.vocab_ids = {vocab.null_id()};
    p.special_vecs.emplace_back();
    p.superclasses.emplace_back();
    return p;
}

VideoTensor masked_crop(const VideoTensor& frame, const Tensor& mask) {
    if (frame.space != Space::Pixel) throw contract_violation("masked_crop: pixel frame expected");
    if (frame.frames() != 1) throw contract_violation("masked_crop: single frame expected");
    int64_t H = frame.height(), W = frame.width(), C = frame.channels();
    if (mask.numel() != H * W) throw contract_violation("masked_crop: mask size mismatch");

    int64_t y0 = H, y1 = -1, x0 = W, x1 = -1;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            if (mask[y * W + x] > 0.5) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
    if (y1 < 0) throw degenerate_input("masked_crop: empty mask");

    // square box around the subject, neutral-gray fill, nearest resize
    int64_t side = std::max(y1 - y0 + 1, x1 - x0 + 1);
    double cy = 0.5 * static_cast<double>(y0 + y1), cx = 0.5 * static_cast<double>(x0 + x1);
    Tensor out({1, C, H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            // map target pixel into the source box
            double sy = cy + (static_cast<double>(y) / static_cast<double>(H - 1) - 0.5) *
                                 static_cast<double>(side);
            double sx = cx + (static_cast<double>(x) / static_cast<double>(W - 1) - 0.5) *
                                 static_cast<double>(side);
            int64_t iy = static_cast<int64_t>(std::llround(sy));
            int64_t ix = static_cast<int64_t>(std::llround(sx));
            bool inside = iy >= 0 && iy < H && ix >= 0 && ix < W && mask[iy * W + ix] > 0.5;
            for (int64_t c = 0; c < C; ++c)
                out[(c * H + y) * W + x] = inside ? frame.data[(c * H + iy) * W + ix] : 0.0;
        }
    return {std::move(out), Space::Pixel};
}

InversionResult textual_inversion(const Denoiser& model, const NoiseSchedule& sched,
                                  const VideoTensor& frame_pixel, const Tensor& mask,
                                  const std::string& init_token, const std::string& token_name,
                                  int64_t steps, double lr, uint64_t seed) {
    Vocabulary vocab = Vocabulary::standard(model.config().text_dim);
    int64_t init_id = vocab.id(init_token);

    InversionResult res;
    res.token.name = token_name;
    res.token.superclass = init_token;
    {
        const Tensor& table = model.param(Denoiser::kTextEmbed);
        int64_t D = model.config().text_dim;
        res.token.embedding = Tensor({D});
        for (int64_t j = 0; j < D; ++j) res.token.embedding[j] = table[init_id * D + j];
    }
    if (steps == 0) return res;

    VideoTensor crop = masked_crop(frame_pixel, mask);
    VideoTensor lat = synthworld::to_latent(crop);

    RandomStream rs(derive_seed(seed, "textual-inversion:" + token_name));
    Adam opt(lr);
    for (int64_t step = 0; step < steps; ++step) {
        int64_t t = rs.uniform_int(0, sched.num_steps - 1);
        Tensor eps = rs.normal_tensor(lat.data.shape);
        VideoTensor x_t = add_noise(lat, {eps, Space::Latent}, t, sched);

        PromptEmbedding prompt = build_prompt(
            vocab, "a <tok>", {{"<tok>", Binding(res.token)}});

        Tape tape;
        ForwardOpts opts;
        opts.train_specials = true;
        opts.capture_maps = false;
        ParamBinding binding;
        int x = tape.leaf(x_t.data, false);
        DenoiseResult out = model.forward(tape, x, prompt, t, {}, opts, &binding);
        int loss = tape.mse(out.eps, tape.constant(eps));
        tape.backward(loss);
        res.loss_log.push_back(tape.val(loss)[0]);

        for (auto& [slot, leaf] : binding.special_slots) {
            (void)slot;
            opt.step("tok", res.token.embedding, tape.grad(leaf).reshaped({vocab.dim}));
        }
    }
    return res;
}

}  // namespace vidfuse
