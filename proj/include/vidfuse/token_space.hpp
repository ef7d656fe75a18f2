#ifndef VIDFUSE_TOKEN_SPACE_HPP
#define VIDFUSE_TOKEN_SPACE_HPP

#include <map>
#include <string>
#include <variant>
#include <vector>

#include "vidfuse/rng.hpp"
#include "vidfuse/tensor.hpp"
#include "vidfuse/video.hpp"

namespace vidfuse {

class Denoiser;
struct NoiseSchedule;

// Closed synthetic vocabulary backing the toy text encoder. The table is a
// trainable parameter of the base model; special tokens live outside it.
struct Vocabulary {
    std::vector<std::string> words;
    int64_t dim = 0;

    static const std::vector<std::string>& standard_words();
    static Vocabulary standard(int64_t dim);

    int64_t id(const std::string& word) const;  // throws config_error on unknown token
    bool contains(const std::string& word) const;
    int64_t size() const { return static_cast<int64_t>(words.size()); }
    int64_t null_id() const { return 0; }
};

// A learned token embedding plus its registered superclass word.
struct SpecialToken {
    std::string name;        // "<subA>"
    std::string superclass;  // vocabulary word, e.g. "circle"
    Tensor embedding;        // [dim]
};

// Ordered token sequence with learnable special-token slots. Fixed slots
// reference the vocabulary table by id so their vectors stay bit-identical
// to the table; learnable slots carry their own vectors.
struct PromptEmbedding {
    std::vector<std::string> tokens;
    std::vector<int64_t> vocab_ids;        // -1 at special slots
    std::vector<Tensor> special_vecs;      // empty tensors at fixed slots
    std::vector<std::string> superclasses;  // registered superclass per special slot
    int64_t dim = 0;

    int64_t length() const { return static_cast<int64_t>(tokens.size()); }
    int64_t learnable_count() const;
    bool is_learnable(size_t slot) const { return vocab_ids[slot] < 0; }
    // slot positions whose source token equals `token`
    std::vector<int64_t> token_indices(const std::string& token) const;
};

using Binding = std::variant<std::string, SpecialToken>;  // vocab word or special token

// Template is a whitespace token string; placeholders look like "<name>" and
// must all be bound. Bindings to vocabulary words produce fixed slots,
// bindings to special tokens produce learnable slots.
PromptEmbedding build_prompt(const Vocabulary& vocab, const std::string& template_str,
                             const std::map<std::string, Binding>& bindings = {});

// c~: every special token replaced by its superclass word; zero learnable slots
PromptEmbedding superclass_prompt(const Vocabulary& vocab, const PromptEmbedding& prompt);

PromptEmbedding null_prompt(const Vocabulary& vocab);

struct InversionResult {
    SpecialToken token;
    std::vector<double> loss_log;  // per-step reconstruction loss
};

// Textual inversion on one masked frame: bounding-box crop, neutral-gray
// fill, nearest resize to the model's pixel resolution, then Eq.-style
// reconstruction training of the token vector alone (base weights frozen).
InversionResult textual_inversion(const Denoiser& model, const NoiseSchedule& sched,
                                  const VideoTensor& frame_pixel, const Tensor& mask,
                                  const std::string& init_token, const std::string& token_name,
                                  int64_t steps, double lr, uint64_t seed);

// the crop preprocessing by itself (exposed for tests)
VideoTensor masked_crop(const VideoTensor& frame_pixel, const Tensor& mask);

}  // namespace vidfuse

#endif
