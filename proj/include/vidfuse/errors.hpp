#ifndef VIDFUSE_ERRORS_HPP
#define VIDFUSE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace vidfuse {

// Caller broke a documented precondition (shape mismatch, bad target set, ...).
struct contract_violation : std::invalid_argument {
    explicit contract_violation(const std::string& msg) : std::invalid_argument(msg) {}
};

// Index or value outside its documented range.
struct range_error : std::out_of_range {
    explicit range_error(const std::string& msg) : std::out_of_range(msg) {}
};

// Bad configuration: unknown layer target, unbound placeholder, missing artifact.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf appeared where a finite value is required.
struct numerical_failure : std::runtime_error {
    explicit numerical_failure(const std::string& msg) : std::runtime_error(msg) {}
};

// Training diverged; carries the tail of the training log.
struct training_failure : std::runtime_error {
    training_failure(const std::string& msg, std::string log_tail)
        : std::runtime_error(msg), log(std::move(log_tail)) {}
    std::string log;
};

// Two adapters claim the same layer.
struct composition_error : std::runtime_error {
    explicit composition_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Artifact fingerprints do not line up (adapter trained on a different base, ...).
struct fingerprint_mismatch : std::runtime_error {
    explicit fingerprint_mismatch(const std::string& msg) : std::runtime_error(msg) {}
};

// Degenerate input: empty mask, fully occluded composite.
struct degenerate_input : std::runtime_error {
    explicit degenerate_input(const std::string& msg) : std::runtime_error(msg) {}
};

// Sampling-time failure (guidance blew up the latent).
struct sampling_failure : std::runtime_error {
    explicit sampling_failure(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vidfuse

#endif
