#pragma once

#include <optional>
#include <string>

#include "matkit/trainer/trainer.hpp"

namespace matkit {

// Dataset recipe. Which keys matter depends on kind; the rest keep their
// defaults and still appear in the resolved echo.
struct DataSpec {
    std::string kind = "teacher-student"; // teacher-student | spiral | token-mask
    std::size_t n_train = 128;
    std::size_t n_val = 64;
    std::size_t d_in = 4;    // teacher-student
    double noise = 0.0;      // teacher-student, spiral
    double turns = 2.0;      // spiral
    std::size_t vocab = 16;  // token-mask
    std::size_t seq_len = 8; // token-mask
    double mask_rate = 0.15; // token-mask

    void validate() const;
};

// Raw [model] keys. The union of all architectures' keys is accepted so a
// spec can switch arch without re-editing the block; input-facing dimensions
// (d_in, vocab, seq_len) come from the dataset when the spec is finalized.
struct ModelFields {
    std::string arch = "block-mlp"; // block-mlp | tiny-attention | tiny-conv
    std::size_t layers = 2;
    std::size_t blocks = 2; // block-mlp blocks per layer
    std::size_t width = 8;
    std::size_t outputs = 1;
    bool bias = true;
    std::string activation = "tanh"; // tanh | identity
    std::size_t d_model = 16;        // tiny-attention
    std::size_t heads = 4;           // tiny-attention
    std::size_t channels = 8;        // tiny-conv
    std::size_t groups = 2;          // tiny-conv
};

// A fully resolved experiment: every knob explicit, unknown sections or keys
// rejected at parse time.
//
// Grammar: '#' starts a comment, '[section]' opens a section, 'key = value'
// assigns within it. Sections: run, data, model, train, policy, multirate,
// rand. Booleans accept on/off/true/false. The loss follows the dataset:
// token-mask scores masked positions with softmax cross-entropy, everything
// else uses squared error.
struct RunSpec {
    std::string name = "run";
    ModelFields model_fields;
    ArchSpecVariant model = BlockMlpSpec{}; // finalized from model_fields + data
    DataSpec data;
    TrainConfig train;

    void validate() const;
};

RunSpec parse_run_spec(const std::string& text);

// Reads the file and parses it. Unreadable path throws IoError.
RunSpec load_run_spec(const std::string& path);

// INI text with every section and key explicit; parses back into an
// identical spec.
std::string resolved_echo(const RunSpec& spec);

// Command-line overrides layered onto a parsed spec.
struct SpecOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> policy;
    std::optional<double> alpha;
    std::optional<double> beta;
    std::optional<std::size_t> samples;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> warmup;
    std::optional<std::size_t> cadence;
    std::optional<bool> sticky;
};

void apply_overrides(RunSpec& spec, const SpecOverrides& ov);

PolicyKind parse_policy_kind(const std::string& name); // SpecError on unknown
std::string to_string(PolicyKind kind);

} // namespace matkit
