#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "matkit/core/error.hpp"
#include "matkit/numerics/matrix.hpp"

namespace matkit {

// (layer, slot) address of a module. Slot is the head / block / filter-group
// index within its layer. Ordering is layer-major and is the canonical
// iteration order everywhere.
struct ModuleId {
    std::size_t layer = 0;
    std::size_t slot = 0;
    auto operator<=>(const ModuleId&) const = default;
};

std::string to_string(const ModuleId& id);

// Contiguous slice of the flat parameter vector.
struct ParamSlice {
    std::size_t begin = 0;
    std::size_t len = 0;
};

struct ModuleInfo {
    ModuleId id;
    ParamSlice slice;
    std::string family; // "block" | "head" | "filter_group"
};

enum class Architecture { BlockMlp, TinyAttention, TinyConv };
enum class Activation { Tanh, Identity };

// Whether the non-modular tail (embeddings, positions, readout) receives
// gradient updates or is held fixed.
enum class AlwaysActiveMode { Trainable, Frozen };

// How the network output is reduced to one backward pass per sample when
// building Jacobian rows. SumOfLogits differentiates sum_j f_j(x); FullOutput
// keeps one row per (sample, output) pair and is capped at 512 rows.
enum class Scalarization { SumOfLogits, FullOutput };

struct BlockMlpSpec {
    std::size_t d_in = 1;
    std::size_t layers = 1;
    std::size_t blocks_per_layer = 1;
    std::size_t width = 1;
    std::size_t outputs = 1;
    bool use_bias = true;
    Activation activation = Activation::Tanh;
};

struct TinyAttentionSpec {
    std::size_t vocab = 16;    // <= 32; id == vocab is the mask token
    std::size_t seq_len = 8;   // <= 16
    std::size_t d_model = 16;
    std::size_t heads = 4;
    std::size_t layers = 2;
};

struct TinyConvSpec {
    std::size_t in_len = 16;
    std::size_t channels = 8;
    std::size_t groups = 4;
    std::size_t layers = 2;
    std::size_t outputs = 1;
    bool use_bias = true;
};

using ArchSpecVariant = std::variant<BlockMlpSpec, TinyAttentionSpec, TinyConvSpec>;

// Dense-product multiply-accumulate counts, split by whether the work belongs
// to a module or to the always-active tail. Elementwise adds, activations and
// softmax are not counted.
struct FlopsCount {
    std::uint64_t modular = 0;
    std::uint64_t always = 0;
    std::uint64_t total() const { return modular + always; }
    FlopsCount& operator+=(const FlopsCount& o) {
        modular += o.modular;
        always += o.always;
        return *this;
    }
};

namespace detail {
class NetKernel;
}

// A network whose trainable surface is partitioned into modules. Parameters
// live in one flat vector: all module slices first (layer-major), then the
// always-active tail. theta0 records the reference point for weight-distance
// reporting; it starts equal to the initialization and can be re-snapshotted.
class ModularNetwork {
public:
    ModularNetwork() = default;

    Architecture architecture() const;
    const ArchSpecVariant& arch_spec() const { return spec_; }
    std::uint64_t seed() const { return seed_; }

    const std::vector<ModuleInfo>& modules() const { return modules_; }
    const ModuleInfo& module(ModuleId id) const;
    std::size_t module_ordinal(ModuleId id) const;
    std::size_t module_count() const { return modules_.size(); }
    std::size_t layer_count() const;

    std::size_t param_count() const { return params_.size(); }
    std::size_t modular_param_count() const { return modular_len_; }
    ParamSlice always_active_slice() const { return {modular_len_, params_.size() - modular_len_}; }

    AlwaysActiveMode always_active_mode() const { return always_mode_; }
    void set_always_active_mode(AlwaysActiveMode m) { always_mode_ = m; }

    std::vector<double>& parameters() { return params_; }
    const std::vector<double>& parameters() const { return params_; }
    const std::vector<double>& theta0() const { return theta0_; }
    void snapshot_theta0() { theta0_ = params_; }
    double weight_distance_from_init() const;

    std::size_t input_width() const;
    std::size_t output_width() const;

    // Pruning marks modules as removed: their forward contribution is zero
    // and they drop out of the module partition. Unknown ids throw.
    void prune(const std::vector<ModuleId>& ids);
    bool is_pruned(ModuleId id) const;
    const std::vector<ModuleId>& pruned_modules() const { return pruned_ids_; }
    std::vector<ModuleInfo> active_partition() const;
    std::size_t active_modular_params() const;

    const detail::NetKernel& kernel() const { return *kernel_; }
    const std::vector<std::uint8_t>& pruned_mask() const { return pruned_mask_; }

private:
    friend ModularNetwork build_network(const ArchSpecVariant&, std::uint64_t);

    ArchSpecVariant spec_;
    std::uint64_t seed_ = 0;
    std::shared_ptr<const detail::NetKernel> kernel_;
    std::vector<ModuleInfo> modules_;
    std::map<ModuleId, std::size_t> ordinal_;
    std::size_t modular_len_ = 0;
    std::vector<double> params_;
    std::vector<double> theta0_;
    AlwaysActiveMode always_mode_ = AlwaysActiveMode::Trainable;
    std::vector<std::uint8_t> pruned_mask_;
    std::vector<ModuleId> pruned_ids_;
};

// Same spec + same seed is bit-identical, including theta0.
ModularNetwork build_network(const ArchSpecVariant& spec, std::uint64_t seed);

struct ForwardResult {
    Matrix outputs; // n x output_width
    FlopsCount flops;
};

// Batched forward pass. Inputs are n x input_width; for TinyAttention the
// entries must be integral token ids in [0, vocab] (vocab = mask id).
// Throws NumericError naming the first offending sample if any output is not
// finite.
ForwardResult forward(const ModularNetwork& net, const Matrix& inputs);

// Rows of d(scalarized output)/d(theta_module) for one module. values is
// (rows x module_params) where rows = S for SumOfLogits and S*k for
// FullOutput (sample-major).
struct JacobianBlock {
    ModuleId module;
    Matrix values;
    Scalarization scalarization = Scalarization::SumOfLogits;
};

struct JacobianSet {
    std::vector<JacobianBlock> blocks; // canonical module order, pruned excluded
    FlopsCount flops;                  // modeled cost: forward + 2x forward per backward pass
};

// Jacobian blocks for every unpruned module, sharing one forward pass and one
// backward sweep per row. FullOutput requires S * output_width <= 512.
JacobianSet all_module_jacobians(const ModularNetwork& net, const Matrix& samples,
                                 Scalarization mode);

// Single-module convenience wrapper. Pruned or unknown ids throw LookupError.
JacobianBlock module_jacobian(const ModularNetwork& net, const Matrix& samples,
                              ModuleId module, Scalarization mode);

enum class LossKind { SquaredError, SoftmaxCrossEntropy };

struct Batch {
    Matrix inputs;
    Matrix targets;
};

// Loss value plus gradients organized by module. always_active is empty when
// the tail is frozen. output_grad is dLoss/dOutputs (n x k).
struct GradientResult {
    double loss = 0.0;
    std::map<ModuleId, std::vector<double>> per_module;
    std::vector<double> always_active;
    Matrix output_grad;
    FlopsCount forward_flops;
};

// Forward + loss + backward. SquaredError expects targets shaped like the
// outputs and averages 0.5*||z - y||^2 over samples. SoftmaxCrossEntropy
// expects integer class targets (one column per prediction group, -1 =
// ignore) and averages -log p over counted groups. When active is given,
// gradients are accumulated only for those modules (others come back zero);
// results are bit-identical to slicing a full backward.
GradientResult loss_and_gradients(const ModularNetwork& net, const Batch& batch, LossKind kind,
                                  const std::vector<ModuleId>* active = nullptr);

// Forward + loss only, same conventions as loss_and_gradients.
double evaluate_loss(const ModularNetwork& net, const Batch& batch, LossKind kind);

// theta_m -= lr * (g_m + weight_decay * theta_m) for each active module,
// plus the always-active tail when it is trainable. Decay touches only the
// parameters being stepped. An empty active set is a complete no-op.
// Unknown or pruned ids throw LookupError.
void apply_selective_step(ModularNetwork& net, const GradientResult& grads,
                          const std::vector<ModuleId>& active, double lr,
                          double weight_decay = 0.0);

} // namespace matkit
