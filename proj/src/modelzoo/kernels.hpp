#pragma once

// Internal architecture kernels. Each kernel owns the parameter layout for
// its architecture and implements a per-sample vector-Jacobian product; the
// public modelzoo API in network.cpp is assembled from these pieces.

#include <memory>

#include "matkit/core/rng.hpp"
#include "matkit/modelzoo/network.hpp"

namespace matkit::detail {

struct Cache {
    virtual ~Cache() = default;
};

class NetKernel {
public:
    virtual ~NetKernel() = default;

    virtual std::size_t param_count() const = 0;
    virtual std::size_t modular_param_count() const = 0;
    virtual std::vector<ModuleInfo> modules() const = 0;
    virtual std::size_t input_width() const = 0;
    virtual std::size_t output_width() const = 0;

    virtual void init_params(std::span<double> theta, Rng& rng) const = 0;
    virtual void validate_inputs(const Matrix& inputs) const = 0;

    // Batched forward. pruned is indexed by module ordinal. Returns the
    // activation cache consumed by backward_sample.
    virtual std::unique_ptr<Cache> forward(std::span<const double> theta, const Matrix& inputs,
                                           const std::vector<std::uint8_t>& pruned,
                                           Matrix& outputs, FlopsCount& flops) const = 0;

    // Accumulates d(dz_row . output_sample)/dtheta into dtheta for one
    // sample. active == nullptr means all module gradients; entries of active
    // that are 0 skip only the dW accumulation, never the dX flow. Always-
    // active tail gradients are produced only when always_grads is set.
    virtual void backward_sample(std::span<const double> theta, const Cache& cache,
                                 const Matrix& inputs, std::size_t sample,
                                 std::span<const double> dz_row,
                                 const std::vector<std::uint8_t>& pruned,
                                 const std::vector<std::uint8_t>* active, bool always_grads,
                                 std::span<double> dtheta) const = 0;
};

std::shared_ptr<const NetKernel> make_kernel(const ArchSpecVariant& spec);
std::shared_ptr<const NetKernel> make_block_mlp_kernel(const BlockMlpSpec& spec);
std::shared_ptr<const NetKernel> make_tiny_attention_kernel(const TinyAttentionSpec& spec);
std::shared_ptr<const NetKernel> make_tiny_conv_kernel(const TinyConvSpec& spec);

} // namespace matkit::detail
