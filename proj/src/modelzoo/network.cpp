#include "matkit/modelzoo/network.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"
#include "losses.hpp"

namespace matkit {

std::string to_string(const ModuleId& id) {
    return std::to_string(id.layer) + ":" + std::to_string(id.slot);
}

namespace detail {

std::shared_ptr<const NetKernel> make_kernel(const ArchSpecVariant& spec) {
    return std::visit(
        [](const auto& s) -> std::shared_ptr<const NetKernel> {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, BlockMlpSpec>)
                return make_block_mlp_kernel(s);
            else if constexpr (std::is_same_v<T, TinyAttentionSpec>)
                return make_tiny_attention_kernel(s);
            else
                return make_tiny_conv_kernel(s);
        },
        spec);
}

} // namespace detail

Architecture ModularNetwork::architecture() const {
    if (std::holds_alternative<BlockMlpSpec>(spec_)) return Architecture::BlockMlp;
    if (std::holds_alternative<TinyAttentionSpec>(spec_)) return Architecture::TinyAttention;
    return Architecture::TinyConv;
}

const ModuleInfo& ModularNetwork::module(ModuleId id) const {
    return modules_[module_ordinal(id)];
}

std::size_t ModularNetwork::module_ordinal(ModuleId id) const {
    auto it = ordinal_.find(id);
    if (it == ordinal_.end())
        throw LookupError("unknown module " + to_string(id));
    return it->second;
}

std::size_t ModularNetwork::layer_count() const {
    std::size_t layers = 0;
    for (const auto& m : modules_) layers = std::max(layers, m.id.layer + 1);
    return layers;
}

double ModularNetwork::weight_distance_from_init() const {
    double s = 0.0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const double d = params_[i] - theta0_[i];
        s += d * d;
    }
    return std::sqrt(s);
}

std::size_t ModularNetwork::input_width() const { return kernel_->input_width(); }
std::size_t ModularNetwork::output_width() const { return kernel_->output_width(); }

void ModularNetwork::prune(const std::vector<ModuleId>& ids) {
    for (const ModuleId& id : ids) {
        const std::size_t ord = module_ordinal(id);
        if (pruned_mask_[ord])
            throw ValueError("module " + to_string(id) + " is already pruned");
        pruned_mask_[ord] = 1;
        pruned_ids_.push_back(id);
    }
    std::sort(pruned_ids_.begin(), pruned_ids_.end());
}

bool ModularNetwork::is_pruned(ModuleId id) const { return pruned_mask_[module_ordinal(id)] != 0; }

std::vector<ModuleInfo> ModularNetwork::active_partition() const {
    std::vector<ModuleInfo> out;
    for (std::size_t i = 0; i < modules_.size(); ++i)
        if (!pruned_mask_[i]) out.push_back(modules_[i]);
    return out;
}

std::size_t ModularNetwork::active_modular_params() const {
    std::size_t total = 0;
    for (std::size_t i = 0; i < modules_.size(); ++i)
        if (!pruned_mask_[i]) total += modules_[i].slice.len;
    return total;
}

ModularNetwork build_network(const ArchSpecVariant& spec, std::uint64_t seed) {
    ModularNetwork net;
    net.spec_ = spec;
    net.seed_ = seed;
    net.kernel_ = detail::make_kernel(spec);
    net.modules_ = net.kernel_->modules();
    for (std::size_t i = 0; i < net.modules_.size(); ++i)
        net.ordinal_[net.modules_[i].id] = i;
    net.modular_len_ = net.kernel_->modular_param_count();
    net.params_.assign(net.kernel_->param_count(), 0.0);
    Rng rng(mix_seed(seed, "init"));
    net.kernel_->init_params(net.params_, rng);
    net.theta0_ = net.params_;
    net.pruned_mask_.assign(net.modules_.size(), 0);
    return net;
}

namespace {

void check_finite_outputs(const Matrix& outputs, const char* who) {
    for (std::size_t i = 0; i < outputs.rows(); ++i)
        for (std::size_t j = 0; j < outputs.cols(); ++j)
            if (!std::isfinite(outputs.at(i, j)))
                throw NumericError(std::string(who) + ": non-finite output",
                                   static_cast<std::ptrdiff_t>(i));
}

} // namespace

ForwardResult forward(const ModularNetwork& net, const Matrix& inputs) {
    net.kernel().validate_inputs(inputs);
    ForwardResult out;
    net.kernel().forward(net.parameters(), inputs, net.pruned_mask(), out.outputs, out.flops);
    check_finite_outputs(out.outputs, "forward");
    return out;
}

JacobianSet all_module_jacobians(const ModularNetwork& net, const Matrix& samples,
                                 Scalarization mode) {
    net.kernel().validate_inputs(samples);
    const std::size_t s = samples.rows();
    if (s == 0) throw ShapeError("all_module_jacobians: no samples");
    const std::size_t k = net.output_width();
    if (mode == Scalarization::FullOutput && s * k > 512)
        throw ValueError("all_module_jacobians: FullOutput needs samples*outputs <= 512");

    Matrix outputs;
    FlopsCount fwd;
    auto cache = net.kernel().forward(net.parameters(), samples, net.pruned_mask(), outputs, fwd);
    check_finite_outputs(outputs, "all_module_jacobians");

    const std::size_t rows = mode == Scalarization::SumOfLogits ? s : s * k;
    const auto partition = net.active_partition();

    JacobianSet out;
    out.blocks.reserve(partition.size());
    for (const auto& info : partition)
        out.blocks.push_back({info.id, Matrix(rows, info.slice.len), mode});

    std::vector<double> dtheta(net.param_count());
    std::vector<double> dz(k);
    for (std::size_t row = 0; row < rows; ++row) {
        const std::size_t sample = mode == Scalarization::SumOfLogits ? row : row / k;
        std::fill(dz.begin(), dz.end(), 0.0);
        if (mode == Scalarization::SumOfLogits)
            std::fill(dz.begin(), dz.end(), 1.0);
        else
            dz[row % k] = 1.0;
        std::fill(dtheta.begin(), dtheta.end(), 0.0);
        net.kernel().backward_sample(net.parameters(), *cache, samples, sample, dz,
                                     net.pruned_mask(), nullptr, false, dtheta);
        for (std::size_t b = 0; b < partition.size(); ++b) {
            const ParamSlice slice = partition[b].slice;
            double* dst = out.blocks[b].values.row(row);
            for (std::size_t j = 0; j < slice.len; ++j) dst[j] = dtheta[slice.begin + j];
        }
    }

    // Cost model: one forward plus one backward (2x a single-sample forward)
    // per Jacobian row.
    const std::uint64_t passes = rows;
    out.flops.modular = fwd.modular + 2 * fwd.modular * passes / s;
    out.flops.always = fwd.always + 2 * fwd.always * passes / s;
    return out;
}

JacobianBlock module_jacobian(const ModularNetwork& net, const Matrix& samples, ModuleId module,
                              Scalarization mode) {
    if (net.is_pruned(module))
        throw LookupError("module " + to_string(module) + " is pruned");
    JacobianSet set = all_module_jacobians(net, samples, mode);
    for (auto& block : set.blocks)
        if (block.module == module) return std::move(block);
    throw LookupError("unknown module " + to_string(module));
}

GradientResult loss_and_gradients(const ModularNetwork& net, const Batch& batch, LossKind kind,
                                  const std::vector<ModuleId>* active) {
    net.kernel().validate_inputs(batch.inputs);
    if (batch.inputs.rows() != batch.targets.rows())
        throw ShapeError("loss_and_gradients: inputs and targets row counts differ");
    if (batch.inputs.rows() == 0)
        throw ShapeError("loss_and_gradients: empty batch");

    std::vector<std::uint8_t> active_mask;
    const std::vector<std::uint8_t>* mask_ptr = nullptr;
    if (active != nullptr) {
        active_mask.assign(net.module_count(), 0);
        for (const ModuleId& id : *active) {
            const std::size_t ord = net.module_ordinal(id);
            if (net.pruned_mask()[ord])
                throw LookupError("module " + to_string(id) + " is pruned");
            active_mask[ord] = 1;
        }
        mask_ptr = &active_mask;
    }

    GradientResult out;
    Matrix outputs;
    auto cache = net.kernel().forward(net.parameters(), batch.inputs, net.pruned_mask(), outputs,
                                      out.forward_flops);
    check_finite_outputs(outputs, "loss_and_gradients");

    detail::LossEval ev = detail::evaluate_loss(outputs, batch.targets, kind);
    if (!std::isfinite(ev.loss))
        throw NumericError("loss_and_gradients: non-finite loss");
    out.loss = ev.loss;
    out.output_grad = ev.dz;

    const bool always_grads = net.always_active_mode() == AlwaysActiveMode::Trainable;
    std::vector<double> dtheta(net.param_count(), 0.0);
    for (std::size_t i = 0; i < batch.inputs.rows(); ++i)
        net.kernel().backward_sample(net.parameters(), *cache, batch.inputs, i,
                                     {ev.dz.row(i), ev.dz.cols()}, net.pruned_mask(), mask_ptr,
                                     always_grads, dtheta);

    for (const auto& info : net.active_partition()) {
        std::vector<double> g(info.slice.len);
        for (std::size_t j = 0; j < info.slice.len; ++j) g[j] = dtheta[info.slice.begin + j];
        out.per_module.emplace(info.id, std::move(g));
    }
    if (always_grads) {
        const ParamSlice tail = net.always_active_slice();
        out.always_active.assign(dtheta.begin() + static_cast<std::ptrdiff_t>(tail.begin),
                                 dtheta.begin() + static_cast<std::ptrdiff_t>(tail.begin + tail.len));
    }
    return out;
}

double evaluate_loss(const ModularNetwork& net, const Batch& batch, LossKind kind) {
    net.kernel().validate_inputs(batch.inputs);
    if (batch.inputs.rows() != batch.targets.rows())
        throw ShapeError("evaluate_loss: inputs and targets row counts differ");
    if (batch.inputs.rows() == 0) throw ShapeError("evaluate_loss: empty batch");

    Matrix outputs;
    FlopsCount flops;
    auto cache =
        net.kernel().forward(net.parameters(), batch.inputs, net.pruned_mask(), outputs, flops);
    (void)cache;
    check_finite_outputs(outputs, "evaluate_loss");
    detail::LossEval ev = detail::evaluate_loss(outputs, batch.targets, kind);
    if (!std::isfinite(ev.loss)) throw NumericError("evaluate_loss: non-finite loss");
    return ev.loss;
}

void apply_selective_step(ModularNetwork& net, const GradientResult& grads,
                          const std::vector<ModuleId>& active, double lr,
                          double weight_decay) {
    if (active.empty()) return;
    std::vector<double>& theta = net.parameters();
    for (const ModuleId& id : active) {
        const std::size_t ord = net.module_ordinal(id);
        if (net.pruned_mask()[ord])
            throw LookupError("module " + to_string(id) + " is pruned");
        auto it = grads.per_module.find(id);
        if (it == grads.per_module.end())
            throw LookupError("no gradient for module " + to_string(id));
        const ParamSlice slice = net.module(id).slice;
        const std::vector<double>& g = it->second;
        if (g.size() != slice.len)
            throw ShapeError("gradient length does not match module " + to_string(id));
        for (std::size_t j = 0; j < slice.len; ++j) {
            double& w = theta[slice.begin + j];
            w -= lr * (g[j] + weight_decay * w);
        }
    }
    if (net.always_active_mode() == AlwaysActiveMode::Trainable && !grads.always_active.empty()) {
        const ParamSlice tail = net.always_active_slice();
        if (grads.always_active.size() != tail.len)
            throw ShapeError("always-active gradient length mismatch");
        for (std::size_t j = 0; j < tail.len; ++j) {
            double& w = theta[tail.begin + j];
            w -= lr * (grads.always_active[j] + weight_decay * w);
        }
    }
}

} // namespace matkit
