#include <cmath>

#include "kernels.hpp"

namespace matkit::detail {

namespace {

// 1D conv stack, kernel 3, zero padding, tanh, global mean pool, linear
// readout. A module is one filter group: gw = channels/groups consecutive
// output channels of one layer. Parameter layout per module: W indexed
// [c_local][c_in][tap] row major, then bias (gw) when use_bias. Tail:
// readout (outputs x channels), then bias (outputs).
class TinyConvKernel final : public NetKernel {
public:
    explicit TinyConvKernel(const TinyConvSpec& spec) : spec_(spec) {
        if (spec_.in_len == 0 || spec_.channels == 0 || spec_.groups == 0 ||
            spec_.layers == 0 || spec_.outputs == 0)
            throw SpecError("TinyConv: all dimensions must be positive");
        if (spec_.channels % spec_.groups != 0)
            throw SpecError("TinyConv: channels must divide evenly into groups");
        gw_ = spec_.channels / spec_.groups;
        module_params_.resize(spec_.layers);
        for (std::size_t l = 0; l < spec_.layers; ++l) {
            const std::size_t c_in = l == 0 ? 1 : spec_.channels;
            module_params_[l] = gw_ * c_in * kTaps + (spec_.use_bias ? gw_ : 0);
        }
        modular_len_ = 0;
        for (std::size_t l = 0; l < spec_.layers; ++l)
            modular_len_ += module_params_[l] * spec_.groups;
        readout_len_ = spec_.outputs * spec_.channels + (spec_.use_bias ? spec_.outputs : 0);
    }

    std::size_t param_count() const override { return modular_len_ + readout_len_; }
    std::size_t modular_param_count() const override { return modular_len_; }
    std::size_t input_width() const override { return spec_.in_len; }
    std::size_t output_width() const override { return spec_.outputs; }

    std::vector<ModuleInfo> modules() const override {
        std::vector<ModuleInfo> out;
        std::size_t offset = 0;
        for (std::size_t l = 0; l < spec_.layers; ++l)
            for (std::size_t g = 0; g < spec_.groups; ++g) {
                out.push_back({{l, g}, {offset, module_params_[l]}, "filter_group"});
                offset += module_params_[l];
            }
        return out;
    }

    void init_params(std::span<double> theta, Rng& rng) const override {
        std::size_t pos = 0;
        for (std::size_t l = 0; l < spec_.layers; ++l) {
            const std::size_t c_in = l == 0 ? 1 : spec_.channels;
            const double std_w = 1.0 / std::sqrt(static_cast<double>(c_in * kTaps));
            for (std::size_t g = 0; g < spec_.groups; ++g) {
                for (std::size_t i = 0; i < gw_ * c_in * kTaps; ++i)
                    theta[pos++] = std_w * rng.normal();
                if (spec_.use_bias)
                    for (std::size_t i = 0; i < gw_; ++i) theta[pos++] = 0.0;
            }
        }
        const double std_r = 1.0 / std::sqrt(static_cast<double>(spec_.channels));
        for (std::size_t i = 0; i < spec_.outputs * spec_.channels; ++i)
            theta[pos++] = std_r * rng.normal();
        if (spec_.use_bias)
            for (std::size_t i = 0; i < spec_.outputs; ++i) theta[pos++] = 0.0;
    }

    void validate_inputs(const Matrix& inputs) const override {
        if (inputs.cols() != spec_.in_len)
            throw ShapeError("TinyConv: input width does not match in_len");
    }

    struct ConvCache : Cache {
        // acts[l] is the tanh output of layer l, stored n x (T * channels)
        // with channel-major columns (t * channels + c). acts[0] is absent;
        // the raw input batch serves as layer 0 input.
        std::vector<Matrix> acts;
    };

    std::unique_ptr<Cache> forward(std::span<const double> theta, const Matrix& inputs,
                                   const std::vector<std::uint8_t>& pruned, Matrix& outputs,
                                   FlopsCount& flops) const override {
        const std::size_t n = inputs.rows();
        const std::size_t T = spec_.in_len;
        auto cache = std::make_unique<ConvCache>();
        cache->acts.reserve(spec_.layers);

        for (std::size_t l = 0; l < spec_.layers; ++l) {
            const std::size_t c_in = l == 0 ? 1 : spec_.channels;
            const Matrix& prev = l == 0 ? inputs : cache->acts.back();
            Matrix act(n, T * spec_.channels);
            for (std::size_t g = 0; g < spec_.groups; ++g) {
                const std::size_t ord = l * spec_.groups + g;
                if (pruned[ord]) continue;
                const double* w = theta.data() + module_offset(l, g);
                const double* bias = w + gw_ * c_in * kTaps;
                for (std::size_t i = 0; i < n; ++i) {
                    const double* pin = prev.row(i);
                    double* pout = act.row(i);
                    for (std::size_t cl = 0; cl < gw_; ++cl) {
                        const std::size_t c = g * gw_ + cl;
                        const double* wc = w + cl * c_in * kTaps;
                        for (std::size_t t = 0; t < T; ++t) {
                            double acc = spec_.use_bias ? bias[cl] : 0.0;
                            for (std::size_t ci = 0; ci < c_in; ++ci) {
                                const double* wt = wc + ci * kTaps;
                                for (std::size_t tap = 0; tap < kTaps; ++tap) {
                                    const std::ptrdiff_t src =
                                        static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(tap) - 1;
                                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
                                    acc += wt[tap] * pin[static_cast<std::size_t>(src) * c_in + ci];
                                }
                            }
                            pout[t * spec_.channels + c] = std::tanh(acc);
                        }
                    }
                }
                flops.modular += static_cast<std::uint64_t>(n) * T * gw_ * c_in * kTaps;
            }
            cache->acts.push_back(std::move(act));
        }

        const Matrix& last = cache->acts.back();
        const double* wr = theta.data() + modular_len_;
        const double* br = wr + spec_.outputs * spec_.channels;
        outputs = Matrix(n, spec_.outputs);
        const double inv_t = 1.0 / static_cast<double>(T);
        for (std::size_t i = 0; i < n; ++i) {
            const double* pin = last.row(i);
            std::vector<double> pooled(spec_.channels, 0.0);
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t c = 0; c < spec_.channels; ++c)
                    pooled[c] += pin[t * spec_.channels + c];
            for (double& v : pooled) v *= inv_t;
            double* zo = outputs.row(i);
            for (std::size_t o = 0; o < spec_.outputs; ++o) {
                const double* row = wr + o * spec_.channels;
                double acc = spec_.use_bias ? br[o] : 0.0;
                for (std::size_t c = 0; c < spec_.channels; ++c) acc += row[c] * pooled[c];
                zo[o] = acc;
            }
        }
        flops.always += static_cast<std::uint64_t>(n) * spec_.outputs * spec_.channels;
        return cache;
    }

    void backward_sample(std::span<const double> theta, const Cache& cache_in,
                         const Matrix& inputs, std::size_t sample,
                         std::span<const double> dz_row,
                         const std::vector<std::uint8_t>& pruned,
                         const std::vector<std::uint8_t>* active, bool always_grads,
                         std::span<double> dtheta) const override {
        const auto& cache = static_cast<const ConvCache&>(cache_in);
        const std::size_t T = spec_.in_len;
        const std::size_t C = spec_.channels;
        const double* last = cache.acts.back().row(sample);
        const double* wr = theta.data() + modular_len_;
        const double inv_t = 1.0 / static_cast<double>(T);

        std::vector<double> dpooled(C, 0.0);
        for (std::size_t o = 0; o < spec_.outputs; ++o) {
            const double g = dz_row[o];
            if (g == 0.0) continue;
            const double* row = wr + o * C;
            for (std::size_t c = 0; c < C; ++c) dpooled[c] += g * row[c];
        }
        if (always_grads) {
            std::vector<double> pooled(C, 0.0);
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t c = 0; c < C; ++c) pooled[c] += last[t * C + c];
            for (double& v : pooled) v *= inv_t;
            double* dwr = dtheta.data() + modular_len_;
            double* dbr = dwr + spec_.outputs * C;
            for (std::size_t o = 0; o < spec_.outputs; ++o) {
                const double g = dz_row[o];
                if (g == 0.0) continue;
                double* row = dwr + o * C;
                for (std::size_t c = 0; c < C; ++c) row[c] += g * pooled[c];
                if (spec_.use_bias) dbr[o] += g;
            }
        }

        // Gradient w.r.t. the tanh outputs of the last layer.
        std::vector<double> dact(T * C);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = 0; c < C; ++c) dact[t * C + c] = dpooled[c] * inv_t;

        for (std::size_t l = spec_.layers; l-- > 0;) {
            const std::size_t c_in = l == 0 ? 1 : C;
            const double* act = cache.acts[l].row(sample);
            const double* pin = l == 0 ? inputs.row(sample) : cache.acts[l - 1].row(sample);
            std::vector<double> dprev(T * c_in, 0.0);
            for (std::size_t g = 0; g < spec_.groups; ++g) {
                const std::size_t ord = l * spec_.groups + g;
                if (pruned[ord]) continue;
                const std::size_t off = module_offset(l, g);
                const double* w = theta.data() + off;
                const bool want_w = active == nullptr || (*active)[ord];
                double* dw = dtheta.data() + off;
                double* db = dw + gw_ * c_in * kTaps;
                for (std::size_t cl = 0; cl < gw_; ++cl) {
                    const std::size_t c = g * gw_ + cl;
                    const double* wc = w + cl * c_in * kTaps;
                    double* dwc = dw + cl * c_in * kTaps;
                    for (std::size_t t = 0; t < T; ++t) {
                        const double h = act[t * C + c];
                        const double dpre = dact[t * C + c] * (1.0 - h * h);
                        if (dpre == 0.0) continue;
                        for (std::size_t ci = 0; ci < c_in; ++ci) {
                            const double* wt = wc + ci * kTaps;
                            double* dwt = dwc + ci * kTaps;
                            for (std::size_t tap = 0; tap < kTaps; ++tap) {
                                const std::ptrdiff_t src =
                                    static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(tap) - 1;
                                if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
                                const std::size_t si = static_cast<std::size_t>(src) * c_in + ci;
                                if (want_w) dwt[tap] += dpre * pin[si];
                                dprev[si] += dpre * wt[tap];
                            }
                        }
                        if (want_w && spec_.use_bias) db[cl] += dpre;
                    }
                }
            }
            if (l == 0) break;
            dact = std::move(dprev);
        }
    }

private:
    static constexpr std::size_t kTaps = 3;

    std::size_t module_offset(std::size_t l, std::size_t g) const {
        std::size_t off = 0;
        for (std::size_t k = 0; k < l; ++k) off += module_params_[k] * spec_.groups;
        return off + g * module_params_[l];
    }

    TinyConvSpec spec_;
    std::size_t gw_ = 0;
    std::vector<std::size_t> module_params_;
    std::size_t modular_len_ = 0;
    std::size_t readout_len_ = 0;
};

} // namespace

std::shared_ptr<const NetKernel> make_tiny_conv_kernel(const TinyConvSpec& spec) {
    return std::make_shared<TinyConvKernel>(spec);
}

} // namespace matkit::detail
