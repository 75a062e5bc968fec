#include <cmath>

#include "kernels.hpp"

namespace matkit::detail {

namespace {

// Parameter layout per module (layer l, block b): W (width x d_prev) row
// major, then bias (width) when use_bias. Always-active tail: readout
// (outputs x d_last) row major, then readout bias (outputs) when use_bias.
class BlockMlpKernel final : public NetKernel {
public:
    explicit BlockMlpKernel(const BlockMlpSpec& spec) : spec_(spec) {
        if (spec_.d_in == 0 || spec_.layers == 0 || spec_.blocks_per_layer == 0 ||
            spec_.width == 0 || spec_.outputs == 0)
            throw SpecError("BlockMlp: all dimensions must be positive");
        d_hidden_ = spec_.blocks_per_layer * spec_.width;
        module_params_.resize(spec_.layers);
        for (std::size_t l = 0; l < spec_.layers; ++l) {
            const std::size_t d_prev = l == 0 ? spec_.d_in : d_hidden_;
            module_params_[l] = spec_.width * d_prev + (spec_.use_bias ? spec_.width : 0);
        }
        modular_len_ = 0;
        for (std::size_t l = 0; l < spec_.layers; ++l)
            modular_len_ += module_params_[l] * spec_.blocks_per_layer;
        readout_len_ = spec_.outputs * d_hidden_ + (spec_.use_bias ? spec_.outputs : 0);
    }

    std::size_t param_count() const override { return modular_len_ + readout_len_; }
    std::size_t modular_param_count() const override { return modular_len_; }
    std::size_t input_width() const override { return spec_.d_in; }
    std::size_t output_width() const override { return spec_.outputs; }

    std::vector<ModuleInfo> modules() const override {
        std::vector<ModuleInfo> out;
        std::size_t offset = 0;
        for (std::size_t l = 0; l < spec_.layers; ++l)
            for (std::size_t b = 0; b < spec_.blocks_per_layer; ++b) {
                out.push_back({{l, b}, {offset, module_params_[l]}, "block"});
                offset += module_params_[l];
            }
        return out;
    }

    void init_params(std::span<double> theta, Rng& rng) const override {
        std::size_t pos = 0;
        for (std::size_t l = 0; l < spec_.layers; ++l) {
            const std::size_t d_prev = l == 0 ? spec_.d_in : d_hidden_;
            const double std_w = 1.0 / std::sqrt(static_cast<double>(d_prev));
            for (std::size_t b = 0; b < spec_.blocks_per_layer; ++b) {
                for (std::size_t i = 0; i < spec_.width * d_prev; ++i)
                    theta[pos++] = std_w * rng.normal();
                if (spec_.use_bias)
                    for (std::size_t i = 0; i < spec_.width; ++i) theta[pos++] = 0.0;
            }
        }
        const double std_r = 1.0 / std::sqrt(static_cast<double>(d_hidden_));
        for (std::size_t i = 0; i < spec_.outputs * d_hidden_; ++i)
            theta[pos++] = std_r * rng.normal();
        if (spec_.use_bias)
            for (std::size_t i = 0; i < spec_.outputs; ++i) theta[pos++] = 0.0;
    }

    void validate_inputs(const Matrix& inputs) const override {
        if (inputs.cols() != spec_.d_in)
            throw ShapeError("BlockMlp: input width does not match d_in");
    }

    struct MlpCache : Cache {
        // xs[0] is the input batch, xs[l+1] the concatenated block outputs of
        // layer l. Activation derivatives are recovered from the values.
        std::vector<Matrix> xs;
    };

    std::unique_ptr<Cache> forward(std::span<const double> theta, const Matrix& inputs,
                                   const std::vector<std::uint8_t>& pruned, Matrix& outputs,
                                   FlopsCount& flops) const override {
        const std::size_t n = inputs.rows();
        auto cache = std::make_unique<MlpCache>();
        cache->xs.reserve(spec_.layers + 1);
        cache->xs.push_back(inputs);

        for (std::size_t l = 0; l < spec_.layers; ++l) {
            const Matrix& xin = cache->xs.back();
            const std::size_t d_prev = xin.cols();
            Matrix xout(n, d_hidden_);
            for (std::size_t b = 0; b < spec_.blocks_per_layer; ++b) {
                const std::size_t ord = l * spec_.blocks_per_layer + b;
                if (pruned[ord]) continue;
                const double* w = theta.data() + module_offset(l, b);
                const double* bias = w + spec_.width * d_prev;
                for (std::size_t i = 0; i < n; ++i) {
                    const double* xi = xin.row(i);
                    double* xo = xout.row(i) + b * spec_.width;
                    for (std::size_t u = 0; u < spec_.width; ++u) {
                        const double* wr = w + u * d_prev;
                        double acc = spec_.use_bias ? bias[u] : 0.0;
                        for (std::size_t j = 0; j < d_prev; ++j) acc += wr[j] * xi[j];
                        xo[u] = spec_.activation == Activation::Tanh ? std::tanh(acc) : acc;
                    }
                }
                flops.modular += static_cast<std::uint64_t>(n) * spec_.width * d_prev;
            }
            cache->xs.push_back(std::move(xout));
        }

        const Matrix& xlast = cache->xs.back();
        const double* wr = theta.data() + modular_len_;
        const double* br = wr + spec_.outputs * d_hidden_;
        outputs = Matrix(n, spec_.outputs);
        for (std::size_t i = 0; i < n; ++i) {
            const double* xi = xlast.row(i);
            double* zo = outputs.row(i);
            for (std::size_t o = 0; o < spec_.outputs; ++o) {
                const double* row = wr + o * d_hidden_;
                double acc = spec_.use_bias ? br[o] : 0.0;
                for (std::size_t j = 0; j < d_hidden_; ++j) acc += row[j] * xi[j];
                zo[o] = acc;
            }
        }
        flops.always += static_cast<std::uint64_t>(n) * spec_.outputs * d_hidden_;
        return cache;
    }

    void backward_sample(std::span<const double> theta, const Cache& cache_in,
                         const Matrix& inputs, std::size_t sample,
                         std::span<const double> dz_row,
                         const std::vector<std::uint8_t>& pruned,
                         const std::vector<std::uint8_t>* active, bool always_grads,
                         std::span<double> dtheta) const override {
        (void)inputs;
        const auto& cache = static_cast<const MlpCache&>(cache_in);
        const Matrix& xlast = cache.xs.back();
        const double* xl = xlast.row(sample);
        const double* wr = theta.data() + modular_len_;

        std::vector<double> dx(d_hidden_, 0.0);
        for (std::size_t o = 0; o < spec_.outputs; ++o) {
            const double g = dz_row[o];
            if (g == 0.0) continue;
            const double* row = wr + o * d_hidden_;
            for (std::size_t j = 0; j < d_hidden_; ++j) dx[j] += g * row[j];
        }
        if (always_grads) {
            double* dwr = dtheta.data() + modular_len_;
            double* dbr = dwr + spec_.outputs * d_hidden_;
            for (std::size_t o = 0; o < spec_.outputs; ++o) {
                const double g = dz_row[o];
                if (g == 0.0) continue;
                double* row = dwr + o * d_hidden_;
                for (std::size_t j = 0; j < d_hidden_; ++j) row[j] += g * xl[j];
                if (spec_.use_bias) dbr[o] += g;
            }
        }

        for (std::size_t l = spec_.layers; l-- > 0;) {
            const Matrix& xin = cache.xs[l];
            const Matrix& xout = cache.xs[l + 1];
            const std::size_t d_prev = xin.cols();
            const double* xi = xin.row(sample);
            const double* xo = xout.row(sample);
            std::vector<double> dx_prev(d_prev, 0.0);
            for (std::size_t b = 0; b < spec_.blocks_per_layer; ++b) {
                const std::size_t ord = l * spec_.blocks_per_layer + b;
                if (pruned[ord]) continue;
                const std::size_t off = module_offset(l, b);
                const double* w = theta.data() + off;
                const bool want_w = active == nullptr || (*active)[ord];
                double* dw = dtheta.data() + off;
                double* db = dw + spec_.width * d_prev;
                for (std::size_t u = 0; u < spec_.width; ++u) {
                    const double h = xo[b * spec_.width + u];
                    double dpre = dx[b * spec_.width + u];
                    if (spec_.activation == Activation::Tanh) dpre *= 1.0 - h * h;
                    if (dpre == 0.0) continue;
                    const double* wrow = w + u * d_prev;
                    for (std::size_t j = 0; j < d_prev; ++j) dx_prev[j] += dpre * wrow[j];
                    if (want_w) {
                        double* dwrow = dw + u * d_prev;
                        for (std::size_t j = 0; j < d_prev; ++j) dwrow[j] += dpre * xi[j];
                        if (spec_.use_bias) db[u] += dpre;
                    }
                }
            }
            if (l == 0) break;
            dx = std::move(dx_prev);
        }
    }

private:
    std::size_t module_offset(std::size_t l, std::size_t b) const {
        std::size_t off = 0;
        for (std::size_t k = 0; k < l; ++k) off += module_params_[k] * spec_.blocks_per_layer;
        return off + b * module_params_[l];
    }

    BlockMlpSpec spec_;
    std::size_t d_hidden_ = 0;
    std::vector<std::size_t> module_params_;
    std::size_t modular_len_ = 0;
    std::size_t readout_len_ = 0;
};

} // namespace

std::shared_ptr<const NetKernel> make_block_mlp_kernel(const BlockMlpSpec& spec) {
    return std::make_shared<BlockMlpKernel>(spec);
}

} // namespace matkit::detail
