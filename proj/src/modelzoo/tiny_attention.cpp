#include <cmath>

#include "kernels.hpp"

namespace matkit::detail {

namespace {

// Residual multi-head self-attention stack over token ids, no normalization
// layers. A module is one attention head. Parameter layout per module
// (layer l, head h): Wq (D x dh), Wk (D x dh), Wv (D x dh) row major, then
// Wo (dh x D) row major. Always-active tail: embedding ((vocab+1) x D, last
// row is the mask token), learned positions (T x D), readout (D x vocab).
// Output row is the per-position logits flattened as t * vocab + v.
class TinyAttentionKernel final : public NetKernel {
public:
    explicit TinyAttentionKernel(const TinyAttentionSpec& spec) : spec_(spec) {
        if (spec_.vocab == 0 || spec_.vocab > 32)
            throw SpecError("TinyAttention: vocab must be in [1, 32]");
        if (spec_.seq_len == 0 || spec_.seq_len > 16)
            throw SpecError("TinyAttention: seq_len must be in [1, 16]");
        if (spec_.heads == 0 || spec_.layers == 0 || spec_.d_model == 0)
            throw SpecError("TinyAttention: all dimensions must be positive");
        if (spec_.d_model % spec_.heads != 0)
            throw SpecError("TinyAttention: d_model must divide evenly into heads");
        dh_ = spec_.d_model / spec_.heads;
        module_len_ = 4 * spec_.d_model * dh_;
        modular_len_ = module_len_ * spec_.heads * spec_.layers;
        embed_len_ = (spec_.vocab + 1) * spec_.d_model;
        pos_len_ = spec_.seq_len * spec_.d_model;
        readout_len_ = spec_.d_model * spec_.vocab;
    }

    std::size_t param_count() const override {
        return modular_len_ + embed_len_ + pos_len_ + readout_len_;
    }
    std::size_t modular_param_count() const override { return modular_len_; }
    std::size_t input_width() const override { return spec_.seq_len; }
    std::size_t output_width() const override { return spec_.seq_len * spec_.vocab; }

    std::vector<ModuleInfo> modules() const override {
        std::vector<ModuleInfo> out;
        std::size_t offset = 0;
        for (std::size_t l = 0; l < spec_.layers; ++l)
            for (std::size_t h = 0; h < spec_.heads; ++h) {
                out.push_back({{l, h}, {offset, module_len_}, "head"});
                offset += module_len_;
            }
        return out;
    }

    void init_params(std::span<double> theta, Rng& rng) const override {
        const double std_attn = 1.0 / std::sqrt(static_cast<double>(spec_.d_model));
        std::size_t pos = 0;
        for (std::size_t i = 0; i < modular_len_; ++i) theta[pos++] = std_attn * rng.normal();
        for (std::size_t i = 0; i < embed_len_; ++i) theta[pos++] = 0.5 * rng.normal();
        for (std::size_t i = 0; i < pos_len_; ++i) theta[pos++] = 0.1 * rng.normal();
        for (std::size_t i = 0; i < readout_len_; ++i) theta[pos++] = std_attn * rng.normal();
    }

    void validate_inputs(const Matrix& inputs) const override {
        if (inputs.cols() != spec_.seq_len)
            throw ShapeError("TinyAttention: input width does not match seq_len");
        for (std::size_t i = 0; i < inputs.rows(); ++i)
            for (std::size_t t = 0; t < inputs.cols(); ++t) {
                const double v = inputs.at(i, t);
                if (v != std::floor(v) || v < 0.0 || v > static_cast<double>(spec_.vocab))
                    throw ShapeError("TinyAttention: inputs must be token ids in [0, vocab]");
            }
    }

    struct AttnCache : Cache {
        std::vector<Matrix> xin;              // layers+1 entries, n x (T*D)
        std::vector<std::vector<Matrix>> q;   // [layer][head] n x (T*dh)
        std::vector<std::vector<Matrix>> k;
        std::vector<std::vector<Matrix>> v;
        std::vector<std::vector<Matrix>> o;
        std::vector<std::vector<Matrix>> attn; // [layer][head] n x (T*T)
    };

    std::unique_ptr<Cache> forward(std::span<const double> theta, const Matrix& inputs,
                                   const std::vector<std::uint8_t>& pruned, Matrix& outputs,
                                   FlopsCount& flops) const override {
        const std::size_t n = inputs.rows();
        const std::size_t T = spec_.seq_len;
        const std::size_t D = spec_.d_model;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh_));
        const double* embed = theta.data() + modular_len_;
        const double* posw = embed + embed_len_;
        const double* readout = posw + pos_len_;

        auto cache = std::make_unique<AttnCache>();
        cache->xin.resize(spec_.layers + 1, Matrix(n, T * D));
        auto grid = [&](std::vector<std::vector<Matrix>>& m, std::size_t cols) {
            m.assign(spec_.layers, std::vector<Matrix>(spec_.heads, Matrix(n, cols)));
        };
        grid(cache->q, T * dh_);
        grid(cache->k, T * dh_);
        grid(cache->v, T * dh_);
        grid(cache->o, T * dh_);
        grid(cache->attn, T * T);

        for (std::size_t i = 0; i < n; ++i) {
            double* x0 = cache->xin[0].row(i);
            for (std::size_t t = 0; t < T; ++t) {
                const std::size_t id = static_cast<std::size_t>(inputs.at(i, t));
                for (std::size_t d = 0; d < D; ++d)
                    x0[t * D + d] = embed[id * D + d] + posw[t * D + d];
            }
        }

        for (std::size_t l = 0; l < spec_.layers; ++l) {
            cache->xin[l + 1] = cache->xin[l];
            for (std::size_t h = 0; h < spec_.heads; ++h) {
                const std::size_t ord = l * spec_.heads + h;
                if (pruned[ord]) continue;
                const double* wq = theta.data() + (ord * module_len_);
                const double* wk = wq + D * dh_;
                const double* wv = wk + D * dh_;
                const double* wo = wv + D * dh_;
                for (std::size_t i = 0; i < n; ++i) {
                    const double* x = cache->xin[l].row(i);
                    double* q = cache->q[l][h].row(i);
                    double* k = cache->k[l][h].row(i);
                    double* v = cache->v[l][h].row(i);
                    double* o = cache->o[l][h].row(i);
                    double* a = cache->attn[l][h].row(i);
                    double* xout = cache->xin[l + 1].row(i);

                    for (std::size_t t = 0; t < T; ++t)
                        for (std::size_t j = 0; j < dh_; ++j) {
                            double accq = 0.0, acck = 0.0, accv = 0.0;
                            for (std::size_t d = 0; d < D; ++d) {
                                const double xv = x[t * D + d];
                                accq += xv * wq[d * dh_ + j];
                                acck += xv * wk[d * dh_ + j];
                                accv += xv * wv[d * dh_ + j];
                            }
                            q[t * dh_ + j] = accq;
                            k[t * dh_ + j] = acck;
                            v[t * dh_ + j] = accv;
                        }

                    for (std::size_t t = 0; t < T; ++t) {
                        double mx = -1e300;
                        for (std::size_t u = 0; u < T; ++u) {
                            double s = 0.0;
                            for (std::size_t j = 0; j < dh_; ++j)
                                s += q[t * dh_ + j] * k[u * dh_ + j];
                            s *= scale;
                            a[t * T + u] = s;
                            mx = std::max(mx, s);
                        }
                        double denom = 0.0;
                        for (std::size_t u = 0; u < T; ++u) {
                            const double e = std::exp(a[t * T + u] - mx);
                            a[t * T + u] = e;
                            denom += e;
                        }
                        for (std::size_t u = 0; u < T; ++u) a[t * T + u] /= denom;
                    }

                    for (std::size_t t = 0; t < T; ++t)
                        for (std::size_t j = 0; j < dh_; ++j) {
                            double acc = 0.0;
                            for (std::size_t u = 0; u < T; ++u)
                                acc += a[t * T + u] * v[u * dh_ + j];
                            o[t * dh_ + j] = acc;
                        }

                    for (std::size_t t = 0; t < T; ++t)
                        for (std::size_t d = 0; d < D; ++d) {
                            double acc = 0.0;
                            for (std::size_t j = 0; j < dh_; ++j)
                                acc += o[t * dh_ + j] * wo[j * D + d];
                            xout[t * D + d] += acc;
                        }
                }
                flops.modular += static_cast<std::uint64_t>(n) *
                                 (4 * T * D * dh_ + 2 * T * T * dh_);
            }
        }

        outputs = Matrix(n, T * spec_.vocab);
        for (std::size_t i = 0; i < n; ++i) {
            const double* x = cache->xin[spec_.layers].row(i);
            double* z = outputs.row(i);
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t vtok = 0; vtok < spec_.vocab; ++vtok) {
                    double acc = 0.0;
                    for (std::size_t d = 0; d < D; ++d)
                        acc += x[t * D + d] * readout[d * spec_.vocab + vtok];
                    z[t * spec_.vocab + vtok] = acc;
                }
        }
        flops.always += static_cast<std::uint64_t>(n) * T * D * spec_.vocab;
        return cache;
    }

    void backward_sample(std::span<const double> theta, const Cache& cache_in,
                         const Matrix& inputs, std::size_t sample,
                         std::span<const double> dz_row,
                         const std::vector<std::uint8_t>& pruned,
                         const std::vector<std::uint8_t>* active, bool always_grads,
                         std::span<double> dtheta) const override {
        const auto& cache = static_cast<const AttnCache&>(cache_in);
        const std::size_t T = spec_.seq_len;
        const std::size_t D = spec_.d_model;
        const std::size_t V = spec_.vocab;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh_));
        const double* readout = theta.data() + modular_len_ + embed_len_ + pos_len_;

        std::vector<double> dx(T * D, 0.0);
        const double* xfin = cache.xin[spec_.layers].row(sample);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t vtok = 0; vtok < V; ++vtok) {
                const double g = dz_row[t * V + vtok];
                if (g == 0.0) continue;
                for (std::size_t d = 0; d < D; ++d)
                    dx[t * D + d] += g * readout[d * V + vtok];
            }
        if (always_grads) {
            double* dreadout = dtheta.data() + modular_len_ + embed_len_ + pos_len_;
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t vtok = 0; vtok < V; ++vtok) {
                    const double g = dz_row[t * V + vtok];
                    if (g == 0.0) continue;
                    for (std::size_t d = 0; d < D; ++d)
                        dreadout[d * V + vtok] += g * xfin[t * D + d];
                }
        }

        std::vector<double> dq(T * dh_), dk(T * dh_), dv(T * dh_), do_(T * dh_), da(T * T);
        for (std::size_t l = spec_.layers; l-- > 0;) {
            // Residual: dx flows through unchanged; head terms add on top.
            const double* x = cache.xin[l].row(sample);
            std::vector<double> dx_in(dx);
            for (std::size_t h = 0; h < spec_.heads; ++h) {
                const std::size_t ord = l * spec_.heads + h;
                if (pruned[ord]) continue;
                const std::size_t off = ord * module_len_;
                const double* wq = theta.data() + off;
                const double* wk = wq + D * dh_;
                const double* wv = wk + D * dh_;
                const double* wo = wv + D * dh_;
                const bool want_w = active == nullptr || (*active)[ord];
                double* dwq = dtheta.data() + off;
                double* dwk = dwq + D * dh_;
                double* dwv = dwk + D * dh_;
                double* dwo = dwv + D * dh_;

                const double* q = cache.q[l][h].row(sample);
                const double* k = cache.k[l][h].row(sample);
                const double* v = cache.v[l][h].row(sample);
                const double* o = cache.o[l][h].row(sample);
                const double* a = cache.attn[l][h].row(sample);

                // dO = dX_out Wo^T ; dWo = O^T dX_out
                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t j = 0; j < dh_; ++j) {
                        double acc = 0.0;
                        for (std::size_t d = 0; d < D; ++d)
                            acc += dx[t * D + d] * wo[j * D + d];
                        do_[t * dh_ + j] = acc;
                    }
                if (want_w)
                    for (std::size_t j = 0; j < dh_; ++j)
                        for (std::size_t d = 0; d < D; ++d) {
                            double acc = 0.0;
                            for (std::size_t t = 0; t < T; ++t)
                                acc += o[t * dh_ + j] * dx[t * D + d];
                            dwo[j * D + d] += acc;
                        }

                // dA = dO V^T ; dV = A^T dO
                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t u = 0; u < T; ++u) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < dh_; ++j)
                            acc += do_[t * dh_ + j] * v[u * dh_ + j];
                        da[t * T + u] = acc;
                    }
                for (std::size_t u = 0; u < T; ++u)
                    for (std::size_t j = 0; j < dh_; ++j) {
                        double acc = 0.0;
                        for (std::size_t t = 0; t < T; ++t)
                            acc += a[t * T + u] * do_[t * dh_ + j];
                        dv[u * dh_ + j] = acc;
                    }

                // Softmax rows: dS_tu = A_tu (dA_tu - sum_w dA_tw A_tw)
                for (std::size_t t = 0; t < T; ++t) {
                    double inner = 0.0;
                    for (std::size_t u = 0; u < T; ++u)
                        inner += da[t * T + u] * a[t * T + u];
                    for (std::size_t u = 0; u < T; ++u)
                        da[t * T + u] = a[t * T + u] * (da[t * T + u] - inner);
                }

                // dQ = dS K * scale ; dK = dS^T Q * scale
                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t j = 0; j < dh_; ++j) {
                        double acc = 0.0;
                        for (std::size_t u = 0; u < T; ++u)
                            acc += da[t * T + u] * k[u * dh_ + j];
                        dq[t * dh_ + j] = acc * scale;
                    }
                for (std::size_t u = 0; u < T; ++u)
                    for (std::size_t j = 0; j < dh_; ++j) {
                        double acc = 0.0;
                        for (std::size_t t = 0; t < T; ++t)
                            acc += da[t * T + u] * q[t * dh_ + j];
                        dk[u * dh_ + j] = acc * scale;
                    }

                if (want_w)
                    for (std::size_t d = 0; d < D; ++d)
                        for (std::size_t j = 0; j < dh_; ++j) {
                            double aq = 0.0, ak = 0.0, av = 0.0;
                            for (std::size_t t = 0; t < T; ++t) {
                                const double xv = x[t * D + d];
                                aq += xv * dq[t * dh_ + j];
                                ak += xv * dk[t * dh_ + j];
                                av += xv * dv[t * dh_ + j];
                            }
                            dwq[d * dh_ + j] += aq;
                            dwk[d * dh_ + j] += ak;
                            dwv[d * dh_ + j] += av;
                        }

                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t d = 0; d < D; ++d) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < dh_; ++j)
                            acc += dq[t * dh_ + j] * wq[d * dh_ + j] +
                                   dk[t * dh_ + j] * wk[d * dh_ + j] +
                                   dv[t * dh_ + j] * wv[d * dh_ + j];
                        dx_in[t * D + d] += acc;
                    }
            }
            dx = std::move(dx_in);
        }

        if (always_grads) {
            double* dembed = dtheta.data() + modular_len_;
            double* dpos = dembed + embed_len_;
            for (std::size_t t = 0; t < T; ++t) {
                const std::size_t id = static_cast<std::size_t>(inputs.at(sample, t));
                for (std::size_t d = 0; d < D; ++d) {
                    dembed[id * D + d] += dx[t * D + d];
                    dpos[t * D + d] += dx[t * D + d];
                }
            }
        }
    }

private:
    TinyAttentionSpec spec_;
    std::size_t dh_ = 0;
    std::size_t module_len_ = 0;
    std::size_t modular_len_ = 0;
    std::size_t embed_len_ = 0;
    std::size_t pos_len_ = 0;
    std::size_t readout_len_ = 0;
};

} // namespace

std::shared_ptr<const NetKernel> make_tiny_attention_kernel(const TinyAttentionSpec& spec) {
    return std::make_shared<TinyAttentionKernel>(spec);
}

} // namespace matkit::detail
