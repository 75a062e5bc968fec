#include "matkit/mntk/mntk.hpp"

#include <cmath>

namespace matkit {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

Mntk build_mntk(const JacobianBlock& block) {
    if (block.values.rows() == 0)
        throw ShapeError("build_mntk: Jacobian block has no rows");

    Mntk out;
    out.module = block.module;
    out.gram = matmul_transpose(block.values);
    out.spectrum = eig_sym(out.gram);

    const double top = out.spectrum.eigenvalues.front();
    const double bottom = out.spectrum.eigenvalues.back();
    if (top < 0.0 || bottom < -kPsdClampTol * std::max(top, 0.0))
        throw NumericError("build_mntk: Gram matrix is not PSD within tolerance");

    for (std::size_t i = 0; i < out.gram.rows(); ++i) out.trace += out.gram.at(i, i);
    out.lambda_max = top;
    out.lambda_min_raw = std::max(bottom, 0.0);

    const double clamp = kPsdClampTol * out.lambda_max;
    double min_above = 0.0;
    bool any_above = false;
    bool any_clamped = false;
    double total = 0.0;
    for (double ev : out.spectrum.eigenvalues) {
        total += ev;
        if (ev > clamp) {
            min_above = ev; // descending order: last one above wins
            any_above = true;
        } else {
            any_clamped = true;
        }
    }
    out.rank_deficient = any_clamped;
    out.lambda_min = any_above ? min_above : 0.0;
    out.cond_number = any_above ? out.lambda_max / min_above : kInf;
    out.eff_rank = total > 0.0 ? effective_rank(out.spectrum.eigenvalues) : 0.0;

    if (out.spectrum.eigenvalues.size() >= 2 && out.spectrum.eigenvalues[1] > 0.0)
        out.lambda_ratio_12 = out.lambda_max / out.spectrum.eigenvalues[1];
    return out;
}

Matrix integral_ntk(const std::vector<JacobianBlock>& blocks) {
    if (blocks.empty())
        throw ShapeError("integral_ntk: no Jacobian blocks");
    const std::size_t rows = blocks.front().values.rows();
    const Scalarization mode = blocks.front().scalarization;
    Matrix total(rows, rows);
    for (const auto& block : blocks) {
        if (block.values.rows() != rows)
            throw ShapeError("integral_ntk: blocks disagree on sample rows");
        if (block.scalarization != mode)
            throw ShapeError("integral_ntk: blocks disagree on scalarization");
        add_in_place(total, matmul_transpose(block.values));
    }
    return total;
}

double predicted_loss_reduction(const std::vector<Mntk>& kernels, std::span<const double> g,
                                ReductionMode mode) {
    if (kernels.empty())
        throw ShapeError("predicted_loss_reduction: no kernels");
    double total = 0.0;
    for (const auto& k : kernels) {
        if (k.gram.rows() != g.size())
            throw ShapeError("predicted_loss_reduction: gradient length does not match gram");
        if (mode == ReductionMode::Exact) {
            const std::vector<double> tg = multiply(k.gram, g);
            total += dot(g, tg);
        } else {
            double proj = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i)
                proj += k.spectrum.eigenvectors.at(i, 0) * g[i];
            total += k.spectrum.eigenvalues[0] * proj * proj;
        }
    }
    return total;
}

SpectrumSnapshot snapshot(const ModularNetwork& net, const Matrix& sample_inputs,
                          Scalarization mode) {
    if (sample_inputs.rows() < 2)
        throw SpecError("snapshot: needs at least 2 probe samples");
    if (net.active_partition().empty())
        throw StateError("snapshot: every module is pruned");

    JacobianSet set = all_module_jacobians(net, sample_inputs, mode);

    SpectrumSnapshot snap;
    snap.flops = set.flops;
    const std::uint64_t rows = set.blocks.front().values.rows();

    bool first = true;
    for (const auto& block : set.blocks) {
        Mntk kernel = build_mntk(block);
        // Modeled measurement cost per module: S^2 * m_l for the Gram plus a
        // fixed 20 * S^3 eigensolve estimate.
        snap.flops.modular += rows * rows * static_cast<std::uint64_t>(block.values.cols());
        snap.flops.modular += 20 * rows * rows * rows;

        MntkSummary row;
        row.module = kernel.module;
        row.family = net.module(kernel.module).family;
        row.lambda_max = kernel.lambda_max;
        row.lambda_min = kernel.lambda_min;
        row.lambda_min_raw = kernel.lambda_min_raw;
        row.trace = kernel.trace;
        row.eff_rank = kernel.eff_rank;
        row.cond_number = kernel.cond_number;
        row.lambda_ratio_12 = kernel.lambda_ratio_12;
        row.rank_deficient = kernel.rank_deficient;
        snap.per_module.emplace(row.module, row);

        if (first || kernel.lambda_max > snap.global_lambda_max)
            snap.global_lambda_max = kernel.lambda_max;
        if (first || kernel.lambda_min_raw < snap.global_lambda_min)
            snap.global_lambda_min = kernel.lambda_min_raw;
        first = false;
    }
    return snap;
}

} // namespace matkit
