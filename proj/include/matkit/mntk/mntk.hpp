#pragma once

#include <limits>
#include <map>
#include <string>
#include <vector>

#include "matkit/modelzoo/network.hpp"
#include "matkit/numerics/spectral.hpp"

namespace matkit {

// Empirical tangent kernel of one module: the Gram matrix of its Jacobian
// rows, with the spectral quantities the training policy consumes.
//
// lambda_min is the smallest eigenvalue above the relative rank clamp
// (1e-10 * lambda_max); cond_number is lambda_max / lambda_min over that same
// set and +inf when nothing clears the clamp. lambda_min_raw is the smallest
// post-clamp eigenvalue including zeros. eff_rank uses the 0.0 sentinel for
// an all-zero Gram, where the entropy definition has no value.
struct Mntk {
    ModuleId module;
    Matrix gram;
    Spectrum spectrum;
    double trace = 0.0;
    double lambda_max = 0.0;
    double lambda_min = 0.0;
    double lambda_min_raw = 0.0;
    double lambda_ratio_12 = std::numeric_limits<double>::infinity();
    double eff_rank = 0.0;
    double cond_number = std::numeric_limits<double>::infinity();
    bool rank_deficient = false;
};

// Gram + eigendecomposition of one Jacobian block. Throws NumericError when
// the Gram has an eigenvalue below -1e-10 * lambda_max, which signals a
// broken Gram rather than rounding noise.
Mntk build_mntk(const JacobianBlock& block);

// Sum over modules of J_l J_l^T. Equals the Gram of the horizontally stacked
// Jacobian, i.e. the network kernel restricted to modular parameters. Blocks
// must agree on row count and scalarization.
Matrix integral_ntk(const std::vector<JacobianBlock>& blocks);

enum class ReductionMode { Exact, PrincipalOnly };

// First-order estimate of the loss decrease per unit learning rate when all
// listed modules step along their gradient: sum_l g^T Theta_l g (Exact), or
// its top-eigenpair truncation sum_l lambda_1 (u_1 . g)^2 (PrincipalOnly,
// never larger). g indexes the same scalarized rows as the grams.
double predicted_loss_reduction(const std::vector<Mntk>& kernels, std::span<const double> g,
                                ReductionMode mode);

// Per-module scalar summary carried by snapshots.
struct MntkSummary {
    ModuleId module;
    std::string family;
    double lambda_max = 0.0;
    double lambda_min = 0.0;
    double lambda_min_raw = 0.0;
    double trace = 0.0;
    double eff_rank = 0.0;
    double cond_number = std::numeric_limits<double>::infinity();
    double lambda_ratio_12 = std::numeric_limits<double>::infinity();
    bool rank_deficient = false;
};

// One measurement episode: spectral summaries for every unpruned module plus
// the pooled eigenvalue extrema. flops is the modeled measurement cost
// (Jacobian passes + S^2 * m_l Gram builds + 20 * S^3 per eigensolve).
struct SpectrumSnapshot {
    std::size_t episode = 0;
    std::map<ModuleId, MntkSummary> per_module;
    double global_lambda_min = 0.0;
    double global_lambda_max = 0.0;
    FlopsCount flops;
};

SpectrumSnapshot snapshot(const ModularNetwork& net, const Matrix& sample_inputs,
                          Scalarization mode = Scalarization::SumOfLogits);

} // namespace matkit
