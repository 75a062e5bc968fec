#include "losses.hpp"

#include <cmath>

namespace matkit::detail {

namespace {

// Mean over samples of 0.5 * ||z - y||^2.
LossEval squared_error(const Matrix& outputs, const Matrix& targets) {
    if (targets.rows() != outputs.rows() || targets.cols() != outputs.cols())
        throw ShapeError("squared error: targets must match outputs shape");
    const double inv_n = 1.0 / static_cast<double>(outputs.rows());
    LossEval ev;
    ev.dz = Matrix(outputs.rows(), outputs.cols());
    for (std::size_t i = 0; i < outputs.rows(); ++i)
        for (std::size_t j = 0; j < outputs.cols(); ++j) {
            const double d = outputs.at(i, j) - targets.at(i, j);
            ev.loss += 0.5 * d * d * inv_n;
            ev.dz.at(i, j) = d * inv_n;
        }
    return ev;
}

// Targets carry one class id per prediction group (output columns split into
// equal groups of size vocab); id -1 means the group is not scored. Loss is
// the mean of -log p over scored groups.
LossEval softmax_cross_entropy(const Matrix& outputs, const Matrix& targets) {
    if (targets.rows() != outputs.rows())
        throw ShapeError("cross entropy: target rows must match outputs");
    const std::size_t groups = targets.cols();
    if (groups == 0 || outputs.cols() % groups != 0)
        throw ShapeError("cross entropy: output width must split evenly into target groups");
    const std::size_t vocab = outputs.cols() / groups;

    std::size_t counted = 0;
    for (std::size_t i = 0; i < targets.rows(); ++i)
        for (std::size_t g = 0; g < groups; ++g) {
            const double y = targets.at(i, g);
            if (y == -1.0) continue;
            if (y != std::floor(y) || y < 0.0 || y >= static_cast<double>(vocab))
                throw ValueError("cross entropy: target id out of range");
            ++counted;
        }
    if (counted == 0)
        throw ValueError("cross entropy: no scored targets in batch");
    const double inv_m = 1.0 / static_cast<double>(counted);

    LossEval ev;
    ev.dz = Matrix(outputs.rows(), outputs.cols());
    std::vector<double> p(vocab);
    for (std::size_t i = 0; i < outputs.rows(); ++i)
        for (std::size_t g = 0; g < groups; ++g) {
            const double y = targets.at(i, g);
            if (y == -1.0) continue;
            const std::size_t base = g * vocab;
            double mx = outputs.at(i, base);
            for (std::size_t vtok = 1; vtok < vocab; ++vtok)
                mx = std::max(mx, outputs.at(i, base + vtok));
            double denom = 0.0;
            for (std::size_t vtok = 0; vtok < vocab; ++vtok) {
                p[vtok] = std::exp(outputs.at(i, base + vtok) - mx);
                denom += p[vtok];
            }
            const std::size_t cls = static_cast<std::size_t>(y);
            for (std::size_t vtok = 0; vtok < vocab; ++vtok) {
                p[vtok] /= denom;
                ev.dz.at(i, base + vtok) = p[vtok] * inv_m;
            }
            ev.dz.at(i, base + cls) -= inv_m;
            ev.loss -= std::log(p[cls]) * inv_m;
        }
    return ev;
}

} // namespace

LossEval evaluate_loss(const Matrix& outputs, const Matrix& targets, LossKind kind) {
    switch (kind) {
    case LossKind::SquaredError:
        return squared_error(outputs, targets);
    case LossKind::SoftmaxCrossEntropy:
        return softmax_cross_entropy(outputs, targets);
    }
    throw SpecError("evaluate_loss: unknown loss kind");
}

} // namespace matkit::detail
