#pragma once

#include "matkit/modelzoo/network.hpp"

namespace matkit::detail {

struct LossEval {
    double loss = 0.0;
    Matrix dz; // dLoss/dOutputs, same shape as outputs
};

LossEval evaluate_loss(const Matrix& outputs, const Matrix& targets, LossKind kind);

} // namespace matkit::detail
