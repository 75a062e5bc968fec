#pragma once

#include "matkit/cli/runspec.hpp"

namespace matkit {

// Deterministic synthetic data from (spec, seed). Train and validation rows
// come from disjoint draws of one stream, so the splits never overlap.
//
// teacher-student: inputs uniform in [-2, 2]^d_in, targets from a frozen
// random one-layer network plus optional Gaussian noise on both splits.
// spiral: two interleaved planar spirals, targets -1/+1, classes alternating
// so even split sizes are exactly balanced.
// token-mask: near-deterministic successor sequences over the vocabulary
// (next = current + 1 mod vocab, 5% uniform jumps). Masked positions carry
// the mask id in the inputs and the original token in the targets; all other
// target cells are -1. floor(mask_rate * seq_len) positions are masked, plus
// one more with probability frac(mask_rate * seq_len), at least one always.
Dataset generate_dataset(const DataSpec& spec, std::uint64_t seed);

} // namespace matkit
