#pragma once

#include <string>

#include "matkit/cli/runspec.hpp"

namespace matkit {

inline constexpr const char* kMetricsHeader =
    "epoch,module_layer,module_slot,lambda_max,lambda_min,eff_rank,cond_number,in_info,"
    "train_loss,val_loss,weight_dist,flops_fwd,flops_bwd,flops_ntk";

// Executes one run and writes its artifacts into out_dir:
//   config_resolved.ini   every knob explicit
//   metrics.csv           kMetricsHeader schema; global rows use layer -1
//   ledger.json           per-epoch and total operation counts
//   summary.json          final losses, flops, stop reason, epoch histogram
// Returns 0 on success. Failures after the directory is acquired write
// error.json with a machine-readable record and return 1. The directory is
// held exclusively through a .lock file for the duration; a held lock throws
// IoError instead.
int run_experiment(const RunSpec& spec, const std::string& out_dir);

} // namespace matkit
