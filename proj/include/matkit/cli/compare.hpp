#pragma once

#include <string>
#include <vector>

namespace matkit {

// Joins two or more completed run directories into one report:
//   report.json         per-run summary extracts, flops_to_best_val, and
//                       validation-loss deltas against the first run
//   loss_vs_flops.csv   run_index,run_name,epoch,cum_flops,train_loss,val_loss
//   lambda_max.csv      run_index,run_name,epoch,module_layer,module_slot,lambda_max
//   histogram.csv       run_index,run_name,module_layer,module_slot,epochs_active
// Every directory must hold metrics.csv, ledger.json and summary.json with
// the expected schema; anything else raises CompatibilityError. Deltas align
// over the epochs all runs share.
void compare_runs(const std::vector<std::string>& run_dirs, const std::string& out_dir);

} // namespace matkit
