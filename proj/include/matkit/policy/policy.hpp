#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>

#include "matkit/mntk/mntk.hpp"

namespace matkit {

// Knobs for the adaptive module-selection policy.
//
// temporal_enabled gates only the stop decision; delta bookkeeping always
// runs so trajectories stay observable. Families listed in family_overrides
// are pooled separately and use their own (alpha, beta); all other modules
// share one pool with the defaults. Networks here are single-family, so the
// default is exactly the global pooling of the update rule.
struct PolicyConfig {
    double alpha = 0.1;
    double beta = 1e-3;
    std::size_t sample_count = 64;
    std::size_t warmup_epochs = 5;
    std::size_t cadence = 8;
    bool sticky_temporal = true;
    bool temporal_enabled = true;
    bool protect_per_layer = true;
    Scalarization scalarization = Scalarization::SumOfLogits;
    std::map<std::string, std::pair<double, double>> family_overrides;

    void validate() const; // SpecError on out-of-range values
};

// Rolling policy memory. episode counts completed decision episodes past the
// baseline (the baseline itself is episode 0).
struct PolicyState {
    std::map<ModuleId, double> lambda0;
    std::map<ModuleId, double> delta_prev;
    std::map<ModuleId, double> delta_first;
    std::set<ModuleId> stopped; // sticky accumulation of temporal stops
    std::size_t episode = 0;
};

struct ModuleSets {
    std::set<ModuleId> information;
    std::set<ModuleId> nuisance;
};

// lambda_alpha = pooled_min + (pooled_max - pooled_min) * alpha.
// Throws ValueError when pooled_max < pooled_min or alpha is outside [0, 1].
double eigen_threshold(double pooled_min, double pooled_max, double alpha);

// Splits on lambda_max >= lambda_alpha; equality goes to information.
ModuleSets modular_split(const SpectrumSnapshot& snap, double lambda_alpha);

// Relative movement test: stopped when |Delta_t - Delta_{t-1}| / Delta_1 <
// beta, where Delta_t = |lambda_now - lambda0|. Also advances delta_prev.
// A module whose Delta_1 <= 1e-12 never moved and reports stopped. Throws
// StateError when the needed history (lambda0, Delta_1, Delta_{t-1}) is
// missing.
bool temporal_stop(ModuleId module, double lambda_now, PolicyState& state, double beta);

// Records the warmup baseline: lambda0 per module, cleared deltas, episode 0.
void begin_baseline(PolicyState& state, const SpectrumSnapshot& snap);

// One decision episode over the snapshot. Applies the per-family modular
// threshold, the temporal criterion (from episode 2 on), sticky accumulation,
// and per-layer protection: a layer whose modules all landed in nuisance gets
// its highest-lambda_max module (lowest id on ties) promoted back. Returns
// disjoint sets covering exactly the snapshot's modules.
ModuleSets decide(const SpectrumSnapshot& snap, PolicyState& state, const PolicyConfig& cfg);

} // namespace matkit
