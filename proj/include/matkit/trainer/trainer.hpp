#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "matkit/core/rng.hpp"
#include "matkit/policy/policy.hpp"

namespace matkit {

struct Dataset {
    std::string name;
    std::uint64_t seed = 0; // generator seed, echoed into run records
    Matrix train_inputs;
    Matrix train_targets;
    Matrix val_inputs;
    Matrix val_targets;
};

enum class PolicyKind { Vanilla, Rand, Multirate, Mat };

struct MultirateConfig {
    double slow_fraction = 0.5; // share of modules assigned to the slow group
    std::size_t slow_every = 5; // slow group steps every k-th step at lr k*eta
};

struct TrainConfig {
    PolicyKind policy = PolicyKind::Vanilla;
    double lr = 0.05;
    double clip_norm = 0.0;    // L2 cap on each step's gradient; 0 disables
    double weight_decay = 0.0; // applied to whatever parameters the step touches
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    std::uint64_t seed = 1;
    LossKind loss = LossKind::SquaredError;
    PolicyConfig policy_cfg;     // MAT knobs; warmup/cadence drive snapshots
    double rand_fraction = 0.5;  // Rand: share of modules trained per epoch
    MultirateConfig multirate;
    std::size_t patience = 10;   // epochs without relative val improvement
    double improve_tol = 1e-4;
    bool diag_snapshots = false; // spectral snapshots for non-MAT policies

    void validate() const;
};

// One metrics.csv row. Global rows (module empty) carry losses and flops;
// module rows carry the spectral summary and membership.
struct MetricRow {
    std::size_t epoch = 0;
    std::optional<ModuleId> module;
    std::optional<double> lambda_max;
    std::optional<double> lambda_min;
    std::optional<double> eff_rank;
    std::optional<double> cond_number;
    std::optional<bool> in_info;
    std::optional<double> train_loss;
    std::optional<double> val_loss;
    std::optional<double> weight_dist;
    std::optional<std::uint64_t> flops_fwd;
    std::optional<std::uint64_t> flops_bwd;
    std::optional<std::uint64_t> flops_ntk;
};

struct EpochFlops {
    std::size_t epoch = 0;
    std::uint64_t fwd_modular = 0;
    std::uint64_t fwd_always = 0;
    std::uint64_t bwd_modular = 0;
    std::uint64_t bwd_always = 0;
    std::uint64_t ntk = 0;
};

// Accounting model, in dense-product MACs: a backward pass costs twice the
// forward pass that fed it, modular backward scales with the active share of
// unpruned modular parameters, and measurement passes are tallied separately
// as ntk overhead. Validation forwards are not billed.
struct FlopsLedger {
    std::vector<EpochFlops> per_epoch;
    std::uint64_t forward_modular = 0;
    std::uint64_t forward_always = 0;
    std::uint64_t backward_modular = 0;
    std::uint64_t backward_always = 0;
    std::uint64_t ntk_overhead = 0;

    void add(const EpochFlops& e);
    std::uint64_t forward_total() const { return forward_modular + forward_always; }
    std::uint64_t backward_total() const { return backward_modular + backward_always; }
    std::uint64_t total() const { return forward_total() + backward_total() + ntk_overhead; }
};

// One parameter update: modules stepped together at lr * lr_scale.
struct StepPlan {
    std::vector<ModuleId> active;
    double lr_scale = 1.0;
};

// Per-run controller deciding which modules train. Drivers see epochs start,
// may request spectral snapshots at epoch end, and emit one or more step
// plans per batch.
class PolicyDriver {
public:
    virtual ~PolicyDriver() = default;
    virtual void begin_epoch(std::size_t epoch, Rng& policy_rng) {
        (void)epoch;
        (void)policy_rng;
    }
    virtual bool wants_snapshot(std::size_t epoch) const {
        (void)epoch;
        return false;
    }
    struct SnapshotReaction {
        bool record_theta0 = false; // baseline: re-anchor weight distances
    };
    virtual SnapshotReaction observe_snapshot(const SpectrumSnapshot& snap) {
        (void)snap;
        return {};
    }
    virtual std::vector<StepPlan> plan_step(std::size_t global_step) = 0;
    virtual bool halted() const { return false; }
    // Current information set, when the policy has one (MAT); null otherwise.
    virtual const std::set<ModuleId>* information() const { return nullptr; }
};

// Builds the driver for cfg.policy over the network's unpruned modules.
std::unique_ptr<PolicyDriver> make_driver(const TrainConfig& cfg, const ModularNetwork& net);

using EpochObserver =
    std::function<void(std::size_t epoch, const ModularNetwork& net,
                       const std::set<ModuleId>& active_union)>;

struct RunResult {
    std::vector<MetricRow> metrics;
    FlopsLedger ledger;
    ModularNetwork net; // final parameters
    double final_train_loss = std::numeric_limits<double>::quiet_NaN();
    double final_val_loss = std::numeric_limits<double>::quiet_NaN();
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t best_val_epoch = 0;
    std::size_t epochs_run = 0;
    std::string stop_reason; // "epochs" | "converged" | "information_empty"
    std::vector<double> train_loss_per_epoch;
    std::vector<double> val_loss_per_epoch;
    std::vector<std::set<ModuleId>> active_per_epoch; // union over the epoch's steps
};

// Seeded SGD over shuffled minibatches with policy-selected module updates.
// A custom driver (tests) overrides the one cfg.policy would build. The
// observer runs after every epoch.
RunResult train(const ModularNetwork& start, const Dataset& data, const TrainConfig& cfg,
                PolicyDriver* driver = nullptr, const EpochObserver& observer = nullptr);

// Epochs each module spent in the active set.
std::map<ModuleId, std::size_t> epoch_histogram(const RunResult& result);

// Keeps the ceil(keep_fraction * L) unpruned modules with the largest
// lambda_max (ties to the lower id) and prunes the rest. keep_fraction must
// be in (0, 1]; 1 returns an unchanged copy. With protect_per_layer, a layer
// that would lose all modules raises ProtectionError.
ModularNetwork prune_by_lambda(const ModularNetwork& net, const SpectrumSnapshot& snap,
                               double keep_fraction, bool protect_per_layer = true);

// Small capacity-vs-data probe: a noisy teacher-student task sized to
// overfit, or a realizable noise-free variant. Returns the full run record
// with early stopping disabled so the validation curve is observable.
struct OverfitProbeConfig {
    PolicyKind policy = PolicyKind::Vanilla;
    std::uint64_t seed = 1;
    std::size_t epochs = 80;
    std::size_t n_train = 16;
    std::size_t n_val = 128;
    double noise = 0.25;
    bool realizable = false;
};

RunResult overfit_probe(const OverfitProbeConfig& cfg);

} // namespace matkit
