#include "matkit/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "matkit/core/log.hpp"

namespace matkit {

void TrainConfig::validate() const {
    if (!std::isfinite(lr) || lr <= 0.0) throw SpecError("lr must be positive and finite");
    if (!std::isfinite(clip_norm) || clip_norm < 0.0)
        throw SpecError("clip_norm must be nonnegative and finite");
    if (!std::isfinite(weight_decay) || weight_decay < 0.0)
        throw SpecError("weight_decay must be nonnegative and finite");
    if (epochs == 0) throw SpecError("epochs must be at least 1");
    if (batch_size == 0) throw SpecError("batch_size must be at least 1");
    if (!(rand_fraction > 0.0) || rand_fraction > 1.0)
        throw SpecError("rand_fraction must be in (0, 1]");
    if (!(multirate.slow_fraction >= 0.0) || multirate.slow_fraction > 1.0)
        throw SpecError("multirate.slow_fraction must be in [0, 1]");
    if (multirate.slow_every == 0) throw SpecError("multirate.slow_every must be at least 1");
    if (patience == 0) throw SpecError("patience must be at least 1");
    if (!std::isfinite(improve_tol) || improve_tol < 0.0)
        throw SpecError("improve_tol must be nonnegative and finite");
    policy_cfg.validate();
}

void FlopsLedger::add(const EpochFlops& e) {
    per_epoch.push_back(e);
    forward_modular += e.fwd_modular;
    forward_always += e.fwd_always;
    backward_modular += e.bwd_modular;
    backward_always += e.bwd_always;
    ntk_overhead += e.ntk;
}

namespace {

class VanillaDriver : public PolicyDriver {
public:
    explicit VanillaDriver(std::vector<ModuleId> modules) : all_(std::move(modules)) {}
    std::vector<StepPlan> plan_step(std::size_t) override { return {{all_, 1.0}}; }

private:
    std::vector<ModuleId> all_;
};

// Fresh uniform subset of ceil(fraction * L) modules every epoch. Per-layer
// protection tops the subset up with each uncovered layer's lowest id.
class RandDriver : public PolicyDriver {
public:
    RandDriver(std::vector<ModuleId> modules, double fraction, bool protect)
        : modules_(std::move(modules)), fraction_(fraction), protect_(protect) {}

    void begin_epoch(std::size_t, Rng& policy_rng) override {
        const std::size_t total = modules_.size();
        const std::size_t want = static_cast<std::size_t>(
            std::ceil(fraction_ * static_cast<double>(total)));
        const auto picks = policy_rng.sample_without_replacement(total, std::min(want, total));
        std::set<ModuleId> chosen;
        for (std::size_t i : picks) chosen.insert(modules_[i]);
        if (protect_) {
            std::set<std::size_t> covered;
            for (const ModuleId& id : chosen) covered.insert(id.layer);
            for (const ModuleId& id : modules_) {
                if (covered.insert(id.layer).second) chosen.insert(id);
            }
        }
        active_.assign(chosen.begin(), chosen.end());
    }

    std::vector<StepPlan> plan_step(std::size_t) override { return {{active_, 1.0}}; }

private:
    std::vector<ModuleId> modules_; // ascending id order
    double fraction_;
    bool protect_;
    std::vector<ModuleId> active_;
};

// Fixed seeded split. The fast group steps every batch at lr; the slow group
// steps on every slow_every-th batch at slow_every * lr, so both see the same
// average rate.
class MultirateDriver : public PolicyDriver {
public:
    MultirateDriver(std::vector<ModuleId> modules, MultirateConfig cfg, std::uint64_t seed)
        : cfg_(cfg) {
        Rng rng(mix_seed(seed, "multirate"));
        rng.shuffle(modules);
        const std::size_t n_slow = static_cast<std::size_t>(
            std::ceil(cfg.slow_fraction * static_cast<double>(modules.size())));
        slow_.assign(modules.begin(), modules.begin() + static_cast<std::ptrdiff_t>(n_slow));
        fast_.assign(modules.begin() + static_cast<std::ptrdiff_t>(n_slow), modules.end());
        std::sort(slow_.begin(), slow_.end());
        std::sort(fast_.begin(), fast_.end());
    }

    std::vector<StepPlan> plan_step(std::size_t global_step) override {
        std::vector<StepPlan> plans;
        if (!fast_.empty()) plans.push_back({fast_, 1.0});
        if (!slow_.empty() && (global_step + 1) % cfg_.slow_every == 0)
            plans.push_back({slow_, static_cast<double>(cfg_.slow_every)});
        return plans;
    }

    const std::vector<ModuleId>& fast_group() const { return fast_; }
    const std::vector<ModuleId>& slow_group() const { return slow_; }

private:
    MultirateConfig cfg_;
    std::vector<ModuleId> fast_;
    std::vector<ModuleId> slow_;
};

// Warmup trains everything. The first snapshot becomes the baseline (and
// re-anchors theta0); each later snapshot runs one decision episode and the
// information set drives all steps until the next one. Empty information
// halts the run.
class MatDriver : public PolicyDriver {
public:
    MatDriver(PolicyConfig cfg, const std::vector<ModuleId>& modules) : cfg_(std::move(cfg)) {
        info_.insert(modules.begin(), modules.end());
    }

    bool wants_snapshot(std::size_t epoch) const override {
        if (epoch < cfg_.warmup_epochs) return false;
        return (epoch - cfg_.warmup_epochs) % cfg_.cadence == 0;
    }

    SnapshotReaction observe_snapshot(const SpectrumSnapshot& snap) override {
        if (!baselined_) {
            begin_baseline(state_, snap);
            info_.clear();
            for (const auto& [id, summary] : snap.per_module) info_.insert(id);
            baselined_ = true;
            return {true};
        }
        ModuleSets sets = decide(snap, state_, cfg_);
        info_ = std::move(sets.information);
        return {};
    }

    std::vector<StepPlan> plan_step(std::size_t) override {
        return {{std::vector<ModuleId>(info_.begin(), info_.end()), 1.0}};
    }

    bool halted() const override { return baselined_ && info_.empty(); }
    const std::set<ModuleId>* information() const override { return &info_; }

private:
    PolicyConfig cfg_;
    PolicyState state_;
    std::set<ModuleId> info_;
    bool baselined_ = false;
};

std::vector<ModuleId> unpruned_ids(const ModularNetwork& net) {
    std::vector<ModuleId> ids;
    for (const ModuleInfo& m : net.active_partition()) ids.push_back(m.id);
    return ids;
}

std::uint64_t param_count_of(const ModularNetwork& net, const std::set<ModuleId>& ids) {
    std::uint64_t total = 0;
    for (const ModuleId& id : ids) total += net.module(id).slice.len;
    return total;
}

Matrix gather_rows(const Matrix& src, const std::vector<std::size_t>& order, std::size_t begin,
                   std::size_t count) {
    Matrix out(count, src.cols());
    for (std::size_t i = 0; i < count; ++i) {
        const double* r = src.row(order[begin + i]);
        for (std::size_t j = 0; j < src.cols(); ++j) out.at(i, j) = r[j];
    }
    return out;
}

} // namespace

std::unique_ptr<PolicyDriver> make_driver(const TrainConfig& cfg, const ModularNetwork& net) {
    std::vector<ModuleId> mods = unpruned_ids(net);
    switch (cfg.policy) {
        case PolicyKind::Vanilla:
            return std::make_unique<VanillaDriver>(std::move(mods));
        case PolicyKind::Rand:
            return std::make_unique<RandDriver>(std::move(mods), cfg.rand_fraction,
                                                cfg.policy_cfg.protect_per_layer);
        case PolicyKind::Multirate:
            return std::make_unique<MultirateDriver>(std::move(mods), cfg.multirate, cfg.seed);
        case PolicyKind::Mat:
            return std::make_unique<MatDriver>(cfg.policy_cfg, mods);
    }
    throw ValueError("make_driver: unknown policy kind");
}

RunResult train(const ModularNetwork& start, const Dataset& data, const TrainConfig& cfg,
                PolicyDriver* driver, const EpochObserver& observer) {
    cfg.validate();
    if (data.train_inputs.rows() == 0) throw ShapeError("train: empty training set");
    if (data.train_inputs.rows() != data.train_targets.rows())
        throw ShapeError("train: training inputs and targets row counts differ");
    if (data.val_inputs.rows() == 0) throw ShapeError("train: empty validation set");
    if (data.val_inputs.rows() != data.val_targets.rows())
        throw ShapeError("train: validation inputs and targets row counts differ");

    RunResult res;
    res.net = start;
    ModularNetwork& net = res.net;
    if (net.active_partition().empty()) throw StateError("train: no unpruned modules");

    std::unique_ptr<PolicyDriver> owned;
    if (driver == nullptr) {
        owned = make_driver(cfg, net);
        driver = owned.get();
    }

    const std::size_t n_train = data.train_inputs.rows();
    const Batch val_batch{data.val_inputs, data.val_targets};

    // Probe inputs are drawn from the training set once per run, from a
    // stream separate from shuffling so measurement never perturbs training.
    // Every episode measures the same probes: the temporal criterion compares
    // eigenvalue movement across episodes, which sample turnover would bury
    // in resampling noise far above any usable beta.
    Matrix probes;
    auto take_snapshot = [&]() {
        if (probes.rows() == 0) {
            const std::size_t s = std::min(cfg.policy_cfg.sample_count, n_train);
            Rng rng(mix_seed(cfg.seed, "ntk"));
            std::vector<std::size_t> idx = rng.sample_without_replacement(n_train, s);
            probes = Matrix(s, data.train_inputs.cols());
            for (std::size_t i = 0; i < s; ++i) {
                const double* r = data.train_inputs.row(idx[i]);
                for (std::size_t j = 0; j < probes.cols(); ++j) probes.at(i, j) = r[j];
            }
        }
        return snapshot(net, probes, cfg.policy_cfg.scalarization);
    };

    auto on_diag_schedule = [&](std::size_t epoch) {
        if (!cfg.diag_snapshots) return false;
        if (epoch < cfg.policy_cfg.warmup_epochs) return false;
        return (epoch - cfg.policy_cfg.warmup_epochs) % cfg.policy_cfg.cadence == 0;
    };

    // Measures after the epoch's updates, lets the driver react, and returns
    // the module rows to append after the epoch's global row. in_info is
    // filled only when the driver exposes an information set.
    auto snapshot_phase = [&](std::size_t epoch, EpochFlops& ef) {
        std::vector<MetricRow> rows;
        const bool driver_wants = driver->wants_snapshot(epoch);
        if (!driver_wants && !on_diag_schedule(epoch)) return rows;
        SpectrumSnapshot snap = take_snapshot();
        ef.ntk += snap.flops.total();
        const std::set<ModuleId>* info = nullptr;
        if (driver_wants) {
            const auto reaction = driver->observe_snapshot(snap);
            if (reaction.record_theta0) net.snapshot_theta0();
            info = driver->information();
        }
        for (const auto& [id, s] : snap.per_module) {
            MetricRow row;
            row.epoch = epoch;
            row.module = id;
            row.lambda_max = s.lambda_max;
            row.lambda_min = s.lambda_min;
            row.eff_rank = s.eff_rank;
            row.cond_number = s.cond_number;
            if (info != nullptr) row.in_info = info->count(id) > 0;
            rows.push_back(row);
        }
        return rows;
    };

    // Epoch 0 covers policies that measure before any training step.
    {
        EpochFlops ef;
        ef.epoch = 0;
        std::vector<MetricRow> rows = snapshot_phase(0, ef);
        if (ef.ntk > 0) res.ledger.add(ef);
        for (auto& r : rows) res.metrics.push_back(std::move(r));
    }

    const std::uint64_t modular_total = net.active_modular_params();
    const bool tail_trainable = net.always_active_mode() == AlwaysActiveMode::Trainable &&
                                net.always_active_slice().len > 0;

    res.stop_reason = "epochs";
    std::size_t global_step = 0;
    std::size_t bad_epochs = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochFlops ef;
        ef.epoch = epoch;

        std::vector<std::size_t> order(n_train);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(mix_seed(mix_seed(cfg.seed, "shuffle"), epoch));
        shuffle_rng.shuffle(order);

        Rng policy_rng(mix_seed(mix_seed(cfg.seed, "policy"), epoch));
        driver->begin_epoch(epoch, policy_rng);

        std::set<ModuleId> active_union;
        double loss_acc = 0.0;
        for (std::size_t b0 = 0; b0 < n_train; b0 += cfg.batch_size) {
            const std::size_t bn = std::min(cfg.batch_size, n_train - b0);
            const Batch batch{gather_rows(data.train_inputs, order, b0, bn),
                              gather_rows(data.train_targets, order, b0, bn)};

            const std::vector<StepPlan> plans = driver->plan_step(global_step);
            std::set<ModuleId> step_active;
            for (const StepPlan& p : plans)
                step_active.insert(p.active.begin(), p.active.end());
            const std::vector<ModuleId> mask(step_active.begin(), step_active.end());

            const GradientResult grads = loss_and_gradients(net, batch, cfg.loss, &mask);

            // Inactive modules report zero gradients, so this norm covers
            // exactly what the step applies.
            double step_lr = cfg.lr;
            if (cfg.clip_norm > 0.0) {
                double sq = 0.0;
                for (const auto& [id, g] : grads.per_module)
                    for (double v : g) sq += v * v;
                for (double v : grads.always_active) sq += v * v;
                const double norm = std::sqrt(sq);
                if (norm > cfg.clip_norm) step_lr *= cfg.clip_norm / norm;
            }
            for (const StepPlan& p : plans)
                apply_selective_step(net, grads, p.active, step_lr * p.lr_scale,
                                     cfg.weight_decay);

            active_union.insert(step_active.begin(), step_active.end());
            loss_acc += grads.loss * static_cast<double>(bn);

            ef.fwd_modular += grads.forward_flops.modular;
            ef.fwd_always += grads.forward_flops.always;
            if (modular_total > 0) {
                const std::uint64_t active_params = param_count_of(net, step_active);
                ef.bwd_modular += 2 * grads.forward_flops.modular * active_params / modular_total;
            }
            if (tail_trainable) ef.bwd_always += 2 * grads.forward_flops.always;
            ++global_step;
        }

        const double train_loss = loss_acc / static_cast<double>(n_train);
        const double val_loss = evaluate_loss(net, val_batch, cfg.loss);

        std::vector<MetricRow> module_rows = snapshot_phase(epoch, ef);
        res.ledger.add(ef);

        MetricRow global;
        global.epoch = epoch;
        global.train_loss = train_loss;
        global.val_loss = val_loss;
        global.weight_dist = net.weight_distance_from_init();
        global.flops_fwd = ef.fwd_modular + ef.fwd_always;
        global.flops_bwd = ef.bwd_modular + ef.bwd_always;
        global.flops_ntk = ef.ntk;
        res.metrics.push_back(global);
        for (auto& r : module_rows) res.metrics.push_back(std::move(r));

        res.train_loss_per_epoch.push_back(train_loss);
        res.val_loss_per_epoch.push_back(val_loss);
        res.active_per_epoch.push_back(active_union);
        res.final_train_loss = train_loss;
        res.final_val_loss = val_loss;
        res.epochs_run = epoch;

        if (observer) observer(epoch, net, active_union);

        if (log::enabled(log::Level::Debug))
            log::debug("epoch " + std::to_string(epoch) + " train " + std::to_string(train_loss) +
                       " val " + std::to_string(val_loss) + " active " +
                       std::to_string(active_union.size()));

        if (driver->halted()) {
            res.stop_reason = "information_empty";
            break;
        }

        const bool improved =
            !std::isfinite(res.best_val_loss) ||
            (res.best_val_loss - val_loss) >
                cfg.improve_tol * std::max(std::abs(res.best_val_loss), 1e-12);
        if (improved) {
            res.best_val_loss = val_loss;
            res.best_val_epoch = epoch;
            bad_epochs = 0;
        } else if (++bad_epochs >= cfg.patience) {
            res.stop_reason = "converged";
            break;
        }
    }

    return res;
}

std::map<ModuleId, std::size_t> epoch_histogram(const RunResult& result) {
    std::map<ModuleId, std::size_t> hist;
    for (const ModuleInfo& m : result.net.active_partition()) hist[m.id] = 0;
    for (const auto& epoch_set : result.active_per_epoch)
        for (const ModuleId& id : epoch_set) ++hist[id];
    return hist;
}

ModularNetwork prune_by_lambda(const ModularNetwork& net, const SpectrumSnapshot& snap,
                               double keep_fraction, bool protect_per_layer) {
    if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
        throw ValueError("prune_by_lambda: keep_fraction must be in (0, 1]");
    const std::vector<ModuleInfo> part = net.active_partition();
    if (part.empty()) throw StateError("prune_by_lambda: no unpruned modules");

    struct Ranked {
        ModuleId id;
        double lambda;
    };
    std::vector<Ranked> ranked;
    ranked.reserve(part.size());
    for (const ModuleInfo& m : part) {
        const auto it = snap.per_module.find(m.id);
        if (it == snap.per_module.end())
            throw LookupError("prune_by_lambda: snapshot does not cover module " +
                              to_string(m.id));
        ranked.push_back({m.id, it->second.lambda_max});
    }
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.lambda != b.lambda) return a.lambda > b.lambda;
        return a.id < b.id;
    });

    const std::size_t keep = std::min(
        ranked.size(), static_cast<std::size_t>(
                           std::ceil(keep_fraction * static_cast<double>(ranked.size()))));
    std::set<ModuleId> kept;
    for (std::size_t i = 0; i < keep; ++i) kept.insert(ranked[i].id);

    if (protect_per_layer) {
        std::set<std::size_t> covered;
        for (const ModuleId& id : kept) covered.insert(id.layer);
        for (const ModuleInfo& m : part) {
            if (covered.count(m.id.layer) == 0)
                throw ProtectionError("prune_by_lambda: pruning would empty layer " +
                                      std::to_string(m.id.layer));
        }
    }

    ModularNetwork out = net;
    std::vector<ModuleId> drop;
    for (const ModuleInfo& m : part)
        if (kept.count(m.id) == 0) drop.push_back(m.id);
    if (!drop.empty()) out.prune(drop);
    return out;
}

RunResult overfit_probe(const OverfitProbeConfig& cfg) {
    if (cfg.n_train == 0 || cfg.n_val == 0) throw SpecError("overfit_probe: empty split");
    if (!std::isfinite(cfg.noise) || cfg.noise < 0.0)
        throw SpecError("overfit_probe: noise must be nonnegative");

    const BlockMlpSpec teacher_spec{4, 1, 1, 4, 1, true, Activation::Tanh};
    // The mismatched student has capacity far beyond n_train points; the
    // realizable probe trains the teacher's own architecture on clean labels.
    const BlockMlpSpec student_spec =
        cfg.realizable ? teacher_spec : BlockMlpSpec{4, 2, 2, 16, 1, true, Activation::Tanh};
    const double noise = cfg.realizable ? 0.0 : cfg.noise;

    const ModularNetwork teacher = build_network(teacher_spec, mix_seed(cfg.seed, "teacher"));
    ModularNetwork student = build_network(student_spec, mix_seed(cfg.seed, "student"));

    Rng data_rng(mix_seed(cfg.seed, "probe-data"));
    Rng noise_rng(mix_seed(cfg.seed, "probe-noise"));
    auto draw_inputs = [&](std::size_t n) {
        Matrix x(n, 4);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < 4; ++j) x.at(i, j) = data_rng.uniform(-2.0, 2.0);
        return x;
    };

    Dataset ds;
    ds.name = cfg.realizable ? "probe-realizable" : "probe-noisy";
    ds.train_inputs = draw_inputs(cfg.n_train);
    ds.val_inputs = draw_inputs(cfg.n_val);
    ds.train_targets = forward(teacher, ds.train_inputs).outputs;
    ds.val_targets = forward(teacher, ds.val_inputs).outputs; // clean val labels
    for (std::size_t i = 0; i < ds.train_targets.rows(); ++i)
        ds.train_targets.at(i, 0) += noise * noise_rng.normal();

    TrainConfig tc;
    tc.policy = cfg.policy;
    tc.lr = 0.05;
    tc.epochs = cfg.epochs;
    tc.batch_size = 4;
    tc.seed = cfg.seed;
    tc.loss = LossKind::SquaredError;
    tc.patience = cfg.epochs; // early stopping off so the curve is observable
    tc.policy_cfg.warmup_epochs = 4;
    tc.policy_cfg.cadence = 4;
    tc.policy_cfg.sample_count = std::min<std::size_t>(16, cfg.n_train);
    return train(student, ds, tc);
}

} // namespace matkit
