#include "matkit/policy/policy.hpp"

#include <cmath>

namespace matkit {

namespace {
constexpr double kMovementGuard = 1e-12;

void validate_pair(double alpha, double beta, const std::string& where) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw SpecError(where + ": alpha must be in (0, 1)");
    if (!(beta > 0.0))
        throw SpecError(where + ": beta must be positive");
}
} // namespace

void PolicyConfig::validate() const {
    validate_pair(alpha, beta, "policy");
    if (sample_count < 2)
        throw SpecError("policy: sample_count must be at least 2");
    if (cadence == 0)
        throw SpecError("policy: cadence must be positive");
    for (const auto& [family, ab] : family_overrides)
        validate_pair(ab.first, ab.second, "policy family '" + family + "'");
}

double eigen_threshold(double pooled_min, double pooled_max, double alpha) {
    if (pooled_max < pooled_min)
        throw ValueError("eigen_threshold: pooled extrema out of order");
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ValueError("eigen_threshold: alpha must be in [0, 1]");
    return pooled_min + (pooled_max - pooled_min) * alpha;
}

ModuleSets modular_split(const SpectrumSnapshot& snap, double lambda_alpha) {
    ModuleSets out;
    for (const auto& [id, row] : snap.per_module) {
        if (row.lambda_max >= lambda_alpha)
            out.information.insert(id);
        else
            out.nuisance.insert(id);
    }
    return out;
}

bool temporal_stop(ModuleId module, double lambda_now, PolicyState& state, double beta) {
    auto l0 = state.lambda0.find(module);
    if (l0 == state.lambda0.end())
        throw StateError("temporal_stop: no baseline for module " + to_string(module));
    auto d1 = state.delta_first.find(module);
    auto dp = state.delta_prev.find(module);
    if (d1 == state.delta_first.end() || dp == state.delta_prev.end())
        throw StateError("temporal_stop: module " + to_string(module) +
                         " has no delta history yet");

    const double delta_t = std::fabs(lambda_now - l0->second);
    const double delta_prev = dp->second;
    const double delta_first = d1->second;
    dp->second = delta_t;

    if (delta_first <= kMovementGuard) return true; // never moved
    return std::fabs(delta_t - delta_prev) / delta_first < beta;
}

void begin_baseline(PolicyState& state, const SpectrumSnapshot& snap) {
    state = PolicyState{};
    for (const auto& [id, row] : snap.per_module) state.lambda0[id] = row.lambda_max;
}

ModuleSets decide(const SpectrumSnapshot& snap, PolicyState& state, const PolicyConfig& cfg) {
    cfg.validate();
    if (snap.per_module.empty())
        throw StateError("decide: empty snapshot");
    for (const auto& [id, row] : snap.per_module)
        if (state.lambda0.find(id) == state.lambda0.end())
            throw StateError("decide: no baseline for module " + to_string(id));

    state.episode += 1;
    const bool first_episode = state.episode == 1;

    // Pool extrema per threshold group: overridden families pool separately,
    // everything else shares the default pool.
    struct Pool {
        double lo = 0.0, hi = 0.0;
        bool any = false;
        double alpha = 0.0, beta = 0.0;
    };
    std::map<std::string, Pool> pools;
    auto group_of = [&](const std::string& family) -> std::string {
        return cfg.family_overrides.count(family) ? family : std::string();
    };
    for (const auto& [id, row] : snap.per_module) {
        const std::string key = group_of(row.family);
        Pool& p = pools[key];
        if (!p.any) {
            p.lo = row.lambda_min_raw;
            p.hi = row.lambda_max;
            p.any = true;
            if (key.empty()) {
                p.alpha = cfg.alpha;
                p.beta = cfg.beta;
            } else {
                p.alpha = cfg.family_overrides.at(key).first;
                p.beta = cfg.family_overrides.at(key).second;
            }
        } else {
            p.lo = std::min(p.lo, row.lambda_min_raw);
            p.hi = std::max(p.hi, row.lambda_max);
        }
    }
    std::map<std::string, double> thresholds;
    for (const auto& [key, p] : pools)
        thresholds[key] = eigen_threshold(p.lo, p.hi, p.alpha);

    ModuleSets out;
    for (const auto& [id, row] : snap.per_module) {
        const std::string key = group_of(row.family);
        const Pool& pool = pools.at(key);

        bool nuisance = row.lambda_max < thresholds.at(key);

        if (first_episode) {
            const double delta = std::fabs(row.lambda_max - state.lambda0.at(id));
            state.delta_first[id] = delta;
            state.delta_prev[id] = delta;
        } else {
            const bool stopped_now = temporal_stop(id, row.lambda_max, state, pool.beta);
            if (cfg.temporal_enabled && stopped_now) {
                nuisance = true;
                if (cfg.sticky_temporal) state.stopped.insert(id);
            }
        }
        if (cfg.temporal_enabled && cfg.sticky_temporal && state.stopped.count(id))
            nuisance = true;

        if (nuisance)
            out.nuisance.insert(id);
        else
            out.information.insert(id);
    }

    if (cfg.protect_per_layer) {
        std::map<std::size_t, ModuleId> best;
        std::map<std::size_t, bool> has_info;
        for (const auto& [id, row] : snap.per_module) {
            if (out.information.count(id)) has_info[id.layer] = true;
            auto it = best.find(id.layer);
            if (it == best.end() ||
                row.lambda_max > snap.per_module.at(it->second).lambda_max)
                best[id.layer] = id; // map order makes lowest id win ties
        }
        for (const auto& [layer, id] : best)
            if (!has_info[layer]) {
                out.nuisance.erase(id);
                out.information.insert(id);
            }
    }
    return out;
}

} // namespace matkit
