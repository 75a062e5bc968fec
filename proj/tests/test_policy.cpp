#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "matkit/policy/policy.hpp"

using namespace matkit;

namespace {

MntkSummary row(ModuleId id, double lambda_max, const std::string& family = "block",
                double lambda_min_raw = 0.0) {
    MntkSummary r;
    r.module = id;
    r.family = family;
    r.lambda_max = lambda_max;
    r.lambda_min_raw = lambda_min_raw;
    return r;
}

SpectrumSnapshot snap_of(std::vector<MntkSummary> rows) {
    SpectrumSnapshot s;
    bool first = true;
    for (auto& r : rows) {
        if (first || r.lambda_max > s.global_lambda_max) s.global_lambda_max = r.lambda_max;
        if (first || r.lambda_min_raw < s.global_lambda_min)
            s.global_lambda_min = r.lambda_min_raw;
        first = false;
        s.per_module.emplace(r.module, std::move(r));
    }
    return s;
}

PolicyConfig base_cfg() {
    PolicyConfig cfg;
    cfg.alpha = 0.1;
    cfg.beta = 1e-3;
    cfg.protect_per_layer = false;
    return cfg;
}

} // namespace

TEST_CASE("eigen_threshold interpolates the pooled range") {
    CHECK(eigen_threshold(1.0, 11.0, 0.1) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(eigen_threshold(3.0, 3.0, 0.7) == 3.0);
    CHECK(eigen_threshold(0.0, 10.0, 0.0) == 0.0);
    CHECK(eigen_threshold(0.0, 10.0, 1.0) == 10.0);
    CHECK_THROWS_AS(eigen_threshold(2.0, 1.0, 0.5), ValueError);
    CHECK_THROWS_AS(eigen_threshold(0.0, 1.0, 1.5), ValueError);
    CHECK_THROWS_AS(eigen_threshold(0.0, 1.0, -0.1), ValueError);
}

TEST_CASE("modular_split boundary goes to information") {
    SpectrumSnapshot s = snap_of({row({0, 0}, 1.0), row({0, 1}, 2.0), row({1, 0}, 5.0)});
    ModuleSets sets = modular_split(s, 2.0);
    CHECK(sets.nuisance == std::set<ModuleId>{{0, 0}});
    CHECK(sets.information == std::set<ModuleId>{{0, 1}, {1, 0}});
    CHECK(sets.information.size() + sets.nuisance.size() == s.per_module.size());
}

TEST_CASE("temporal_stop follows the hand-worked delta sequence") {
    // lambda0 = 1. Episode deltas: 2.0, then 2.9 (moving), then 2.905
    // (relative move 0.0025 < beta 0.01 -> stopped).
    PolicyState st;
    st.lambda0[{0, 0}] = 1.0;
    st.delta_first[{0, 0}] = 2.0;
    st.delta_prev[{0, 0}] = 2.0;

    CHECK(!temporal_stop({0, 0}, 3.9, st, 0.01));
    CHECK(st.delta_prev[{0, 0}] == doctest::Approx(2.9).epsilon(1e-15));
    CHECK(temporal_stop({0, 0}, 3.905, st, 0.01));
    CHECK(st.delta_prev[{0, 0}] == doctest::Approx(2.905).epsilon(1e-15));
}

TEST_CASE("temporal_stop guard and missing history") {
    PolicyState st;
    st.lambda0[{0, 0}] = 5.0;
    st.delta_first[{0, 0}] = 0.0; // never moved
    st.delta_prev[{0, 0}] = 0.0;
    CHECK(temporal_stop({0, 0}, 5.0, st, 1e-3));

    PolicyState empty;
    CHECK_THROWS_AS(temporal_stop({0, 0}, 1.0, empty, 1e-3), StateError);
    PolicyState no_delta;
    no_delta.lambda0[{0, 0}] = 1.0;
    CHECK_THROWS_AS(temporal_stop({0, 0}, 1.0, no_delta, 1e-3), StateError);
}

TEST_CASE("decide requires a baseline and validates config") {
    SpectrumSnapshot s = snap_of({row({0, 0}, 1.0)});
    PolicyState st;
    PolicyConfig cfg = base_cfg();
    CHECK_THROWS_AS(decide(s, st, cfg), StateError);

    begin_baseline(st, s);
    PolicyConfig bad = cfg;
    bad.alpha = 1.5;
    CHECK_THROWS_AS(decide(s, st, bad), SpecError);
    bad = cfg;
    bad.alpha = 0.0; // open interval, the degenerate limit is alpha -> 0+
    CHECK_THROWS_AS(decide(s, st, bad), SpecError);
    bad = cfg;
    bad.alpha = 1.0;
    CHECK_THROWS_AS(decide(s, st, bad), SpecError);
    bad = cfg;
    bad.beta = 0.0;
    CHECK_THROWS_AS(decide(s, st, bad), SpecError);
    bad = cfg;
    bad.cadence = 0;
    CHECK_THROWS_AS(decide(s, st, bad), SpecError);
    bad = cfg;
    bad.sample_count = 1;
    CHECK_THROWS_AS(decide(s, st, bad), SpecError);

    SpectrumSnapshot empty;
    CHECK_THROWS_AS(decide(empty, st, cfg), StateError);
}

TEST_CASE("decide episode sequence with sticky stops") {
    // Two layers, two slots each. lambda trajectories are scripted.
    PolicyConfig cfg = base_cfg();
    cfg.alpha = 0.1;
    cfg.beta = 0.01;
    cfg.sticky_temporal = true;

    SpectrumSnapshot base =
        snap_of({row({0, 0}, 10.0), row({0, 1}, 4.0), row({1, 0}, 8.0), row({1, 1}, 6.0)});
    PolicyState st;
    begin_baseline(st, base);
    CHECK(st.episode == 0);
    CHECK(st.lambda0.at({0, 1}) == 4.0);

    // Episode 1: modular test only. All lambdas rise; pooled range [0, 12],
    // threshold 1.2, so everything is information.
    SpectrumSnapshot e1 =
        snap_of({row({0, 0}, 12.0), row({0, 1}, 5.0), row({1, 0}, 9.0), row({1, 1}, 7.0)});
    ModuleSets s1 = decide(e1, st, cfg);
    CHECK(st.episode == 1);
    CHECK(s1.information.size() == 4);
    CHECK(st.delta_first.at({0, 0}) == doctest::Approx(2.0));
    CHECK(st.delta_first.at({0, 1}) == doctest::Approx(1.0));

    // Episode 2: module (0,1) freezes (delta unchanged); (1,1) drops below
    // the modular threshold. Pooled range [0, 13] -> threshold 1.3 with
    // min_raw 0; craft (1,1) to sit under it.
    SpectrumSnapshot e2 =
        snap_of({row({0, 0}, 13.0), row({0, 1}, 5.0), row({1, 0}, 10.5), row({1, 1}, 1.0)});
    ModuleSets s2 = decide(e2, st, cfg);
    CHECK(st.episode == 2);
    CHECK(s2.nuisance.count({0, 1}) == 1); // temporal stop: delta stayed 1.0
    CHECK(s2.nuisance.count({1, 1}) == 1); // modular: 1.0 < 1.3
    CHECK(s2.information == std::set<ModuleId>{{0, 0}, {1, 0}});
    CHECK(st.stopped.count({0, 1}) == 1);
    CHECK(st.stopped.count({1, 1}) == 0); // modular exclusion is not sticky

    // Episode 3: (0,1) rebounds hard but sticky keeps it in nuisance;
    // (1,1) recovers above threshold and returns (not sticky).
    SpectrumSnapshot e3 =
        snap_of({row({0, 0}, 13.5), row({0, 1}, 9.0), row({1, 0}, 10.6), row({1, 1}, 7.0)});
    ModuleSets s3 = decide(e3, st, cfg);
    CHECK(s3.nuisance.count({0, 1}) == 1);
    CHECK(s3.information.count({1, 1}) == 1);

    // Sets always partition the snapshot.
    for (const auto& sets : {s1, s2, s3})
        CHECK(sets.information.size() + sets.nuisance.size() == 4);
}

TEST_CASE("non-sticky temporal stops re-evaluate each episode") {
    PolicyConfig cfg = base_cfg();
    cfg.beta = 0.01;
    cfg.sticky_temporal = false;

    SpectrumSnapshot base = snap_of({row({0, 0}, 10.0), row({0, 1}, 1.0)});
    PolicyState st;
    begin_baseline(st, base);

    SpectrumSnapshot e1 = snap_of({row({0, 0}, 12.0), row({0, 1}, 3.0)});
    decide(e1, st, cfg);
    // Episode 2: (0,1) delta still 2.0 -> stopped this episode.
    SpectrumSnapshot e2 = snap_of({row({0, 0}, 14.0), row({0, 1}, 3.0)});
    ModuleSets s2 = decide(e2, st, cfg);
    CHECK(s2.nuisance.count({0, 1}) == 1);
    CHECK(st.stopped.empty());
    // Episode 3: (0,1) moves again -> comes back.
    SpectrumSnapshot e3 = snap_of({row({0, 0}, 16.0), row({0, 1}, 8.0)});
    ModuleSets s3 = decide(e3, st, cfg);
    CHECK(s3.information.count({0, 1}) == 1);
}

TEST_CASE("sticky flag does not change the delta trajectory") {
    PolicyConfig sticky = base_cfg();
    sticky.beta = 0.01;
    PolicyConfig loose = sticky;
    loose.sticky_temporal = false;

    SpectrumSnapshot base = snap_of({row({0, 0}, 10.0), row({0, 1}, 1.0)});
    PolicyState sa, sb;
    begin_baseline(sa, base);
    begin_baseline(sb, base);
    for (double l : {3.0, 3.0, 8.0, 8.05}) {
        SpectrumSnapshot e = snap_of({row({0, 0}, 12.0), row({0, 1}, l)});
        decide(e, sa, sticky);
        decide(e, sb, loose);
        CHECK(sa.delta_prev.at({0, 1}) == sb.delta_prev.at({0, 1}));
        CHECK(sa.delta_first.at({0, 1}) == sb.delta_first.at({0, 1}));
    }
}

TEST_CASE("temporal_enabled=false keeps bookkeeping but never stops") {
    PolicyConfig cfg = base_cfg();
    cfg.beta = 0.01;
    cfg.temporal_enabled = false;

    SpectrumSnapshot base = snap_of({row({0, 0}, 10.0), row({0, 1}, 1.0)});
    PolicyState st;
    begin_baseline(st, base);
    SpectrumSnapshot e1 = snap_of({row({0, 0}, 12.0), row({0, 1}, 3.0)});
    decide(e1, st, cfg);
    SpectrumSnapshot e2 = snap_of({row({0, 0}, 14.0), row({0, 1}, 3.0)});
    ModuleSets s2 = decide(e2, st, cfg); // frozen delta would stop if enabled
    CHECK(s2.information.count({0, 1}) == 1);
    CHECK(st.stopped.empty());
    CHECK(st.delta_prev.at({0, 1}) == doctest::Approx(2.0)); // bookkeeping ran
}

TEST_CASE("per-layer protection keeps one module per layer") {
    PolicyConfig cfg = base_cfg();
    cfg.alpha = 0.9; // aggressive threshold pushes most modules out
    cfg.protect_per_layer = true;

    SpectrumSnapshot base =
        snap_of({row({0, 0}, 1.0), row({0, 1}, 2.0), row({1, 0}, 50.0), row({1, 1}, 3.0)});
    PolicyState st;
    begin_baseline(st, base);
    // Threshold = 0 + 50 * 0.9 = 45: only (1,0) clears it on merit.
    ModuleSets sets = decide(base, st, cfg);
    CHECK(sets.information.count({1, 0}) == 1);
    // Layer 0 was fully nuisance; its best module (0,1) is promoted.
    CHECK(sets.information.count({0, 1}) == 1);
    CHECK(sets.nuisance == std::set<ModuleId>{{0, 0}, {1, 1}});

    // Tie in a protected layer goes to the lowest id.
    SpectrumSnapshot tied =
        snap_of({row({0, 0}, 2.0), row({0, 1}, 2.0), row({1, 0}, 50.0), row({1, 1}, 3.0)});
    PolicyState st2;
    begin_baseline(st2, tied);
    ModuleSets sets2 = decide(tied, st2, cfg);
    CHECK(sets2.information.count({0, 0}) == 1);
    CHECK(sets2.nuisance.count({0, 1}) == 1);
}

TEST_CASE("family overrides pool separately") {
    PolicyConfig cfg = base_cfg();
    cfg.alpha = 0.5;
    cfg.family_overrides["head"] = {0.5, 1e-3};

    // Heads live at scale 10..100, blocks at 0.1..1.0. A global pool with
    // alpha 0.5 would strand every block in nuisance; per-family pooling
    // keeps the strong block.
    SpectrumSnapshot s = snap_of({row({0, 0}, 100.0, "head", 10.0),
                                  row({0, 1}, 10.0, "head", 10.0),
                                  row({1, 0}, 1.0, "block", 0.1),
                                  row({1, 1}, 0.1, "block", 0.1)});
    PolicyState st;
    begin_baseline(st, s);
    ModuleSets sets = decide(s, st, cfg);
    CHECK(sets.information.count({0, 0}) == 1); // head pool threshold 55
    CHECK(sets.nuisance.count({0, 1}) == 1);
    CHECK(sets.information.count({1, 0}) == 1); // block pool threshold 0.55
    CHECK(sets.nuisance.count({1, 1}) == 1);
}

TEST_CASE("begin_baseline resets everything") {
    SpectrumSnapshot s = snap_of({row({0, 0}, 4.0)});
    PolicyState st;
    st.episode = 7;
    st.stopped.insert({0, 0});
    st.delta_first[{0, 0}] = 1.0;
    begin_baseline(st, s);
    CHECK(st.episode == 0);
    CHECK(st.stopped.empty());
    CHECK(st.delta_first.empty());
    CHECK(st.lambda0.at({0, 0}) == 4.0);
}
