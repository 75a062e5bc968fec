#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <variant>

#include "json.hpp"
#include "matkit/cli/compare.hpp"
#include "matkit/cli/datagen.hpp"
#include "matkit/cli/runner.hpp"

using namespace matkit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(bool(in));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Fresh directory under the system temp root, wiped on entry so reruns
// never see stale artifacts.
fs::path scratch(const std::string& leaf) {
    const fs::path dir = fs::temp_directory_path() / "matkit_cli_tests" / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir.parent_path());
    return dir;
}

template <typename Fn>
std::string spec_error_of(Fn&& fn) {
    try {
        fn();
    } catch (const SpecError& e) {
        return e.what();
    }
    return "";
}

bool same_bits(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

RunSpec tiny_run_spec() {
    return parse_run_spec(
        "[run]\n"
        "name = tiny\n"
        "seed = 11\n"
        "policy = mat\n"
        "[data]\n"
        "kind = teacher-student\n"
        "n_train = 32\n"
        "n_val = 16\n"
        "[model]\n"
        "arch = block-mlp\n"
        "layers = 1\n"
        "blocks = 2\n"
        "width = 4\n"
        "[train]\n"
        "lr = 0.05\n"
        "epochs = 4\n"
        "batch = 16\n"
        "patience = 10\n"
        "[policy]\n"
        "samples = 8\n"
        "warmup = 1\n"
        "cadence = 1\n");
}

} // namespace

TEST_CASE("minimal spec parses to defaults and the echo reparses to itself") {
    const RunSpec spec = parse_run_spec("[run]\nname = demo\n");
    CHECK(spec.name == "demo");
    CHECK(spec.data.kind == "teacher-student");
    CHECK(spec.data.n_train == 128);
    CHECK(spec.data.n_val == 64);
    CHECK(spec.train.policy == PolicyKind::Vanilla);
    CHECK(spec.train.loss == LossKind::SquaredError);
    CHECK(spec.train.policy_cfg.sample_count == 64);
    CHECK(std::holds_alternative<BlockMlpSpec>(spec.model));

    // Every section and every knob shows up explicitly in the echo.
    const std::string echo = resolved_echo(spec);
    for (const char* frag :
         {"[run]", "[data]", "[model]", "[train]", "[policy]", "[multirate]", "[rand]",
          "kind = teacher-student", "arch = block-mlp", "lr = 0.05", "clip = 0",
          "weight_decay = 0", "alpha = 0.1", "samples = 64", "sticky = on",
          "scalarization = sum", "slow_fraction = 0.5", "fraction = 0.5"})
        CHECK_MESSAGE(echo.find(frag) != std::string::npos, "missing '" << frag << "'");

    const RunSpec again = parse_run_spec(echo);
    CHECK(resolved_echo(again) == echo);
}

TEST_CASE("the loss follows the dataset kind") {
    const RunSpec reg = parse_run_spec("[data]\nkind = spiral\n");
    CHECK(reg.train.loss == LossKind::SquaredError);

    const RunSpec tok =
        parse_run_spec("[data]\nkind = token-mask\n[model]\narch = tiny-attention\n");
    CHECK(tok.train.loss == LossKind::SoftmaxCrossEntropy);
    REQUIRE(std::holds_alternative<TinyAttentionSpec>(tok.model));
    const auto& a = std::get<TinyAttentionSpec>(tok.model);
    CHECK(a.vocab == 16);   // wired from the dataset block
    CHECK(a.seq_len == 8);
}

TEST_CASE("parse errors name the offending line") {
    std::string m = spec_error_of([] { parse_run_spec("[run]\nbogus = 1\n"); });
    CHECK(m.find("line 2") != std::string::npos);
    CHECK(m.find("unknown key 'bogus'") != std::string::npos);

    m = spec_error_of([] { parse_run_spec("\n\n[nope]\n"); });
    CHECK(m.find("line 3") != std::string::npos);
    CHECK(m.find("unknown section") != std::string::npos);

    m = spec_error_of([] { parse_run_spec("[run]\nname demo\n"); });
    CHECK(m.find("line 2") != std::string::npos);
    CHECK(m.find("expected key = value") != std::string::npos);

    m = spec_error_of([] { parse_run_spec("[run]\nseed = abc\n"); });
    CHECK(m.find("line 2") != std::string::npos);
    CHECK(m.find("unsigned integer") != std::string::npos);

    m = spec_error_of([] { parse_run_spec("name = demo\n"); });
    CHECK(m.find("outside any section") != std::string::npos);

    m = spec_error_of([] { parse_run_spec("[run\n"); });
    CHECK(m.find("unterminated section header") != std::string::npos);

    m = spec_error_of([] { parse_run_spec("[run]\npolicy = sgd\n"); });
    CHECK(m.find("unknown policy 'sgd'") != std::string::npos);
}

TEST_CASE("architecture and dataset kinds must pair up") {
    CHECK_THROWS_AS(parse_run_spec("[model]\narch = tiny-attention\n"), SpecError);
    CHECK_THROWS_AS(parse_run_spec("[data]\nkind = token-mask\n"), SpecError);
    CHECK_THROWS_AS(parse_run_spec("[model]\narch = resnet\n"), SpecError);
    CHECK_THROWS_AS(
        parse_run_spec("[data]\nkind = token-mask\nvocab = 33\n[model]\narch = tiny-attention\n"),
        SpecError);
    CHECK_THROWS_AS(parse_run_spec("[data]\nn_train = 2\n"), SpecError);
}

TEST_CASE("overrides layer onto a parsed spec and are validated") {
    RunSpec spec = parse_run_spec("[run]\nname = demo\n");
    SpecOverrides ov;
    ov.seed = 99;
    ov.policy = "rand";
    ov.alpha = 0.25;
    ov.samples = 8;
    ov.cadence = 2;
    ov.sticky = false;
    apply_overrides(spec, ov);
    CHECK(spec.train.seed == 99);
    CHECK(spec.train.policy == PolicyKind::Rand);
    CHECK(spec.train.policy_cfg.alpha == 0.25);
    CHECK(spec.train.policy_cfg.sample_count == 8);
    CHECK(spec.train.policy_cfg.cadence == 2);
    CHECK_FALSE(spec.train.policy_cfg.sticky_temporal);

    SpecOverrides bad;
    bad.alpha = 0.0; // outside the open interval
    CHECK_THROWS_AS(apply_overrides(spec, bad), SpecError);
    bad = SpecOverrides{};
    bad.policy = "adamw";
    CHECK_THROWS_AS(apply_overrides(spec, bad), SpecError);
}

TEST_CASE("teacher-student generation is deterministic and split-disjoint") {
    DataSpec d;
    d.n_train = 32;
    d.n_val = 16;
    d.noise = 0.1;

    const Dataset a = generate_dataset(d, 5);
    const Dataset b = generate_dataset(d, 5);
    CHECK(same_bits(a.train_inputs, b.train_inputs));
    CHECK(same_bits(a.train_targets, b.train_targets));
    CHECK(same_bits(a.val_inputs, b.val_inputs));
    CHECK(same_bits(a.val_targets, b.val_targets));

    const Dataset c = generate_dataset(d, 6);
    CHECK_FALSE(same_bits(a.train_inputs, c.train_inputs));

    // Train and validation come from disjoint draws of one stream.
    CHECK_FALSE(std::memcmp(a.train_inputs.data().data(), a.val_inputs.data().data(),
                            a.val_inputs.size() * sizeof(double)) == 0);
}

TEST_CASE("spiral classes are balanced with labels in {-1, +1}") {
    DataSpec d;
    d.kind = "spiral";
    d.n_train = 40;
    d.n_val = 20;
    d.noise = 0.02;

    const Dataset ds = generate_dataset(d, 9);
    auto tally = [](const Matrix& y) {
        std::size_t pos = 0, neg = 0;
        for (std::size_t i = 0; i < y.rows(); ++i) {
            REQUIRE((y.at(i, 0) == 1.0 || y.at(i, 0) == -1.0));
            (y.at(i, 0) == 1.0 ? pos : neg) += 1;
        }
        return std::pair{pos, neg};
    };
    auto [tp, tn] = tally(ds.train_targets);
    CHECK(tp == 20);
    CHECK(tn == 20);
    auto [vp, vn] = tally(ds.val_targets);
    CHECK(vp == 10);
    CHECK(vn == 10);
    CHECK(ds.train_inputs.cols() == 2);
}

TEST_CASE("token-mask masks the documented number of positions") {
    DataSpec d;
    d.kind = "token-mask";
    d.n_train = 64;
    d.n_val = 32;
    d.vocab = 16;
    d.seq_len = 16;
    d.mask_rate = 0.15; // floor 2, fractional extra 0.4 -> count in {2, 3}

    const Dataset ds = generate_dataset(d, 13);
    const double mask_id = 16.0;
    auto audit = [&](const Matrix& x, const Matrix& y) {
        for (std::size_t i = 0; i < x.rows(); ++i) {
            std::size_t masked = 0;
            for (std::size_t j = 0; j < x.cols(); ++j) {
                if (x.at(i, j) == mask_id) {
                    ++masked;
                    // Target holds the original token.
                    const double tok = y.at(i, j);
                    CHECK(tok >= 0.0);
                    CHECK(tok < 16.0);
                    CHECK(tok == std::floor(tok));
                } else {
                    CHECK(x.at(i, j) >= 0.0);
                    CHECK(x.at(i, j) < 16.0);
                    CHECK(y.at(i, j) == -1.0); // unmasked positions are ignored
                }
            }
            CHECK(masked >= 2);
            CHECK(masked <= 3);
        }
    };
    audit(ds.train_inputs, ds.train_targets);
    audit(ds.val_inputs, ds.val_targets);

    const Dataset again = generate_dataset(d, 13);
    CHECK(same_bits(ds.train_inputs, again.train_inputs));
    CHECK(same_bits(ds.train_targets, again.train_targets));

    // A rate that rounds to zero still masks one position per sequence.
    d.seq_len = 8;
    d.mask_rate = 0.01;
    const Dataset tiny = generate_dataset(d, 13);
    for (std::size_t i = 0; i < tiny.train_inputs.rows(); ++i) {
        std::size_t masked = 0;
        for (std::size_t j = 0; j < tiny.train_inputs.cols(); ++j)
            if (tiny.train_inputs.at(i, j) == mask_id) ++masked;
        CHECK(masked == 1);
    }
}

TEST_CASE("run_experiment writes the artifact set reproducibly") {
    const RunSpec spec = tiny_run_spec();
    const fs::path a = scratch("run_a");
    const fs::path b = scratch("run_b");
    REQUIRE(run_experiment(spec, a.string()) == 0);
    REQUIRE(run_experiment(spec, b.string()) == 0);

    for (const char* f : {"config_resolved.ini", "metrics.csv", "ledger.json", "summary.json"}) {
        CAPTURE(f);
        REQUIRE(fs::exists(a / f));
        CHECK(read_file(a / f) == read_file(b / f));
    }
    CHECK_FALSE(fs::exists(a / ".lock")); // released on exit
    CHECK_FALSE(fs::exists(a / "error.json"));

    // The documented column list, verbatim.
    const std::string metrics = read_file(a / "metrics.csv");
    CHECK(metrics.rfind("epoch,module_layer,module_slot,lambda_max,lambda_min,eff_rank,"
                        "cond_number,in_info,train_loss,val_loss,weight_dist,flops_fwd,"
                        "flops_bwd,flops_ntk\n",
                        0) == 0);

    // Global rows use layer -1 and carry losses; module rows carry spectra.
    CHECK(metrics.find("\n1,-1,-1,") != std::string::npos);

    const json summary = json::parse(read_file(a / "summary.json"));
    CHECK(summary["name"] == "tiny");
    CHECK(summary["policy"] == "mat");
    CHECK(summary["seed"] == 11);
    CHECK(summary["epochs_run"] == 4);
    CHECK(summary["flops"]["total"].get<std::uint64_t>() > 0);
    CHECK(summary["epoch_histogram"].size() == 2); // one entry per module

    const json ledger = json::parse(read_file(a / "ledger.json"));
    CHECK(ledger["per_epoch"].size() >= 4);
    std::uint64_t fwd = 0, bwd = 0;
    for (const auto& e : ledger["per_epoch"]) {
        fwd += e["fwd_modular"].get<std::uint64_t>() + e["fwd_always"].get<std::uint64_t>();
        bwd += e["bwd_modular"].get<std::uint64_t>() + e["bwd_always"].get<std::uint64_t>();
    }
    CHECK(fwd == ledger["totals"]["forward"].get<std::uint64_t>());
    CHECK(bwd == ledger["totals"]["backward"].get<std::uint64_t>());

    // A different seed must change the artifacts.
    RunSpec other = spec;
    SpecOverrides ov;
    ov.seed = 12;
    apply_overrides(other, ov);
    const fs::path c = scratch("run_c");
    REQUIRE(run_experiment(other, c.string()) == 0);
    CHECK(read_file(a / "summary.json") != read_file(c / "summary.json"));
    CHECK(read_file(a / "metrics.csv") != read_file(c / "metrics.csv"));
}

TEST_CASE("a held lock refuses the run and a numeric blowup records an error") {
    const RunSpec spec = tiny_run_spec();
    const fs::path dir = scratch("run_locked");
    fs::create_directories(dir);
    std::ofstream(dir / ".lock") << "";
    CHECK_THROWS_AS(run_experiment(spec, dir.string()), IoError);

    RunSpec hot = spec;
    hot.train.lr = 1e8; // divergence by design
    hot.train.epochs = 40;
    const fs::path err = scratch("run_diverge");
    CHECK(run_experiment(hot, err.string()) == 1);
    const json record = json::parse(read_file(err / "error.json"));
    CHECK(record["error"] == "numeric");
    CHECK_FALSE(record["message"].get<std::string>().empty());
    CHECK_FALSE(fs::exists(err / ".lock"));
}

TEST_CASE("compare aligns runs and a self comparison has zero deltas") {
    RunSpec spec = tiny_run_spec();
    const fs::path v = scratch("cmp_vanilla");
    const fs::path m = scratch("cmp_mat");
    SpecOverrides ov;
    ov.policy = "vanilla";
    RunSpec vspec = spec;
    apply_overrides(vspec, ov);
    REQUIRE(run_experiment(vspec, v.string()) == 0);
    REQUIRE(run_experiment(spec, m.string()) == 0);

    const fs::path out = scratch("cmp_out");
    compare_runs({v.string(), m.string()}, out.string());
    for (const char* f : {"report.json", "loss_vs_flops.csv", "lambda_max.csv", "histogram.csv"}) {
        CAPTURE(f);
        CHECK(fs::exists(out / f));
    }

    const json report = json::parse(read_file(out / "report.json"));
    REQUIRE(report["runs"].size() == 2);
    for (const auto& r : report["runs"]) {
        CHECK(r.contains("flops_to_best_val"));
        CHECK(r.contains("total_flops"));
        CHECK(r.contains("backward_modular_flops"));
    }
    CHECK(report["aligned_epochs"].get<std::size_t>() == 4);
    CHECK(report["runs"][0]["policy"] == "vanilla");
    CHECK(report["runs"][1]["policy"] == "mat");

    const std::string lvf = read_file(out / "loss_vs_flops.csv");
    CHECK(lvf.rfind("run_index,run_name,epoch,cum_flops,train_loss,val_loss\n", 0) == 0);
    const std::string hist = read_file(out / "histogram.csv");
    CHECK(hist.rfind("run_index,run_name,module_layer,module_slot,epochs_active\n", 0) == 0);

    // Self comparison: every aligned delta is exactly zero.
    const fs::path self = scratch("cmp_self");
    compare_runs({v.string(), v.string()}, self.string());
    const json selfrep = json::parse(read_file(self / "report.json"));
    for (const auto& d : selfrep["val_loss_delta_vs_first"])
        for (const auto& x : d["delta_val_loss"]) CHECK(x.get<double>() == 0.0);
}

TEST_CASE("compare rejects incomplete or mismatched run directories") {
    CHECK_THROWS_AS(compare_runs({"one"}, scratch("cmp_few").string()), ValueError);

    const RunSpec spec = tiny_run_spec();
    const fs::path good = scratch("cmp_good");
    REQUIRE(run_experiment(spec, good.string()) == 0);

    const fs::path empty = scratch("cmp_empty");
    fs::create_directories(empty);
    CHECK_THROWS_AS(compare_runs({good.string(), empty.string()}, scratch("cmp_o1").string()),
                    CompatibilityError);

    // Doctored schema: wrong metrics header.
    const fs::path doctored = scratch("cmp_doctored");
    fs::create_directories(doctored);
    for (const char* f : {"ledger.json", "summary.json"})
        fs::copy_file(good / f, doctored / f);
    std::ofstream(doctored / "metrics.csv") << "epoch,foo\n1,2\n";
    CHECK_THROWS_AS(compare_runs({good.string(), doctored.string()}, scratch("cmp_o2").string()),
                    CompatibilityError);
}

TEST_CASE("the adaptive policy beats vanilla backward flops on the example spec") {
    const RunSpec base = load_run_spec(std::string(MATKIT_CONFIG_DIR) + "/example.ini");

    RunSpec vspec = base;
    SpecOverrides ov;
    ov.policy = "vanilla";
    apply_overrides(vspec, ov);

    const fs::path v = scratch("ex_vanilla");
    const fs::path m = scratch("ex_mat");
    REQUIRE(run_experiment(vspec, v.string()) == 0);
    REQUIRE(run_experiment(base, m.string()) == 0);

    const json vs = json::parse(read_file(v / "summary.json"));
    const json ms = json::parse(read_file(m / "summary.json"));
    CHECK(ms["flops"]["backward"].get<std::uint64_t>() <
          vs["flops"]["backward"].get<std::uint64_t>());
    CHECK(ms["flops"]["backward_modular"].get<std::uint64_t>() <
          vs["flops"]["backward_modular"].get<std::uint64_t>());
}
