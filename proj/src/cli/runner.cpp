#include "matkit/cli/runner.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "matkit/cli/datagen.hpp"
#include "matkit/core/log.hpp"

namespace matkit {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Exclusive ownership of the output directory for this process's lifetime.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0)
            throw IoError("output directory '" + dir.string() +
                          "' is locked by another run (.lock exists)");
        ::close(fd);
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
};

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
}

std::string metrics_csv(const RunResult& res) {
    std::string out = kMetricsHeader;
    out += '\n';
    auto cell_d = [](const std::optional<double>& v) { return v ? fmt17(*v) : std::string(); };
    auto cell_u = [](const std::optional<std::uint64_t>& v) {
        return v ? std::to_string(*v) : std::string();
    };
    for (const MetricRow& r : res.metrics) {
        out += std::to_string(r.epoch);
        if (r.module) {
            out += ',' + std::to_string(r.module->layer) + ',' + std::to_string(r.module->slot);
        } else {
            out += ",-1,-1";
        }
        out += ',' + cell_d(r.lambda_max);
        out += ',' + cell_d(r.lambda_min);
        out += ',' + cell_d(r.eff_rank);
        out += ',' + cell_d(r.cond_number);
        out += ',';
        if (r.in_info) out += *r.in_info ? '1' : '0';
        out += ',' + cell_d(r.train_loss);
        out += ',' + cell_d(r.val_loss);
        out += ',' + cell_d(r.weight_dist);
        out += ',' + cell_u(r.flops_fwd);
        out += ',' + cell_u(r.flops_bwd);
        out += ',' + cell_u(r.flops_ntk);
        out += '\n';
    }
    return out;
}

json ledger_json(const FlopsLedger& ledger) {
    json per_epoch = json::array();
    for (const EpochFlops& e : ledger.per_epoch) {
        per_epoch.push_back({{"epoch", e.epoch},
                             {"fwd_modular", e.fwd_modular},
                             {"fwd_always", e.fwd_always},
                             {"bwd_modular", e.bwd_modular},
                             {"bwd_always", e.bwd_always},
                             {"ntk", e.ntk}});
    }
    return {{"per_epoch", per_epoch},
            {"totals",
             {{"forward_modular", ledger.forward_modular},
              {"forward_always", ledger.forward_always},
              {"backward_modular", ledger.backward_modular},
              {"backward_always", ledger.backward_always},
              {"ntk", ledger.ntk_overhead},
              {"forward", ledger.forward_total()},
              {"backward", ledger.backward_total()},
              {"total", ledger.total()}}}};
}

json summary_json(const RunSpec& spec, const Dataset& ds, const RunResult& res) {
    std::uint64_t flops_to_best = 0;
    for (const EpochFlops& e : res.ledger.per_epoch)
        if (e.epoch <= res.best_val_epoch)
            flops_to_best += e.fwd_modular + e.fwd_always + e.bwd_modular + e.bwd_always + e.ntk;

    json hist = json::array();
    for (const auto& [id, count] : epoch_histogram(res))
        hist.push_back({{"layer", id.layer}, {"slot", id.slot}, {"epochs_active", count}});

    return {{"name", spec.name},
            {"policy", to_string(spec.train.policy)},
            {"seed", spec.train.seed},
            {"dataset", {{"kind", spec.data.kind}, {"name", ds.name}, {"seed", ds.seed}}},
            {"arch", spec.model_fields.arch},
            {"epochs_run", res.epochs_run},
            {"stop_reason", res.stop_reason},
            {"final_train_loss", res.final_train_loss},
            {"final_val_loss", res.final_val_loss},
            {"best_val_loss", res.best_val_loss},
            {"best_val_epoch", res.best_val_epoch},
            {"flops",
             {{"forward", res.ledger.forward_total()},
              {"backward", res.ledger.backward_total()},
              {"backward_modular", res.ledger.backward_modular},
              {"ntk", res.ledger.ntk_overhead},
              {"total", res.ledger.total()}}},
            {"flops_to_best_val", flops_to_best},
            {"epoch_histogram", hist}};
}

} // namespace

int run_experiment(const RunSpec& spec, const std::string& out_dir) {
    spec.validate();
    const fs::path out(out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out))
        throw IoError("cannot create output directory '" + out_dir + "'");

    DirLock lock(out);
    try {
        log::info("run '" + spec.name + "' policy " + to_string(spec.train.policy) + " seed " +
                  std::to_string(spec.train.seed) + " -> " + out_dir);

        write_text(out / "config_resolved.ini", resolved_echo(spec));

        const Dataset ds = generate_dataset(spec.data, mix_seed(spec.train.seed, "data"));
        const ModularNetwork net = build_network(spec.model, spec.train.seed);
        const RunResult res = train(net, ds, spec.train);

        write_text(out / "metrics.csv", metrics_csv(res));
        write_text(out / "ledger.json", ledger_json(res.ledger).dump(2) + "\n");
        write_text(out / "summary.json", summary_json(spec, ds, res).dump(2) + "\n");

        log::info("run '" + spec.name + "' finished: " + res.stop_reason + " after " +
                  std::to_string(res.epochs_run) + " epochs, val " + fmt17(res.final_val_loss));
        return 0;
    } catch (const std::exception& e) {
        const char* kind = "internal";
        if (dynamic_cast<const SpecError*>(&e)) kind = "spec";
        else if (dynamic_cast<const NumericError*>(&e)) kind = "numeric";
        else if (dynamic_cast<const ConvergenceError*>(&e)) kind = "numeric";
        else if (dynamic_cast<const IoError*>(&e)) kind = "io";
        else if (dynamic_cast<const Error*>(&e)) kind = "usage";
        log::error(std::string("run failed: ") + e.what());
        const json record = {{"error", kind}, {"message", e.what()}};
        write_text(out / "error.json", record.dump(2) + "\n");
        return 1;
    }
}

} // namespace matkit
