#include "matkit/cli/compare.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "matkit/cli/runner.hpp"

namespace matkit {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct ModuleRow {
    std::size_t epoch;
    long layer;
    long slot;
    double lambda_max;
};

struct LoadedRun {
    std::string dir;
    std::string name;
    json summary;
    std::vector<std::pair<std::size_t, std::uint64_t>> epoch_flops; // epoch, that epoch's total
    std::vector<std::pair<std::size_t, std::pair<double, double>>> losses; // epoch -> train, val
    std::vector<ModuleRow> module_rows;
};

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CompatibilityError("missing run artifact '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

json read_json(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw CompatibilityError("cannot parse '" + path.string() + "': " + e.what());
    }
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    cells.push_back(cur);
    return cells;
}

LoadedRun load_run(const std::string& dir) {
    LoadedRun run;
    run.dir = dir;
    run.summary = read_json(fs::path(dir) / "summary.json");
    if (!run.summary.contains("name") || !run.summary.contains("flops_to_best_val"))
        throw CompatibilityError("summary.json in '" + dir + "' lacks required fields");
    run.name = run.summary["name"].get<std::string>();

    const json ledger = read_json(fs::path(dir) / "ledger.json");
    if (!ledger.contains("per_epoch"))
        throw CompatibilityError("ledger.json in '" + dir + "' lacks per_epoch");
    for (const json& e : ledger["per_epoch"]) {
        const std::uint64_t total = e["fwd_modular"].get<std::uint64_t>() +
                                    e["fwd_always"].get<std::uint64_t>() +
                                    e["bwd_modular"].get<std::uint64_t>() +
                                    e["bwd_always"].get<std::uint64_t>() +
                                    e["ntk"].get<std::uint64_t>();
        run.epoch_flops.emplace_back(e["epoch"].get<std::size_t>(), total);
    }

    std::istringstream metrics(read_text(fs::path(dir) / "metrics.csv"));
    std::string line;
    if (!std::getline(metrics, line) || line != kMetricsHeader)
        throw CompatibilityError("metrics.csv in '" + dir + "' does not match the schema");
    while (std::getline(metrics, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_csv(line);
        if (cells.size() != 14)
            throw CompatibilityError("metrics.csv in '" + dir + "' has a malformed row");
        const std::size_t epoch = std::stoul(cells[0]);
        const long layer = std::stol(cells[1]);
        if (layer < 0) {
            run.losses.emplace_back(epoch,
                                    std::make_pair(std::stod(cells[8]), std::stod(cells[9])));
        } else if (!cells[3].empty()) {
            run.module_rows.push_back({epoch, layer, std::stol(cells[2]), std::stod(cells[3])});
        }
    }
    return run;
}

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

void compare_runs(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    if (run_dirs.size() < 2) throw ValueError("compare_runs: need at least two run directories");

    std::vector<LoadedRun> runs;
    runs.reserve(run_dirs.size());
    for (const std::string& dir : run_dirs) runs.push_back(load_run(dir));

    const fs::path out(out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out))
        throw IoError("cannot create output directory '" + out_dir + "'");

    std::size_t aligned = runs[0].losses.size();
    for (const LoadedRun& r : runs) aligned = std::min(aligned, r.losses.size());

    json report_runs = json::array();
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const json& s = runs[i].summary;
        report_runs.push_back({{"index", i},
                               {"dir", runs[i].dir},
                               {"name", runs[i].name},
                               {"policy", s.value("policy", "?")},
                               {"seed", s.value("seed", 0)},
                               {"epochs_run", s.value("epochs_run", 0)},
                               {"stop_reason", s.value("stop_reason", "?")},
                               {"final_train_loss", s.value("final_train_loss", 0.0)},
                               {"final_val_loss", s.value("final_val_loss", 0.0)},
                               {"best_val_loss", s.value("best_val_loss", 0.0)},
                               {"total_flops", s["flops"].value("total", 0)},
                               {"backward_modular_flops", s["flops"].value("backward_modular", 0)},
                               {"flops_to_best_val", s["flops_to_best_val"]}});
    }

    json deltas = json::array();
    for (std::size_t i = 0; i < runs.size(); ++i) {
        json series = json::array();
        for (std::size_t e = 0; e < aligned; ++e)
            series.push_back(runs[i].losses[e].second.second - runs[0].losses[e].second.second);
        deltas.push_back({{"index", i}, {"dir", runs[i].dir}, {"delta_val_loss", series}});
    }

    const json report = {
        {"runs", report_runs}, {"aligned_epochs", aligned}, {"val_loss_delta_vs_first", deltas}};
    std::ofstream rep(out / "report.json", std::ios::binary);
    if (!rep) throw IoError("cannot write report.json");
    rep << report.dump(2) << "\n";

    std::ofstream lvf(out / "loss_vs_flops.csv", std::ios::binary);
    lvf << "run_index,run_name,epoch,cum_flops,train_loss,val_loss\n";
    for (std::size_t i = 0; i < runs.size(); ++i) {
        // Cumulative cost at each epoch, measurement passes included; the
        // ledger may start with an epoch-0 row for a pre-training snapshot.
        std::uint64_t cum = 0;
        std::size_t fi = 0;
        for (const auto& [epoch, tv] : runs[i].losses) {
            while (fi < runs[i].epoch_flops.size() && runs[i].epoch_flops[fi].first <= epoch)
                cum += runs[i].epoch_flops[fi++].second;
            lvf << i << ',' << runs[i].name << ',' << epoch << ',' << cum << ','
                << fmt17(tv.first) << ',' << fmt17(tv.second) << '\n';
        }
    }

    std::ofstream lam(out / "lambda_max.csv", std::ios::binary);
    lam << "run_index,run_name,epoch,module_layer,module_slot,lambda_max\n";
    for (std::size_t i = 0; i < runs.size(); ++i)
        for (const ModuleRow& r : runs[i].module_rows)
            lam << i << ',' << runs[i].name << ',' << r.epoch << ',' << r.layer << ',' << r.slot
                << ',' << fmt17(r.lambda_max) << '\n';

    std::ofstream hist(out / "histogram.csv", std::ios::binary);
    hist << "run_index,run_name,module_layer,module_slot,epochs_active\n";
    for (std::size_t i = 0; i < runs.size(); ++i) {
        if (!runs[i].summary.contains("epoch_histogram")) continue;
        for (const json& h : runs[i].summary["epoch_histogram"])
            hist << i << ',' << runs[i].name << ',' << h.value("layer", 0) << ','
                 << h.value("slot", 0) << ',' << h.value("epochs_active", 0) << '\n';
    }
}

} // namespace matkit
