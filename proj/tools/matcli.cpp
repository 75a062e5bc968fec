#include <cstdio>
#include <filesystem>
#include <fstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "matkit/cli/compare.hpp"
#include "matkit/cli/runner.hpp"
#include "matkit/core/log.hpp"

namespace {

// Spec-level failures still leave a machine-readable record in the output
// directory when one was named; lock conflicts must not touch the directory.
void record_failure(const std::string& out_dir, const std::string& message) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) return;
    std::ofstream out(std::filesystem::path(out_dir) / "error.json", std::ios::binary);
    if (!out) return;
    out << nlohmann::json{{"error", "spec"}, {"message", message}}.dump(2) << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"modular tangent kernel training runs"};
    app.require_subcommand(1);

    std::string spec_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::string policy;
    double alpha = 0.0;
    double beta = 0.0;
    std::size_t samples = 0;
    std::size_t epochs = 0;
    std::size_t warmup = 0;
    std::size_t cadence = 0;
    std::string sticky;

    CLI::App* run = app.add_subcommand("run", "execute one training run");
    run->add_option("--spec", spec_path, "run spec file (INI)")->required();
    run->add_option("--out", out_dir, "output directory")->required();
    run->add_option("--seed", seed, "override the run seed");
    run->add_option("--policy", policy, "override the policy")
        ->check(CLI::IsMember({"vanilla", "rand", "multirate", "mat"}));
    run->add_option("--alpha", alpha, "override the eigenvalue threshold fraction");
    run->add_option("--beta", beta, "override the temporal stop threshold");
    run->add_option("--samples", samples, "override the snapshot sample count");
    run->add_option("--epochs", epochs, "override the epoch budget");
    run->add_option("--warmup", warmup, "override the warmup epochs");
    run->add_option("--cadence", cadence, "override the episode cadence");
    run->add_option("--sticky", sticky, "override sticky temporal stops")
        ->check(CLI::IsMember({"on", "off"}));

    std::vector<std::string> dirs;
    std::string report_dir;
    CLI::App* cmp = app.add_subcommand("compare", "join completed runs into a report");
    cmp->add_option("--out", report_dir, "report output directory")->required();
    cmp->add_option("dirs", dirs, "completed run directories")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            matkit::RunSpec spec = matkit::load_run_spec(spec_path);
            matkit::SpecOverrides ov;
            if (run->count("--seed")) ov.seed = seed;
            if (run->count("--policy")) ov.policy = policy;
            if (run->count("--alpha")) ov.alpha = alpha;
            if (run->count("--beta")) ov.beta = beta;
            if (run->count("--samples")) ov.samples = samples;
            if (run->count("--epochs")) ov.epochs = epochs;
            if (run->count("--warmup")) ov.warmup = warmup;
            if (run->count("--cadence")) ov.cadence = cadence;
            if (run->count("--sticky")) ov.sticky = sticky == "on";
            matkit::apply_overrides(spec, ov);
            return matkit::run_experiment(spec, out_dir);
        }
        matkit::compare_runs(dirs, report_dir);
        return 0;
    } catch (const matkit::IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        if (run->parsed() && !out_dir.empty()) record_failure(out_dir, e.what());
        return 1;
    }
}
