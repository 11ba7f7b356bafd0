#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mmlens/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mmlens;

namespace {

int cmd_gen_tasks(const std::string& config_path, const std::string& out, uint64_t seed,
                  int scale) {
    ModelConfig cfg = config_path.empty() ? ModelConfig{} : ModelConfig::load(config_path);
    cfg.validate();

    fs::path out_dir(out);
    fs::create_directories(out_dir / "fixtures");
    if (config_path.empty()) cfg.save(out_dir / "model.cfg");

    TaskGenConfig gen = TaskGenConfig::defaults();
    gen.seed = seed;
    gen = gen.scaled(scale);

    auto tasks = build_all_families(gen);
    save_tasks_csv(out_dir / "tasks.csv", tasks);

    std::vector<PatchPair> pairs;
    for (Family f : {Family::ColorTransfer, Family::StyleTransfer, Family::HumanCustomization}) {
        std::vector<EditTask> family_tasks;
        for (const auto& t : tasks)
            if (t.family == f) family_tasks.push_back(t);
        auto family_pairs = build_patch_pairs(f, family_tasks);
        pairs.insert(pairs.end(), family_pairs.begin(), family_pairs.end());
    }
    save_pairs_csv(out_dir / "pairs.csv", pairs);

    size_t n_fixtures = 0;
    for (Family f : {Family::ObjectAddition, Family::HumanCustomization, Family::ColorTransfer,
                     Family::StyleTransfer}) {
        FixtureSet set = fixture_images(f, gen, cfg.pixel_w(), cfg.pixel_h());
        for (const auto& [id, img] : set.images) {
            fs::path path = out_dir / "fixtures" / (id + ".png");
            fs::create_directories(path.parent_path());
            write_png(path, img);
            ++n_fixtures;
        }
    }
    write_default_denylists(out_dir);

    std::cout << "tasks: " << tasks.size() << "\npairs: " << pairs.size()
              << "\nfixtures: " << n_fixtures << "\nwrote " << (out_dir / "tasks.csv").string()
              << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale multimodal DiT intervention lab"};
    app.require_subcommand(1);

    // gen-tasks
    std::string gt_config, gt_out = "out/taskset";
    uint64_t gt_seed = 7;
    int gt_scale = 1;
    auto* gen = app.add_subcommand("gen-tasks", "build task families, fixtures and pair manifests");
    gen->add_option("--config", gt_config, "model config file (defaults written when omitted)");
    gen->add_option("--out", gt_out, "output directory");
    gen->add_option("--seed", gt_seed, "fixture seed");
    gen->add_option("--scale", gt_scale, "divide parameter lists by this factor")
        ->check(CLI::PositiveNumber);

    // run / judge / report / sweep
    std::string manifest_path, judge_mode_override;
    int workers_override = 0;
    auto add_manifest_opts = [&](CLI::App* cmd) {
        cmd->add_option("--manifest", manifest_path, "experiment manifest (json)")->required();
        cmd->add_option("--judge", judge_mode_override, "judge mode: stub or endpoint");
        cmd->add_option("--workers", workers_override, "worker thread cap");
    };
    auto* run = app.add_subcommand("run", "execute an experiment end to end (runs, judge, report)");
    add_manifest_opts(run);
    auto* judge_cmd = app.add_subcommand("judge", "judge completed runs and append verdicts");
    add_manifest_opts(judge_cmd);
    auto* report_cmd = app.add_subcommand("report", "render report tables from the verdict log");
    report_cmd->add_option("--manifest", manifest_path, "experiment manifest (json)")->required();
    auto* sweep_cmd = app.add_subcommand("sweep", "run a layer sweep and write the grid manifest");
    add_manifest_opts(sweep_cmd);

    // grid
    std::string grid_manifest, grid_out, grid_caption;
    int grid_binding = -1;
    auto* grid_cmd = app.add_subcommand("grid", "tile sweep images into a labeled composite");
    grid_cmd->add_option("--manifest", grid_manifest, "sweep manifest (ordinal -> image path)")
        ->required();
    grid_cmd->add_option("--out", grid_out, "composite png path")->required();
    grid_cmd->add_option("--caption", grid_caption, "caption file path");
    grid_cmd->add_option("--binding", grid_binding, "ordinal to outline as the binding layer");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen_tasks(gt_config, gt_out, gt_seed, gt_scale);

        if (grid_cmd->parsed()) {
            std::ifstream mf(grid_manifest);
            if (!mf) throw IoError("cannot read sweep manifest: " + grid_manifest);
            fs::path base = fs::path(grid_manifest).parent_path();
            std::vector<std::pair<int, fs::path>> images;
            std::string line;
            while (std::getline(mf, line)) {
                if (line.empty() || line[0] == '#') continue;
                std::istringstream is(line);
                int ordinal;
                std::string label, rel;
                is >> ordinal >> label >> rel;
                if (!is.fail()) images.emplace_back(ordinal, base / rel);
            }
            std::string caption = grid_caption.empty() ? grid_out + ".captions.txt" : grid_caption;
            emit_grid(images, grid_out, caption, grid_binding);
            std::cout << "wrote " << grid_out << "\n";
            return 0;
        }

        ExperimentManifest manifest = ExperimentManifest::load(manifest_path);
        if (!judge_mode_override.empty()) manifest.judge_mode = judge_mode_override;
        if (workers_override > 0) manifest.workers = workers_override;

        if (run->parsed()) {
            ExperimentOutcome outcome = run_experiment(manifest);
            std::cout << "runs: " << outcome.runs.size()
                      << "\nverdicts: " << outcome.verdicts.size()
                      << "\njudge failures: " << outcome.judge_failures << "\n"
                      << outcome.report.text;
            return 0;
        }
        if (judge_cmd->parsed()) {
            auto verdicts = judge_runs(manifest);
            std::cout << "verdicts: " << verdicts.size() << "\n";
            return 0;
        }
        if (report_cmd->parsed()) {
            Report report = render_report(manifest);
            std::cout << report.text;
            return 0;
        }
        if (sweep_cmd->parsed()) {
            SweepArtifacts art = run_sweep(manifest);
            std::cout << "sweep images: " << art.images.size() << "\nmanifest: "
                      << art.manifest_path.string() << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
