#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mmlens/pipeline.hpp"

using namespace mmlens;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "mmlens_pipeline_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.d_model = 48;
    cfg.n_heads = 4;
    cfg.text_len = 16;
    cfg.latent_h = 4;
    cfg.latent_w = 4;
    cfg.seed = 2025;
    return cfg;
}

// writes a model config, a two-task color family, fixtures, and pair csv
struct Workspace {
    fs::path root;
    ModelConfig cfg;
    ExperimentManifest manifest;
};

Workspace make_workspace(const std::string& name, ExperimentKind experiment) {
    Workspace ws;
    ws.root = fresh_dir(name);
    ws.cfg = small_config();
    ws.cfg.save(ws.root / "model.cfg");

    TaskGenConfig gen = TaskGenConfig::defaults();
    gen.colors = {{"red", {220, 40, 40}}, {"blue", {50, 90, 220}}};
    gen.color_objects = {"cup"};
    gen.color_seeds = {11, 23};
    gen.style_subjects = {"boy", "fox"};
    gen.style_seeds = {11, 23};
    gen.style_instructions_per_subject = 1;
    gen.human_subjects = {"aiden", "bella"};
    gen.human_individual_prompts = 1;
    gen.scene_count = 2;
    gen.scenes_without_addition = 0;
    gen.scenes_without_removal = 0;

    auto tasks = build_all_families(gen);
    save_tasks_csv(ws.root / "tasks.csv", tasks);

    std::vector<PatchPair> pairs;
    for (Family f : {Family::ColorTransfer, Family::StyleTransfer, Family::HumanCustomization}) {
        std::vector<EditTask> family_tasks;
        for (const auto& t : tasks)
            if (t.family == f) family_tasks.push_back(t);
        auto p = build_patch_pairs(f, family_tasks);
        pairs.insert(pairs.end(), p.begin(), p.end());
    }
    save_pairs_csv(ws.root / "pairs.csv", pairs);

    fs::create_directories(ws.root / "fixtures");
    for (Family f : {Family::ObjectAddition, Family::HumanCustomization, Family::ColorTransfer,
                     Family::StyleTransfer}) {
        FixtureSet set = fixture_images(f, gen, ws.cfg.pixel_w(), ws.cfg.pixel_h());
        for (const auto& [id, img] : set.images) {
            fs::path path = ws.root / "fixtures" / (id + ".png");
            fs::create_directories(path.parent_path());
            write_png(path, img);
        }
    }

    ws.manifest.experiment = experiment;
    ws.manifest.model_config = ws.root / "model.cfg";
    ws.manifest.tasks = ws.root / "tasks.csv";
    ws.manifest.pairs = ws.root / "pairs.csv";
    ws.manifest.fixtures_dir = ws.root / "fixtures";
    ws.manifest.out_dir = ws.root / "out";
    ws.manifest.binding_layer = double_block(1);
    ws.manifest.color_binding_layer = single_block(2);
    ws.manifest.lens_seed = 99;
    ws.manifest.workers = 2;
    ws.manifest.judge_mode = "stub";
    return ws;
}

std::string slurp(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("manifest json roundtrip") {
    Workspace ws = make_workspace("manifest", ExperimentKind::Lens);
    ws.manifest.families = {"color_transfer"};
    ws.manifest.max_tasks = 2;
    ws.manifest.sweep_ordinals = {0, 1, 2};
    fs::path path = ws.root / "exp.json";
    ws.manifest.save(path);
    ExperimentManifest loaded = ExperimentManifest::load(path);
    CHECK(loaded.experiment == ExperimentKind::Lens);
    CHECK(loaded.binding_layer == double_block(1));
    CHECK(loaded.color_binding_layer == single_block(2));
    CHECK(loaded.lens_seed == 99);
    CHECK(loaded.families == std::vector<std::string>{"color_transfer"});
    CHECK(loaded.max_tasks == 2);
    CHECK(loaded.sweep_ordinals == std::vector<int>{0, 1, 2});
    CHECK(loaded.judge_mode == "stub");
}

TEST_CASE("a two-task lens experiment produces verdicts and a report") {
    Workspace ws = make_workspace("lens2", ExperimentKind::Lens);
    ws.manifest.families = {"color_transfer"};
    ws.manifest.max_tasks = 2;

    ExperimentOutcome outcome = run_experiment(ws.manifest);
    CHECK(outcome.verdicts.size() == 2);
    CHECK(fs::exists(ws.manifest.out_dir / "verdicts.jsonl"));
    CHECK(fs::exists(ws.manifest.out_dir / "report.txt"));
    CHECK(fs::exists(ws.manifest.out_dir / "report.csv"));
    CHECK(outcome.report.text.find("t2i_lens") != std::string::npos);
    CHECK(outcome.report.cells.size() == 1);
    CHECK(outcome.report.cells[0].n == 2);

    // every run record points at an image that exists, with a stored spec
    auto records = load_run_records(ws.manifest.out_dir / "runs.jsonl");
    CHECK(records.size() == 2 * 3);   // baseline, control, lens x 2 tasks
    for (const auto& r : records) {
        CHECK(fs::exists(ws.manifest.out_dir / r.image_path));
        CHECK(!r.spec_json.empty());
    }
}

TEST_CASE("stub-judged experiments are deterministic across executions") {
    Workspace a = make_workspace("det_a", ExperimentKind::Lens);
    a.manifest.families = {"color_transfer"};
    a.manifest.max_tasks = 2;
    Workspace b = make_workspace("det_b", ExperimentKind::Lens);
    b.manifest.families = {"color_transfer"};
    b.manifest.max_tasks = 2;

    run_experiment(a.manifest);
    run_experiment(b.manifest);

    CHECK(slurp(a.manifest.out_dir / "verdicts.jsonl") ==
          slurp(b.manifest.out_dir / "verdicts.jsonl"));
    CHECK(slurp(a.manifest.out_dir / "report.txt") == slurp(b.manifest.out_dir / "report.txt"));

    for (const auto& r : load_run_records(a.manifest.out_dir / "runs.jsonl")) {
        CHECK(slurp(a.manifest.out_dir / r.image_path) ==
              slurp(b.manifest.out_dir / r.image_path));
        if (!r.trace_path.empty())
            CHECK(slurp(a.manifest.out_dir / r.trace_path) ==
                  slurp(b.manifest.out_dir / r.trace_path));
    }
}

TEST_CASE("rerun skips completed runs and regenerates the report") {
    Workspace ws = make_workspace("resume", ExperimentKind::Lens);
    ws.manifest.families = {"color_transfer"};
    ws.manifest.max_tasks = 1;

    run_experiment(ws.manifest);
    std::string runs_before = slurp(ws.manifest.out_dir / "runs.jsonl");
    std::string verdicts_before = slurp(ws.manifest.out_dir / "verdicts.jsonl");
    std::string report_before = slurp(ws.manifest.out_dir / "report.txt");

    fs::remove(ws.manifest.out_dir / "report.txt");
    fs::remove(ws.manifest.out_dir / "report.csv");
    run_experiment(ws.manifest);

    // no duplicate run or verdict lines, report restored byte-identically
    CHECK(slurp(ws.manifest.out_dir / "runs.jsonl") == runs_before);
    CHECK(slurp(ws.manifest.out_dir / "verdicts.jsonl") == verdicts_before);
    CHECK(slurp(ws.manifest.out_dir / "report.txt") == report_before);
}

TEST_CASE("knockout experiment renders the four-row table") {
    Workspace ws = make_workspace("ko", ExperimentKind::Knockout);
    ws.manifest.families = {"color_transfer"};
    ws.manifest.max_tasks = 1;

    ExperimentOutcome outcome = run_experiment(ws.manifest);
    CHECK(outcome.verdicts.size() == 4);
    size_t t = outcome.report.text.find("ko_ref_to_text ");
    size_t tp = outcome.report.text.find("ko_ref_to_text_padding");
    size_t tc = outcome.report.text.find("ko_ref_to_text_content");
    size_t i = outcome.report.text.find("ko_ref_to_image");
    REQUIRE(t != std::string::npos);
    CHECK(t < tp);
    CHECK(tp < tc);
    CHECK(tc < i);
}

TEST_CASE("cross patch subset experiment judges three rows per pair") {
    Workspace ws = make_workspace("cps", ExperimentKind::CrossPatchSubset);
    ws.manifest.families = {"color_transfer"};
    ws.manifest.max_tasks = 1;

    ExperimentOutcome outcome = run_experiment(ws.manifest);
    CHECK(outcome.verdicts.size() == 3);
    CHECK(outcome.report.text.find("i2i_patching") != std::string::npos);
    CHECK(outcome.report.text.find("all_text") != std::string::npos);
    CHECK(outcome.report.text.find("padding_only") != std::string::npos);
    CHECK(outcome.report.text.find("content_only") != std::string::npos);
}

TEST_CASE("layer sweep writes one image per ordinal plus a grid manifest") {
    Workspace ws = make_workspace("sweep", ExperimentKind::LayerSweep);
    ws.manifest.families = {"color_transfer"};
    ws.manifest.max_tasks = 1;
    ws.manifest.sweep_op = "reference_drop";

    SweepArtifacts art = run_sweep(ws.manifest);
    CHECK(art.images.size() == static_cast<size_t>(ws.cfg.total_blocks() + 1));
    for (const auto& [ordinal, path] : art.images) CHECK(fs::exists(path));
    CHECK(fs::exists(art.manifest_path));

    // grid rendering on the sweep output
    fs::path grid_png = ws.root / "grid.png";
    fs::path grid_cap = ws.root / "grid.captions.txt";
    emit_grid(art.images, grid_png, grid_cap, 3);
    Image grid = read_png(grid_png);
    CHECK(grid.width > ws.cfg.pixel_w());
    std::string cap = slurp(grid_cap);
    CHECK(cap.find("ordinal 3") != std::string::npos);
    CHECK(cap.find("[binding]") != std::string::npos);

    SUBCASE("single image grid") {
        emit_grid({{0, art.images[0].second}}, ws.root / "grid1.png", ws.root / "grid1.txt", 0);
        Image g1 = read_png(ws.root / "grid1.png");
        CHECK(g1.width == ws.cfg.pixel_w() + 4);
    }

    SUBCASE("mismatched sizes are resized to the first cell") {
        fs::path odd = ws.root / "odd.png";
        write_png(odd, Image(ws.cfg.pixel_w() * 2, ws.cfg.pixel_h()));
        auto images = art.images;
        images.emplace_back(99, odd);
        CHECK_NOTHROW(emit_grid(images, ws.root / "grid2.png", ws.root / "grid2.txt", 0));
    }
}

TEST_CASE("weights file in the manifest overrides the seed init") {
    Workspace ws = make_workspace("weights", ExperimentKind::LayerSweep);
    ws.manifest.families = {"color_transfer"};
    ws.manifest.max_tasks = 1;
    ws.manifest.sweep_op = "reference_drop";

    // a zero-velocity model makes every sweep cell identical
    Model zeroed(ws.cfg);
    zeroed.zero_output_projections();
    zeroed.save_weights(ws.root / "zero.mmdl");
    ws.manifest.weights = ws.root / "zero.mmdl";

    SweepArtifacts art = run_sweep(ws.manifest);
    std::string first = slurp(art.images[0].second);
    for (const auto& [ordinal, path] : art.images) CHECK(slurp(path) == first);
}

TEST_CASE("binding layers are validated against the model config") {
    Workspace ws = make_workspace("badlayer", ExperimentKind::Lens);
    ws.manifest.binding_layer = double_block(7);   // config has 4 double blocks
    CHECK_THROWS_AS(execute_runs(ws.manifest), UnknownLayer);
}
