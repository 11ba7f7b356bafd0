#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmlens/interventions.hpp"
#include "mmlens/judge.hpp"
#include "mmlens/report.hpp"
#include "mmlens/taskgen.hpp"

namespace mmlens {

// One end-to-end experiment: which intervention, which tasks, which layers,
// where outputs go. Serialized as JSON so stages can run on different
// machines.
struct ExperimentManifest {
    ExperimentKind experiment = ExperimentKind::Lens;
    std::filesystem::path model_config;
    std::optional<std::filesystem::path> weights;     // seed-init when absent
    std::filesystem::path tasks;                       // task manifest csv
    std::optional<std::filesystem::path> pairs;        // patch pair csv
    std::filesystem::path fixtures_dir;
    std::filesystem::path out_dir;

    LayerId binding_layer = double_block(7);           // "double#8"
    LayerId color_binding_layer = single_block(9);     // "single#10", one-step lens
    uint64_t lens_seed = 1;
    int drop_cutoff = -1;                              // -1: binding layer ordinal + 1
    std::vector<int> sweep_ordinals;                   // layer_sweep only
    std::string sweep_op = "t2i_lens";                 // or "reference_drop"
    std::vector<std::string> families;                  // empty = all in the manifest
    int max_tasks = 0;                                  // 0 = no cap per family
    int workers = 1;

    std::string judge_mode = "stub";                   // "stub" | "endpoint"
    int judge_max_attempts = 2;
    int judge_timeout_s = 60;

    void save(const std::filesystem::path& path) const;
    static ExperimentManifest load(const std::filesystem::path& path);
};

struct RunRecord {
    std::string task_id;
    std::string role;            // i2i_baseline, t2i_baseline, lens_output, ...
    std::string image_path;      // relative to out_dir
    std::string trace_path;      // optional
    std::string spec_json;       // the RunSpec that produced the image
    double wall_ms = 0.0;
};

void append_run_records(const std::filesystem::path& path, const std::vector<RunRecord>& records);
std::vector<RunRecord> load_run_records(const std::filesystem::path& path);

struct ExperimentOutcome {
    std::vector<RunRecord> runs;
    std::vector<VerdictRecord> verdicts;
    Report report;
    int judge_failures = 0;
    std::filesystem::path verdict_log;
    std::filesystem::path report_txt;
    std::filesystem::path report_csv;
};

// Executes the whole experiment: generation runs (resumable; completed task
// ids are skipped), judging (per-task failures are logged, never fatal), and
// report rendering.
ExperimentOutcome run_experiment(const ExperimentManifest& manifest, JudgeClient* judge_override = nullptr);

// Stage entry points used by the CLI subcommands. Per-task judge failures
// are logged and counted via `failures`, never fatal to the batch.
std::vector<RunRecord> execute_runs(const ExperimentManifest& manifest);
std::vector<VerdictRecord> judge_runs(const ExperimentManifest& manifest,
                                      JudgeClient* judge_override = nullptr,
                                      int* failures = nullptr);
Report render_report(const ExperimentManifest& manifest);

// Sweep results on disk: one image per ordinal plus a grid manifest
// ("ordinal -> image path" structured text).
struct SweepArtifacts {
    std::vector<std::pair<int, std::filesystem::path>> images;
    std::filesystem::path manifest_path;
};
SweepArtifacts run_sweep(const ExperimentManifest& manifest);

// Tiles sweep images row-major into one composite (mismatched sizes are
// resized to the first image's dims with a warning), draws the ordinal in
// the corner of each cell, marks the binding ordinal with a border, and
// writes a caption file describing every cell.
void emit_grid(const std::vector<std::pair<int, std::filesystem::path>>& images,
               const std::filesystem::path& out_png, const std::filesystem::path& out_caption,
               int binding_ordinal);

std::string sanitize_id(const std::string& id);

} // namespace mmlens
