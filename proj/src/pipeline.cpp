#include "mmlens/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <tuple>

#include <json.hpp>

#include "mmlens/parallel.hpp"
#include "mmlens/rng.hpp"

namespace mmlens {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// manifest io

void ExperimentManifest::save(const fs::path& path) const {
    json doc = {
        {"experiment", experiment_kind_name(experiment)},
        {"model_config", model_config.string()},
        {"tasks", tasks.string()},
        {"fixtures_dir", fixtures_dir.string()},
        {"out_dir", out_dir.string()},
        {"binding_layer", binding_layer.display()},
        {"color_binding_layer", color_binding_layer.display()},
        {"lens_seed", lens_seed},
        {"drop_cutoff", drop_cutoff},
        {"sweep_op", sweep_op},
        {"sweep_ordinals", sweep_ordinals},
        {"families", families},
        {"max_tasks", max_tasks},
        {"workers", workers},
        {"judge", {{"mode", judge_mode},
                   {"max_attempts", judge_max_attempts},
                   {"timeout_s", judge_timeout_s}}},
    };
    if (weights) doc["weights"] = weights->string();
    if (pairs) doc["pairs"] = pairs->string();
    std::ofstream f(path);
    if (!f) throw IoError("cannot write manifest: " + path.string());
    f << doc.dump(2) << "\n";
}

ExperimentManifest ExperimentManifest::load(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read manifest: " + path.string());
    json doc = json::parse(f, nullptr, false);
    if (doc.is_discarded())
        throw IoError("manifest is not valid JSON: " + path.string());

    ExperimentManifest m;
    m.experiment = parse_experiment_kind(doc.at("experiment").get<std::string>());
    m.model_config = doc.at("model_config").get<std::string>();
    m.tasks = doc.at("tasks").get<std::string>();
    m.fixtures_dir = doc.at("fixtures_dir").get<std::string>();
    m.out_dir = doc.at("out_dir").get<std::string>();
    if (doc.contains("weights")) m.weights = fs::path(doc["weights"].get<std::string>());
    if (doc.contains("pairs")) m.pairs = fs::path(doc["pairs"].get<std::string>());
    if (doc.contains("binding_layer"))
        m.binding_layer = LayerId::parse(doc["binding_layer"].get<std::string>());
    if (doc.contains("color_binding_layer"))
        m.color_binding_layer = LayerId::parse(doc["color_binding_layer"].get<std::string>());
    if (doc.contains("lens_seed")) m.lens_seed = doc["lens_seed"].get<uint64_t>();
    if (doc.contains("drop_cutoff")) m.drop_cutoff = doc["drop_cutoff"].get<int>();
    if (doc.contains("sweep_op")) m.sweep_op = doc["sweep_op"].get<std::string>();
    if (doc.contains("sweep_ordinals"))
        m.sweep_ordinals = doc["sweep_ordinals"].get<std::vector<int>>();
    if (doc.contains("families")) m.families = doc["families"].get<std::vector<std::string>>();
    if (doc.contains("max_tasks")) m.max_tasks = doc["max_tasks"].get<int>();
    if (doc.contains("workers")) m.workers = doc["workers"].get<int>();
    if (doc.contains("judge")) {
        const json& j = doc["judge"];
        if (j.contains("mode")) m.judge_mode = j["mode"].get<std::string>();
        if (j.contains("max_attempts")) m.judge_max_attempts = j["max_attempts"].get<int>();
        if (j.contains("timeout_s")) m.judge_timeout_s = j["timeout_s"].get<int>();
    }
    return m;
}

void append_run_records(const fs::path& path, const std::vector<RunRecord>& records) {
    std::ofstream f(path, std::ios::app);
    if (!f) throw IoError("cannot open run log: " + path.string());
    for (const auto& r : records) {
        json line = {{"task_id", r.task_id},   {"role", r.role},
                     {"image_path", r.image_path}, {"trace_path", r.trace_path},
                     {"spec", r.spec_json},    {"wall_ms", r.wall_ms}};
        f << line.dump() << "\n";
    }
}

std::vector<RunRecord> load_run_records(const fs::path& path) {
    std::vector<RunRecord> out;
    std::ifstream f(path);
    if (!f) return out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded()) continue;
        RunRecord r;
        r.task_id = doc.value("task_id", "");
        r.role = doc.value("role", "");
        r.image_path = doc.value("image_path", "");
        r.trace_path = doc.value("trace_path", "");
        r.spec_json = doc.value("spec", "");
        r.wall_ms = doc.value("wall_ms", 0.0);
        out.push_back(std::move(r));
    }
    return out;
}

std::string sanitize_id(const std::string& id) {
    std::string out;
    out.reserve(id.size());
    for (char c : id) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')
            out.push_back(c);
        else
            out.push_back('_');
    }
    return out;
}

// ---------------------------------------------------------------------------
// shared runtime

namespace {

struct Runtime {
    ExperimentManifest manifest;
    ModelConfig cfg;
    std::unique_ptr<Model> model;
    std::vector<EditTask> tasks;
    std::vector<PatchPair> pairs;
    fs::path images_dir;
    fs::path traces_dir;
    fs::path runs_log;
    fs::path verdict_log;
};

std::set<Family> judged_families(ExperimentKind e) {
    switch (e) {
        case ExperimentKind::Lens:
        case ExperimentKind::LensSubset:
            return {Family::ColorTransfer, Family::StyleTransfer, Family::HumanCustomization,
                    Family::ObjectAddition, Family::ObjectRemoval};
        case ExperimentKind::Knockout:
        case ExperimentKind::CrossPatch:
        case ExperimentKind::CrossPatchSubset:
            return {Family::ColorTransfer, Family::StyleTransfer, Family::HumanCustomization};
        case ExperimentKind::ReferenceDrop:
            return {Family::ColorTransfer, Family::StyleTransfer};
        default:
            return {Family::ColorTransfer, Family::StyleTransfer, Family::HumanCustomization,
                    Family::ObjectAddition, Family::ObjectRemoval};
    }
}

Runtime make_runtime(const ExperimentManifest& manifest) {
    Runtime rt;
    rt.manifest = manifest;
    rt.cfg = ModelConfig::load(manifest.model_config);
    rt.model = std::make_unique<Model>(rt.cfg);
    if (manifest.weights) rt.model->load_weights(*manifest.weights);

    // fail fast on layers the config cannot address
    manifest.binding_layer.validate(rt.cfg);
    manifest.color_binding_layer.validate(rt.cfg);

    auto all_tasks = load_tasks_csv(manifest.tasks);
    std::set<Family> wanted = judged_families(manifest.experiment);
    if (!manifest.families.empty()) {
        std::set<Family> filter;
        for (const auto& name : manifest.families) filter.insert(parse_family(name));
        std::set<Family> narrowed;
        for (Family f : filter)
            if (wanted.count(f)) narrowed.insert(f);
        wanted = narrowed;
    }
    std::map<Family, int> kept;
    for (auto& t : all_tasks) {
        if (!wanted.count(t.family)) continue;
        if (manifest.max_tasks > 0 && kept[t.family] >= manifest.max_tasks) continue;
        ++kept[t.family];
        rt.tasks.push_back(std::move(t));
    }

    if (manifest.experiment == ExperimentKind::CrossPatch ||
        manifest.experiment == ExperimentKind::CrossPatchSubset) {
        if (!manifest.pairs)
            throw InvalidConfig("cross patch experiments need a pair manifest");
        auto tasks_for_pairs = load_tasks_csv(manifest.tasks);
        auto all_pairs = load_pairs_csv(*manifest.pairs, tasks_for_pairs);
        std::map<Family, int> pair_kept;
        for (auto& p : all_pairs) {
            if (!wanted.count(p.source.family)) continue;
            if (manifest.max_tasks > 0 && pair_kept[p.source.family] >= manifest.max_tasks)
                continue;
            ++pair_kept[p.source.family];
            rt.pairs.push_back(std::move(p));
        }
    }

    rt.images_dir = manifest.out_dir / "images";
    rt.traces_dir = manifest.out_dir / "traces";
    rt.runs_log = manifest.out_dir / "runs.jsonl";
    rt.verdict_log = manifest.out_dir / "verdicts.jsonl";
    fs::create_directories(rt.images_dir);
    fs::create_directories(rt.traces_dir);
    return rt;
}

LatentImage encode_reference(const Runtime& rt, const std::string& reference_id) {
    fs::path path = rt.manifest.fixtures_dir / (reference_id + ".png");
    return encode_image(rt.cfg, read_png(path));
}

std::string spec_summary(const RunSpec& spec, const std::string& instruction,
                         const std::string& reference_id, const std::string& note) {
    json doc = {{"mode", run_mode_name(spec.mode)},
                {"seed", spec.seed},
                {"instruction", instruction},
                {"reference", reference_id},
                {"interventions", note}};
    return doc.dump();
}

uint64_t task_lens_seed(const ExperimentManifest& manifest, const std::string& task_id) {
    return Rng(manifest.lens_seed).fork("lens").fork(task_id).next_u64();
}

LayerId family_patch_layer(const ExperimentManifest& manifest, Family family) {
    return family == Family::ColorTransfer ? manifest.color_binding_layer
                                           : manifest.binding_layer;
}

LensVariant family_lens_variant(Family family) {
    return family == Family::ColorTransfer ? LensVariant::SameLayerOneStep
                                           : LensVariant::InputFourStep;
}

struct JobOutput {
    std::vector<RunRecord> records;
};

class RunWriter {
  public:
    RunWriter(const Runtime& rt, const std::string& task_id)
        : rt_(rt), task_id_(task_id) {}

    std::string write_image(const std::string& role, const Image& img) {
        std::string rel = "images/" + sanitize_id(task_id_) + "__" + role + ".png";
        write_png(rt_.manifest.out_dir / rel, img);
        return rel;
    }
    std::string write_trace(const std::string& role, const ActivationTrace& trace) {
        std::string rel = "traces/" + sanitize_id(task_id_) + "__" + role + ".trce";
        trace.save(rt_.manifest.out_dir / rel);
        return rel;
    }

    void record(const std::string& role, const std::string& image_rel,
                const std::string& trace_rel, const RunSpec& spec, const std::string& instruction,
                const std::string& reference_id, const std::string& note, double wall_ms) {
        RunRecord r;
        r.task_id = task_id_;
        r.role = role;
        r.image_path = image_rel;
        r.trace_path = trace_rel;
        r.spec_json = spec_summary(spec, instruction, reference_id, note);
        r.wall_ms = wall_ms;
        out.records.push_back(std::move(r));
    }

    JobOutput out;

  private:
    const Runtime& rt_;
    std::string task_id_;
};

double ms_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
}

// roles each experiment produces per task, used for resume checks
std::vector<std::string> expected_roles(const ExperimentManifest& manifest) {
    switch (manifest.experiment) {
        case ExperimentKind::Lens:
            return {"i2i_baseline", "t2i_baseline", "lens_all_text"};
        case ExperimentKind::LensSubset:
            return {"i2i_baseline", "t2i_baseline", "lens_all_text", "lens_padding_only",
                    "lens_content_only"};
        case ExperimentKind::Knockout:
            return {"i2i_baseline", "ko_ref_to_text", "ko_ref_to_text_padding",
                    "ko_ref_to_text_content", "ko_ref_to_image"};
        case ExperimentKind::ReferenceDrop:
            return {"i2i_baseline", "drop_output"};
        case ExperimentKind::CrossPatch:
            return {"source_baseline", "target_baseline", "patched_all_text"};
        case ExperimentKind::CrossPatchSubset:
            return {"source_baseline", "target_baseline", "patched_all_text",
                    "patched_padding_only", "patched_content_only"};
        default:
            return {};
    }
}

void run_lens_task(const Runtime& rt, const EditTask& task, RunWriter& w) {
    const auto& manifest = rt.manifest;
    const Model& model = *rt.model;
    const LayerId layer = family_patch_layer(manifest, task.family);
    const LensVariant variant = family_lens_variant(task.family);
    std::vector<uint32_t> prompt = tokenize(task.instruction);

    RunSpec i2i;
    i2i.mode = RunMode::I2I;
    i2i.prompt = prompt;
    i2i.reference = encode_reference(rt, task.reference_id);
    i2i.seed = task.seed;
    i2i.capture_layers = {layer};
    auto t0 = std::chrono::steady_clock::now();
    RunResult base = model.sample(i2i);
    auto trace = std::make_shared<ActivationTrace>(std::move(base.trace));
    w.record("i2i_baseline", w.write_image("i2i_baseline", base.pixels),
             w.write_trace("i2i_baseline", *trace), i2i, task.instruction, task.reference_id,
             "capture@" + layer.display(), ms_since(t0));

    RunSpec t2i;
    t2i.mode = RunMode::T2I;
    t2i.prompt = prompt;
    t2i.seed = task.seed;
    t0 = std::chrono::steady_clock::now();
    RunResult control = model.sample(t2i);
    w.record("t2i_baseline", w.write_image("t2i_baseline", control.pixels), "", t2i,
             task.instruction, task.reference_id, "", ms_since(t0));

    std::vector<TokenSubset> subsets = {TokenSubset::AllText};
    if (manifest.experiment == ExperimentKind::LensSubset) {
        subsets.push_back(TokenSubset::PaddingOnly);
        subsets.push_back(TokenSubset::ContentOnly);
    }
    const uint64_t seed = task_lens_seed(manifest, task.task_id);
    for (TokenSubset subset : subsets) {
        t0 = std::chrono::steady_clock::now();
        RunResult lens = t2i_lens(model, trace, layer, variant, seed, subset);
        std::string role = std::string("lens_") + token_subset_name(subset);
        RunSpec lens_spec;
        lens_spec.mode = RunMode::UnconditionalT2I;
        lens_spec.seed = seed;
        w.record(role, w.write_image(role, lens.pixels), "", lens_spec, "", task.reference_id,
                 "lens@" + layer.display() + "/" + token_subset_name(subset), ms_since(t0));
    }
}

void run_knockout_task(const Runtime& rt, const EditTask& task, RunWriter& w) {
    const Model& model = *rt.model;
    const int total = rt.cfg.total_blocks();
    std::vector<uint32_t> prompt = tokenize(task.instruction);

    RunSpec i2i;
    i2i.mode = RunMode::I2I;
    i2i.prompt = prompt;
    i2i.reference = encode_reference(rt, task.reference_id);
    i2i.seed = task.seed;
    auto t0 = std::chrono::steady_clock::now();
    RunResult base = model.sample(i2i);
    w.record("i2i_baseline", w.write_image("i2i_baseline", base.pixels), "", i2i,
             task.instruction, task.reference_id, "", ms_since(t0));

    struct Variant {
        const char* role;
        EdgeMaskSpec edges;
        std::optional<TokenSubset> subset;
    };
    std::vector<Variant> variants = {
        {"ko_ref_to_text", ko_ref_to_text(0, total), std::nullopt},
        {"ko_ref_to_text_padding", ko_ref_to_text(0, total), TokenSubset::PaddingOnly},
        {"ko_ref_to_text_content", ko_ref_to_text(0, total), TokenSubset::ContentOnly},
        {"ko_ref_to_image", ko_ref_to_image(0, total), std::nullopt},
    };
    for (auto& variant : variants) {
        RunSpec spec = i2i;
        spec.interventions.push_back(KnockoutSpec{variant.edges, variant.subset});
        t0 = std::chrono::steady_clock::now();
        RunResult res = model.sample(spec);
        w.record(variant.role, w.write_image(variant.role, res.pixels), "", spec,
                 task.instruction, task.reference_id, variant.role, ms_since(t0));
    }
}

void run_drop_task(const Runtime& rt, const EditTask& task, RunWriter& w) {
    const auto& manifest = rt.manifest;
    const Model& model = *rt.model;
    std::vector<uint32_t> prompt = tokenize(task.instruction);

    RunSpec i2i;
    i2i.mode = RunMode::I2I;
    i2i.prompt = prompt;
    i2i.reference = encode_reference(rt, task.reference_id);
    i2i.seed = task.seed;
    auto t0 = std::chrono::steady_clock::now();
    RunResult base = model.sample(i2i);
    w.record("i2i_baseline", w.write_image("i2i_baseline", base.pixels), "", i2i,
             task.instruction, task.reference_id, "", ms_since(t0));

    int cutoff = manifest.drop_cutoff;
    if (cutoff < 0)
        cutoff = family_patch_layer(manifest, task.family).ordinal(rt.cfg) + 1;
    t0 = std::chrono::steady_clock::now();
    RunResult dropped = reference_drop(model, i2i, cutoff);
    w.record("drop_output", w.write_image("drop_output", dropped.pixels), "", i2i,
             task.instruction, task.reference_id, "drop@cutoff=" + std::to_string(cutoff),
             ms_since(t0));
}

void run_patch_pair(const Runtime& rt, const PatchPair& pair, RunWriter& w) {
    const auto& manifest = rt.manifest;
    const Model& model = *rt.model;
    const LayerId layer = family_patch_layer(manifest, pair.source.family);
    std::vector<uint32_t> prompt = tokenize(pair.shared_instruction);

    RunSpec source;
    source.mode = RunMode::I2I;
    source.prompt = prompt;
    source.reference = encode_reference(rt, pair.source.reference_id);
    source.seed = pair.source.seed;
    source.capture_layers = {layer};
    auto t0 = std::chrono::steady_clock::now();
    RunResult src = model.sample(source);
    auto trace = std::make_shared<ActivationTrace>(std::move(src.trace));
    w.record("source_baseline", w.write_image("source_baseline", src.pixels),
             w.write_trace("source_baseline", *trace), source, pair.shared_instruction,
             pair.source.reference_id, "capture@" + layer.display(), ms_since(t0));

    RunSpec target;
    target.mode = RunMode::I2I;
    target.prompt = prompt;
    target.reference = encode_reference(rt, pair.target.reference_id);
    target.seed = pair.target.seed;
    t0 = std::chrono::steady_clock::now();
    RunResult tgt = model.sample(target);
    w.record("target_baseline", w.write_image("target_baseline", tgt.pixels), "", target,
             pair.shared_instruction, pair.target.reference_id, "", ms_since(t0));

    std::vector<TokenSubset> subsets = {TokenSubset::AllText};
    if (manifest.experiment == ExperimentKind::CrossPatchSubset) {
        subsets.push_back(TokenSubset::PaddingOnly);
        subsets.push_back(TokenSubset::ContentOnly);
    }
    for (TokenSubset subset : subsets) {
        RunSpec patched = target;
        patched.interventions.push_back(CrossPatchSpec{trace, layer, subset});
        t0 = std::chrono::steady_clock::now();
        RunResult res = model.sample(patched);
        std::string role = std::string("patched_") + token_subset_name(subset);
        w.record(role, w.write_image(role, res.pixels), "", patched, pair.shared_instruction,
                 pair.target.reference_id,
                 "patch@" + layer.display() + "/" + token_subset_name(subset), ms_since(t0));
    }
}

std::string pair_task_id(const PatchPair& pair) {
    return pair.source.task_id + "->" + pair.target.task_id;
}

} // namespace

// ---------------------------------------------------------------------------
// stages

std::vector<RunRecord> execute_runs(const ExperimentManifest& manifest) {
    Runtime rt = make_runtime(manifest);

    if (manifest.experiment == ExperimentKind::LayerSweep) {
        run_sweep(manifest);
        return load_run_records(rt.runs_log);
    }

    // resume: (task_id, role) -> record, keeping the last appearance
    std::map<std::pair<std::string, std::string>, RunRecord> done;
    for (auto& r : load_run_records(rt.runs_log)) {
        if (fs::exists(rt.manifest.out_dir / r.image_path))
            done[{r.task_id, r.role}] = r;
    }
    auto is_complete = [&](const std::string& task_id) {
        for (const auto& role : expected_roles(manifest))
            if (!done.count({task_id, role})) return false;
        return true;
    };

    const bool pair_mode = manifest.experiment == ExperimentKind::CrossPatch ||
                           manifest.experiment == ExperimentKind::CrossPatchSubset;
    const size_t n_jobs = pair_mode ? rt.pairs.size() : rt.tasks.size();
    std::vector<JobOutput> outputs(n_jobs);
    std::vector<uint8_t> skipped(n_jobs, 0);

    parallel_for(n_jobs, manifest.workers, [&](size_t i) {
        if (pair_mode) {
            const PatchPair& pair = rt.pairs[i];
            const std::string id = pair_task_id(pair);
            if (is_complete(id)) {
                skipped[i] = 1;
                return;
            }
            RunWriter w(rt, id);
            run_patch_pair(rt, pair, w);
            outputs[i] = std::move(w.out);
        } else {
            const EditTask& task = rt.tasks[i];
            if (is_complete(task.task_id)) {
                skipped[i] = 1;
                return;
            }
            RunWriter w(rt, task.task_id);
            switch (manifest.experiment) {
                case ExperimentKind::Lens:
                case ExperimentKind::LensSubset:
                    run_lens_task(rt, task, w);
                    break;
                case ExperimentKind::Knockout:
                    run_knockout_task(rt, task, w);
                    break;
                case ExperimentKind::ReferenceDrop:
                    run_drop_task(rt, task, w);
                    break;
                default:
                    throw InvalidConfig("experiment kind not handled in run stage");
            }
            outputs[i] = std::move(w.out);
        }
    });

    std::vector<RunRecord> fresh;
    for (auto& out : outputs)
        for (auto& r : out.records) fresh.push_back(std::move(r));
    std::sort(fresh.begin(), fresh.end(), [](const RunRecord& a, const RunRecord& b) {
        return std::tie(a.task_id, a.role) < std::tie(b.task_id, b.role);
    });
    append_run_records(rt.runs_log, fresh);

    std::vector<RunRecord> all;
    for (auto& [key, r] : done) all.push_back(r);
    all.insert(all.end(), fresh.begin(), fresh.end());
    return all;
}

namespace {

std::vector<uint8_t> read_bytes(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
}

struct JudgeJob {
    std::string task_id;
    std::string table;
    std::string row;
    std::string col;
    ExperimentKind experiment;
    Family family;
    JudgeVariant variant;
    std::vector<fs::path> images;
};

std::vector<JudgeJob> plan_judge_jobs(const Runtime& rt,
                                      const std::map<std::pair<std::string, std::string>,
                                                     RunRecord>& records) {
    const auto& manifest = rt.manifest;
    std::vector<JudgeJob> jobs;

    auto image_of = [&](const std::string& task_id, const std::string& role) -> fs::path {
        auto it = records.find({task_id, role});
        if (it == records.end())
            throw IoError("run log is missing " + task_id + " / " + role);
        return manifest.out_dir / it->second.image_path;
    };
    auto fixture_of = [&](const std::string& reference_id) {
        return manifest.fixtures_dir / (reference_id + ".png");
    };

    const bool pair_mode = manifest.experiment == ExperimentKind::CrossPatch ||
                           manifest.experiment == ExperimentKind::CrossPatchSubset;
    if (pair_mode) {
        for (const auto& pair : rt.pairs) {
            const std::string id = pair_task_id(pair);
            std::vector<TokenSubset> subsets = {TokenSubset::AllText};
            if (manifest.experiment == ExperimentKind::CrossPatchSubset) {
                subsets.push_back(TokenSubset::PaddingOnly);
                subsets.push_back(TokenSubset::ContentOnly);
            }
            for (TokenSubset subset : subsets) {
                JudgeJob job;
                job.task_id = id;
                job.table = "i2i_patching";
                job.row = token_subset_name(subset);
                job.col = family_name(pair.source.family);
                job.experiment = manifest.experiment;
                job.family = pair.source.family;
                job.images = {fixture_of(pair.source.reference_id),
                              fixture_of(pair.target.reference_id),
                              image_of(id, "target_baseline"),
                              image_of(id, std::string("patched_") + token_subset_name(subset))};
                jobs.push_back(std::move(job));
            }
        }
        return jobs;
    }

    for (const auto& task : rt.tasks) {
        switch (manifest.experiment) {
            case ExperimentKind::Lens:
            case ExperimentKind::LensSubset: {
                std::vector<TokenSubset> subsets = {TokenSubset::AllText};
                if (manifest.experiment == ExperimentKind::LensSubset) {
                    subsets.push_back(TokenSubset::PaddingOnly);
                    subsets.push_back(TokenSubset::ContentOnly);
                }
                for (TokenSubset subset : subsets) {
                    JudgeJob job;
                    job.task_id = task.task_id;
                    job.table = "t2i_lens";
                    job.row = manifest.experiment == ExperimentKind::Lens
                                  ? "observation_rate"
                                  : token_subset_name(subset);
                    job.col = family_name(task.family);
                    job.experiment = manifest.experiment;
                    job.family = task.family;
                    job.images = {fixture_of(task.reference_id),
                                  image_of(task.task_id, "t2i_baseline"),
                                  image_of(task.task_id,
                                           std::string("lens_") + token_subset_name(subset))};
                    jobs.push_back(std::move(job));
                }
                break;
            }
            case ExperimentKind::Knockout: {
                struct Row {
                    const char* role;
                    KnockoutDirection dir;
                    TokenSubset subset;
                };
                std::vector<Row> rows = {
                    {"ko_ref_to_text", KnockoutDirection::RefToText, TokenSubset::AllText},
                    {"ko_ref_to_text_padding", KnockoutDirection::RefToText,
                     TokenSubset::PaddingOnly},
                    {"ko_ref_to_text_content", KnockoutDirection::RefToText,
                     TokenSubset::ContentOnly},
                    {"ko_ref_to_image", KnockoutDirection::RefToImage, TokenSubset::AllText},
                };
                for (const auto& row : rows) {
                    JudgeJob job;
                    job.task_id = task.task_id;
                    job.table = "attention_knockout";
                    job.row = row.role;
                    job.col = family_name(task.family);
                    job.experiment = ExperimentKind::Knockout;
                    job.family = task.family;
                    job.variant = JudgeVariant{row.dir, row.subset};
                    job.images = {fixture_of(task.reference_id),
                                  image_of(task.task_id, "i2i_baseline"),
                                  image_of(task.task_id, row.role)};
                    jobs.push_back(std::move(job));
                }
                break;
            }
            case ExperimentKind::ReferenceDrop: {
                int cutoff = manifest.drop_cutoff;
                if (cutoff < 0)
                    cutoff = family_patch_layer(manifest, task.family).ordinal(rt.cfg) + 1;
                JudgeJob job;
                job.task_id = task.task_id;
                job.table = "reference_drop";
                job.row = "cutoff=" + std::to_string(cutoff);
                job.col = family_name(task.family);
                job.experiment = ExperimentKind::ReferenceDrop;
                job.family = task.family;
                job.images = {fixture_of(task.reference_id),
                              image_of(task.task_id, "i2i_baseline"),
                              image_of(task.task_id, "drop_output")};
                jobs.push_back(std::move(job));
                break;
            }
            default:
                break;
        }
    }
    return jobs;
}

} // namespace

std::vector<VerdictRecord> judge_runs(const ExperimentManifest& manifest,
                                      JudgeClient* judge_override, int* failures_out) {
    Runtime rt = make_runtime(manifest);
    if (manifest.experiment == ExperimentKind::LayerSweep) return {};

    std::map<std::pair<std::string, std::string>, RunRecord> records;
    for (auto& r : load_run_records(rt.runs_log)) records[{r.task_id, r.role}] = r;

    // resume: skip cells already judged
    std::set<std::pair<std::string, std::string>> judged;
    std::vector<VerdictRecord> existing;
    if (fs::exists(rt.verdict_log)) {
        existing = load_verdicts(rt.verdict_log);
        for (const auto& v : existing) judged.insert({v.task_id, v.row});
    }

    std::unique_ptr<JudgeClient> owned;
    JudgeClient* client = judge_override;
    if (!client) {
        if (manifest.judge_mode == "stub") {
            owned = std::make_unique<StubJudge>();
        } else if (manifest.judge_mode == "endpoint") {
            owned = std::make_unique<HttpJudgeClient>(HttpJudgeClient::from_env());
        } else {
            throw InvalidConfig("unknown judge mode: " + manifest.judge_mode);
        }
        client = owned.get();
    }

    auto jobs = plan_judge_jobs(rt, records);
    std::vector<std::optional<VerdictRecord>> results(jobs.size());
    std::atomic<int> failures{0};
    std::mutex log_mutex;

    parallel_for(jobs.size(), manifest.workers, [&](size_t i) {
        const JudgeJob& job = jobs[i];
        if (judged.count({job.task_id, job.row})) return;
        try {
            std::vector<std::vector<uint8_t>> pngs;
            for (const auto& path : job.images) pngs.push_back(read_bytes(path));
            JudgeRequest req = build_request(job.experiment, job.family, std::move(pngs),
                                             job.variant);
            JudgeVerdict verdict =
                judge(*client, req, RetryPolicy{manifest.judge_max_attempts});
            VerdictRecord rec;
            rec.task_id = job.task_id;
            rec.experiment = experiment_kind_name(job.experiment);
            rec.table = job.table;
            rec.row = job.row;
            rec.col = job.col;
            rec.pass = verdict.pass_flag;
            rec.reason = verdict.reason;
            rec.raw = verdict.raw;
            results[i] = std::move(rec);
        } catch (const std::exception& e) {
            failures.fetch_add(1);
            std::lock_guard<std::mutex> lock(log_mutex);
            std::cerr << "[mmlens] judge failure for " << job.task_id << " / " << job.row << ": "
                      << e.what() << "\n";
        }
    });

    std::vector<VerdictRecord> fresh;
    for (auto& r : results)
        if (r) fresh.push_back(std::move(*r));
    std::sort(fresh.begin(), fresh.end(), [](const VerdictRecord& a, const VerdictRecord& b) {
        return std::tie(a.task_id, a.table, a.row, a.col) <
               std::tie(b.task_id, b.table, b.row, b.col);
    });
    append_verdicts(rt.verdict_log, fresh);

    if (failures_out) *failures_out = failures.load();
    existing.insert(existing.end(), fresh.begin(), fresh.end());
    return existing;
}

Report render_report(const ExperimentManifest& manifest) {
    fs::path log = manifest.out_dir / "verdicts.jsonl";
    std::vector<VerdictRecord> verdicts;
    if (fs::exists(log)) verdicts = load_verdicts(log);
    Report report = pool_and_report(verdicts);
    {
        std::ofstream txt(manifest.out_dir / "report.txt");
        txt << report.text;
        std::ofstream csv(manifest.out_dir / "report.csv");
        csv << report.csv;
    }
    return report;
}

ExperimentOutcome run_experiment(const ExperimentManifest& manifest, JudgeClient* judge_override) {
    ExperimentOutcome outcome;
    outcome.runs = execute_runs(manifest);
    if (manifest.experiment != ExperimentKind::LayerSweep) {
        outcome.verdicts = judge_runs(manifest, judge_override, &outcome.judge_failures);
        outcome.report = render_report(manifest);
    }
    outcome.verdict_log = manifest.out_dir / "verdicts.jsonl";
    outcome.report_txt = manifest.out_dir / "report.txt";
    outcome.report_csv = manifest.out_dir / "report.csv";
    return outcome;
}

// ---------------------------------------------------------------------------
// sweeps and grids

SweepArtifacts run_sweep(const ExperimentManifest& manifest) {
    Runtime rt = make_runtime(manifest);
    if (rt.tasks.empty())
        throw InvalidConfig("sweep needs at least one task");
    const EditTask& task = rt.tasks.front();

    SweepOp op = manifest.sweep_op == "reference_drop" ? SweepOp::ReferenceDrop : SweepOp::T2ILens;
    std::vector<int> ordinals = manifest.sweep_ordinals;
    if (ordinals.empty()) {
        const int last = op == SweepOp::ReferenceDrop ? rt.cfg.total_blocks()
                                                      : rt.cfg.total_blocks() - 1;
        for (int i = 0; i <= last; ++i) ordinals.push_back(i);
    }

    RunSpec base;
    base.mode = RunMode::I2I;
    base.prompt = tokenize(task.instruction);
    base.reference = encode_reference(rt, task.reference_id);
    base.seed = task.seed;

    const uint64_t lens_seed = task_lens_seed(manifest, task.task_id);
    const LensVariant variant = family_lens_variant(task.family);
    auto entries = layer_sweep(*rt.model, base, op, ordinals, lens_seed, variant);

    SweepArtifacts art;
    std::vector<RunRecord> records;
    for (const auto& entry : entries) {
        std::string rel = "images/" + sanitize_id(task.task_id) + "__sweep_" +
                          std::to_string(entry.ordinal) + ".png";
        write_png(manifest.out_dir / rel, entry.result.pixels);
        art.images.emplace_back(entry.ordinal, manifest.out_dir / rel);

        RunRecord r;
        r.task_id = task.task_id;
        r.role = "sweep_" + std::to_string(entry.ordinal);
        r.image_path = rel;
        r.spec_json = spec_summary(base, task.instruction, task.reference_id,
                                   manifest.sweep_op + "@" + entry.label);
        records.push_back(std::move(r));
    }
    append_run_records(rt.runs_log, records);

    art.manifest_path = manifest.out_dir / "sweep_manifest.txt";
    std::ofstream mf(art.manifest_path);
    mf << "# ordinal -> image path (" << manifest.sweep_op << " sweep, task " << task.task_id
       << ")\n";
    for (const auto& entry : entries)
        mf << entry.ordinal << " " << entry.label << " images/" << sanitize_id(task.task_id)
           << "__sweep_" << entry.ordinal << ".png\n";
    return art;
}

namespace {

// 3x5 digit glyphs for ordinal labels
const uint8_t kDigits[10][5] = {
    {0b111, 0b101, 0b101, 0b101, 0b111}, {0b010, 0b110, 0b010, 0b010, 0b111},
    {0b111, 0b001, 0b111, 0b100, 0b111}, {0b111, 0b001, 0b111, 0b001, 0b111},
    {0b101, 0b101, 0b111, 0b001, 0b001}, {0b111, 0b100, 0b111, 0b001, 0b111},
    {0b111, 0b100, 0b111, 0b101, 0b111}, {0b111, 0b001, 0b010, 0b010, 0b010},
    {0b111, 0b101, 0b111, 0b101, 0b111}, {0b111, 0b101, 0b111, 0b001, 0b111},
};

void draw_number(Image& img, int x0, int y0, int value, int scale) {
    std::string digits = std::to_string(value);
    int x = x0;
    for (char c : digits) {
        const uint8_t* glyph = kDigits[c - '0'];
        for (int gy = 0; gy < 5; ++gy)
            for (int gx = 0; gx < 3; ++gx)
                if (glyph[gy] & (0b100 >> gx))
                    for (int sy = 0; sy < scale; ++sy)
                        for (int sx = 0; sx < scale; ++sx) {
                            int px = x + gx * scale + sx, py = y0 + gy * scale + sy;
                            if (px >= 0 && px < img.width && py >= 0 && py < img.height)
                                img.set(px, py, 20, 20, 20);
                        }
        x += 4 * scale;
    }
}

} // namespace

void emit_grid(const std::vector<std::pair<int, fs::path>>& images, const fs::path& out_png,
               const fs::path& out_caption, int binding_ordinal) {
    if (images.empty())
        throw InvalidConfig("grid needs at least one image");

    std::vector<std::pair<int, Image>> cells;
    cells.reserve(images.size());
    for (const auto& [ordinal, path] : images) cells.emplace_back(ordinal, read_png(path));

    const int cw = cells.front().second.width;
    const int ch = cells.front().second.height;
    for (auto& [ordinal, img] : cells) {
        if (img.width != cw || img.height != ch) {
            std::cerr << "[mmlens] warning: resizing sweep cell " << ordinal << " to " << cw << "x"
                      << ch << "\n";
            img = resize_nearest(img, cw, ch);
        }
    }

    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cells.size()))));
    const int rows = static_cast<int>((cells.size() + cols - 1) / cols);
    const int pad = 2;
    Image grid(cols * (cw + pad) + pad, rows * (ch + pad) + pad);
    fs::path caption = out_caption;

    std::ofstream cap(caption);
    cap << "# grid cells, row-major; binding ordinal " << binding_ordinal << " is outlined\n";
    const int scale = std::max(1, cw / 32);
    for (size_t i = 0; i < cells.size(); ++i) {
        const int r = static_cast<int>(i) / cols;
        const int c = static_cast<int>(i) % cols;
        const int x0 = pad + c * (cw + pad);
        const int y0 = pad + r * (ch + pad);
        const auto& [ordinal, img] = cells[i];
        for (int y = 0; y < ch; ++y)
            for (int x = 0; x < cw; ++x) {
                const uint8_t* p = img.px(x, y);
                grid.set(x0 + x, y0 + y, p[0], p[1], p[2]);
            }
        draw_number(grid, x0 + 2 * scale, y0 + 2 * scale, ordinal, scale);
        if (ordinal == binding_ordinal) {
            const int t = std::max(1, scale);
            for (int y = 0; y < ch; ++y)
                for (int x = 0; x < cw; ++x)
                    if (x < t || y < t || x >= cw - t || y >= ch - t)
                        grid.set(x0 + x, y0 + y, 220, 30, 30);
        }
        cap << "cell " << r << "," << c << ": ordinal " << ordinal << " "
            << images[i].second.string() << (ordinal == binding_ordinal ? " [binding]" : "")
            << "\n";
    }
    write_png(out_png, grid);
}

} // namespace mmlens
