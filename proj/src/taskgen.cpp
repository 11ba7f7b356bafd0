#include "mmlens/taskgen.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mmlens/errors.hpp"
#include "mmlens/rng.hpp"
#include "mmlens/sequence.hpp"

namespace mmlens {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// parameters

TaskGenConfig TaskGenConfig::defaults() {
    TaskGenConfig cfg;
    cfg.colors = {
        {"red", {220, 40, 40}},    {"orange", {240, 140, 30}}, {"yellow", {235, 220, 50}},
        {"green", {60, 170, 70}},  {"blue", {50, 90, 220}},    {"purple", {140, 60, 190}},
        {"pink", {240, 120, 180}}, {"brown", {130, 85, 45}},
    };
    cfg.color_objects = {"chair", "car", "cup", "ball", "hat", "vase", "couch", "lamp"};
    cfg.color_seeds = {11, 23, 37, 41, 53};
    cfg.style_subjects = {"boy",  "girl",   "man",   "woman",  "dog",     "cat",
                          "elephant", "capybara", "fox",   "owl",    "rabbit",  "bear",
                          "horse", "duck",   "frog",  "lion",   "penguin", "turtle"};
    cfg.style_seeds = {11, 23, 37, 41, 53};
    cfg.human_subjects = {"aiden", "bella", "carmen", "derek", "elena",
                          "felix", "greta", "hiro",   "imani", "jonas"};
    return cfg;
}

namespace {

template <typename T>
std::vector<T> truncate_list(const std::vector<T>& list, int divisor, size_t min_keep) {
    size_t keep = std::max(min_keep, list.size() / static_cast<size_t>(divisor));
    keep = std::min(keep, list.size());
    return std::vector<T>(list.begin(), list.begin() + keep);
}

} // namespace

TaskGenConfig TaskGenConfig::scaled(int divisor) const {
    if (divisor <= 1) return *this;
    TaskGenConfig cfg = *this;
    cfg.colors = truncate_list(colors, divisor, 2);
    cfg.color_objects = truncate_list(color_objects, divisor, 1);
    cfg.color_seeds = truncate_list(color_seeds, divisor, 2);
    cfg.style_subjects = truncate_list(style_subjects, divisor, 2);
    cfg.style_seeds = truncate_list(style_seeds, divisor, 2);
    cfg.style_instructions_per_subject =
        std::max(1, style_instructions_per_subject / divisor);
    cfg.human_subjects = truncate_list(human_subjects, divisor, 2);
    cfg.human_individual_prompts = std::max(1, human_individual_prompts / divisor);
    cfg.scene_count = std::max(2, scene_count / divisor);
    cfg.scenes_without_addition = scenes_without_addition * cfg.scene_count / scene_count;
    cfg.scenes_without_removal = scenes_without_removal * cfg.scene_count / scene_count;
    return cfg;
}

// ---------------------------------------------------------------------------
// fixture instruction pools

namespace {

const std::vector<std::string>& verb_phrase_pool() {
    static const std::vector<std::string> pool = {
        "eating an ice cream cone outside a small corner shop",
        "reading a newspaper on a wooden park bench",
        "drinking from a striped mug at a busy cafe",
        "walking across a rope bridge above a shallow river",
        "flying a striped kite on a windy hillside",
        "digging a small hole in a sandy garden bed",
        "stacking firewood beside a stone cottage",
        "repairing a wooden fence in the afternoon sun",
        "rowing a small boat across a calm lake",
        "baking bread in a warm farmhouse kitchen",
        "solving a crossword on a sunny front porch",
        "bathing in a steamy hot spring at dusk",
        "juggling three oranges at a street market",
        "climbing a ladder to pick apples in an orchard",
        "playing chess at a table in a shaded courtyard",
        "watering tomatoes in a rooftop garden",
    };
    return pool;
}

const std::vector<std::string>& add_noun_pool() {
    static const std::vector<std::string> pool = {
        "umbrella",     "traffic cone",  "lamp post",     "wooden crate", "metal bucket",
        "rope ladder",  "street sign",   "fire extinguisher", "coffee cup", "folding chair",
        "trash can",    "wall clock",    "cardboard box", "watering can", "picnic table",
        "spare tire",   "tool cart",     "paper lantern", "warning flag", "storage barrel",
        "floor mat",    "coat rack",     "step stool",    "hanging banner",
    };
    return pool;
}

const std::vector<std::string>& remove_noun_pool() {
    static const std::vector<std::string> pool = {
        "ceiling fan",  "wall poster",  "floor lamp",   "side table",   "window curtain",
        "door mat",     "light switch", "power cable",  "wall mirror",  "small stool",
        "storage bin",  "paper stack",  "wooden shelf", "flower vase",  "desk phone",
        "metal railing", "wall vent",   "hose reel",    "paint can",    "notice board",
        "floor tile",   "window box",   "roof antenna", "chimney pipe",
    };
    return pool;
}

// distinct picks without replacement, deterministic
std::vector<size_t> pick_distinct(Rng rng, size_t count, size_t total) {
    std::vector<size_t> idx(total);
    for (size_t i = 0; i < total; ++i) idx[i] = i;
    count = std::min(count, total);
    for (size_t i = 0; i < count; ++i) {
        size_t j = i + static_cast<size_t>(rng.next_u64() % (total - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    return idx;
}

std::vector<int> flagged_scenes(const TaskGenConfig& cfg, const char* label, int count) {
    auto picks = pick_distinct(Rng(cfg.seed).fork(label), static_cast<size_t>(std::max(0, count)),
                               static_cast<size_t>(cfg.scene_count));
    std::vector<int> out(picks.begin(), picks.end());
    std::sort(out.begin(), out.end());
    return out;
}

struct SceneNouns {
    std::optional<std::string> add;
    std::optional<std::string> remove;
};

SceneNouns scene_nouns(const TaskGenConfig& cfg, int scene_idx) {
    auto no_add = flagged_scenes(cfg, "scenes-no-add", cfg.scenes_without_addition);
    auto no_remove = flagged_scenes(cfg, "scenes-no-remove", cfg.scenes_without_removal);
    Rng rng = Rng(cfg.seed).fork("scene-nouns").fork(static_cast<uint64_t>(scene_idx));
    SceneNouns nouns;
    const auto& adds = add_noun_pool();
    const auto& removes = remove_noun_pool();
    if (!std::binary_search(no_add.begin(), no_add.end(), scene_idx))
        nouns.add = adds[rng.next_u64() % adds.size()];
    if (!std::binary_search(no_remove.begin(), no_remove.end(), scene_idx))
        nouns.remove = removes[rng.next_u64() % removes.size()];
    return nouns;
}

std::string scene_reference_id(int idx) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene/%04d", idx);
    return buf;
}

// `key` seeds the phrase picks (varies per subject); `wording` is the noun
// substituted into the template. Customization prompts keep "person" as the
// wording so the instruction never names the identity under test.
std::vector<std::string> fixture_subject_instructions(const TaskGenConfig& cfg,
                                                      const std::string& key,
                                                      const std::string& wording, size_t count,
                                                      const char* label) {
    const auto& pool = verb_phrase_pool();
    auto picks = pick_distinct(Rng(cfg.seed).fork(label).fork(key), count, pool.size());
    std::vector<std::string> out;
    out.reserve(picks.size());
    for (size_t p : picks)
        out.push_back("A photograph of the " + wording + " in this image " + pool[p] + ".");
    return out;
}

uint64_t derived_task_seed(const TaskGenConfig& cfg, const std::string& task_id) {
    return Rng(cfg.seed).fork("task-seed").fork(task_id).next_u64();
}

} // namespace

// ---------------------------------------------------------------------------
// denylists

std::vector<std::string> default_denylist(Family f) {
    switch (f) {
        case Family::ColorTransfer:
            return {"red", "orange", "yellow", "green", "blue", "purple", "pink", "brown"};
        case Family::StyleTransfer:
            return {"clipart", "cartoon", "illustrated", "illustration", "unrealistic",
                    "drawn",   "drawing", "sketch",      "anime",        "painting",
                    "painted", "stylized", "fictional",  "comic"};
        case Family::HumanCustomization:
            return {"aiden", "bella", "carmen", "derek", "elena",
                    "felix", "greta", "hiro",   "imani", "jonas"};
        case Family::ObjectAddition:
        case Family::ObjectRemoval:
            return {"bird", "backpack", "person", "bicycle", "bench", "bottle", "plant", "dog"};
    }
    return {};
}

std::vector<std::string> load_denylist(Family f, const std::filesystem::path& data_dir) {
    if (data_dir.empty()) return default_denylist(f);
    std::ifstream file(data_dir / "denylists" / (std::string(family_name(f)) + ".txt"));
    if (!file) return default_denylist(f);
    std::vector<std::string> words;
    std::string line;
    while (std::getline(file, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty() && line[0] != '#') words.push_back(line);
    }
    return words;
}

void write_default_denylists(const std::filesystem::path& data_dir) {
    std::filesystem::create_directories(data_dir / "denylists");
    for (Family f : {Family::ObjectAddition, Family::ObjectRemoval, Family::HumanCustomization,
                     Family::ColorTransfer, Family::StyleTransfer}) {
        std::ofstream file(data_dir / "denylists" / (std::string(family_name(f)) + ".txt"));
        for (const auto& w : default_denylist(f)) file << w << "\n";
    }
}

void check_denylist(const std::string& instruction, const std::vector<std::string>& words) {
    std::vector<uint32_t> ids = tokenize(instruction);
    for (const auto& word : words) {
        std::string lowered;
        for (char c : word) lowered.push_back(static_cast<char>(std::tolower(c)));
        uint32_t id = fnv1a32(lowered);
        if (std::find(ids.begin(), ids.end(), id) != ids.end())
            throw DenylistViolation("instruction names the property under test: \"" + instruction +
                                    "\" contains \"" + word + "\"");
    }
}

// ---------------------------------------------------------------------------
// task families

std::vector<EditTask> build_family(Family kind, const TaskGenConfig& cfg) {
    std::vector<EditTask> tasks;
    const auto denylist = default_denylist(kind);
    auto push = [&](EditTask task) {
        check_denylist(task.instruction, denylist);
        tasks.push_back(std::move(task));
    };

    switch (kind) {
        case Family::ColorTransfer: {
            if (cfg.colors.empty() || cfg.color_objects.empty() || cfg.color_seeds.empty())
                throw EmptyParameterList("color transfer needs colors, objects and seeds");
            for (const auto& [color, rgb] : cfg.colors) {
                for (const auto& object : cfg.color_objects) {
                    for (size_t k = 0; k < cfg.color_seeds.size(); ++k) {
                        EditTask t;
                        t.task_id = "color/" + color + "-" + object + "/s" + std::to_string(k);
                        t.family = kind;
                        t.instruction = "draw a " + object + " in this color";
                        t.reference_id = "color/" + color;
                        t.seed = cfg.color_seeds[k];
                        t.property = Property::Color;
                        push(std::move(t));
                    }
                }
            }
            break;
        }
        case Family::StyleTransfer: {
            if (cfg.style_subjects.empty() || cfg.style_seeds.empty() ||
                cfg.style_instructions_per_subject < 1)
                throw EmptyParameterList("style transfer needs subjects, seeds and instructions");
            for (const auto& subject : cfg.style_subjects) {
                auto instructions = fixture_subject_instructions(
                    cfg, subject, subject,
                    static_cast<size_t>(cfg.style_instructions_per_subject), "style-instr");
                for (size_t j = 0; j < instructions.size(); ++j) {
                    for (size_t k = 0; k < cfg.style_seeds.size(); ++k) {
                        for (const char* arm : {"realistic", "fictional"}) {
                            EditTask t;
                            t.task_id = "style/" + subject + "/i" + std::to_string(j) + "/s" +
                                        std::to_string(k) + "/" + arm;
                            t.family = kind;
                            t.instruction = instructions[j];
                            t.reference_id = "style/" + subject + "/" +
                                             (std::string(arm) == "fictional" ? "styled" : "real");
                            t.seed = cfg.style_seeds[k];
                            t.property = Property::Style;
                            t.arm = arm;
                            push(std::move(t));
                        }
                    }
                }
            }
            break;
        }
        case Family::HumanCustomization: {
            if (cfg.human_subjects.empty() || cfg.human_individual_prompts < 0)
                throw EmptyParameterList("human customization needs subjects");
            for (const auto& subject : cfg.human_subjects) {
                auto individual = fixture_subject_instructions(
                    cfg, subject, "person", static_cast<size_t>(cfg.human_individual_prompts),
                    "human-instr");
                for (size_t j = 0; j < individual.size(); ++j) {
                    EditTask t;
                    t.task_id = "human/" + subject + "/p" + std::to_string(j);
                    t.family = kind;
                    t.instruction = individual[j];
                    t.reference_id = "human/" + subject;
                    t.seed = derived_task_seed(cfg, t.task_id);
                    t.property = Property::HumanIdentity;
                    push(std::move(t));
                }
                for (size_t j = 0; j < kHumanSharedInstructions.size(); ++j) {
                    EditTask t;
                    t.task_id = "human/" + subject + "/shared" + std::to_string(j);
                    t.family = kind;
                    t.instruction = kHumanSharedInstructions[j];
                    t.reference_id = "human/" + subject;
                    t.seed = derived_task_seed(cfg, t.task_id);
                    t.property = Property::HumanIdentity;
                    push(std::move(t));
                }
            }
            break;
        }
        case Family::ObjectAddition:
        case Family::ObjectRemoval: {
            if (cfg.scene_count < 1)
                throw EmptyParameterList("scene families need at least one scene");
            for (int idx = 0; idx < cfg.scene_count; ++idx) {
                SceneNouns nouns = scene_nouns(cfg, idx);
                const auto& noun = kind == Family::ObjectAddition ? nouns.add : nouns.remove;
                if (!noun) continue;
                EditTask t;
                t.task_id = (kind == Family::ObjectAddition ? "add/scene_" : "remove/scene_") +
                            scene_reference_id(idx).substr(6);
                t.family = kind;
                t.instruction = kind == Family::ObjectAddition ? "add a " + *noun
                                                               : "remove the " + *noun;
                t.reference_id = scene_reference_id(idx);
                t.seed = derived_task_seed(cfg, t.task_id);
                t.property = Property::SceneContent;
                push(std::move(t));
            }
            break;
        }
    }
    return tasks;
}

std::vector<EditTask> build_all_families(const TaskGenConfig& cfg) {
    std::vector<EditTask> all;
    for (Family f : {Family::ObjectAddition, Family::ObjectRemoval, Family::HumanCustomization,
                     Family::ColorTransfer, Family::StyleTransfer}) {
        auto part = build_family(f, cfg);
        all.insert(all.end(), part.begin(), part.end());
    }
    return all;
}

// ---------------------------------------------------------------------------
// patch pairs

namespace {

constexpr uint64_t kSeedNudge = 0x9e3779b97f4a7c15ull;

PatchPair finalize_pair(EditTask source, EditTask target) {
    if (source.instruction != target.instruction)
        throw InsufficientVariety("patch pair instructions must match");
    if (source.reference_id == target.reference_id)
        throw InsufficientVariety("patch pair references must differ");
    if (source.seed == target.seed)
        target.seed ^= kSeedNudge;   // deterministic nudge keeps seeds distinct
    PatchPair pair;
    pair.shared_instruction = source.instruction;
    pair.source = std::move(source);
    pair.target = std::move(target);
    return pair;
}

} // namespace

std::vector<PatchPair> build_patch_pairs(Family kind, const std::vector<EditTask>& tasks) {
    std::vector<EditTask> sorted = tasks;
    std::sort(sorted.begin(), sorted.end(),
              [](const EditTask& a, const EditTask& b) { return a.task_id < b.task_id; });
    for (const auto& t : sorted)
        if (t.family != kind)
            throw InsufficientVariety("patch pairs take tasks from a single family");

    std::vector<PatchPair> pairs;
    switch (kind) {
        case Family::ColorTransfer: {
            // instruction -> reference -> seed-ordered tasks
            std::map<std::string, std::map<std::string, std::vector<const EditTask*>>> by_instr;
            std::set<std::string> refs;
            for (const auto& t : sorted) {
                by_instr[t.instruction][t.reference_id].push_back(&t);
                refs.insert(t.reference_id);
            }
            if (refs.size() < 2)
                throw InsufficientVariety("need at least two colors for patch pairs");
            for (const auto& [instruction, by_ref] : by_instr) {
                for (const auto& [src_ref, src_tasks] : by_ref) {
                    for (const auto& [tgt_ref, tgt_tasks] : by_ref) {
                        if (src_ref == tgt_ref) continue;
                        const EditTask* source = src_tasks.front();
                        const EditTask* target =
                            tgt_tasks.size() > 1 ? tgt_tasks[1] : tgt_tasks.front();
                        pairs.push_back(finalize_pair(*source, *target));
                    }
                }
            }
            break;
        }
        case Family::StyleTransfer: {
            // (subject reference base, instruction) -> arm -> seed-ordered tasks
            std::map<std::pair<std::string, std::string>,
                     std::map<std::string, std::vector<const EditTask*>>>
                groups;
            std::set<std::string> refs;
            for (const auto& t : sorted) {
                std::string base = t.reference_id.substr(0, t.reference_id.rfind('/'));
                groups[{base, t.instruction}][t.arm].push_back(&t);
                refs.insert(t.reference_id);
            }
            if (refs.size() < 2)
                throw InsufficientVariety("need styled and real references for patch pairs");
            for (const auto& [key, arms] : groups) {
                auto fict = arms.find("fictional");
                auto real = arms.find("realistic");
                if (fict == arms.end() || real == arms.end()) continue;
                const size_t n = std::min(fict->second.size(), real->second.size());
                for (size_t i = 0; i < n; ++i)
                    pairs.push_back(
                        finalize_pair(*fict->second[i], *real->second[(i + 1) % n]));
            }
            break;
        }
        case Family::HumanCustomization: {
            // shared instructions only: instruction -> subject -> task
            std::map<std::string, std::map<std::string, const EditTask*>> shared;
            for (const auto& t : sorted) {
                if (t.task_id.find("/shared") == std::string::npos) continue;
                shared[t.instruction][t.reference_id] = &t;
            }
            std::set<std::string> refs;
            for (const auto& [instr, by_subject] : shared)
                for (const auto& [ref, task] : by_subject) refs.insert(ref);
            if (refs.size() < 2)
                throw InsufficientVariety("need at least two subjects for patch pairs");
            for (const auto& [instr, by_subject] : shared) {
                for (const auto& [src_ref, src] : by_subject) {
                    for (const auto& [tgt_ref, tgt] : by_subject) {
                        if (src_ref == tgt_ref) continue;
                        pairs.push_back(finalize_pair(*src, *tgt));
                    }
                }
            }
            break;
        }
        default:
            break;   // scene families share no instructions across references
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// fixtures

namespace {

void fill_background(Image& img, uint8_t r, uint8_t g, uint8_t b) {
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) img.set(x, y, r, g, b);
}

void fill_rect(Image& img, int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
    x0 = std::max(0, x0); y0 = std::max(0, y0);
    x1 = std::min(img.width, x1); y1 = std::min(img.height, y1);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) img.set(x, y, r, g, b);
}

void fill_circle(Image& img, int cx, int cy, int rad, uint8_t r, uint8_t g, uint8_t b) {
    for (int y = std::max(0, cy - rad); y < std::min(img.height, cy + rad + 1); ++y)
        for (int x = std::max(0, cx - rad); x < std::min(img.width, cx + rad + 1); ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= rad * rad)
                img.set(x, y, r, g, b);
}

void outline_circle(Image& img, int cx, int cy, int rad, int thick) {
    for (int y = std::max(0, cy - rad - thick); y < std::min(img.height, cy + rad + thick + 1); ++y)
        for (int x = std::max(0, cx - rad - thick); x < std::min(img.width, cx + rad + thick + 1);
             ++x) {
            int d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            if (d2 <= (rad + thick) * (rad + thick) && d2 >= rad * rad) img.set(x, y, 20, 20, 20);
        }
}

// shared composition for the styled/real pair: a subject silhouette on a
// simple ground
void draw_subject(Image& img, Rng& rng, bool styled) {
    const int w = img.width, h = img.height;
    uint8_t sky_r = 160, sky_g = 190, sky_b = 230;
    uint8_t body_r = static_cast<uint8_t>(60 + rng.next_u64() % 160);
    uint8_t body_g = static_cast<uint8_t>(60 + rng.next_u64() % 160);
    uint8_t body_b = static_cast<uint8_t>(60 + rng.next_u64() % 160);

    if (styled) {
        fill_background(img, sky_r, sky_g, sky_b);
        fill_rect(img, 0, h * 3 / 4, w, h, 120, 200, 120);
    } else {
        for (int y = 0; y < h; ++y) {
            float f = static_cast<float>(y) / h;
            uint8_t r = static_cast<uint8_t>(sky_r * (1 - f) + 90 * f);
            uint8_t g = static_cast<uint8_t>(sky_g * (1 - f) + 120 * f);
            uint8_t b = static_cast<uint8_t>(sky_b * (1 - f) + 80 * f);
            for (int x = 0; x < w; ++x) img.set(x, y, r, g, b);
        }
    }

    const int cx = w / 2, cy = h / 2;
    const int body = std::max(3, h / 5);
    fill_rect(img, cx - body / 2, cy - body / 4, cx + body / 2, cy + body, body_r, body_g, body_b);
    fill_circle(img, cx, cy - body / 2, std::max(2, body / 2), body_r, body_g, body_b);
    if (styled)
        outline_circle(img, cx, cy - body / 2, std::max(2, body / 2), std::max(1, body / 8));

    if (!styled) {
        // photographic texture: per-pixel jitter
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                uint8_t* p = img.px(x, y);
                for (int c = 0; c < 3; ++c) {
                    int v = p[c] + static_cast<int>(rng.next_u64() % 37) - 18;
                    p[c] = static_cast<uint8_t>(std::clamp(v, 0, 255));
                }
            }
    }
}

void draw_human(Image& img, Rng& rng, int variant) {
    const int w = img.width, h = img.height;
    fill_background(img, 210, 210, 215);
    static const uint8_t skins[5][3] = {
        {244, 208, 177}, {224, 172, 130}, {198, 134, 94}, {141, 85, 54}, {92, 60, 40}};
    const uint8_t* skin = skins[variant % 5];
    uint8_t shirt_r = static_cast<uint8_t>(40 + rng.next_u64() % 180);
    uint8_t shirt_g = static_cast<uint8_t>(40 + rng.next_u64() % 180);
    uint8_t shirt_b = static_cast<uint8_t>(40 + rng.next_u64() % 180);
    const int cx = w / 2;
    const int head = std::max(2, h / 6);
    fill_rect(img, cx - head, h / 2, cx + head, h - h / 8, shirt_r, shirt_g, shirt_b);
    fill_circle(img, cx, h / 2 - head / 2, head, skin[0], skin[1], skin[2]);
    if (variant % 3 == 1)
        fill_rect(img, cx - head, h / 2 - head * 2, cx + head, h / 2 - head - head / 3, 50, 50, 60);
    if (variant % 3 == 2)
        fill_circle(img, cx, h / 2 - head - head / 3, head / 2, 150, 100, 60);
}

void draw_scene(Image& img, Rng& rng) {
    const int w = img.width, h = img.height;
    uint8_t top_r = static_cast<uint8_t>(rng.next_u64() % 256);
    uint8_t top_g = static_cast<uint8_t>(rng.next_u64() % 256);
    uint8_t top_b = static_cast<uint8_t>(rng.next_u64() % 256);
    uint8_t bot_r = static_cast<uint8_t>(rng.next_u64() % 256);
    uint8_t bot_g = static_cast<uint8_t>(rng.next_u64() % 256);
    uint8_t bot_b = static_cast<uint8_t>(rng.next_u64() % 256);
    for (int y = 0; y < h; ++y) {
        float f = static_cast<float>(y) / h;
        for (int x = 0; x < w; ++x)
            img.set(x, y, static_cast<uint8_t>(top_r * (1 - f) + bot_r * f),
                    static_cast<uint8_t>(top_g * (1 - f) + bot_g * f),
                    static_cast<uint8_t>(top_b * (1 - f) + bot_b * f));
    }
    const int shapes = 6 + static_cast<int>(rng.next_u64() % 5);
    for (int s = 0; s < shapes; ++s) {
        uint8_t r = static_cast<uint8_t>(rng.next_u64() % 256);
        uint8_t g = static_cast<uint8_t>(rng.next_u64() % 256);
        uint8_t b = static_cast<uint8_t>(rng.next_u64() % 256);
        int x = static_cast<int>(rng.next_u64() % w);
        int y = static_cast<int>(rng.next_u64() % h);
        int sz = 2 + static_cast<int>(rng.next_u64() % std::max(2, w / 4));
        if (rng.next_u64() % 2)
            fill_rect(img, x - sz / 2, y - sz / 2, x + sz / 2, y + sz / 2, r, g, b);
        else
            fill_circle(img, x, y, sz / 2, r, g, b);
    }
}

} // namespace

const Image* FixtureSet::find(const std::string& reference_id) const {
    for (const auto& [id, img] : images)
        if (id == reference_id) return &img;
    return nullptr;
}

FixtureSet fixture_images(Family kind, const TaskGenConfig& cfg, int width, int height) {
    FixtureSet set;
    auto rng_for = [&](const std::string& id) { return Rng(cfg.seed).fork("fixture").fork(id); };

    switch (kind) {
        case Family::ColorTransfer: {
            for (const auto& [name, rgb] : cfg.colors) {
                Image img(width, height);
                fill_background(img, rgb[0], rgb[1], rgb[2]);
                set.images.emplace_back("color/" + name, std::move(img));
            }
            break;
        }
        case Family::StyleTransfer: {
            for (const auto& subject : cfg.style_subjects) {
                Image styled(width, height);
                Rng r1 = rng_for("style/" + subject);
                draw_subject(styled, r1, true);
                set.images.emplace_back("style/" + subject + "/styled", std::move(styled));
                Image real(width, height);
                Rng r2 = rng_for("style/" + subject);
                draw_subject(real, r2, false);
                set.images.emplace_back("style/" + subject + "/real", std::move(real));
            }
            break;
        }
        case Family::HumanCustomization: {
            int variant = 0;
            for (const auto& subject : cfg.human_subjects) {
                Image img(width, height);
                Rng r = rng_for("human/" + subject);
                draw_human(img, r, variant++);
                set.images.emplace_back("human/" + subject, std::move(img));
            }
            break;
        }
        case Family::ObjectAddition:
        case Family::ObjectRemoval: {
            for (int idx = 0; idx < cfg.scene_count; ++idx) {
                std::string id = scene_reference_id(idx);
                Image img(width, height);
                Rng r = rng_for(id);
                draw_scene(img, r);
                set.images.emplace_back(id, std::move(img));
            }
            break;
        }
    }
    return set;
}

// ---------------------------------------------------------------------------
// instruction generation

const char* const kSceneInstructionPrompt =
    "You design test cases for an image-editing experiment. Given ONE image,\n"
    "propose two short object names:\n"
    "\n"
    "1. ADD: a single object NOT currently in the image but plausibly fits\n"
    "   the scene. If no scene-agnostic addition fits, set \"add_object\": null.\n"
    "2. REMOVE: a single object IS visible and could be plausibly removed\n"
    "   (not the entire subject; the scene would still read coherently\n"
    "   without it). If nothing meets that bar, set \"remove_object\": null.\n"
    "\n"
    "SCENE-AGNOSTIC RULE: the proposed object names must NOT reveal the\n"
    "specific scene/location depicted. For a volcano photo, \"lava plume\" or\n"
    "\"volcanic crater\" is forbidden -- those give away the scene. Prefer\n"
    "generic objects that could plausibly fit many different scenes. If no\n"
    "scene-agnostic object fits a given field, set it to null.\n"
    "\n"
    "FORBIDDEN OBJECTS: do NOT propose any of these (or any phrase\n"
    "containing one of these words as the head noun): bird, backpack,\n"
    "person, bicycle, bench, bottle, plant, dog. They are over-represented\n"
    "in our existing dataset. Pick a different scene-agnostic object, or\n"
    "set the field to null if nothing else fits.\n"
    "\n"
    "Return ONLY a single JSON object on one line, no markdown:\n"
    "{\"add_object\": \"<noun>\" | null,\n"
    " \"remove_object\": \"<noun>\" | null}\n"
    "\n"
    "Rules:\n"
    "- Object phrases: 1-4 words, lowercase, no punctuation, singular.\n"
    "- All non-null object names must be pairwise distinct.\n"
    "- No proper nouns, no named people.\n"
    "- All non-null object names must obey the SCENE-AGNOSTIC RULE.\n"
    "- All non-null object names must NOT be in the FORBIDDEN OBJECTS list.";

const char* const kStyleInstructionSystemPrompt =
    "You write short action/scene prompts for image-customization tasks. Each prompt MUST follow "
    "the exact template: \"A photograph of the {subject} in this image {verb_phrase}.\" The verb "
    "phrase should describe a single concrete action, scene, or interaction (5 to 15 words). Make "
    "each prompt clearly distinct from the others and from the example. No metaphor, no abstract "
    "concepts, no body-part close-ups.";

std::string style_instruction_user_prompt(const std::string& subject, const std::string& slug,
                                          const std::string& existing_prompt) {
    return "Subject: " + subject + "\nExisting prompt (slug=" + slug + "): " + existing_prompt +
           "\n\nWrite 4 NEW prompts following the same template, each describing a different "
           "action or scene from the existing one. Output them as a JSON array of 4 objects, each "
           "with fields \"slug\" (a short snake_case verb-phrase identifier, e.g. "
           "\"playing_chess\") and \"prompt\" (the full sentence). No prose around the JSON.";
}

const std::array<const char*, 5> kHumanSharedInstructions = {
    "A photograph of the person in this image walking down a busy city street at golden hour",
    "A photograph of the person in this image holding a mug of coffee in a sunlit kitchen",
    "A photograph of the person in this image sitting on a wooden park bench reading a book",
    "A photograph of the person in this image standing at the edge of a foggy beach at dawn",
    "A photograph of the person in this image laughing at a candlelit dinner party with friends",
};

SceneInstructionReply parse_scene_instruction_reply(const std::string& reply) {
    auto payload = extract_balanced(reply, '{', '}');
    if (!payload)
        throw MalformedInstructionJson("no JSON object in instruction reply");
    json doc = json::parse(*payload, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("add_object") ||
        !doc.contains("remove_object"))
        throw MalformedInstructionJson("instruction reply must carry add_object and remove_object");
    SceneInstructionReply out;
    auto read = [&](const char* key) -> std::optional<std::string> {
        const json& v = doc[key];
        if (v.is_null()) return std::nullopt;
        if (!v.is_string())
            throw MalformedInstructionJson(std::string(key) + " must be a string or null");
        return v.get<std::string>();
    };
    out.add_object = read("add_object");
    out.remove_object = read("remove_object");
    return out;
}

std::vector<std::pair<std::string, std::string>> parse_style_instruction_reply(
    const std::string& reply) {
    auto payload = extract_balanced(reply, '[', ']');
    if (!payload)
        throw MalformedInstructionJson("no JSON array in instruction reply");
    json doc = json::parse(*payload, nullptr, false);
    if (doc.is_discarded() || !doc.is_array())
        throw MalformedInstructionJson("instruction reply must be a JSON array");
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& item : doc) {
        if (!item.is_object() || !item.contains("slug") || !item.contains("prompt") ||
            !item["slug"].is_string() || !item["prompt"].is_string())
            throw MalformedInstructionJson("each instruction needs string slug and prompt");
        out.emplace_back(item["slug"].get<std::string>(), item["prompt"].get<std::string>());
    }
    return out;
}

namespace {

std::string reply_from_endpoint(JudgeClient& endpoint, const std::string& system,
                                const std::string& question,
                                const std::vector<uint8_t>& context_image) {
    JudgeRequest req;
    req.system_prompt = system;
    req.question = question;
    req.temperature = 0.0;
    if (!context_image.empty()) req.images.emplace_back("Image 1", context_image);
    try {
        return endpoint.complete(req);
    } catch (const TransportError& e) {
        throw EndpointError(std::string("instruction endpoint failed: ") + e.what());
    }
}

std::string slug_of(const std::string& instruction) {
    // snake_case of the trailing verb phrase's first two words
    size_t marker = instruction.find("in this image ");
    std::string tail = marker == std::string::npos ? instruction : instruction.substr(marker + 14);
    std::string slug;
    int words = 0;
    for (char c : tail) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            slug.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!slug.empty() && slug.back() != '_') {
            if (++words >= 2) break;
            slug.push_back('_');
        }
    }
    while (!slug.empty() && slug.back() == '_') slug.pop_back();
    return slug;
}

} // namespace

std::vector<std::string> generate_instructions(JudgeClient* endpoint, Family family,
                                               const std::string& context,
                                               const std::vector<uint8_t>& context_image,
                                               const TaskGenConfig& cfg) {
    std::vector<std::string> out;
    switch (family) {
        case Family::ObjectAddition:
        case Family::ObjectRemoval: {
            std::optional<std::string> add, remove;
            if (endpoint) {
                std::string reply =
                    reply_from_endpoint(*endpoint, "", kSceneInstructionPrompt, context_image);
                auto parsed = parse_scene_instruction_reply(reply);
                add = parsed.add_object;
                remove = parsed.remove_object;
            } else {
                int idx = 0;
                size_t slash = context.rfind('/');
                if (slash != std::string::npos) idx = std::atoi(context.c_str() + slash + 1);
                SceneNouns nouns = scene_nouns(cfg, idx);
                add = nouns.add;
                remove = nouns.remove;
            }
            if (family == Family::ObjectAddition && add) out.push_back("add a " + *add);
            if (family == Family::ObjectRemoval && remove) out.push_back("remove the " + *remove);
            break;
        }
        case Family::StyleTransfer:
        case Family::HumanCustomization: {
            const std::string subject =
                family == Family::HumanCustomization ? "person" : context;
            if (!endpoint && family == Family::HumanCustomization) {
                out.assign(kHumanSharedInstructions.begin(), kHumanSharedInstructions.end());
                break;
            }
            auto fixture = fixture_subject_instructions(cfg, subject, subject, 5, "style-instr");
            if (!endpoint) {
                out = fixture;
                break;
            }
            const std::string existing = fixture.front();
            std::string reply = reply_from_endpoint(
                *endpoint, kStyleInstructionSystemPrompt,
                style_instruction_user_prompt(subject, slug_of(existing), existing), {});
            out.push_back(existing);
            for (const auto& [slug, prompt] : parse_style_instruction_reply(reply))
                out.push_back(prompt);
            break;
        }
        case Family::ColorTransfer: {
            if (cfg.color_objects.empty())
                throw EmptyParameterList("color transfer needs objects");
            for (const auto& object : cfg.color_objects)
                out.push_back("draw a " + object + " in this color");
            break;
        }
    }
    const auto denylist = default_denylist(family);
    for (const auto& instruction : out) check_denylist(instruction, denylist);
    return out;
}

// ---------------------------------------------------------------------------
// csv manifests

namespace {

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

} // namespace

void save_tasks_csv(const std::filesystem::path& path, const std::vector<EditTask>& tasks) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write task manifest: " + path.string());
    f << "task_id,family,instruction,reference_path,seed,property\n";
    for (const auto& t : tasks) {
        f << csv_escape(t.task_id) << ',' << family_name(t.family) << ','
          << csv_escape(t.instruction) << ',' << csv_escape(t.reference_id + ".png") << ','
          << t.seed << ',' << property_name(t.property) << "\n";
    }
}

std::vector<EditTask> load_tasks_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read task manifest: " + path.string());
    std::vector<EditTask> tasks;
    std::string line;
    bool header = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        auto fields = csv_split(line);
        if (fields.size() < 6)
            throw IoError("task manifest line has too few columns: " + line);
        EditTask t;
        t.task_id = fields[0];
        t.family = parse_family(fields[1]);
        t.instruction = fields[2];
        t.reference_id = fields[3];
        if (t.reference_id.size() > 4 && t.reference_id.ends_with(".png"))
            t.reference_id.resize(t.reference_id.size() - 4);
        t.seed = std::stoull(fields[4]);
        t.property = parse_property(fields[5]);
        if (t.family == Family::StyleTransfer)
            t.arm = t.reference_id.ends_with("/styled") ? "fictional" : "realistic";
        tasks.push_back(std::move(t));
    }
    return tasks;
}

void save_pairs_csv(const std::filesystem::path& path, const std::vector<PatchPair>& pairs) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write pair manifest: " + path.string());
    f << "pair_id,family,source_task_id,target_task_id,source_seed,target_seed,instruction\n";
    for (const auto& p : pairs) {
        f << csv_escape(p.source.task_id + "->" + p.target.task_id) << ','
          << family_name(p.source.family) << ',' << csv_escape(p.source.task_id) << ','
          << csv_escape(p.target.task_id) << ',' << p.source.seed << ',' << p.target.seed << ','
          << csv_escape(p.shared_instruction) << "\n";
    }
}

std::vector<PatchPair> load_pairs_csv(const std::filesystem::path& path,
                                      const std::vector<EditTask>& tasks) {
    std::map<std::string, const EditTask*> by_id;
    for (const auto& t : tasks) by_id[t.task_id] = &t;

    std::ifstream f(path);
    if (!f) throw IoError("cannot read pair manifest: " + path.string());
    std::vector<PatchPair> pairs;
    std::string line;
    bool header = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        auto fields = csv_split(line);
        if (fields.size() < 7)
            throw IoError("pair manifest line has too few columns: " + line);
        auto src = by_id.find(fields[2]);
        auto tgt = by_id.find(fields[3]);
        if (src == by_id.end() || tgt == by_id.end())
            throw IoError("pair manifest references unknown task ids: " + line);
        PatchPair p;
        p.source = *src->second;
        p.target = *tgt->second;
        p.source.seed = std::stoull(fields[4]);
        p.target.seed = std::stoull(fields[5]);
        p.shared_instruction = fields[6];
        pairs.push_back(std::move(p));
    }
    return pairs;
}

} // namespace mmlens
