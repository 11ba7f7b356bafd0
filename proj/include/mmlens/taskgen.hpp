#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmlens/families.hpp"
#include "mmlens/image.hpp"
#include "mmlens/judge.hpp"

namespace mmlens {

struct EditTask {
    std::string task_id;
    Family family = Family::ColorTransfer;
    std::string instruction;
    std::string reference_id;   // key into the fixture set
    uint64_t seed = 0;
    Property property = Property::Color;
    std::string arm;            // style transfer: "realistic" or "fictional"
};

struct PatchPair {
    EditTask source;
    EditTask target;
    std::string shared_instruction;
};

// Generation parameters. The defaults reproduce the full protocol counts:
// 320 color (8 colors x 8 objects x 5 seeds), 900 style (18 subjects x 5
// instructions x 5 seeds x 2 arms), 140 human (10 x (9 + 5)), 789 additions
// and 726 removals over 794 scenes.
struct TaskGenConfig {
    uint64_t seed = 7;   // drives fixtures and derived per-task seeds

    std::vector<std::pair<std::string, std::array<uint8_t, 3>>> colors;
    std::vector<std::string> color_objects;
    std::vector<uint64_t> color_seeds;

    std::vector<std::string> style_subjects;
    int style_instructions_per_subject = 5;
    std::vector<uint64_t> style_seeds;

    std::vector<std::string> human_subjects;
    int human_individual_prompts = 9;

    int scene_count = 794;
    int scenes_without_addition = 5;
    int scenes_without_removal = 68;

    static TaskGenConfig defaults();

    // Shrinks each parameter list by the divisor while preserving the
    // cross-product structure (reference-bearing lists keep >= 2 entries).
    TaskGenConfig scaled(int divisor) const;
};

std::vector<EditTask> build_family(Family kind, const TaskGenConfig& cfg);
std::vector<EditTask> build_all_families(const TaskGenConfig& cfg);

// Patch pairs per the protocol: color = ordered color pairs x instructions,
// style = subject x instruction x seed pairs (fictional source, realistic
// target), human = ordered subject pairs x shared instructions. Families
// without shared instructions across references yield no pairs.
std::vector<PatchPair> build_patch_pairs(Family kind, const std::vector<EditTask>& tasks);

// Deterministic procedural reference images (solid colors, styled/real
// subject pairs, glyph subjects, cluttered scenes), rendered at the given
// pixel size. Same config -> identical bytes.
struct FixtureSet {
    std::vector<std::pair<std::string, Image>> images;   // (reference_id, image)
    const Image* find(const std::string& reference_id) const;
};
FixtureSet fixture_images(Family kind, const TaskGenConfig& cfg, int width, int height);

// --- instruction generation -------------------------------------------------

// Verbatim instruction-generation prompts for the external endpoint.
extern const char* const kSceneInstructionPrompt;
extern const char* const kStyleInstructionSystemPrompt;
std::string style_instruction_user_prompt(const std::string& subject, const std::string& slug,
                                          const std::string& existing_prompt);

// The five shared person-agnostic customization instructions.
extern const std::array<const char*, 5> kHumanSharedInstructions;

struct SceneInstructionReply {
    std::optional<std::string> add_object;      // null in the reply -> empty
    std::optional<std::string> remove_object;
};
// Parses {"add_object": <noun>|null, "remove_object": <noun>|null}.
SceneInstructionReply parse_scene_instruction_reply(const std::string& reply);
// Parses a JSON array of {"slug", "prompt"} objects.
std::vector<std::pair<std::string, std::string>> parse_style_instruction_reply(
    const std::string& reply);

// endpoint == nullptr selects fixture mode (bundled deterministic lists).
// In endpoint mode the verbatim prompts above are sent through the
// chat-with-images interface and the replies parsed per their JSON shapes.
// Every returned instruction passes the family denylist.
std::vector<std::string> generate_instructions(JudgeClient* endpoint, Family family,
                                               const std::string& context,
                                               const std::vector<uint8_t>& context_image,
                                               const TaskGenConfig& cfg);

// --- denylists ---------------------------------------------------------------

// Per-family words an instruction must never contain (the property under
// test). Shipped as editable data files; the compiled-in defaults match.
std::vector<std::string> default_denylist(Family f);
std::vector<std::string> load_denylist(Family f, const std::filesystem::path& data_dir);
void write_default_denylists(const std::filesystem::path& data_dir);
// Throws DenylistViolation when the instruction names a listed word.
void check_denylist(const std::string& instruction, const std::vector<std::string>& words);

// --- manifest io --------------------------------------------------------------

void save_tasks_csv(const std::filesystem::path& path, const std::vector<EditTask>& tasks);
std::vector<EditTask> load_tasks_csv(const std::filesystem::path& path);
void save_pairs_csv(const std::filesystem::path& path, const std::vector<PatchPair>& pairs);
std::vector<PatchPair> load_pairs_csv(const std::filesystem::path& path,
                                      const std::vector<EditTask>& tasks);

} // namespace mmlens
