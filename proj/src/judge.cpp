#include "mmlens/judge.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "mmlens/errors.hpp"
#include "mmlens/image.hpp"

namespace mmlens {

using json = nlohmann::json;

const char* family_name(Family f) {
    switch (f) {
        case Family::ObjectAddition: return "object_addition";
        case Family::ObjectRemoval: return "object_removal";
        case Family::HumanCustomization: return "human_customization";
        case Family::ColorTransfer: return "color_transfer";
        case Family::StyleTransfer: return "style_transfer";
    }
    return "?";
}

Family parse_family(const std::string& s) {
    if (s == "object_addition") return Family::ObjectAddition;
    if (s == "object_removal") return Family::ObjectRemoval;
    if (s == "human_customization") return Family::HumanCustomization;
    if (s == "color_transfer") return Family::ColorTransfer;
    if (s == "style_transfer") return Family::StyleTransfer;
    throw InvalidConfig("unknown family: " + s);
}

const char* property_name(Property p) {
    switch (p) {
        case Property::Color: return "color";
        case Property::Style: return "style";
        case Property::HumanIdentity: return "human_identity";
        case Property::SceneContent: return "scene_content";
    }
    return "?";
}

Property parse_property(const std::string& s) {
    if (s == "color") return Property::Color;
    if (s == "style") return Property::Style;
    if (s == "human_identity") return Property::HumanIdentity;
    if (s == "scene_content") return Property::SceneContent;
    throw InvalidConfig("unknown property: " + s);
}

Property family_property(Family f) {
    switch (f) {
        case Family::ColorTransfer: return Property::Color;
        case Family::StyleTransfer: return Property::Style;
        case Family::HumanCustomization: return Property::HumanIdentity;
        default: return Property::SceneContent;
    }
}

const char* experiment_kind_name(ExperimentKind e) {
    switch (e) {
        case ExperimentKind::Lens: return "lens";
        case ExperimentKind::LensSubset: return "lens_subset";
        case ExperimentKind::Knockout: return "knockout";
        case ExperimentKind::ReferenceDrop: return "reference_drop";
        case ExperimentKind::CrossPatch: return "cross_patch";
        case ExperimentKind::CrossPatchSubset: return "cross_patch_subset";
        case ExperimentKind::LayerSweep: return "layer_sweep";
    }
    return "?";
}

ExperimentKind parse_experiment_kind(const std::string& s) {
    if (s == "lens") return ExperimentKind::Lens;
    if (s == "lens_subset") return ExperimentKind::LensSubset;
    if (s == "knockout") return ExperimentKind::Knockout;
    if (s == "reference_drop") return ExperimentKind::ReferenceDrop;
    if (s == "cross_patch") return ExperimentKind::CrossPatch;
    if (s == "cross_patch_subset") return ExperimentKind::CrossPatchSubset;
    if (s == "layer_sweep") return ExperimentKind::LayerSweep;
    throw InvalidConfig("unknown experiment kind: " + s);
}

// ---------------------------------------------------------------------------
// prompts

const char* const kJudgeSystemPrompt =
    "You are a strict visual judge for an image-editing interpretability experiment. You will be "
    "shown several labeled images and asked one yes/no question about whether a stated prediction "
    "is satisfied.\n"
    "Respond ONLY with a single JSON object on one line, no markdown, no preamble:\n"
    "{\"pass\": 0 or 1, \"reason\": \"<one short sentence, <=25 words>\"}\n"
    "The \"pass\" field is 1 if the prediction is satisfied, 0 otherwise. If the question cannot "
    "be answered from the images, reply with {\"pass\": 0, \"reason\": \"cannot determine\"}.";

namespace {

std::string knockout_edge_label(TokenSubset subset) {
    switch (subset) {
        case TokenSubset::PaddingOnly: return "ref->text[padding]";
        case TokenSubset::ContentOnly: return "ref->text[content]";
        default: return "ref->text";
    }
}

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

std::string lens_question(Family family) {
    switch (family) {
        case Family::ColorTransfer:
            return "Compared to Image 2, does Image 3 take on the predominant solid color of "
                   "Image 1? Reply 1 if the color of Image 1 is now visibly present in Image 3 "
                   "(and was not in Image 2).";
        case Family::StyleTransfer:
            return "Compared to Image 2, does Image 3 adopt a clipart / cartoon / illustrated / "
                   "unrealistic style similar to Image 1? Look at the subject and the background "
                   "/ rest of the image - clipart-y style anywhere in the image counts as "
                   "evidence. Reply 1 if Image 3 looks more clipart-like / less photographic "
                   "than Image 2.";
        case Family::HumanCustomization:
            return "Focus on the person in Image 3. Is the person in Image 3 a recognizably "
                   "DIFFERENT individual (different face, hair, build, identity) from the person "
                   "in Image 1? Reply 1 if a viewer would say it is a different person; reply 0 "
                   "only if it is the same person.";
        case Family::ObjectAddition:
        case Family::ObjectRemoval:
            return "Compared to Image 2, does Image 3 contain ANY visible information drawn from "
                   "Image 1 - things like colors, textures, layout, style, distinctive shapes, "
                   "or specific subject features? Reply 1 if you can point to anything in Image "
                   "3 that came from Image 1 and was not in Image 2.";
    }
    throw UnknownExperimentFamilyCombo("no lens question for this family");
}

std::string knockout_question(Family family, const JudgeVariant& variant) {
    if (variant.direction == KnockoutDirection::RefToText) {
        const std::string dir = knockout_edge_label(variant.subset);
        switch (family) {
            case Family::ColorTransfer:
                return replace_all(
                    "Compared to Image 2, has Image 3 LOST the predominant solid color of Image "
                    "1? Reply 1 if the color is significantly removed (color depended on "
                    "ref->text).",
                    "ref->text", dir);
            case Family::StyleTransfer:
                return replace_all(
                    "Compared to Image 2, has Image 3 LOST the clipart / cartoon style of Image "
                    "1 and become more photographic / realistic? Reply 1 if Image 3 became more "
                    "realistic when ref->text was blocked.",
                    "ref->text", dir);
            case Family::HumanCustomization:
                return replace_all(
                    "Focus on the person in Image 3. Compared to Image 2, has Image 3 LOST the "
                    "identity of the person in Image 1 - i.e. does the person in Image 3 look "
                    "like a recognizably DIFFERENT individual (different face, hair, build) from "
                    "the person in Image 1? Reply 1 if blocking ref->text destroyed the "
                    "reference identity; reply 0 if Image 3 still looks like the same person as "
                    "Image 1.",
                    "ref->text", dir);
            default:
                throw UnknownExperimentFamilyCombo("knockout is judged on color/style/human only");
        }
    }
    if (variant.subset != TokenSubset::AllText)
        throw UnknownExperimentFamilyCombo("subset variants apply to the ref->text direction");
    switch (family) {
        case Family::ColorTransfer:
            return "Compared to Image 2, does Image 3 STILL show the predominant solid color of "
                   "Image 1? Reply 1 if the color of Image 1 remains clearly present in Image 3 "
                   "even though ref->image was blocked.";
        case Family::StyleTransfer:
            return "Compared to Image 2, does Image 3 KEEP the clipart / cartoon style of Image "
                   "1? Reply 1 if Image 3 stays clipart-like / non-photographic even though "
                   "ref->image was blocked.";
        case Family::HumanCustomization:
            return "Focus on the person in Image 3. Does Image 3 PRESERVE the identity of the "
                   "person in Image 1 - same face, hair, build - even though ref->image was "
                   "blocked? Reply 1 if it still looks like the same person; reply 0 if the "
                   "identity was lost.";
        default:
            throw UnknownExperimentFamilyCombo("knockout is judged on color/style/human only");
    }
}

std::string reference_drop_question(Family family) {
    switch (family) {
        case Family::ColorTransfer:
            return "Compared to Image 2, does Image 3 STILL show the predominant solid color of "
                   "Image 1? Reply 1 if the color of Image 1 remains clearly present in Image 3 "
                   "even though the reference was dropped after the cutoff layer.";
        case Family::StyleTransfer:
            return "Compared to Image 2, does Image 3 KEEP the clipart / cartoon style of Image "
                   "1? Reply 1 if Image 3 stays clipart-like / non-photographic even though the "
                   "reference was dropped after the cutoff layer.";
        default:
            throw UnknownExperimentFamilyCombo("reference drop is judged on color/style only");
    }
}

std::string cross_patch_question(Family family) {
    switch (family) {
        case Family::ColorTransfer:
            return "Compared to Image 3 (which should show the color of Image 2), does Image 4 "
                   "take on the color of Image 1 (the source) instead? Reply 1 if Image 4 is "
                   "more like Image 1's color than Image 2's.";
        case Family::StyleTransfer:
            return "Compared to Image 3, has Image 4 become MORE clipart / cartoon / unrealistic "
                   "in style (matching Image 1)? Look at the subject and the background / rest "
                   "of the image - clipart-y style anywhere in the image counts as evidence. "
                   "Reply 1 if Image 4 looks more clipart-like than Image 3.";
        case Family::HumanCustomization:
            return "Focus on the person in Image 4. Does the person in Image 4 look more like "
                   "person A (Image 1, the source) than like person B (Image 2, the target)? "
                   "Reply 1 if A's identity transferred over.";
        default:
            throw UnknownExperimentFamilyCombo("patching is judged on color/style/human only");
    }
}

} // namespace

JudgeRequest build_request(ExperimentKind experiment, Family family,
                           std::vector<std::vector<uint8_t>> images, JudgeVariant variant) {
    size_t expect = 0;
    std::string question;
    switch (experiment) {
        case ExperimentKind::Lens:
        case ExperimentKind::LensSubset:
            expect = 3;
            question = lens_question(family);
            break;
        case ExperimentKind::Knockout:
            expect = 3;
            question = knockout_question(family, variant);
            break;
        case ExperimentKind::ReferenceDrop:
            expect = 3;
            question = reference_drop_question(family);
            break;
        case ExperimentKind::CrossPatch:
        case ExperimentKind::CrossPatchSubset:
            expect = 4;
            question = cross_patch_question(family);
            break;
        default:
            throw UnknownExperimentFamilyCombo("experiment kind is not judged");
    }
    if (images.size() != expect)
        throw UnknownExperimentFamilyCombo(
            std::string(experiment_kind_name(experiment)) + " takes " + std::to_string(expect) +
            " images, got " + std::to_string(images.size()));

    JudgeRequest req;
    req.system_prompt = kJudgeSystemPrompt;
    req.question = std::move(question);
    req.temperature = 0.0;
    req.experiment = experiment;
    req.family = family;
    req.variant = variant;
    for (size_t i = 0; i < images.size(); ++i)
        req.images.emplace_back("Image " + std::to_string(i + 1), std::move(images[i]));
    return req;
}

// ---------------------------------------------------------------------------
// verdict parsing

std::optional<std::string> extract_balanced(const std::string& text, char open, char close,
                                            size_t from) {
    size_t start = text.find(open, from);
    if (start == std::string::npos) return std::nullopt;
    int depth = 0;
    bool in_string = false, escaped = false;
    for (size_t i = start; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == open) ++depth;
        else if (c == close) {
            if (--depth == 0) return text.substr(start, i - start + 1);
        }
    }
    return std::nullopt;
}

namespace {

std::optional<JudgeVerdict> verdict_from_object(const std::string& text) {
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("pass")) return std::nullopt;
    const json& pass = doc["pass"];
    int flag;
    if (pass.is_boolean()) {
        flag = pass.get<bool>() ? 1 : 0;
    } else if (pass.is_number_integer()) {
        auto v = pass.get<int64_t>();
        if (v != 0 && v != 1) return std::nullopt;
        flag = static_cast<int>(v);
    } else {
        return std::nullopt;
    }
    JudgeVerdict verdict;
    verdict.pass_flag = flag;
    if (doc.contains("reason") && doc["reason"].is_string())
        verdict.reason = doc["reason"].get<std::string>();
    return verdict;
}

} // namespace

std::optional<JudgeVerdict> parse_verdict(const std::string& reply) {
    size_t from = 0;
    while (true) {
        auto candidate = extract_balanced(reply, '{', '}', from);
        if (!candidate) return std::nullopt;
        if (auto verdict = verdict_from_object(*candidate)) {
            verdict->raw = reply;
            return verdict;
        }
        from = reply.find('{', from) + 1;
    }
}

JudgeVerdict judge(JudgeClient& client, const JudgeRequest& request, RetryPolicy policy) {
    const int attempts = std::max(1, policy.max_attempts);
    std::string last_reply;
    bool last_was_transport = false;
    std::string transport_what;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        try {
            last_reply = client.complete(request);
            last_was_transport = false;
        } catch (const TransportError& e) {
            last_was_transport = true;
            transport_what = e.what();
            continue;
        }
        if (auto verdict = parse_verdict(last_reply)) {
            verdict->retries_used = attempt;
            return *verdict;
        }
    }
    if (last_was_transport)
        throw TransportError("judge endpoint unreachable after retries: " + transport_what);
    JudgeVerdict fallback;
    fallback.pass_flag = 0;
    fallback.reason = "cannot determine";
    fallback.raw = last_reply;
    fallback.retries_used = attempts - 1;
    return fallback;
}

// ---------------------------------------------------------------------------
// clients

std::string base64_encode(const std::vector<uint8_t>& bytes) {
    static const char* table = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    while (i + 3 <= bytes.size()) {
        uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out.push_back(table[(v >> 6) & 63]);
        out.push_back(table[v & 63]);
        i += 3;
    }
    if (i + 1 == bytes.size()) {
        uint32_t v = bytes[i] << 16;
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out += "==";
    } else if (i + 2 == bytes.size()) {
        uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out.push_back(table[(v >> 6) & 63]);
        out += "=";
    }
    return out;
}

HttpJudgeClient::HttpJudgeClient(std::string base_url, std::string model, std::string api_key,
                                 int timeout_seconds)
    : base_url_(std::move(base_url)),
      model_(std::move(model)),
      api_key_(std::move(api_key)),
      timeout_seconds_(timeout_seconds) {}

HttpJudgeClient HttpJudgeClient::from_env() {
    const char* url = std::getenv("MMLENS_JUDGE_URL");
    if (!url || !*url)
        throw EndpointError("MMLENS_JUDGE_URL is not set");
    const char* model = std::getenv("MMLENS_JUDGE_MODEL");
    const char* key = std::getenv("MMLENS_JUDGE_API_KEY");
    return HttpJudgeClient(url, model ? model : "", key ? key : "");
}

std::string HttpJudgeClient::complete(const JudgeRequest& request) {
    // split base url into host part and path prefix
    std::string host = base_url_;
    std::string path = "/v1/chat";
    size_t scheme = host.find("://");
    size_t slash = host.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (slash != std::string::npos) {
        path = host.substr(slash);
        host = host.substr(0, slash);
    }

    json content = json::array();
    for (const auto& [label, png] : request.images)
        content.push_back({{"type", "image"}, {"label", label}, {"data", base64_encode(png)}});
    content.push_back({{"type", "text"}, {"text", request.question}});
    json body = {
        {"model", model_},
        {"system", request.system_prompt},
        {"temperature", request.temperature},
        {"messages", json::array({{{"role", "user"}, {"content", content}}})},
    };

    httplib::Client client(host);
    client.set_connection_timeout(timeout_seconds_, 0);
    client.set_read_timeout(timeout_seconds_, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res)
        throw TransportError("judge endpoint unreachable: " + base_url_);
    if (res->status != 200)
        throw TransportError("judge endpoint returned status " + std::to_string(res->status));

    json reply = json::parse(res->body, nullptr, false);
    if (!reply.is_discarded()) {
        if (reply.contains("content") && reply["content"].is_string())
            return reply["content"].get<std::string>();
        if (reply.contains("choices") && reply["choices"].is_array() && !reply["choices"].empty()) {
            const json& msg = reply["choices"][0];
            if (msg.contains("message") && msg["message"].contains("content") &&
                msg["message"]["content"].is_string())
                return msg["message"]["content"].get<std::string>();
        }
    }
    // fall back to the raw body; the verdict parser scans for the JSON object
    return res->body;
}

namespace {

std::string stub_reply(int pass, const std::string& reason) {
    json verdict = {{"pass", pass}, {"reason", reason}};
    return verdict.dump();
}

} // namespace

std::string StubJudge::complete(const JudgeRequest& request) {
    std::vector<Image> imgs;
    imgs.reserve(request.images.size());
    for (const auto& [label, png] : request.images) imgs.push_back(decode_png(png));
    if (imgs.size() < 2)
        throw TransportError("stub judge needs at least two images");

    const Property prop = family_property(request.family);

    auto dom = [&](const Image& img) {
        uint8_t r, g, b;
        dominant_color(img, r, g, b);
        return std::array<uint8_t, 3>{r, g, b};
    };

    switch (request.experiment) {
        case ExperimentKind::Lens:
        case ExperimentKind::LensSubset: {
            const Image& ref = imgs[0];
            const Image& baseline = imgs[1];
            const Image& patched = imgs[2];
            if (prop == Property::Color || prop == Property::SceneContent) {
                auto c = dom(ref);
                double in_patched = color_presence(patched, c[0], c[1], c[2]);
                double in_baseline = color_presence(baseline, c[0], c[1], c[2]);
                bool hit = in_patched > 0.15 && in_patched > in_baseline + 0.05;
                return stub_reply(hit ? 1 : 0, "reference color share " + std::to_string(in_patched));
            }
            if (prop == Property::Style) {
                bool hit = flatness(patched) > flatness(baseline) + 0.05;
                return stub_reply(hit ? 1 : 0, "flatness comparison");
            }
            bool different = thumbnail_distance(patched, ref) > 25.0;
            return stub_reply(different ? 1 : 0, "thumbnail distance to reference");
        }
        case ExperimentKind::Knockout: {
            const Image& ref = imgs[0];
            const Image& baseline = imgs[1];
            const Image& knocked = imgs[2];
            const bool lost_polarity = request.variant.direction == KnockoutDirection::RefToText;
            bool present;
            if (prop == Property::Color) {
                auto c = dom(ref);
                double in_knocked = color_presence(knocked, c[0], c[1], c[2]);
                double in_baseline = color_presence(baseline, c[0], c[1], c[2]);
                present = lost_polarity ? in_knocked + 0.05 >= in_baseline : in_knocked > 0.15;
            } else if (prop == Property::Style) {
                present = lost_polarity ? flatness(knocked) + 0.05 >= flatness(baseline)
                                        : flatness(knocked) > 0.2;
            } else {
                present = thumbnail_distance(knocked, ref) < 30.0;
            }
            return stub_reply(lost_polarity ? (present ? 0 : 1) : (present ? 1 : 0),
                              lost_polarity ? "property loss check" : "property retention check");
        }
        case ExperimentKind::ReferenceDrop: {
            const Image& ref = imgs[0];
            const Image& dropped = imgs[2];
            bool present;
            if (prop == Property::Color) {
                auto c = dom(ref);
                present = color_presence(dropped, c[0], c[1], c[2]) > 0.15;
            } else {
                present = flatness(dropped) > 0.2;
            }
            return stub_reply(present ? 1 : 0, "property retention check");
        }
        case ExperimentKind::CrossPatch:
        case ExperimentKind::CrossPatchSubset: {
            const Image& source_ref = imgs[0];
            const Image& target_ref = imgs[1];
            const Image& baseline = imgs[2];
            const Image& patched = imgs[3];
            if (prop == Property::Color) {
                auto cs = dom(source_ref);
                auto ct = dom(target_ref);
                double like_source = color_presence(patched, cs[0], cs[1], cs[2]);
                double like_target = color_presence(patched, ct[0], ct[1], ct[2]);
                return stub_reply(like_source > like_target ? 1 : 0, "closer to source color");
            }
            if (prop == Property::Style) {
                bool hit = flatness(patched) > flatness(baseline) + 0.05;
                return stub_reply(hit ? 1 : 0, "flatness comparison");
            }
            double to_source = thumbnail_distance(patched, source_ref);
            double to_target = thumbnail_distance(patched, target_ref);
            return stub_reply(to_source < to_target ? 1 : 0, "closer to source subject");
        }
        default:
            throw TransportError("stub judge cannot grade this experiment");
    }
}

std::string ScriptedJudge::complete(const JudgeRequest&) {
    if (replies_.empty())
        throw TransportError("scripted judge has no replies");
    size_t idx = std::min(static_cast<size_t>(calls), replies_.size() - 1);
    ++calls;
    return replies_[idx];
}

} // namespace mmlens
