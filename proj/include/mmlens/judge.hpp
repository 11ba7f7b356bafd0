#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmlens/families.hpp"
#include "mmlens/masks.hpp"

namespace mmlens {

enum class ExperimentKind : uint8_t {
    Lens = 0,
    LensSubset = 1,
    Knockout = 2,
    ReferenceDrop = 3,
    CrossPatch = 4,
    CrossPatchSubset = 5,
    LayerSweep = 6,
};

const char* experiment_kind_name(ExperimentKind e);
ExperimentKind parse_experiment_kind(const std::string& s);

enum class KnockoutDirection : uint8_t { RefToText = 0, RefToImage = 1 };

// Selects the question wording for knockout-style experiments: which edge
// was cut and, for ref->text, which text token subset.
struct JudgeVariant {
    KnockoutDirection direction = KnockoutDirection::RefToText;
    TokenSubset subset = TokenSubset::AllText;
};

struct JudgeRequest {
    std::string system_prompt;
    std::vector<std::pair<std::string, std::vector<uint8_t>>> images;   // ("Image 1", png bytes)
    std::string question;
    double temperature = 0.0;

    // request metadata for local rule-based judging; never sent on the wire
    ExperimentKind experiment = ExperimentKind::Lens;
    Family family = Family::ColorTransfer;
    JudgeVariant variant;
};

struct JudgeVerdict {
    int pass_flag = 0;
    std::string reason;
    std::string raw;        // original reply line
    int retries_used = 0;
};

struct RetryPolicy {
    int max_attempts = 2;   // total request budget, first attempt included
};

// The shared judge system prompt.
extern const char* const kJudgeSystemPrompt;

// Picks the verbatim question for (experiment, family, variant) and labels
// the images "Image 1".."Image 4". Lens/Knockout/ReferenceDrop take 3
// images, CrossPatch takes 4; anything else is rejected.
JudgeRequest build_request(ExperimentKind experiment, Family family,
                           std::vector<std::vector<uint8_t>> images, JudgeVariant variant = {});

class JudgeClient {
  public:
    virtual ~JudgeClient() = default;
    // Returns the assistant's raw reply text. Throws TransportError.
    virtual std::string complete(const JudgeRequest& request) = 0;
};

// Chat-with-images HTTP client. Body: {"model", "system", "temperature",
// "messages":[{"role":"user","content":[{"type":"image","label","data"
// (base64 png)}..., {"type":"text","text"}]}]}. Accepts {"content": "..."}
// or an OpenAI-style {"choices":[{"message":{"content": "..."}}]} reply.
class HttpJudgeClient : public JudgeClient {
  public:
    HttpJudgeClient(std::string base_url, std::string model, std::string api_key,
                    int timeout_seconds = 60);
    // Reads MMLENS_JUDGE_URL, MMLENS_JUDGE_MODEL, MMLENS_JUDGE_API_KEY.
    static HttpJudgeClient from_env();

    std::string complete(const JudgeRequest& request) override;

  private:
    std::string base_url_;
    std::string model_;
    std::string api_key_;
    int timeout_seconds_;
};

// Deterministic rule-based verdicts computed from the request images, so
// batches run offline and reproduce bit-for-bit.
class StubJudge : public JudgeClient {
  public:
    std::string complete(const JudgeRequest& request) override;
};

// Replays canned replies in order, repeating the last one; for tests.
class ScriptedJudge : public JudgeClient {
  public:
    explicit ScriptedJudge(std::vector<std::string> replies) : replies_(std::move(replies)) {}
    std::string complete(const JudgeRequest&) override;
    int calls = 0;

  private:
    std::vector<std::string> replies_;
};

// First balanced open...close span in the text, string- and escape-aware.
// Skips markdown fences and surrounding prose by construction.
std::optional<std::string> extract_balanced(const std::string& text, char open, char close,
                                            size_t from = 0);

// Extracts the first balanced {...} object from the reply and validates the
// verdict fields. Empty optional if no valid verdict is present.
std::optional<JudgeVerdict> parse_verdict(const std::string& reply);

// Sends, parses, retries up to policy.max_attempts, and falls back to
// {pass: 0, reason: "cannot determine"} when every reply is unparseable.
// Transport failures are retried too and rethrown once the budget is spent.
JudgeVerdict judge(JudgeClient& client, const JudgeRequest& request, RetryPolicy policy = {});

std::string base64_encode(const std::vector<uint8_t>& bytes);

} // namespace mmlens
