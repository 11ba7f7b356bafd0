#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "mmlens/image.hpp"
#include "mmlens/judge.hpp"
#include "mmlens/report.hpp"
#include "mmlens/rng.hpp"
#include "mmlens/wilson.hpp"

#include "judge_corpus.inc"

using namespace mmlens;
namespace fs = std::filesystem;

namespace {

// Independent oracle: the interval endpoints are the roots of
// (phat - p)^2 = z^2 p (1 - p) / n, found by bisection.
std::pair<double, double> wilson_rootfind(long k, long n, double z) {
    const double phat = static_cast<double>(k) / n;
    auto g = [&](double p) { return (phat - p) * (phat - p) - z * z * p * (1.0 - p) / n; };
    auto bisect = [&](double lo, double hi) {
        for (int i = 0; i < 200; ++i) {
            double mid = 0.5 * (lo + hi);
            if ((g(lo) <= 0) == (g(mid) <= 0)) lo = mid;
            else hi = mid;
        }
        return 0.5 * (lo + hi);
    };
    double lo = k == 0 ? 0.0 : bisect(0.0, phat);
    double hi = k == n ? 1.0 : (k == 0 ? bisect(1e-300, 1.0) : bisect(phat, 1.0));
    return {lo, hi};
}

std::vector<uint8_t> solid_png(int w, int h, uint8_t r, uint8_t g, uint8_t b) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.set(x, y, r, g, b);
    return encode_png(img);
}

struct FailingClient : JudgeClient {
    int calls = 0;
    std::string complete(const JudgeRequest&) override {
        ++calls;
        throw TransportError("endpoint down");
    }
};

fs::path temp_dir() {
    fs::path dir = fs::temp_directory_path() / "mmlens_judge_test";
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("wilson closed form") {
    SUBCASE("the perfect-score cell renders exactly") {
        WilsonInterval w = wilson(320, 320, 1.96);
        CHECK(render_cell(w) == "100.0_{-1.2}^{+0.0}");
        CHECK(w.p_bar == 100.0);
        CHECK(w.delta_hi == 0.0);
    }

    SUBCASE("zero successes mirror the perfect score") {
        WilsonInterval w = wilson(0, 50, 1.96);
        CHECK(w.p_bar == 0.0);
        CHECK(w.delta_lo == 0.0);
        CHECK(w.delta_hi > 0.0);
    }

    SUBCASE("bounds match the root-find oracle to 1e-9 for n <= 12") {
        for (long n = 1; n <= 12; ++n) {
            for (long k = 0; k <= n; ++k) {
                WilsonInterval w = wilson(k, n, 1.96);
                auto [lo, hi] = wilson_rootfind(k, n, 1.96);
                CHECK(std::abs((w.p_bar - w.delta_lo) / 100.0 - lo) < 1e-9);
                CHECK(std::abs((w.p_bar + w.delta_hi) / 100.0 - hi) < 1e-9);
            }
        }
    }

    SUBCASE("reflection: k out of n mirrors n-k about 50%") {
        for (long n = 1; n <= 30; ++n) {
            for (long k = 0; k <= n; ++k) {
                WilsonInterval a = wilson(k, n, 1.96);
                WilsonInterval b = wilson(n - k, n, 1.96);
                CHECK(std::abs((a.p_bar - a.delta_lo) - (100.0 - (b.p_bar + b.delta_hi))) < 1e-9);
                CHECK(std::abs((a.p_bar + a.delta_hi) - (100.0 - (b.p_bar - b.delta_lo))) < 1e-9);
            }
        }
    }

    SUBCASE("deltas shrink with n at a fixed ratio") {
        WilsonInterval small = wilson(5, 10, 1.96);
        WilsonInterval mid = wilson(50, 100, 1.96);
        WilsonInterval large = wilson(500, 1000, 1.96);
        CHECK(small.delta_lo > mid.delta_lo);
        CHECK(mid.delta_lo > large.delta_lo);
        CHECK(small.delta_hi > mid.delta_hi);
        CHECK(mid.delta_hi > large.delta_hi);
    }

    SUBCASE("bounds stay in [0, 100] under fuzz") {
        Rng rng(4);
        for (int i = 0; i < 2000; ++i) {
            long n = 1 + static_cast<long>(rng.next_u64() % 400);
            long k = static_cast<long>(rng.next_u64() % (n + 1));
            WilsonInterval w = wilson(k, n, 1.96);
            CHECK(w.delta_lo >= 0.0);
            CHECK(w.delta_hi >= 0.0);
            CHECK(w.p_bar - w.delta_lo >= -1e-12);
            CHECK(w.p_bar + w.delta_hi <= 100.0 + 1e-12);
            CHECK((w.delta_lo == 0.0) == (k == 0));
            CHECK((w.delta_hi == 0.0) == (k == n));
        }
    }

    SUBCASE("empty pool rejected") {
        CHECK_THROWS_AS(wilson(0, 0, 1.96), EmptyPool);
        CHECK_THROWS_AS(wilson(5, 3, 1.96), EmptyPool);
    }
}

TEST_CASE("render_cell derives from the oracle") {
    // wilson(9, 10): oracle endpoints ~ [59.58%, 98.21%] -> deltas 30.4 / 8.2
    auto [lo, hi] = wilson_rootfind(9, 10, 1.96);
    CHECK(std::llround((90.0 - 100.0 * lo) * 10.0) == 304);
    CHECK(std::llround((100.0 * hi - 90.0) * 10.0) == 82);
    CHECK(render_cell(wilson(9, 10, 1.96)) == "90.0_{-30.4}^{+8.2}");
}

TEST_CASE("build_request selects the protocol questions") {
    auto png = solid_png(8, 8, 10, 20, 30);

    SUBCASE("lens color question") {
        JudgeRequest req = build_request(ExperimentKind::Lens, Family::ColorTransfer,
                                         {png, png, png});
        CHECK(req.question ==
              "Compared to Image 2, does Image 3 take on the predominant solid color of Image 1? "
              "Reply 1 if the color of Image 1 is now visibly present in Image 3 (and was not in "
              "Image 2).");
        REQUIRE(req.images.size() == 3);
        CHECK(req.images[0].first == "Image 1");
        CHECK(req.images[2].first == "Image 3");
        CHECK(req.temperature == 0.0);
        CHECK(std::string(req.system_prompt).find(
                  "Respond ONLY with a single JSON object on one line") != std::string::npos);
        CHECK(std::string(req.system_prompt).find("{\"pass\": 0, \"reason\": \"cannot determine\"}") !=
              std::string::npos);
    }

    SUBCASE("cross patch style question") {
        JudgeRequest req = build_request(ExperimentKind::CrossPatch, Family::StyleTransfer,
                                         {png, png, png, png});
        CHECK(req.question.find("has Image 4 become MORE clipart / cartoon / unrealistic in "
                                "style (matching Image 1)") != std::string::npos);
        CHECK(req.images.size() == 4);
    }

    SUBCASE("knockout subset variants substitute the edge label") {
        JudgeRequest all = build_request(ExperimentKind::Knockout, Family::ColorTransfer,
                                         {png, png, png},
                                         {KnockoutDirection::RefToText, TokenSubset::AllText});
        CHECK(all.question.find("(color depended on ref->text).") != std::string::npos);
        JudgeRequest pad = build_request(ExperimentKind::Knockout, Family::ColorTransfer,
                                         {png, png, png},
                                         {KnockoutDirection::RefToText, TokenSubset::PaddingOnly});
        CHECK(pad.question.find("ref->text[padding]") != std::string::npos);
        JudgeRequest cont = build_request(ExperimentKind::Knockout, Family::StyleTransfer,
                                          {png, png, png},
                                          {KnockoutDirection::RefToText, TokenSubset::ContentOnly});
        CHECK(cont.question.find("ref->text[content]") != std::string::npos);
    }

    SUBCASE("wrong arity rejected") {
        CHECK_THROWS_AS(
            build_request(ExperimentKind::CrossPatch, Family::ColorTransfer, {png, png}),
            UnknownExperimentFamilyCombo);
        CHECK_THROWS_AS(build_request(ExperimentKind::Lens, Family::ColorTransfer, {png, png}),
                        UnknownExperimentFamilyCombo);
    }

    SUBCASE("unjudged combinations rejected") {
        CHECK_THROWS_AS(
            build_request(ExperimentKind::Knockout, Family::ObjectAddition, {png, png, png}),
            UnknownExperimentFamilyCombo);
        CHECK_THROWS_AS(
            build_request(ExperimentKind::ReferenceDrop, Family::HumanCustomization,
                          {png, png, png}),
            UnknownExperimentFamilyCombo);
        CHECK_THROWS_AS(
            build_request(ExperimentKind::LayerSweep, Family::ColorTransfer, {png, png, png}),
            UnknownExperimentFamilyCombo);
        CHECK_THROWS_AS(
            build_request(ExperimentKind::Knockout, Family::ColorTransfer, {png, png, png},
                          {KnockoutDirection::RefToImage, TokenSubset::PaddingOnly}),
            UnknownExperimentFamilyCombo);
    }
}

TEST_CASE("judge wraps the client with retries and a fallback") {
    auto png = solid_png(8, 8, 10, 20, 30);
    JudgeRequest req = build_request(ExperimentKind::Lens, Family::ColorTransfer, {png, png, png});

    SUBCASE("a scripted pass goes straight through") {
        ScriptedJudge client({R"({"pass":1,"reason":"ok"})"});
        JudgeVerdict v = judge(client, req);
        CHECK(v.pass_flag == 1);
        CHECK(v.reason == "ok");
        CHECK(v.retries_used == 0);
    }

    SUBCASE("two unparseable replies exhaust the default budget") {
        ScriptedJudge client({"yes", "yes", R"({"pass":1,"reason":"too late"})"});
        JudgeVerdict v = judge(client, req);
        CHECK(v.pass_flag == 0);
        CHECK(v.reason == "cannot determine");
        CHECK(client.calls == 2);   // default budget is two attempts total
        CHECK(v.retries_used == 1);
    }

    SUBCASE("a retry can rescue a malformed first reply") {
        ScriptedJudge client({"hmm, let me think", R"({"pass":1,"reason":"recovered"})"});
        JudgeVerdict v = judge(client, req);
        CHECK(v.pass_flag == 1);
        CHECK(v.reason == "recovered");
        CHECK(v.retries_used == 1);
    }

    SUBCASE("transport failures rethrow after the budget") {
        FailingClient client;
        CHECK_THROWS_AS(judge(client, req, RetryPolicy{3}), TransportError);
        CHECK(client.calls == 3);
    }
}

TEST_CASE("the reply corpus parses with the hand-assigned outcomes") {
    CHECK(kJudgeCorpusSize >= 50);
    auto png = solid_png(8, 8, 10, 20, 30);
    JudgeRequest req = build_request(ExperimentKind::Lens, Family::ColorTransfer, {png, png, png});

    for (size_t i = 0; i < kJudgeCorpusSize; ++i) {
        const auto& c = kJudgeCorpus[i];
        CAPTURE(i);
        CAPTURE(c.reply);

        auto parsed = parse_verdict(c.reply);
        CHECK(parsed.has_value() == c.expect_ok);
        if (c.expect_ok && parsed) {
            CHECK(parsed->pass_flag == c.expected_pass);
            if (c.expected_reason) CHECK(parsed->reason == c.expected_reason);
        }

        // the full judge path never throws on any of these
        ScriptedJudge client({c.reply});
        JudgeVerdict v = judge(client, req);
        if (c.expect_ok) {
            CHECK(v.pass_flag == c.expected_pass);
        } else {
            CHECK(v.pass_flag == 0);
            CHECK(v.reason == "cannot determine");
        }
    }
}

TEST_CASE("verdict parsing survives random bytes") {
    Rng rng(123);
    for (int i = 0; i < 1000; ++i) {
        size_t len = rng.next_u64() % 120;
        std::string junk;
        for (size_t j = 0; j < len; ++j)
            junk.push_back(static_cast<char>(rng.next_u64() % 256));
        CHECK_NOTHROW(parse_verdict(junk));
    }
    // and random mutations of a valid verdict
    const std::string valid = R"({"pass": 1, "reason": "ok"})";
    for (int i = 0; i < 1000; ++i) {
        std::string mutated = valid;
        size_t at = rng.next_u64() % mutated.size();
        mutated[at] = static_cast<char>(rng.next_u64() % 256);
        CHECK_NOTHROW(parse_verdict(mutated));
    }
}

TEST_CASE("stub judge grades fixture-style images deterministically") {
    auto blue = solid_png(16, 16, 50, 90, 220);
    auto red = solid_png(16, 16, 220, 40, 40);

    StubJudge stub;
    // patched image shows the reference blue that the baseline lacked
    JudgeRequest hit = build_request(ExperimentKind::Lens, Family::ColorTransfer,
                                     {blue, red, blue});
    JudgeVerdict v1 = judge(stub, hit);
    CHECK(v1.pass_flag == 1);
    // patched image stays red -> no transfer observed
    JudgeRequest miss = build_request(ExperimentKind::Lens, Family::ColorTransfer,
                                      {blue, red, red});
    JudgeVerdict v2 = judge(stub, miss);
    CHECK(v2.pass_flag == 0);
    // deterministic
    CHECK(judge(stub, hit).raw == v1.raw);
}

TEST_CASE("pooling and rendering") {
    auto make = [](const std::string& row, const std::string& col, int pass) {
        VerdictRecord v;
        v.task_id = "t";
        v.experiment = "lens";
        v.table = "t2i_lens";
        v.row = row;
        v.col = col;
        v.pass = pass;
        return v;
    };

    SUBCASE("a 9-of-10 cell renders the oracle-derived interval") {
        std::vector<VerdictRecord> verdicts;
        for (int i = 0; i < 10; ++i)
            verdicts.push_back(make("observation_rate", "color_transfer", i < 9 ? 1 : 0));
        Report report = pool_and_report(verdicts);
        CHECK(report.text.find("90.0_{-30.4}^{+8.2} (9/10)") != std::string::npos);
        CHECK(report.csv.find("t2i_lens,observation_rate,color_transfer,9,10,") !=
              std::string::npos);
    }

    SUBCASE("empty input gives a header-only report") {
        Report report = pool_and_report({});
        CHECK(report.text.empty());
        CHECK(report.csv == "table,row,col,successes,n,p_bar,delta_lo,delta_hi,cell\n");
    }

    SUBCASE("subset rows keep the canonical order") {
        std::vector<VerdictRecord> verdicts;
        for (const char* row : {"content_only", "all_text", "padding_only"})
            for (const char* col : {"human_customization", "color_transfer", "style_transfer"})
                verdicts.push_back(make(row, col, 1));
        Report report = pool_and_report(verdicts);
        size_t all = report.text.find("all_text");
        size_t pad = report.text.find("padding_only");
        size_t cont = report.text.find("content_only");
        REQUIRE(all != std::string::npos);
        CHECK(all < pad);
        CHECK(pad < cont);
        size_t color = report.text.find("color_transfer");
        size_t style = report.text.find("style_transfer");
        size_t human = report.text.find("human_customization");
        CHECK(color < style);
        CHECK(style < human);
        CHECK(report.cells.size() == 9);
    }

    SUBCASE("re-rendering from stored counts reproduces the bytes") {
        std::vector<VerdictRecord> verdicts;
        for (int i = 0; i < 7; ++i) verdicts.push_back(make("observation_rate", "style_transfer", i % 2));
        Report a = pool_and_report(verdicts);
        Report b = report_from_counts(a.cells);
        CHECK(a.text == b.text);
        CHECK(a.csv == b.csv);
    }
}

TEST_CASE("http judge client speaks the chat-with-images wire shape") {
    using json = nlohmann::json;
    httplib::Server server;
    json seen;
    server.Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
        seen = json::parse(req.body, nullptr, false);
        res.set_content(R"({"content": "{\"pass\": 1, \"reason\": \"from server\"}"})",
                        "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread runner([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    auto png = solid_png(4, 4, 1, 2, 3);
    JudgeRequest req = build_request(ExperimentKind::Lens, Family::ColorTransfer, {png, png, png});
    HttpJudgeClient client("http://127.0.0.1:" + std::to_string(port), "test-model", "sekrit", 5);
    JudgeVerdict v = judge(client, req);
    CHECK(v.pass_flag == 1);
    CHECK(v.reason == "from server");

    REQUIRE(seen.is_object());
    CHECK(seen["model"] == "test-model");
    CHECK(seen["temperature"] == 0.0);
    CHECK(seen["system"].get<std::string>().find("strict visual judge") != std::string::npos);
    REQUIRE(seen["messages"].size() == 1);
    const json& content = seen["messages"][0]["content"];
    REQUIRE(content.size() == 4);   // three labeled images then the question
    CHECK(content[0]["type"] == "image");
    CHECK(content[0]["label"] == "Image 1");
    CHECK(content[0]["data"] == base64_encode(png));
    CHECK(content[3]["type"] == "text");
    CHECK(content[3]["text"].get<std::string>().find("predominant solid color") !=
          std::string::npos);

    server.stop();
    runner.join();

    // unreachable endpoint surfaces as TransportError after retries
    HttpJudgeClient dead("http://127.0.0.1:1", "m", "", 1);
    CHECK_THROWS_AS(judge(dead, req), TransportError);
}

TEST_CASE("verdict log io") {
    fs::path log = temp_dir() / "verdicts.jsonl";
    fs::remove(log);
    std::vector<VerdictRecord> records;
    VerdictRecord v;
    v.task_id = "color/blue-cup/s0";
    v.experiment = "lens";
    v.table = "t2i_lens";
    v.row = "observation_rate";
    v.col = "color_transfer";
    v.pass = 1;
    v.reason = "color present, with \"quotes\" and, commas";
    v.raw = R"({"pass":1,"reason":"..."})";
    records.push_back(v);
    append_verdicts(log, records);
    append_verdicts(log, records);   // append-only

    auto loaded = load_verdicts(log);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].task_id == v.task_id);
    CHECK(loaded[0].reason == v.reason);
    CHECK(loaded[1].raw == v.raw);
}
