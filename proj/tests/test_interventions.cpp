#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "mmlens/interventions.hpp"
#include "mmlens/rng.hpp"

using namespace mmlens;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(uint64_t seed = 42) {
    ModelConfig cfg;
    cfg.d_model = 48;
    cfg.n_heads = 4;
    cfg.text_len = 8;
    cfg.latent_h = 4;
    cfg.latent_w = 4;
    cfg.seed = seed;
    return cfg;
}

LatentImage noisy_reference(const ModelConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    Image px(cfg.pixel_w(), cfg.pixel_h());
    for (auto& b : px.rgb) b = static_cast<uint8_t>(rng.next_u64() % 256);
    return encode_image(cfg, px);
}

RunSpec i2i_spec(const ModelConfig& cfg, uint64_t seed, const std::string& instruction,
                 uint64_t ref_seed) {
    RunSpec spec;
    spec.mode = RunMode::I2I;
    spec.prompt = tokenize(instruction);
    spec.reference = noisy_reference(cfg, ref_seed);
    spec.seed = seed;
    return spec;
}

SequenceLayout layout_16() {
    // content [0,2) padding [2,8) reference [8,12) image [12,16)
    return {Segment{SegmentKind::TextContent, 0, 2}, Segment{SegmentKind::TextPadding, 2, 8},
            Segment{SegmentKind::Reference, 8, 12}, Segment{SegmentKind::Image, 12, 16}};
}

fs::path temp_dir() {
    fs::path dir = fs::temp_directory_path() / "mmlens_iv_test";
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("compile_masks") {
    SUBCASE("ko ref->image blocks exactly the image-query reference-key cells") {
        auto masks = compile_masks(ko_ref_to_image(0, 12), layout_16(), 12);
        REQUIRE(masks.size() == 12);
        for (const auto& m : masks) {
            for (int q = 0; q < 16; ++q)
                for (int k = 0; k < 16; ++k) {
                    bool blocked = q >= 12 && k >= 8 && k < 12;
                    CHECK(m.allowed(q, k) == !blocked);
                }
        }
    }

    SUBCASE("empty edge set leaves every layer all-true") {
        EdgeMaskSpec spec;
        spec.layer_from = 0;
        spec.layer_to = 12;
        auto masks = compile_masks(spec, layout_16(), 12);
        for (const auto& m : masks) CHECK(m.is_all_true());
    }

    SUBCASE("padding-only subset narrows the text rows") {
        auto masks = compile_masks(ko_ref_to_text(0, 12), layout_16(), 12,
                                   TokenSubset::PaddingOnly);
        const auto& m = masks[0];
        for (int q = 0; q < 16; ++q)
            for (int k = 8; k < 12; ++k) {
                bool blocked = q >= 2 && q < 8;   // padding rows only
                CHECK(m.allowed(q, k) == !blocked);
            }
    }

    SUBCASE("interval bounds respected") {
        auto masks = compile_masks(ko_ref_to_image(3, 7), layout_16(), 12);
        CHECK(masks[2].is_all_true());
        CHECK(!masks[3].allowed(12, 8));
        CHECK(!masks[6].allowed(12, 8));
        CHECK(masks[7].is_all_true());
    }

    SUBCASE("bad interval rejected") {
        CHECK_THROWS_AS(compile_masks(ko_ref_to_image(5, 5), layout_16(), 12), InvalidConfig);
        CHECK_THROWS_AS(compile_masks(ko_ref_to_image(0, 13), layout_16(), 12), InvalidConfig);
    }

    SUBCASE("absent segment rejected") {
        SequenceLayout no_ref = {Segment{SegmentKind::TextContent, 0, 2},
                                 Segment{SegmentKind::TextPadding, 2, 8},
                                 Segment{SegmentKind::Image, 8, 12}};
        CHECK_THROWS_AS(compile_masks(ko_ref_to_image(0, 12), no_ref, 12), SegmentAbsent);
    }

    SUBCASE("subset partition covers all text for every prompt length") {
        for (int content = 0; content <= 8; ++content) {
            SequenceLayout layout = {Segment{SegmentKind::TextContent, 0, content},
                                     Segment{SegmentKind::TextPadding, content, 8},
                                     Segment{SegmentKind::Image, 8, 10}};
            auto all = text_subset_indices(layout, TokenSubset::AllText);
            auto pad = text_subset_indices(layout, TokenSubset::PaddingOnly);
            auto cont = text_subset_indices(layout, TokenSubset::ContentOnly);
            CHECK(pad.size() + cont.size() == all.size());
            std::vector<int> merged = cont;
            merged.insert(merged.end(), pad.begin(), pad.end());
            std::sort(merged.begin(), merged.end());
            CHECK(merged == all);
        }
    }
}

TEST_CASE("capture") {
    ModelConfig cfg = tiny_config();
    Model model(cfg);

    SUBCASE("input embedding capture equals the prompt embedding at every step") {
        RunSpec run;
        run.mode = RunMode::T2I;
        run.prompt = tokenize("add a cup");
        run.seed = 3;
        ActivationTrace trace = capture(model, run, {input_embedding()});
        Mat expect = embed_prompt(cfg, run.prompt).embeddings;
        REQUIRE(trace.entries.size() == static_cast<size_t>(cfg.n_steps));
        for (int s = 0; s < cfg.n_steps; ++s)
            CHECK(bitwise_equal(trace.require(input_embedding(), s), expect));
    }

    SUBCASE("zeroed projections leave block captures at the input embeddings") {
        Model zeroed(cfg);
        zeroed.zero_output_projections();
        RunSpec run;
        run.mode = RunMode::T2I;
        run.prompt = tokenize("add a cup");
        run.seed = 3;
        ActivationTrace trace = capture(zeroed, run, {double_block(0), single_block(7)});
        Mat expect = embed_prompt(cfg, run.prompt).embeddings;
        CHECK(bitwise_equal(trace.require(double_block(0), 0), expect));
        CHECK(bitwise_equal(trace.require(single_block(7), cfg.n_steps - 1), expect));
    }

    SUBCASE("capture is deterministic") {
        RunSpec run = i2i_spec(cfg, 5, "add a cup", 100);
        ActivationTrace a = capture(model, run, {double_block(2)});
        ActivationTrace b = capture(model, run, {double_block(2)});
        CHECK(a == b);
    }

    SUBCASE("unknown layer rejected") {
        RunSpec run;
        run.mode = RunMode::UnconditionalT2I;
        run.seed = 1;
        CHECK_THROWS_AS(capture(model, run, {double_block(99)}), UnknownLayer);
    }
}

TEST_CASE("t2i_lens") {
    ModelConfig cfg = tiny_config();
    Model model(cfg);

    SUBCASE("identity patch reproduces the source run bitwise") {
        RunSpec uncond;
        uncond.mode = RunMode::UnconditionalT2I;
        uncond.seed = 17;
        RunResult base = model.sample(uncond);
        auto trace = std::make_shared<ActivationTrace>(capture(model, uncond, {input_embedding()}));
        RunResult lens = t2i_lens(model, trace, input_embedding(), LensVariant::InputFourStep, 17);
        CHECK(bitwise_equal(lens.latents.grid, base.latents.grid));
        CHECK(lens.pixels == base.pixels);
    }

    SUBCASE("a trace from an edit run steers the lens away from the control") {
        RunSpec edit = i2i_spec(cfg, 5, "draw a cup in this color", 7);
        auto trace = std::make_shared<ActivationTrace>(capture(model, edit, {double_block(1)}));
        RunResult lens = t2i_lens(model, trace, double_block(1), LensVariant::InputFourStep, 99);
        RunSpec control;
        control.mode = RunMode::UnconditionalT2I;
        control.seed = 99;
        RunResult plain = model.sample(control);
        CHECK(!bitwise_equal(lens.latents.grid, plain.latents.grid));
    }

    SUBCASE("same-layer one-step variant runs a single step") {
        RunSpec edit = i2i_spec(cfg, 5, "draw a cup in this color", 7);
        auto trace = std::make_shared<ActivationTrace>(capture(model, edit, {single_block(3)}));
        RunResult lens =
            t2i_lens(model, trace, single_block(3), LensVariant::SameLayerOneStep, 21,
                     TokenSubset::AllText, {single_block(3)});
        // captured text rows at the patched layer equal the patch source
        CHECK(bitwise_equal(lens.trace.require(single_block(3), 0),
                            trace->require(single_block(3), 0)));
    }

    SUBCASE("errors") {
        RunSpec edit = i2i_spec(cfg, 5, "draw a cup in this color", 7);
        auto trace = std::make_shared<ActivationTrace>(capture(model, edit, {double_block(1)}));
        CHECK_THROWS_AS(
            t2i_lens(model, trace, double_block(2), LensVariant::InputFourStep, 1),
            MissingTraceEntry);

        Model other(tiny_config(4242));
        CHECK_THROWS_AS(
            t2i_lens(other, trace, double_block(1), LensVariant::InputFourStep, 1),
            FingerprintMismatch);
    }

    SUBCASE("trace round trip: identity patch captures back the same trace") {
        RunSpec uncond;
        uncond.mode = RunMode::UnconditionalT2I;
        uncond.seed = 8;
        auto trace = std::make_shared<ActivationTrace>(capture(model, uncond, {input_embedding()}));
        RunResult lens = t2i_lens(model, trace, input_embedding(), LensVariant::InputFourStep, 8,
                                  TokenSubset::AllText, {input_embedding()});
        for (int s = 0; s < cfg.n_steps; ++s)
            CHECK(bitwise_equal(lens.trace.require(input_embedding(), s),
                                trace->require(input_embedding(), s)));
    }
}

TEST_CASE("knockout algebra") {
    ModelConfig cfg = tiny_config();
    Model model(cfg);
    const int total = cfg.total_blocks();
    RunSpec edit = i2i_spec(cfg, 5, "add a lamp", 7);

    SUBCASE("full isolation equals the referenceless run") {
        RunSpec iso = edit;
        iso.interventions.push_back(KnockoutSpec{ko_ref_isolated(0, total), std::nullopt});
        RunResult isolated = model.sample(iso);
        RunSpec bare;
        bare.mode = RunMode::T2I;
        bare.prompt = edit.prompt;
        bare.seed = edit.seed;
        RunResult control = model.sample(bare);
        CHECK(max_abs_diff(isolated.latents.grid, control.latents.grid) <= 1e-6f);
    }

    SUBCASE("blocking both outgoing reference edges makes the output immune to the reference") {
        RunSpec ko = edit;
        ko.interventions.push_back(KnockoutSpec{ko_ref_to_text(0, total), std::nullopt});
        ko.interventions.push_back(KnockoutSpec{ko_ref_to_image(0, total), std::nullopt});
        RunResult base = model.sample(ko);
        for (uint64_t i = 0; i < 5; ++i) {
            RunSpec perturbed = ko;
            Rng rng(900 + i);
            for (auto& v : perturbed.reference->grid.data)
                v += rng.next_gaussian() * 0.5f;
            CHECK(bitwise_equal(model.sample(perturbed).latents.grid, base.latents.grid));
        }
    }

    SUBCASE("ref->image alone leaves a live reference pathway through text") {
        RunSpec ko = edit;
        ko.interventions.push_back(KnockoutSpec{ko_ref_to_image(0, total), std::nullopt});
        RunResult base = model.sample(ko);
        RunSpec perturbed = ko;
        perturbed.reference->grid.data[11] += 2.5f;
        CHECK(!bitwise_equal(model.sample(perturbed).latents.grid, base.latents.grid));
    }
}

TEST_CASE("reference_drop") {
    ModelConfig cfg = tiny_config();
    Model model(cfg);
    const int total = cfg.total_blocks();
    RunSpec edit = i2i_spec(cfg, 5, "draw a ball in this color", 7);

    SUBCASE("cutoff 0 is a referenceless run") {
        RunResult dropped = reference_drop(model, edit, 0);
        RunSpec bare;
        bare.mode = RunMode::T2I;
        bare.prompt = edit.prompt;
        bare.seed = edit.seed;
        RunResult control = model.sample(bare);
        CHECK(max_abs_diff(dropped.latents.grid, control.latents.grid) <= 1e-6f);
    }

    SUBCASE("cutoff == depth is a plain ref->image knockout") {
        RunResult dropped = reference_drop(model, edit, total);
        RunSpec ko = edit;
        ko.interventions.push_back(KnockoutSpec{ko_ref_to_image(0, total), std::nullopt});
        CHECK(bitwise_equal(dropped.latents.grid, model.sample(ko).latents.grid));
    }

    SUBCASE("sweep emits one result per ordinal; a zero model makes them all equal") {
        Model zeroed(cfg);
        zeroed.zero_output_projections();
        std::vector<int> ordinals;
        for (int i = 0; i <= total; ++i) ordinals.push_back(i);
        auto entries = layer_sweep(zeroed, edit, SweepOp::ReferenceDrop, ordinals);
        REQUIRE(entries.size() == static_cast<size_t>(total + 1));
        for (const auto& e : entries)
            CHECK(bitwise_equal(e.result.latents.grid, entries[0].result.latents.grid));
    }

    SUBCASE("single-ordinal sweep equals the direct call") {
        auto entries = layer_sweep(model, edit, SweepOp::ReferenceDrop, {4});
        REQUIRE(entries.size() == 1);
        CHECK(bitwise_equal(entries[0].result.latents.grid,
                            reference_drop(model, edit, 4).latents.grid));
    }

    SUBCASE("mode and cutoff validated") {
        RunSpec bare;
        bare.mode = RunMode::T2I;
        bare.prompt = edit.prompt;
        bare.seed = 1;
        CHECK_THROWS_AS(reference_drop(model, bare, 1), InvalidConfig);
        CHECK_THROWS_AS(reference_drop(model, edit, total + 1), InvalidConfig);
    }
}

TEST_CASE("cross_patch") {
    ModelConfig cfg = tiny_config();
    Model model(cfg);
    RunSpec source = i2i_spec(cfg, 5, "draw a cup in this color", 7);
    RunSpec target = i2i_spec(cfg, 6, "draw a cup in this color", 8);

    SUBCASE("identity patch reproduces the target baseline") {
        RunResult base = model.sample(target);
        RunResult patched = cross_patch(model, target, target, double_block(1));
        CHECK(bitwise_equal(patched.latents.grid, base.latents.grid));
    }

    SUBCASE("padding+content composition equals an all-text patch") {
        auto trace =
            std::make_shared<ActivationTrace>(capture(model, source, {double_block(1)}));
        RunSpec both = target;
        both.interventions.push_back(
            CrossPatchSpec{trace, double_block(1), TokenSubset::PaddingOnly});
        both.interventions.push_back(
            CrossPatchSpec{trace, double_block(1), TokenSubset::ContentOnly});
        RunSpec all = target;
        all.interventions.push_back(CrossPatchSpec{trace, double_block(1), TokenSubset::AllText});
        CHECK(bitwise_equal(model.sample(both).latents.grid, model.sample(all).latents.grid));
    }

    SUBCASE("patch locality: only the subset rows change at the patched boundary") {
        const LayerId layer = double_block(1);
        ActivationTrace baseline = capture(model, target, {layer});
        auto trace = std::make_shared<ActivationTrace>(capture(model, source, {layer}));
        RunResult patched =
            cross_patch(model, source, model, target, layer, TokenSubset::PaddingOnly, {layer});

        TokenSequence text = embed_prompt(cfg, target.prompt);
        const int content_len = text.require(SegmentKind::TextContent).length();

        // at step 0 nothing upstream has diverged yet: rows outside the
        // subset must equal the unpatched boundary values bitwise
        {
            const Mat& got = patched.trace.require(layer, 0);
            const Mat& unpatched = baseline.require(layer, 0);
            for (int i = 0; i < content_len; ++i)
                for (int j = 0; j < cfg.d_model; ++j)
                    CHECK(got.at(i, j) == unpatched.at(i, j));
        }
        // at every step the subset rows carry the source values verbatim
        for (int s = 0; s < cfg.n_steps; ++s) {
            const Mat& got = patched.trace.require(layer, s);
            const Mat& src = trace->require(layer, s);
            for (int i = content_len; i < cfg.text_len; ++i)
                for (int j = 0; j < cfg.d_model; ++j)
                    CHECK(got.at(i, j) == src.at(i, j));
        }
    }

    SUBCASE("config mismatch rejected") {
        ModelConfig other_cfg = tiny_config();
        other_cfg.d_model = 24;
        other_cfg.n_heads = 2;
        Model other(other_cfg);
        CHECK_THROWS_AS(
            cross_patch(model, source, other, target, double_block(1), TokenSubset::AllText),
            ConfigMismatch);
    }
}

TEST_CASE("trace file io") {
    ModelConfig cfg = tiny_config();
    Model model(cfg);
    RunSpec edit = i2i_spec(cfg, 5, "add a lamp", 7);
    ActivationTrace trace = capture(model, edit, {double_block(0), single_block(2)});
    trace.source_run_id = edit.run_id();

    fs::path path = temp_dir() / "trace.trce";
    trace.save(path);
    ActivationTrace loaded = ActivationTrace::load(path, cfg);
    CHECK(loaded == trace);

    ModelConfig other = tiny_config(777);
    CHECK_THROWS_AS(ActivationTrace::load(path, other), FingerprintMismatch);
    CHECK_THROWS_AS(trace.require(double_block(3), 0), MissingTraceEntry);

    fs::path bad = temp_dir() / "bad.trce";
    std::ofstream(bad, std::ios::binary) << "XXXX";
    CHECK_THROWS_AS(ActivationTrace::load(bad, cfg), IoError);
}

TEST_CASE("lens sweep shares the base seed and covers the ordinals") {
    ModelConfig cfg = tiny_config();
    Model model(cfg);
    RunSpec edit = i2i_spec(cfg, 5, "add a lamp", 7);

    std::vector<int> ordinals = {0, 3, 4, 11};
    auto entries = layer_sweep(model, edit, SweepOp::T2ILens, ordinals, 31);
    REQUIRE(entries.size() == 4);
    CHECK(entries[0].label == "double#1");
    CHECK(entries[3].label == "single#8");

    // direct call with the same trace source matches the sweep entry
    auto trace = std::make_shared<ActivationTrace>(
        capture(model, edit, {double_block(3)}));
    RunResult direct = t2i_lens(model, trace, double_block(3), LensVariant::InputFourStep, 31);
    CHECK(bitwise_equal(entries[1].result.latents.grid, direct.latents.grid));

    CHECK_THROWS_AS(layer_sweep(model, edit, SweepOp::T2ILens, {12}), UnknownLayer);
}
