#include "mmlens/interventions.hpp"

#include <iostream>

namespace mmlens {

ActivationTrace capture(const Model& model, const RunSpec& run, const std::set<LayerId>& layers) {
    RunSpec spec = run;
    spec.capture_layers.insert(layers.begin(), layers.end());
    return model.sample(spec).trace;
}

RunResult t2i_lens(const Model& model, std::shared_ptr<const ActivationTrace> trace,
                   LayerId source_layer, LensVariant variant, uint64_t lens_seed,
                   TokenSubset subset, const std::set<LayerId>& capture_layers) {
    if (!trace) throw MissingTraceEntry("t2i_lens needs a trace");
    trace->check_fingerprint(model.config());
    source_layer.validate(model.config());
    trace->require(source_layer, 0);

    RunSpec lens_run;
    lens_run.mode = RunMode::UnconditionalT2I;
    lens_run.seed = lens_seed;
    lens_run.capture_layers = capture_layers;
    lens_run.interventions.push_back(LensPatchSpec{trace, source_layer, variant, subset});

    if (variant == LensVariant::SameLayerOneStep)
        return model.sample(lens_run, 1);
    return model.sample(lens_run);
}

RunResult reference_drop(const Model& model, const RunSpec& run, int cutoff) {
    if (run.mode != RunMode::I2I)
        throw InvalidConfig("reference drop applies to I2I runs");
    if (cutoff < 0 || cutoff > model.config().total_blocks())
        throw InvalidConfig("reference drop cutoff out of range");
    RunSpec spec = run;
    spec.interventions.push_back(ReferenceDropSpec{cutoff});
    return model.sample(spec);
}

RunResult cross_patch(const Model& source_model, const RunSpec& source, const Model& target_model,
                      const RunSpec& target, LayerId layer, TokenSubset subset,
                      const std::set<LayerId>& extra_capture) {
    if (source_model.config() != target_model.config())
        throw ConfigMismatch("cross patch requires source and target to share a model config");
    layer.validate(target_model.config());
    if (source.prompt != target.prompt)
        std::cerr << "[mmlens] warning: cross patch with unequal prompts\n";
    if (source.seed == target.seed)
        std::cerr << "[mmlens] warning: cross patch source and target share a noise seed\n";

    auto trace = std::make_shared<ActivationTrace>(capture(source_model, source, {layer}));
    RunSpec patched = target;
    patched.capture_layers.insert(extra_capture.begin(), extra_capture.end());
    patched.interventions.push_back(CrossPatchSpec{trace, layer, subset});
    return target_model.sample(patched);
}

std::vector<SweepEntry> layer_sweep(const Model& model, const RunSpec& base, SweepOp op,
                                    const std::vector<int>& ordinals, uint64_t lens_seed,
                                    LensVariant lens_variant) {
    const ModelConfig& cfg = model.config();
    std::vector<SweepEntry> out;
    out.reserve(ordinals.size());

    std::shared_ptr<const ActivationTrace> lens_trace;
    if (op == SweepOp::T2ILens) {
        std::set<LayerId> layers;
        for (int ord : ordinals) layers.insert(LayerId::from_ordinal(cfg, ord));
        lens_trace = std::make_shared<ActivationTrace>(capture(model, base, layers));
    }

    for (int ord : ordinals) {
        SweepEntry entry;
        entry.ordinal = ord;
        if (op == SweepOp::T2ILens) {
            LayerId layer = LayerId::from_ordinal(cfg, ord);
            entry.label = layer.display();
            entry.result = t2i_lens(model, lens_trace, layer, lens_variant, lens_seed);
        } else {
            if (ord < 0 || ord > cfg.total_blocks())
                throw UnknownLayer("sweep cutoff out of range: " + std::to_string(ord));
            entry.label = "cutoff=" + std::to_string(ord);
            entry.result = reference_drop(model, base, ord);
        }
        out.push_back(std::move(entry));
    }
    return out;
}

} // namespace mmlens
