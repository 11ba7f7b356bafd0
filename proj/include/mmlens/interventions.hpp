#pragma once

#include <memory>

#include "mmlens/model.hpp"

namespace mmlens {

// Samples the run and returns the captured text activations for the given
// layers (one [text_len x d_model] entry per layer and step).
ActivationTrace capture(const Model& model, const RunSpec& run, const std::set<LayerId>& layers);

// Decodes trace content through a reference-free, empty-prompt generation.
// The lens run takes its own fresh seed so lens content is never confounded
// with noise shared with the source run.
RunResult t2i_lens(const Model& model, std::shared_ptr<const ActivationTrace> trace,
                   LayerId source_layer, LensVariant variant, uint64_t lens_seed,
                   TokenSubset subset = TokenSubset::AllText,
                   const std::set<LayerId>& capture_layers = {});

// KO_{ref->image} up to the cutoff ordinal, all four reference edges from
// the cutoff onward. cutoff ranges over [0, total_blocks].
RunResult reference_drop(const Model& model, const RunSpec& run, int cutoff);

// Runs the source with capture at `layer`, then re-runs the target
// overwriting its text rows (restricted to subset) at that layer's output
// with the source activations, step-matched.
RunResult cross_patch(const Model& source_model, const RunSpec& source, const Model& target_model,
                      const RunSpec& target, LayerId layer, TokenSubset subset,
                      const std::set<LayerId>& extra_capture = {});

inline RunResult cross_patch(const Model& model, const RunSpec& source, const RunSpec& target,
                             LayerId layer, TokenSubset subset = TokenSubset::AllText,
                             const std::set<LayerId>& extra_capture = {}) {
    return cross_patch(model, source, model, target, layer, subset, extra_capture);
}

enum class SweepOp : uint8_t { T2ILens = 0, ReferenceDrop = 1 };

struct SweepEntry {
    int ordinal;
    std::string label;   // rendered layer name, or "cutoff=k" for drops
    RunResult result;
};

// One run per block ordinal, all sharing the base seed. For T2ILens the base
// must be an I2I run to capture from; for ReferenceDrop the ordinal is the
// cutoff (so a full sweep covers 0..total_blocks).
std::vector<SweepEntry> layer_sweep(const Model& model, const RunSpec& base, SweepOp op,
                                    const std::vector<int>& ordinals, uint64_t lens_seed = 1,
                                    LensVariant lens_variant = LensVariant::InputFourStep);

} // namespace mmlens
