#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mmlens/attention.hpp"
#include "mmlens/codec.hpp"
#include "mmlens/config.hpp"
#include "mmlens/intervention_spec.hpp"
#include "mmlens/sequence.hpp"

namespace mmlens {

enum class RunMode : uint8_t { T2I = 0, I2I = 1, UnconditionalT2I = 2 };

const char* run_mode_name(RunMode m);

// A fully seeded generation request. Identical RunSpecs produce bitwise
// identical results on the same platform.
struct RunSpec {
    RunMode mode = RunMode::T2I;
    std::vector<uint32_t> prompt;             // token ids; empty for UnconditionalT2I
    std::optional<LatentImage> reference;     // present iff mode == I2I
    uint64_t seed = 0;
    std::vector<InterventionSpec> interventions;
    std::set<LayerId> capture_layers;

    void validate(const ModelConfig& cfg) const;
    std::string run_id() const;
};

struct RunResult {
    LatentImage latents;
    Image pixels;
    ActivationTrace trace;
};

// One attention/MLP parameter set. Double blocks keep one per modality side,
// single blocks one shared set. Linear layers are bias-free; conditioning
// enters through the adaLN modulation tensor.
struct BlockParams {
    Mat wq, wk, wv, wo;      // [d x d]
    Mat mlp_in;              // [d x 4d]
    Mat mlp_out;             // [4d x d]
    Mat ada;                 // [d x 6d] -> shift/scale/gate for attn and mlp
};

struct DoubleBlockWeights {
    BlockParams text;
    BlockParams image;   // shared by Reference and Image tokens
};

struct SingleBlockWeights {
    BlockParams shared;
};

// Deterministic per-token-id embedding plus one distinguished pad vector,
// standing in for the external text encoder.
Mat token_embedding(const ModelConfig& cfg, uint32_t token_id);
Mat pad_embedding(const ModelConfig& cfg);
TokenSequence embed_prompt(const ModelConfig& cfg, std::span<const uint32_t> prompt);

class Model {
  public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }

    TokenSequence embed_prompt(std::span<const uint32_t> prompt) const;

    // Concatenates Text(content, padding) | Reference | Image and assigns
    // rotary positions. Non-reference positions do not depend on whether a
    // reference is present.
    TokenSequence assemble_sequence(const TokenSequence& text, const LatentImage* reference,
                                    const LatentImage& image) const;

    std::vector<float> time_embedding(float t) const;

    // One residual block: pre-norm modulated attention then pre-norm
    // modulated MLP. Segments and positions pass through unchanged.
    TokenSequence forward_block(const TokenSequence& state, LayerId layer,
                                const std::vector<float>& temb, const AttnMask& mask) const;

    // Euler flow-matching sampler over a uniform grid from t=1 to t=0. Text
    // and reference rows are re-set to their step-0 values at the start of
    // every step; interventions apply at their declared layers and steps.
    RunResult sample(const RunSpec& run, std::optional<int> n_steps_override = {}) const;

    // Zeroes every attention out-projection, MLP down-projection and the
    // velocity head, making each block an identity and the velocity field
    // exactly zero.
    void zero_output_projections();

    void save_weights(const std::filesystem::path& path) const;
    void load_weights(const std::filesystem::path& path);

    // Named views over every weight tensor, in a stable order.
    std::vector<std::pair<std::string, Mat*>> named_tensors();
    std::vector<std::pair<std::string, const Mat*>> named_tensors() const;

  private:
    struct SamplePlan;

    void init_weights();
    const BlockParams& params_for(LayerId layer, bool image_side) const;
    void apply_rope(Mat& qk, const std::vector<Pos3>& positions) const;
    void block_inplace(Mat& x, const std::vector<Pos3>& positions, const Segment& text_span,
                       LayerId layer, const std::vector<float>& temb, const AttnMask& mask) const;
    Mat velocity(const Mat& x, const Segment& image_seg, const std::vector<float>& temb) const;
    SamplePlan build_plan(const RunSpec& run, int n_steps, const SequenceLayout& layout) const;

    ModelConfig cfg_;
    std::vector<DoubleBlockWeights> double_blocks_;
    std::vector<SingleBlockWeights> single_blocks_;
    Mat time_w1_, time_w2_;        // [d x d] each
    Mat head_ada_;                 // [d x 2d] -> shift/scale
    Mat head_proj_;                // [d x d]
};

} // namespace mmlens
