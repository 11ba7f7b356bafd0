#include "mmlens/model.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "mmlens/fastmath.hpp"
#include "mmlens/rng.hpp"

namespace mmlens {

const char* run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::T2I: return "t2i";
        case RunMode::I2I: return "i2i";
        case RunMode::UnconditionalT2I: return "uncond_t2i";
    }
    return "?";
}

void RunSpec::validate(const ModelConfig& cfg) const {
    if (mode == RunMode::I2I) {
        if (!reference.has_value())
            throw InvalidConfig("I2I runs require reference latents");
    } else if (reference.has_value()) {
        throw InvalidConfig("only I2I runs may carry reference latents");
    }
    if (mode == RunMode::UnconditionalT2I && !prompt.empty())
        throw InvalidConfig("unconditional runs use an empty prompt");
    if (static_cast<int>(prompt.size()) > cfg.text_len)
        throw PromptTooLong("prompt length exceeds text_len");
    for (const auto& layer : capture_layers)
        layer.validate(cfg);
}

std::string RunSpec::run_id() const {
    std::ostringstream os;
    os << run_mode_name(mode) << '|' << seed << '|';
    for (uint32_t t : prompt) os << t << ',';
    os << '|' << (reference.has_value() ? 1 : 0);
    uint64_t h = fnv1a64(os.str());
    char buf[32];
    std::snprintf(buf, sizeof(buf), "run-%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// embeddings

// The embedding stub replaces the external frozen text encoder, so vectors
// depend on the token id and width only, never on the model seed.
Mat token_embedding(const ModelConfig& cfg, uint32_t token_id) {
    Mat row(1, cfg.d_model);
    Rng r = Rng(fnv1a64("token-embedding")).fork(static_cast<uint64_t>(token_id));
    for (auto& v : row.data) v = r.next_gaussian();
    return row;
}

Mat pad_embedding(const ModelConfig& cfg) {
    Mat row(1, cfg.d_model);
    Rng r = Rng(fnv1a64("pad-embedding"));
    for (auto& v : row.data) v = r.next_gaussian();
    return row;
}

TokenSequence embed_prompt(const ModelConfig& cfg, std::span<const uint32_t> prompt) {
    if (static_cast<int>(prompt.size()) > cfg.text_len)
        throw PromptTooLong("prompt of length " + std::to_string(prompt.size()) +
                            " exceeds text_len " + std::to_string(cfg.text_len));
    const int n_content = static_cast<int>(prompt.size());

    TokenSequence seq;
    seq.embeddings = Mat(cfg.text_len, cfg.d_model);
    for (int i = 0; i < n_content; ++i) {
        Mat e = token_embedding(cfg, prompt[i]);
        std::copy(e.data.begin(), e.data.end(), seq.embeddings.row(i));
    }
    Mat pad = pad_embedding(cfg);
    for (int i = n_content; i < cfg.text_len; ++i)
        std::copy(pad.data.begin(), pad.data.end(), seq.embeddings.row(i));

    seq.segments = {Segment{SegmentKind::TextContent, 0, n_content},
                    Segment{SegmentKind::TextPadding, n_content, cfg.text_len}};
    seq.positions.resize(cfg.text_len);
    for (int i = 0; i < cfg.text_len; ++i)
        seq.positions[i] = Pos3{static_cast<float>(i), 0.0f, 0.0f};
    return seq;
}

TokenSequence Model::embed_prompt(std::span<const uint32_t> prompt) const {
    return mmlens::embed_prompt(cfg_, prompt);
}

TokenSequence Model::assemble_sequence(const TokenSequence& text, const LatentImage* reference,
                                       const LatentImage& image) const {
    if (text.embeddings.rows != cfg_.text_len || text.embeddings.cols != cfg_.d_model)
        throw ShapeMismatch("assemble_sequence: text block must be [text_len x d_model]");
    const Segment* content = text.find(SegmentKind::TextContent);
    const Segment* padding = text.find(SegmentKind::TextPadding);
    if (!content || !padding)
        throw ShapeMismatch("assemble_sequence: text sequence missing its segments");
    image.check_dims(cfg_);
    if (reference) reference->check_dims(cfg_);

    const int n_ref = reference ? reference->grid.rows : 0;
    const int n_img = image.grid.rows;
    const int n = cfg_.text_len + n_ref + n_img;

    TokenSequence seq;
    seq.embeddings = Mat(n, cfg_.d_model);
    std::copy(text.embeddings.data.begin(), text.embeddings.data.end(),
              seq.embeddings.data.begin());
    if (reference)
        std::copy(reference->grid.data.begin(), reference->grid.data.end(),
                  seq.embeddings.row(cfg_.text_len));
    std::copy(image.grid.data.begin(), image.grid.data.end(),
              seq.embeddings.row(cfg_.text_len + n_ref));

    seq.segments = {*content, *padding};
    if (reference)
        seq.segments.push_back(Segment{SegmentKind::Reference, cfg_.text_len, cfg_.text_len + n_ref});
    seq.segments.push_back(Segment{SegmentKind::Image, cfg_.text_len + n_ref, n});

    // Text on the first axis; each grid behind its own tag. Image positions
    // are the same with and without a reference in the sequence.
    const float ref_tag = static_cast<float>(cfg_.text_len + 1);
    const float img_tag = static_cast<float>(cfg_.text_len + 2);
    seq.positions.resize(n);
    for (int i = 0; i < cfg_.text_len; ++i)
        seq.positions[i] = Pos3{static_cast<float>(i), 0.0f, 0.0f};
    if (reference) {
        for (int r = 0; r < reference->h; ++r)
            for (int c = 0; c < reference->w; ++c)
                seq.positions[cfg_.text_len + r * reference->w + c] =
                    Pos3{ref_tag, static_cast<float>(r), static_cast<float>(c)};
    }
    for (int r = 0; r < image.h; ++r)
        for (int c = 0; c < image.w; ++c)
            seq.positions[cfg_.text_len + n_ref + r * image.w + c] =
                Pos3{img_tag, static_cast<float>(r), static_cast<float>(c)};

    seq.validate();
    return seq;
}

// ---------------------------------------------------------------------------
// weights

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    init_weights();
}

void Model::init_weights() {
    const int d = cfg_.d_model;
    Rng root = Rng(cfg_.seed).fork("weights");
    auto init = [&](Mat& m, int rows, int cols, const std::string& name) {
        m = Mat(rows, cols);
        Rng r = root.fork(name);
        const float scale = 1.0f / std::sqrt(static_cast<float>(rows));
        for (auto& v : m.data) v = r.next_gaussian() * scale;
    };
    auto init_params = [&](BlockParams& p, const std::string& prefix) {
        init(p.wq, d, d, prefix + ".wq");
        init(p.wk, d, d, prefix + ".wk");
        init(p.wv, d, d, prefix + ".wv");
        init(p.wo, d, d, prefix + ".wo");
        init(p.mlp_in, d, 4 * d, prefix + ".mlp_in");
        init(p.mlp_out, 4 * d, d, prefix + ".mlp_out");
        init(p.ada, d, 6 * d, prefix + ".ada");
    };
    double_blocks_.resize(cfg_.n_double_blocks);
    for (int i = 0; i < cfg_.n_double_blocks; ++i) {
        init_params(double_blocks_[i].text, "double" + std::to_string(i) + ".text");
        init_params(double_blocks_[i].image, "double" + std::to_string(i) + ".image");
    }
    single_blocks_.resize(cfg_.n_single_blocks);
    for (int i = 0; i < cfg_.n_single_blocks; ++i)
        init_params(single_blocks_[i].shared, "single" + std::to_string(i));
    init(time_w1_, d, d, "time.w1");
    init(time_w2_, d, d, "time.w2");
    init(head_ada_, d, 2 * d, "head.ada");
    init(head_proj_, d, d, "head.proj");
}

void Model::zero_output_projections() {
    for (auto& db : double_blocks_) {
        db.text.wo.fill(0.0f);
        db.text.mlp_out.fill(0.0f);
        db.image.wo.fill(0.0f);
        db.image.mlp_out.fill(0.0f);
    }
    for (auto& sb : single_blocks_) {
        sb.shared.wo.fill(0.0f);
        sb.shared.mlp_out.fill(0.0f);
    }
    head_proj_.fill(0.0f);
}

std::vector<std::pair<std::string, Mat*>> Model::named_tensors() {
    std::vector<std::pair<std::string, Mat*>> out;
    auto add_params = [&](BlockParams& p, const std::string& prefix) {
        out.emplace_back(prefix + ".wq", &p.wq);
        out.emplace_back(prefix + ".wk", &p.wk);
        out.emplace_back(prefix + ".wv", &p.wv);
        out.emplace_back(prefix + ".wo", &p.wo);
        out.emplace_back(prefix + ".mlp_in", &p.mlp_in);
        out.emplace_back(prefix + ".mlp_out", &p.mlp_out);
        out.emplace_back(prefix + ".ada", &p.ada);
    };
    for (int i = 0; i < cfg_.n_double_blocks; ++i) {
        add_params(double_blocks_[i].text, "double" + std::to_string(i) + ".text");
        add_params(double_blocks_[i].image, "double" + std::to_string(i) + ".image");
    }
    for (int i = 0; i < cfg_.n_single_blocks; ++i)
        add_params(single_blocks_[i].shared, "single" + std::to_string(i));
    out.emplace_back("time.w1", &time_w1_);
    out.emplace_back("time.w2", &time_w2_);
    out.emplace_back("head.ada", &head_ada_);
    out.emplace_back("head.proj", &head_proj_);
    return out;
}

std::vector<std::pair<std::string, const Mat*>> Model::named_tensors() const {
    auto mut = const_cast<Model*>(this)->named_tensors();
    std::vector<std::pair<std::string, const Mat*>> out;
    out.reserve(mut.size());
    for (auto& [name, m] : mut) out.emplace_back(name, m);
    return out;
}

const BlockParams& Model::params_for(LayerId layer, bool image_side) const {
    if (layer.kind == LayerKind::Double)
        return image_side ? double_blocks_[layer.index].image : double_blocks_[layer.index].text;
    return single_blocks_[layer.index].shared;
}

// ---------------------------------------------------------------------------
// forward pass

namespace {

void layernorm_row(const float* x, float* out, int d) {
    float mean = 0.0f;
    for (int i = 0; i < d; ++i) mean += x[i];
    mean /= static_cast<float>(d);
    float var = 0.0f;
    for (int i = 0; i < d; ++i) {
        float c = x[i] - mean;
        var += c * c;
    }
    var /= static_cast<float>(d);
    const float inv = 1.0f / std::sqrt(var + 1e-6f);
    for (int i = 0; i < d; ++i) out[i] = (x[i] - mean) * inv;
}

float gelu(float x) {
    return 0.5f * x * (1.0f + fast_tanhf(0.7978845608f * (x + 0.044715f * x * x * x)));
}

float silu(float x) { return x / (1.0f + std::exp(-x)); }

// out rows [r0, r1) = x rows [r0, r1) times w
void matmul_rows(Mat& out, const Mat& x, const Mat& w, int r0, int r1) {
    const int k = x.cols, m = w.cols;
    for (int i = r0; i < r1; ++i) {
        float* __restrict o = out.row(i);
        for (int j = 0; j < m; ++j) o[j] = 0.0f;
        const float* __restrict xr = x.row(i);
        for (int p = 0; p < k; ++p) {
            const float xv = xr[p];
            const float* __restrict wr = w.row(p);
            for (int j = 0; j < m; ++j) o[j] += xv * wr[j];
        }
    }
}

struct Modulation {
    std::vector<float> shift_attn, scale_attn, gate_attn;
    std::vector<float> shift_mlp, scale_mlp, gate_mlp;
};

Modulation modulation_from(const Mat& ada, const std::vector<float>& temb) {
    const int d = ada.rows;
    std::vector<float> six(6 * d, 0.0f);
    for (int p = 0; p < d; ++p) {
        const float tv = temb[p];
        const float* row = ada.row(p);
        for (int j = 0; j < 6 * d; ++j) six[j] += tv * row[j];
    }
    Modulation m;
    auto slice = [&](int k) { return std::vector<float>(six.begin() + k * d, six.begin() + (k + 1) * d); };
    m.shift_attn = slice(0);
    m.scale_attn = slice(1);
    m.gate_attn = slice(2);
    m.shift_mlp = slice(3);
    m.scale_mlp = slice(4);
    m.gate_mlp = slice(5);
    return m;
}

} // namespace

std::vector<float> Model::time_embedding(float t) const {
    const int d = cfg_.d_model;
    const int half = d / 2;
    std::vector<float> feat(d, 0.0f);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        const double a = static_cast<double>(t) * 1000.0 * freq;
        feat[2 * i] = static_cast<float>(std::sin(a));
        feat[2 * i + 1] = static_cast<float>(std::cos(a));
    }
    std::vector<float> h(d, 0.0f);
    for (int p = 0; p < d; ++p) {
        const float fv = feat[p];
        const float* row = time_w1_.row(p);
        for (int j = 0; j < d; ++j) h[j] += fv * row[j];
    }
    for (auto& v : h) v = silu(v);
    std::vector<float> out(d, 0.0f);
    for (int p = 0; p < d; ++p) {
        const float hv = h[p];
        const float* row = time_w2_.row(p);
        for (int j = 0; j < d; ++j) out[j] += hv * row[j];
    }
    return out;
}

void Model::apply_rope(Mat& qk, const std::vector<Pos3>& positions) const {
    const int dh = cfg_.head_dim();
    const int npairs = dh / 2;
    const int pr = npairs / 3;
    const int pa = npairs - 2 * pr;

    std::vector<double> freq(npairs);
    for (int j = 0; j < pa; ++j) freq[j] = std::pow(10000.0, -static_cast<double>(j) / pa);
    for (int j = 0; j < pr; ++j) {
        freq[pa + j] = std::pow(10000.0, -static_cast<double>(j) / pr);
        freq[pa + pr + j] = freq[pa + j];
    }

    std::vector<float> cs(npairs), sn(npairs);
    for (int i = 0; i < qk.rows; ++i) {
        const Pos3& p = positions[i];
        for (int j = 0; j < npairs; ++j) {
            const double pos = j < pa ? p.a : (j < pa + pr ? p.row : p.col);
            const double th = pos * freq[j];
            cs[j] = static_cast<float>(std::cos(th));
            sn[j] = static_cast<float>(std::sin(th));
        }
        float* row = qk.row(i);
        for (int h = 0; h < cfg_.n_heads; ++h) {
            float* hp = row + h * dh;
            for (int j = 0; j < npairs; ++j) {
                const float x0 = hp[2 * j], x1 = hp[2 * j + 1];
                hp[2 * j] = x0 * cs[j] - x1 * sn[j];
                hp[2 * j + 1] = x0 * sn[j] + x1 * cs[j];
            }
        }
    }
}

void Model::block_inplace(Mat& x, const std::vector<Pos3>& positions, const Segment& text_span,
                          LayerId layer, const std::vector<float>& temb,
                          const AttnMask& mask) const {
    const int n = x.rows;
    const int d = cfg_.d_model;
    const bool is_double = layer.kind == LayerKind::Double;

    // (row range, image side) pairs this block treats with separate params
    struct Side {
        int r0, r1;
        bool image;
    };
    std::vector<Side> sides;
    if (is_double) {
        sides.push_back({text_span.begin, text_span.end, false});
        if (text_span.end < n) sides.push_back({text_span.end, n, true});
    } else {
        sides.push_back({0, n, false});
    }

    std::vector<Modulation> mods;
    for (const auto& s : sides)
        mods.push_back(modulation_from(params_for(layer, s.image).ada, temb));

    Mat h(n, d);
    auto norm_modulate = [&](const std::vector<float>& shift, const std::vector<float>& scale,
                             int r0, int r1) {
        for (int i = r0; i < r1; ++i) {
            layernorm_row(x.row(i), h.row(i), d);
            float* hr = h.row(i);
            for (int j = 0; j < d; ++j) hr[j] = hr[j] * (1.0f + scale[j]) + shift[j];
        }
    };

    // attention sublayer
    for (size_t si = 0; si < sides.size(); ++si)
        norm_modulate(mods[si].shift_attn, mods[si].scale_attn, sides[si].r0, sides[si].r1);
    Mat q(n, d), k(n, d), v(n, d);
    for (const auto& s : sides) {
        const BlockParams& p = params_for(layer, s.image);
        matmul_rows(q, h, p.wq, s.r0, s.r1);
        matmul_rows(k, h, p.wk, s.r0, s.r1);
        matmul_rows(v, h, p.wv, s.r0, s.r1);
    }
    apply_rope(q, positions);
    apply_rope(k, positions);
    Mat attn = unified_attention(q, k, v, cfg_.n_heads, mask);
    Mat proj(n, d);
    for (const auto& s : sides)
        matmul_rows(proj, attn, params_for(layer, s.image).wo, s.r0, s.r1);
    for (size_t si = 0; si < sides.size(); ++si) {
        const auto& gate = mods[si].gate_attn;
        for (int i = sides[si].r0; i < sides[si].r1; ++i) {
            float* xr = x.row(i);
            const float* pr = proj.row(i);
            for (int j = 0; j < d; ++j) xr[j] += gate[j] * pr[j];
        }
    }

    // mlp sublayer
    for (size_t si = 0; si < sides.size(); ++si)
        norm_modulate(mods[si].shift_mlp, mods[si].scale_mlp, sides[si].r0, sides[si].r1);
    Mat up(n, 4 * d);
    for (const auto& s : sides)
        matmul_rows(up, h, params_for(layer, s.image).mlp_in, s.r0, s.r1);
    for (auto& val : up.data) val = gelu(val);
    Mat down(n, d);
    for (const auto& s : sides)
        matmul_rows(down, up, params_for(layer, s.image).mlp_out, s.r0, s.r1);
    for (size_t si = 0; si < sides.size(); ++si) {
        const auto& gate = mods[si].gate_mlp;
        for (int i = sides[si].r0; i < sides[si].r1; ++i) {
            float* xr = x.row(i);
            const float* dr = down.row(i);
            for (int j = 0; j < d; ++j) xr[j] += gate[j] * dr[j];
        }
    }
}

TokenSequence Model::forward_block(const TokenSequence& state, LayerId layer,
                                   const std::vector<float>& temb, const AttnMask& mask) const {
    layer.validate(cfg_);
    if (!layer.is_block())
        throw UnknownLayer("forward_block needs a double or single block");
    if (temb.size() != static_cast<size_t>(cfg_.d_model))
        throw ShapeMismatch("timestep embedding must have d_model entries");
    state.validate();

    TokenSequence out = state;
    Segment span = state.text_span();
    block_inplace(out.embeddings, out.positions, span, layer, temb, mask);
    return out;
}

Mat Model::velocity(const Mat& x, const Segment& image_seg, const std::vector<float>& temb) const {
    const int d = cfg_.d_model;
    const int n_img = image_seg.length();

    std::vector<float> two(2 * d, 0.0f);
    for (int p = 0; p < d; ++p) {
        const float tv = temb[p];
        const float* row = head_ada_.row(p);
        for (int j = 0; j < 2 * d; ++j) two[j] += tv * row[j];
    }
    const float* shift = two.data();
    const float* scale = two.data() + d;

    Mat h(n_img, d);
    for (int i = 0; i < n_img; ++i) {
        layernorm_row(x.row(image_seg.begin + i), h.row(i), d);
        float* hr = h.row(i);
        for (int j = 0; j < d; ++j) hr[j] = hr[j] * (1.0f + scale[j]) + shift[j];
    }
    Mat v(n_img, d);
    matmul_rows(v, h, head_proj_, 0, n_img);
    return v;
}

// ---------------------------------------------------------------------------
// sampler

struct Model::SamplePlan {
    std::vector<AttnMask> masks;   // per block ordinal

    struct InputPatch {
        std::shared_ptr<const ActivationTrace> trace;
        LayerId source_layer;
        TokenSubset subset;
        bool step_matched;
    };
    struct OutputPatch {
        std::shared_ptr<const ActivationTrace> trace;
        LayerId layer;
        TokenSubset subset;
        bool step_matched;
    };
    std::vector<InputPatch> input_patches;
    std::vector<std::vector<OutputPatch>> output_patches;   // per ordinal
    std::set<LayerId> capture_blocks;
    bool capture_input = false;
};

Model::SamplePlan Model::build_plan(const RunSpec& run, int n_steps,
                                    const SequenceLayout& layout) const {
    const int total = cfg_.total_blocks();
    const int n_tokens = layout.back().end;

    SamplePlan plan;
    plan.masks.assign(total, AttnMask::all_true(n_tokens));
    plan.output_patches.resize(total);

    auto and_masks = [&](const std::vector<AttnMask>& extra) {
        for (int i = 0; i < total; ++i) plan.masks[i].and_with(extra[i]);
    };

    for (const auto& iv : run.interventions) {
        if (const auto* ko = std::get_if<KnockoutSpec>(&iv)) {
            and_masks(compile_masks(ko->edges, layout, total,
                                    ko->subset.value_or(TokenSubset::AllText)));
        } else if (const auto* drop = std::get_if<ReferenceDropSpec>(&iv)) {
            if (drop->cutoff < 0 || drop->cutoff > total)
                throw InvalidConfig("reference drop cutoff out of range");
            if (drop->cutoff > 0)
                and_masks(compile_masks(ko_ref_to_image(0, drop->cutoff), layout, total));
            if (drop->cutoff < total)
                and_masks(compile_masks(ko_ref_isolated(drop->cutoff, total), layout, total));
        } else if (const auto* lens = std::get_if<LensPatchSpec>(&iv)) {
            if (!lens->trace) throw MissingTraceEntry("lens patch carries no trace");
            lens->trace->check_fingerprint(cfg_);
            lens->source_layer.validate(cfg_);
            lens->trace->require(lens->source_layer, 0);
            if (lens->variant == LensVariant::InputFourStep ||
                lens->source_layer.kind == LayerKind::InputEmbedding) {
                plan.input_patches.push_back({lens->trace, lens->source_layer, lens->subset, false});
            } else {
                plan.output_patches[lens->source_layer.ordinal(cfg_)].push_back(
                    {lens->trace, lens->source_layer, lens->subset, false});
            }
        } else if (const auto* cp = std::get_if<CrossPatchSpec>(&iv)) {
            if (!cp->trace) throw MissingTraceEntry("cross patch carries no trace");
            cp->trace->check_fingerprint(cfg_);
            cp->layer.validate(cfg_);
            for (int s = 0; s < n_steps; ++s) cp->trace->require(cp->layer, s);
            if (cp->layer.kind == LayerKind::InputEmbedding)
                plan.input_patches.push_back({cp->trace, cp->layer, cp->subset, true});
            else
                plan.output_patches[cp->layer.ordinal(cfg_)].push_back(
                    {cp->trace, cp->layer, cp->subset, true});
        }
    }

    for (const auto& layer : run.capture_layers) {
        layer.validate(cfg_);
        if (layer.kind == LayerKind::InputEmbedding)
            plan.capture_input = true;
        else
            plan.capture_blocks.insert(layer);
    }
    return plan;
}

RunResult Model::sample(const RunSpec& run, std::optional<int> n_steps_override) const {
    run.validate(cfg_);
    const int n_steps = n_steps_override.value_or(cfg_.n_steps);
    if (n_steps < 1) throw InvalidConfig("need at least one denoising step");

    const LatentImage* ref = run.reference.has_value() ? &run.reference.value() : nullptr;
    if (ref) ref->check_dims(cfg_);

    // initial noise for the image segment
    LatentImage x;
    x.h = cfg_.latent_h;
    x.w = cfg_.latent_w;
    x.provenance = LatentProvenance::Noise;
    x.grid = Mat(cfg_.n_image_tokens(), cfg_.d_model);
    {
        Rng noise = Rng(run.seed).fork("noise");
        for (auto& v : x.grid.data) v = noise.next_gaussian();
    }

    TokenSequence text0 = embed_prompt(run.prompt);
    TokenSequence proto = assemble_sequence(text0, ref, x);
    SamplePlan plan = build_plan(run, n_steps, proto.segments);

    ActivationTrace trace;
    trace.source_run_id = run.run_id();
    trace.config_fingerprint = cfg_.fingerprint();

    const Segment text_span = proto.text_span();
    const Segment image_seg = proto.require(SegmentKind::Image);
    const float dt = -1.0f / static_cast<float>(n_steps);

    auto overwrite_text_rows = [&](Mat& dst, const Mat& src, TokenSubset subset) {
        for (int i : text_subset_indices(proto.segments, subset))
            std::copy(src.row(i), src.row(i) + cfg_.d_model, dst.row(i));
    };
    auto capture_text_rows = [&](const Mat& state, LayerId layer, int step) {
        Mat m(cfg_.text_len, cfg_.d_model);
        std::copy(state.row(0), state.row(0) + static_cast<size_t>(cfg_.text_len) * cfg_.d_model,
                  m.data.begin());
        trace.insert(layer, step, std::move(m));
    };

    for (int step = 0; step < n_steps; ++step) {
        const float t = static_cast<float>(n_steps - step) / static_cast<float>(n_steps);
        const std::vector<float> temb = time_embedding(t);

        // text and reference rows reset to their step-0 values; image rows
        // carry the current latents
        TokenSequence state = proto;
        std::copy(x.grid.data.begin(), x.grid.data.end(), state.embeddings.row(image_seg.begin));

        for (const auto& patch : plan.input_patches) {
            const Mat& entry = patch.trace->require(patch.source_layer, patch.step_matched ? step : 0);
            overwrite_text_rows(state.embeddings, entry, patch.subset);
        }
        if (plan.capture_input)
            capture_text_rows(state.embeddings, input_embedding(), step);

        for (int ord = 0; ord < cfg_.total_blocks(); ++ord) {
            LayerId layer = LayerId::from_ordinal(cfg_, ord);
            block_inplace(state.embeddings, state.positions, text_span, layer, temb,
                          plan.masks[ord]);
            for (const auto& patch : plan.output_patches[ord]) {
                const Mat& entry = patch.trace->require(patch.layer, patch.step_matched ? step : 0);
                overwrite_text_rows(state.embeddings, entry, patch.subset);
            }
            if (plan.capture_blocks.count(layer))
                capture_text_rows(state.embeddings, layer, step);
        }

        Mat v = velocity(state.embeddings, image_seg, temb);
        for (size_t i = 0; i < x.grid.data.size(); ++i)
            x.grid.data[i] += dt * v.data[i];
    }

    x.provenance = LatentProvenance::Generated;
    RunResult result;
    result.pixels = decode_image(cfg_, x);
    result.latents = std::move(x);
    result.trace = std::move(trace);
    return result;
}

} // namespace mmlens
