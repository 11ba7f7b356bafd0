#include "mmlens/masks.hpp"

#include <algorithm>

namespace mmlens {

const char* token_subset_name(TokenSubset s) {
    switch (s) {
        case TokenSubset::AllText: return "all_text";
        case TokenSubset::PaddingOnly: return "padding_only";
        case TokenSubset::ContentOnly: return "content_only";
    }
    return "?";
}

TokenSubset parse_token_subset(const std::string& s) {
    if (s == "all_text") return TokenSubset::AllText;
    if (s == "padding_only") return TokenSubset::PaddingOnly;
    if (s == "content_only") return TokenSubset::ContentOnly;
    throw InvalidConfig("unknown token subset: " + s);
}

void EdgeMaskSpec::validate(int total_blocks) const {
    if (layer_from < 0 || !(layer_from < layer_to) || layer_to > total_blocks)
        throw InvalidConfig("edge mask layer interval must satisfy 0 <= from < to <= depth");
}

namespace {

bool is_text_kind(SegmentKind k) {
    return k == SegmentKind::TextContent || k == SegmentKind::TextPadding;
}

const Segment* find_segment(const SequenceLayout& layout, SegmentKind k) {
    for (const auto& s : layout)
        if (s.kind == k) return &s;
    return nullptr;
}

// Indices of one side of an edge; a subset narrows text kinds.
std::vector<int> side_indices(const SequenceLayout& layout, SegmentKind kind, TokenSubset subset) {
    const Segment* seg = find_segment(layout, kind);
    if (!seg)
        throw SegmentAbsent(std::string("edge names absent segment: ") + segment_kind_name(kind));
    if (is_text_kind(kind)) {
        if (subset == TokenSubset::PaddingOnly && kind == SegmentKind::TextContent) return {};
        if (subset == TokenSubset::ContentOnly && kind == SegmentKind::TextPadding) return {};
    }
    std::vector<int> idx;
    idx.reserve(seg->length());
    for (int i = seg->begin; i < seg->end; ++i) idx.push_back(i);
    return idx;
}

} // namespace

std::vector<int> text_subset_indices(const SequenceLayout& layout, TokenSubset subset) {
    std::vector<int> idx;
    if (subset != TokenSubset::PaddingOnly) {
        auto c = side_indices(layout, SegmentKind::TextContent, TokenSubset::AllText);
        idx.insert(idx.end(), c.begin(), c.end());
    }
    if (subset != TokenSubset::ContentOnly) {
        auto p = side_indices(layout, SegmentKind::TextPadding, TokenSubset::AllText);
        idx.insert(idx.end(), p.begin(), p.end());
    }
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<AttnMask> compile_masks(const EdgeMaskSpec& spec, const SequenceLayout& layout,
                                    int total_blocks, TokenSubset subset) {
    spec.validate(total_blocks);
    if (layout.empty())
        throw ShapeMismatch("compile_masks: empty layout");
    const int n_tokens = layout.back().end;

    AttnMask blocked = AttnMask::all_true(n_tokens);
    for (const auto& [src, tgt] : spec.blocked_edges) {
        auto keys = side_indices(layout, src, subset);
        auto queries = side_indices(layout, tgt, subset);
        for (int q : queries)
            for (int k : keys)
                blocked.block(q, k);
    }

    std::vector<AttnMask> per_layer;
    per_layer.reserve(total_blocks);
    for (int ord = 0; ord < total_blocks; ++ord) {
        if (ord >= spec.layer_from && ord < spec.layer_to)
            per_layer.push_back(blocked);
        else
            per_layer.push_back(AttnMask::all_true(n_tokens));
    }
    return per_layer;
}

namespace {

EdgeMaskSpec make_spec(std::set<std::pair<SegmentKind, SegmentKind>> edges, int from, int to) {
    EdgeMaskSpec spec;
    spec.blocked_edges = std::move(edges);
    spec.layer_from = from;
    spec.layer_to = to;
    return spec;
}

} // namespace

EdgeMaskSpec ko_ref_to_text(int layer_from, int layer_to) {
    return make_spec({{SegmentKind::Reference, SegmentKind::TextContent},
                      {SegmentKind::Reference, SegmentKind::TextPadding}},
                     layer_from, layer_to);
}

EdgeMaskSpec ko_ref_to_image(int layer_from, int layer_to) {
    return make_spec({{SegmentKind::Reference, SegmentKind::Image}}, layer_from, layer_to);
}

EdgeMaskSpec ko_image_to_ref(int layer_from, int layer_to) {
    return make_spec({{SegmentKind::Image, SegmentKind::Reference}}, layer_from, layer_to);
}

EdgeMaskSpec ko_text_to_ref(int layer_from, int layer_to) {
    return make_spec({{SegmentKind::TextContent, SegmentKind::Reference},
                      {SegmentKind::TextPadding, SegmentKind::Reference}},
                     layer_from, layer_to);
}

EdgeMaskSpec ko_ref_isolated(int layer_from, int layer_to) {
    EdgeMaskSpec spec = ko_ref_to_text(layer_from, layer_to);
    for (const auto& e : ko_ref_to_image(layer_from, layer_to).blocked_edges)
        spec.blocked_edges.insert(e);
    for (const auto& e : ko_image_to_ref(layer_from, layer_to).blocked_edges)
        spec.blocked_edges.insert(e);
    for (const auto& e : ko_text_to_ref(layer_from, layer_to).blocked_edges)
        spec.blocked_edges.insert(e);
    return spec;
}

} // namespace mmlens
