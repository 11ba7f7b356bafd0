#pragma once

#include <set>
#include <utility>
#include <vector>

#include "mmlens/attention.hpp"
#include "mmlens/config.hpp"
#include "mmlens/sequence.hpp"

namespace mmlens {

enum class TokenSubset : uint8_t { AllText = 0, PaddingOnly = 1, ContentOnly = 2 };

const char* token_subset_name(TokenSubset s);
TokenSubset parse_token_subset(const std::string& s);

// A set of blocked directed attention edges, (source -> target) meaning
// "target queries may not attend to source keys", active over the block
// ordinal interval [layer_from, layer_to).
struct EdgeMaskSpec {
    std::set<std::pair<SegmentKind, SegmentKind>> blocked_edges;
    int layer_from = 0;
    int layer_to = 0;

    void validate(int total_blocks) const;
};

using SequenceLayout = std::vector<Segment>;

// Token indices of the text span restricted to a subset. PaddingOnly and
// ContentOnly partition AllText for every prompt length.
std::vector<int> text_subset_indices(const SequenceLayout& layout, TokenSubset subset);

// One n_tokens x n_tokens mask per block ordinal: all-true outside
// [layer_from, layer_to), and inside it all-true except the blocked
// (query in target, key in source) cells. A subset restricts the text-kind
// side(s) of each edge. Throws SegmentAbsent when an edge names a segment
// kind the layout does not carry.
std::vector<AttnMask> compile_masks(const EdgeMaskSpec& spec, const SequenceLayout& layout,
                                    int total_blocks, TokenSubset subset = TokenSubset::AllText);

// The four knockout edge sets used throughout, each spanning [from, to).
// "text" expands to both text segment kinds.
EdgeMaskSpec ko_ref_to_text(int layer_from, int layer_to);
EdgeMaskSpec ko_ref_to_image(int layer_from, int layer_to);
EdgeMaskSpec ko_image_to_ref(int layer_from, int layer_to);
EdgeMaskSpec ko_text_to_ref(int layer_from, int layer_to);
// All four directed edges touching the reference.
EdgeMaskSpec ko_ref_isolated(int layer_from, int layer_to);

} // namespace mmlens
