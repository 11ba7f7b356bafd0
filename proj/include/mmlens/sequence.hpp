#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mmlens/mat.hpp"

namespace mmlens {

enum class SegmentKind : uint8_t { TextContent = 0, TextPadding = 1, Reference = 2, Image = 3 };

const char* segment_kind_name(SegmentKind k);

struct Segment {
    SegmentKind kind;
    int begin = 0;   // inclusive
    int end = 0;     // exclusive

    int length() const { return end - begin; }
    bool contains(int i) const { return i >= begin && i < end; }
};

// Rotary position triple. Text tokens live on the first axis; reference and
// image tokens live on the (row, col) grid axes behind a per-segment tag on
// the first axis, so the two grids stay distinguishable and non-reference
// positions never depend on whether a reference is present.
struct Pos3 {
    float a = 0.0f;
    float row = 0.0f;
    float col = 0.0f;
};

struct TokenSequence {
    Mat embeddings;                  // [n_tokens x d_model]
    std::vector<Segment> segments;   // disjoint, contiguous, sorted, covering
    std::vector<Pos3> positions;     // one per token

    int n_tokens() const { return embeddings.rows; }
    const Segment* find(SegmentKind k) const;
    const Segment& require(SegmentKind k) const;   // throws SegmentAbsent

    // Token indices of the text span (content + padding).
    Segment text_span() const;

    // Checks segment bookkeeping: ranges disjoint, contiguous, sorted,
    // exactly covering [0, n_tokens); one content, one padding, one image
    // segment; at most one reference.
    void validate() const;
};

// Whitespace/punctuation word split, lowercased, each word hashed to an id.
// This is the deterministic stand-in for a real text encoder's tokenizer.
std::vector<uint32_t> tokenize(std::string_view text);

} // namespace mmlens
