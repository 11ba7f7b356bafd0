#include "mmlens/sequence.hpp"

#include <cctype>

#include "mmlens/errors.hpp"
#include "mmlens/rng.hpp"

namespace mmlens {

const char* segment_kind_name(SegmentKind k) {
    switch (k) {
        case SegmentKind::TextContent: return "text_content";
        case SegmentKind::TextPadding: return "text_padding";
        case SegmentKind::Reference: return "reference";
        case SegmentKind::Image: return "image";
    }
    return "?";
}

const Segment* TokenSequence::find(SegmentKind k) const {
    for (const auto& s : segments)
        if (s.kind == k) return &s;
    return nullptr;
}

const Segment& TokenSequence::require(SegmentKind k) const {
    const Segment* s = find(k);
    if (!s)
        throw SegmentAbsent(std::string("sequence has no ") + segment_kind_name(k) + " segment");
    return *s;
}

Segment TokenSequence::text_span() const {
    const Segment& c = require(SegmentKind::TextContent);
    const Segment& p = require(SegmentKind::TextPadding);
    return Segment{SegmentKind::TextContent, c.begin, p.end};
}

void TokenSequence::validate() const {
    int cursor = 0;
    int n_content = 0, n_padding = 0, n_ref = 0, n_image = 0;
    for (const auto& s : segments) {
        if (s.begin != cursor || s.end < s.begin)
            throw ShapeMismatch("segments must be sorted, contiguous and disjoint");
        cursor = s.end;
        switch (s.kind) {
            case SegmentKind::TextContent: ++n_content; break;
            case SegmentKind::TextPadding: ++n_padding; break;
            case SegmentKind::Reference: ++n_ref; break;
            case SegmentKind::Image: ++n_image; break;
        }
    }
    if (cursor != n_tokens())
        throw ShapeMismatch("segments must exactly cover the token range");
    if (n_content != 1 || n_padding != 1)
        throw ShapeMismatch("need exactly one content and one padding segment");
    if (n_image > 1 || n_ref > 1)
        throw ShapeMismatch("at most one image and one reference segment");
    if (positions.size() != static_cast<size_t>(n_tokens()))
        throw ShapeMismatch("positions must match token count");
}

std::vector<uint32_t> tokenize(std::string_view text) {
    std::vector<uint32_t> ids;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            ids.push_back(fnv1a32(word));
            word.clear();
        }
    };
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c))
            word.push_back(static_cast<char>(std::tolower(c)));
        else
            flush();
    }
    flush();
    return ids;
}

} // namespace mmlens
