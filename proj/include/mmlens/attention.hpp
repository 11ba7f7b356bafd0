#pragma once

#include <cstdint>
#include <vector>

#include "mmlens/mat.hpp"

namespace mmlens {

// Boolean n x n attention mask, true = query row may attend to key column.
// The default all-true mask keeps no storage.
class AttnMask {
  public:
    AttnMask() = default;
    explicit AttnMask(int n) : n_(n) {}

    static AttnMask all_true(int n) { return AttnMask(n); }

    int size() const { return n_; }
    bool is_all_true() const { return bits_.empty(); }

    bool allowed(int q, int k) const {
        return bits_.empty() || bits_[static_cast<size_t>(q) * n_ + k] != 0;
    }

    void block(int q, int k) {
        materialize();
        bits_[static_cast<size_t>(q) * n_ + k] = 0;
    }

    // Intersect with another mask of the same size.
    void and_with(const AttnMask& other);

    bool operator==(const AttnMask& other) const;

  private:
    void materialize();

    int n_ = 0;
    std::vector<uint8_t> bits_;   // empty = all true
};

// Joint softmax attention over the whole sequence. q, k, v are
// [n_tokens x d_model]; each of the n_heads heads attends over its own
// d_model / n_heads slice. Blocked logits are treated as -inf, i.e. blocked
// keys are skipped entirely, so their values carry exactly zero weight.
// Throws FullyMaskedRow if any query row has no allowed key.
Mat unified_attention(const Mat& q, const Mat& k, const Mat& v, int n_heads, const AttnMask& mask);

} // namespace mmlens
