#include "mmlens/attention.hpp"

#include "mmlens/fastmath.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

namespace mmlens {

void AttnMask::materialize() {
    if (bits_.empty())
        bits_.assign(static_cast<size_t>(n_) * n_, 1);
}

void AttnMask::and_with(const AttnMask& other) {
    if (other.n_ != n_)
        throw ShapeMismatch("mask sizes differ");
    if (other.is_all_true())
        return;
    materialize();
    for (size_t i = 0; i < bits_.size(); ++i)
        bits_[i] = bits_[i] & other.bits_[i];
}

bool AttnMask::operator==(const AttnMask& other) const {
    if (n_ != other.n_) return false;
    if (is_all_true() && other.is_all_true()) return true;
    for (int q = 0; q < n_; ++q)
        for (int k = 0; k < n_; ++k)
            if (allowed(q, k) != other.allowed(q, k)) return false;
    return true;
}

Mat unified_attention(const Mat& q, const Mat& k, const Mat& v, int n_heads, const AttnMask& mask) {
    const int n = q.rows;
    const int d = q.cols;
    if (k.rows != n || v.rows != n || k.cols != d || v.cols != d)
        throw ShapeMismatch("unified_attention: q/k/v shapes disagree");
    if (n_heads <= 0 || d % n_heads != 0)
        throw ShapeMismatch("unified_attention: head count must divide feature dim");
    if (mask.size() != n)
        throw ShapeMismatch("unified_attention: mask size must equal token count");

    const int dh = d / n_heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    const bool dense = mask.is_all_true();

    // Head-major kernel. Scores accumulate per key over a transposed key
    // buffer so the inner loops run unit-stride over the key axis; each
    // score[ki] is independent, so masked and dense runs stay bit-identical
    // on shared keys. Weights and output rows accumulate in double so
    // softmax rows stay normalized well inside 1e-6 for long key ranges.
    Mat out(n, d);
    std::vector<float> scores(n);
    std::vector<float> k_t(static_cast<size_t>(dh) * n);
    std::vector<double> acc(dh);
    for (int h = 0; h < n_heads; ++h) {
        const int off = h * dh;
        for (int ki = 0; ki < n; ++ki) {
            const float* krow = k.row(ki) + off;
            for (int c = 0; c < dh; ++c) k_t[static_cast<size_t>(c) * n + ki] = krow[c];
        }

        for (int qi = 0; qi < n; ++qi) {
            const float* qrow = q.row(qi) + off;
            float* __restrict s = scores.data();
            for (int ki = 0; ki < n; ++ki) s[ki] = 0.0f;
            for (int c = 0; c < dh; ++c) {
                const float qc = qrow[c];
                const float* __restrict kt = k_t.data() + static_cast<size_t>(c) * n;
                for (int ki = 0; ki < n; ++ki) s[ki] += qc * kt[ki];
            }

            int allowed = 0;
            float maxlog = -std::numeric_limits<float>::infinity();
            for (int ki = 0; ki < n; ++ki) {
                if (!dense && !mask.allowed(qi, ki)) continue;
                s[ki] *= scale;
                if (s[ki] > maxlog) maxlog = s[ki];
                ++allowed;
            }
            if (allowed == 0)
                throw FullyMaskedRow("query row " + std::to_string(qi) + " has no allowed key");

            double denom = 0.0;
            if (dense) {
                for (int ki = 0; ki < n; ++ki) s[ki] = fast_expf(s[ki] - maxlog);
                for (int ki = 0; ki < n; ++ki) denom += s[ki];
            } else {
                for (int ki = 0; ki < n; ++ki) {
                    if (!mask.allowed(qi, ki)) continue;
                    s[ki] = fast_expf(s[ki] - maxlog);
                    denom += s[ki];
                }
            }
            const double inv = 1.0 / denom;
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int ki = 0; ki < n; ++ki) {
                if (!dense && !mask.allowed(qi, ki)) continue;
                const double w = s[ki] * inv;
                const float* __restrict vrow = v.row(ki) + off;
                for (int c = 0; c < dh; ++c) acc[c] += w * vrow[c];
            }
            float* orow = out.row(qi) + off;
            for (int c = 0; c < dh; ++c) orow[c] = static_cast<float>(acc[c]);
        }
    }
    return out;
}

} // namespace mmlens
