#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "mmlens/errors.hpp"

namespace mmlens {

// Dense row-major float32 matrix. All model math runs on these.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0f) {}

    float* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
    const float* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }
    float& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    float at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
    size_t size() const { return data.size(); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
    void fill(float v) { std::fill(data.begin(), data.end(), v); }

    bool operator==(const Mat&) const = default;
};

// out = a * b, ikj loop order so the inner loop streams rows of b.
inline void matmul_into(Mat& out, const Mat& a, const Mat& b) {
    if (a.cols != b.rows)
        throw ShapeMismatch("matmul: inner dims disagree");
    out.rows = a.rows;
    out.cols = b.cols;
    out.data.assign(static_cast<size_t>(a.rows) * b.cols, 0.0f);
    const int n = a.rows, k = a.cols, m = b.cols;
    for (int i = 0; i < n; ++i) {
        float* __restrict o = out.row(i);
        const float* __restrict ar = a.row(i);
        for (int p = 0; p < k; ++p) {
            const float av = ar[p];
            const float* __restrict br = b.row(p);
            for (int j = 0; j < m; ++j)
                o[j] += av * br[j];
        }
    }
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat out;
    matmul_into(out, a, b);
    return out;
}

inline float max_abs_diff(const Mat& a, const Mat& b) {
    if (!a.same_shape(b))
        throw ShapeMismatch("max_abs_diff: shape mismatch");
    float m = 0.0f;
    for (size_t i = 0; i < a.data.size(); ++i) {
        float d = a.data[i] - b.data[i];
        if (d < 0) d = -d;
        if (d > m) m = d;
    }
    return m;
}

inline bool bitwise_equal(const Mat& a, const Mat& b) {
    return a.same_shape(b) && a.data == b.data;
}

} // namespace mmlens
