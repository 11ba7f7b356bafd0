#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

namespace mmlens {

// Cephes-style expf: range reduction, degree-5 polynomial, exponent
// reassembly. Branch-free, ~2e-7 relative accuracy. The softmax and MLP
// activation paths call this tens of millions of times per sampled image.
inline float fast_expf(float x) {
    x = std::min(x, 88.72284f);
    x = std::max(x, -87.336544f);
    const float fx = std::floor(x * 1.442695040f + 0.5f);
    x -= fx * 0.693359375f;
    x -= fx * -2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * x + 1.3981999507e-3f;
    p = p * x + 8.3334519073e-3f;
    p = p * x + 4.1665795894e-2f;
    p = p * x + 1.6666665459e-1f;
    p = p * x + 5.0000001201e-1f;
    p = p * (x * x) + x + 1.0f;
    const auto exponent = static_cast<uint32_t>(static_cast<int32_t>(fx) + 127) << 23;
    return p * std::bit_cast<float>(exponent);
}

inline float fast_tanhf(float x) {
    return 1.0f - 2.0f / (fast_expf(2.0f * x) + 1.0f);
}

} // namespace mmlens
