#include "mmlens/rng.hpp"

#include <cmath>

namespace mmlens {

uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

uint32_t fnv1a32(std::string_view s) {
    uint32_t h = 0x811c9dc5u;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x01000193u;
    }
    return h;
}

static uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

uint64_t Rng::next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix64(state_);
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

float Rng::next_float() {
    return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
}

float Rng::next_gaussian() {
    // u1 in (0,1] so the log is finite
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    return static_cast<float>(r * std::cos(2.0 * 3.14159265358979323846 * u2));
}

Rng Rng::fork(std::string_view label) const {
    return Rng(mix64(state_ ^ fnv1a64(label)));
}

Rng Rng::fork(uint64_t salt) const {
    return Rng(mix64(state_ ^ mix64(salt ^ 0x6a09e667f3bcc909ull)));
}

} // namespace mmlens
