#pragma once

#include <cstdint>
#include <string_view>

namespace mmlens {

uint64_t fnv1a64(std::string_view s);
uint32_t fnv1a32(std::string_view s);

// Deterministic splitmix64 stream. Substreams are derived with fork(label),
// which mixes the label hash into the current state without advancing it, so
// values drawn from one stream are independent of the order in which sibling
// streams are created.
class Rng {
  public:
    static constexpr const char* kScheme = "splitmix64";

    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64();
    double next_double();    // uniform [0, 1)
    float next_float();      // uniform [0, 1)
    float next_gaussian();   // standard normal, Box-Muller

    Rng fork(std::string_view label) const;
    Rng fork(uint64_t salt) const;

  private:
    uint64_t state_;
};

} // namespace mmlens
