#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>

#include "mmlens/config.hpp"
#include "mmlens/mat.hpp"

namespace mmlens {

struct TraceKey {
    LayerKind kind;
    int index;
    int step;
    auto operator<=>(const TraceKey&) const = default;
};

// Captured text-token activations, one [text_len x d_model] matrix per
// (layer, denoising step). The fingerprint pins the model that produced the
// trace; patching across mismatched fingerprints is rejected.
struct ActivationTrace {
    std::map<TraceKey, Mat> entries;
    std::string source_run_id;
    std::array<uint8_t, 32> config_fingerprint{};

    bool empty() const { return entries.empty(); }

    const Mat* find(LayerId layer, int step) const;
    const Mat& require(LayerId layer, int step) const;   // MissingTraceEntry
    void insert(LayerId layer, int step, Mat m);

    void check_fingerprint(const ModelConfig& cfg) const;   // FingerprintMismatch

    void save(const std::filesystem::path& path) const;
    static ActivationTrace load(const std::filesystem::path& path, const ModelConfig& expected);

    bool operator==(const ActivationTrace& other) const {
        return entries == other.entries && config_fingerprint == other.config_fingerprint;
    }
};

} // namespace mmlens
