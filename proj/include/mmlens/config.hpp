#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>

#include "mmlens/errors.hpp"

namespace mmlens {

struct ModelConfig {
    int d_model = 64;
    int n_heads = 4;
    int n_double_blocks = 4;
    int n_single_blocks = 8;
    int text_len = 24;              // total text length, content + padding
    int latent_h = 16;              // latent grid height in patches
    int latent_w = 16;              // latent grid width in patches
    int n_steps = 4;                // denoising steps
    std::string rng_scheme = "splitmix64";
    uint64_t seed = 0;

    void validate() const;
    int total_blocks() const { return n_double_blocks + n_single_blocks; }
    int head_dim() const { return d_model / n_heads; }
    int n_image_tokens() const { return latent_h * latent_w; }

    // Toy pixel codec patch edge: the largest p with 3*p*p <= d_model.
    int patch_size() const;
    int pixel_h() const { return latent_h * patch_size(); }
    int pixel_w() const { return latent_w * patch_size(); }

    // Identifies the weight-determining parameters (structure + seed).
    // n_steps and the latent grid are excluded: traces captured from a model
    // stay patchable into runs that only differ in step count or canvas size.
    std::array<uint8_t, 32> fingerprint() const;

    std::string to_text() const;
    static ModelConfig from_text(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static ModelConfig load(const std::filesystem::path& path);

    bool operator==(const ModelConfig&) const = default;
};

enum class LayerKind : uint8_t { Double = 0, Single = 1, InputEmbedding = 2 };

// 0-based layer address. Reports render 1-based ("double#8" = index 7).
struct LayerId {
    LayerKind kind = LayerKind::Double;
    int index = 0;

    void validate(const ModelConfig& cfg) const;

    // Position in the flattened block order (double blocks then single
    // blocks). Not defined for InputEmbedding.
    int ordinal(const ModelConfig& cfg) const;
    static LayerId from_ordinal(const ModelConfig& cfg, int ordinal);

    bool is_block() const { return kind != LayerKind::InputEmbedding; }
    std::string display() const;                   // 1-based, e.g. "double#8"
    static LayerId parse(const std::string& s);    // inverse of display()

    auto operator<=>(const LayerId&) const = default;
};

inline LayerId input_embedding() { return LayerId{LayerKind::InputEmbedding, 0}; }
inline LayerId double_block(int idx0) { return LayerId{LayerKind::Double, idx0}; }
inline LayerId single_block(int idx0) { return LayerId{LayerKind::Single, idx0}; }

} // namespace mmlens
