#pragma once

#include "mmlens/config.hpp"
#include "mmlens/image.hpp"
#include "mmlens/mat.hpp"

namespace mmlens {

enum class LatentProvenance : uint8_t { Noise = 0, Encoded = 1, Generated = 2 };

// Latent canvas: one d_model vector per patch cell, row-major over the grid.
struct LatentImage {
    Mat grid;                        // [h*w x d_model]
    int h = 0;
    int w = 0;
    LatentProvenance provenance = LatentProvenance::Noise;

    void check_dims(const ModelConfig& cfg) const;
};

// Lossless linear patchify. Each patch_size x patch_size RGB patch maps onto
// the leading 3*p*p latent channels as pixel/128 - 1 (exact in float32);
// remaining channels are zero. decode() inverts it, clamping generated
// latents into pixel range.
LatentImage encode_image(const ModelConfig& cfg, const Image& pixels);
Image decode_image(const ModelConfig& cfg, const LatentImage& latents);

} // namespace mmlens
