#include "mmlens/codec.hpp"

#include <cmath>

namespace mmlens {

void LatentImage::check_dims(const ModelConfig& cfg) const {
    if (h != cfg.latent_h || w != cfg.latent_w)
        throw ShapeMismatch("latent grid does not match the configured latent size");
    if (grid.rows != h * w || grid.cols != cfg.d_model)
        throw ShapeMismatch("latent tensor shape does not match its grid dims");
}

LatentImage encode_image(const ModelConfig& cfg, const Image& pixels) {
    const int p = cfg.patch_size();
    if (pixels.width != cfg.latent_w * p || pixels.height != cfg.latent_h * p)
        throw ShapeMismatch("encode_image: pixel dims must be latent grid x patch size");

    LatentImage out;
    out.h = cfg.latent_h;
    out.w = cfg.latent_w;
    out.provenance = LatentProvenance::Encoded;
    out.grid = Mat(cfg.latent_h * cfg.latent_w, cfg.d_model);
    for (int gy = 0; gy < cfg.latent_h; ++gy) {
        for (int gx = 0; gx < cfg.latent_w; ++gx) {
            float* cell = out.grid.row(gy * cfg.latent_w + gx);
            int k = 0;
            for (int py = 0; py < p; ++py) {
                for (int px = 0; px < p; ++px) {
                    const uint8_t* rgb = pixels.px(gx * p + px, gy * p + py);
                    for (int c = 0; c < 3; ++c)
                        cell[k++] = static_cast<float>(rgb[c]) / 128.0f - 1.0f;
                }
            }
        }
    }
    return out;
}

Image decode_image(const ModelConfig& cfg, const LatentImage& latents) {
    latents.check_dims(cfg);
    const int p = cfg.patch_size();
    Image out(cfg.latent_w * p, cfg.latent_h * p);
    for (int gy = 0; gy < cfg.latent_h; ++gy) {
        for (int gx = 0; gx < cfg.latent_w; ++gx) {
            const float* cell = latents.grid.row(gy * cfg.latent_w + gx);
            int k = 0;
            for (int py = 0; py < p; ++py) {
                for (int px = 0; px < p; ++px) {
                    uint8_t rgb[3];
                    for (int c = 0; c < 3; ++c) {
                        float v = (cell[k++] + 1.0f) * 128.0f;
                        long q = std::lround(v);
                        if (q < 0) q = 0;
                        if (q > 255) q = 255;
                        rgb[c] = static_cast<uint8_t>(q);
                    }
                    out.set(gx * p + px, gy * p + py, rgb[0], rgb[1], rgb[2]);
                }
            }
        }
    }
    return out;
}

} // namespace mmlens
