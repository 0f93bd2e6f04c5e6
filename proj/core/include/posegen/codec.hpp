#pragma once

#include <cstdint>

#include "posegen/tensor.hpp"

namespace posegen {

// Fixed (non-learned) video-to-latent transform. Temporal blocking is
// causal: pixel frame 0 forms its own block, then consecutive runs of
// `temporal_stride` frames. Each block projects every non-overlapping
// spatial_stride^2 tile into `channels` values; the first three channels
// are exact per-color block means, the rest are a seeded random projection.
// Decoding reads only the mean channels and paints them back, clamped to
// [0,1], so decode(encode(x)) is the block-constant approximation of x.
struct CodecConfig {
    int64_t channels = 8;        // c >= 4
    int64_t temporal_stride = 4; // s
    int64_t spatial_stride = 8;
    uint64_t seed = 0xC0DEC;
};

struct LatentShape {
    int64_t c = 0, f = 0, h = 0, w = 0;
};

// Latent frame count is (F-1)/s + 1; H and W divide by spatial_stride.
// Throws ShapeError naming the offending dimension when divisibility fails.
LatentShape latent_shape(int64_t F, int64_t H, int64_t W, const CodecConfig& cfg);

struct PixelVideo {
    Tensor rgb;  // [3, F, H, W], values in [0,1]
    int64_t frames() const { return rgb.size(1); }
    int64_t height() const { return rgb.size(2); }
    int64_t width() const { return rgb.size(3); }
};

struct LatentVideo {
    Tensor z;  // [c, f, h, w]
    int64_t channels() const { return z.size(0); }
    int64_t frames() const { return z.size(1); }
    int64_t height() const { return z.size(2); }
    int64_t width() const { return z.size(3); }
};

LatentVideo encode(const PixelVideo& v, const CodecConfig& cfg);
PixelVideo decode(const LatentVideo& z, const CodecConfig& cfg);

// Pixel frame range [first, last] covered by latent frame j.
void latent_block_span(int64_t j, int64_t s, int64_t& first, int64_t& last);

}  // namespace posegen
