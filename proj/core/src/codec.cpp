#include "posegen/codec.hpp"

#include <algorithm>
#include <cmath>

namespace posegen {

LatentShape latent_shape(int64_t F, int64_t H, int64_t W, const CodecConfig& cfg) {
    if (cfg.channels < 4) {
        throw ConfigError("codec channels must be >= 4, got " +
                          std::to_string(cfg.channels));
    }
    if (F < 1) throw ShapeError("frame count must be >= 1, got " + std::to_string(F));
    if ((F - 1) % cfg.temporal_stride != 0) {
        throw ShapeError("frame count " + std::to_string(F) +
                         ": F-1 not divisible by temporal stride " +
                         std::to_string(cfg.temporal_stride));
    }
    if (H % cfg.spatial_stride != 0) {
        throw ShapeError("height " + std::to_string(H) + " not divisible by spatial stride " +
                         std::to_string(cfg.spatial_stride));
    }
    if (W % cfg.spatial_stride != 0) {
        throw ShapeError("width " + std::to_string(W) + " not divisible by spatial stride " +
                         std::to_string(cfg.spatial_stride));
    }
    LatentShape out;
    out.c = cfg.channels;
    out.f = (F - 1) / cfg.temporal_stride + 1;
    out.h = H / cfg.spatial_stride;
    out.w = W / cfg.spatial_stride;
    return out;
}

void latent_block_span(int64_t j, int64_t s, int64_t& first, int64_t& last) {
    if (j == 0) {
        first = 0;
        last = 0;
    } else {
        first = 1 + (j - 1) * s;
        last = j * s;
    }
}

namespace {

// Random projection rows for channels >= 3. One weight vector per channel
// per block kind (singleton first block vs full-stride block), a pure
// function of the codec seed so every block shares the same map.
std::vector<float> projection_rows(const CodecConfig& cfg, int64_t block_len) {
    int64_t cols = 3 * block_len * cfg.spatial_stride * cfg.spatial_stride;
    int64_t rows = cfg.channels - 3;
    std::vector<float> w(size_t(rows * cols));
    Rng rng(cfg.seed ^ (0x51D5ull * uint64_t(block_len)));
    float scale = 1.0f / std::sqrt(float(cols));
    for (auto& v : w) v = rng.normal() * scale;
    return w;
}

}  // namespace

LatentVideo encode(const PixelVideo& v, const CodecConfig& cfg) {
    if (v.rgb.rank() != 4 || v.rgb.size(0) != 3) {
        throw ShapeError("encode expects [3,F,H,W], got " + shape_str(v.rgb.shape()));
    }
    const int64_t F = v.frames(), H = v.height(), W = v.width();
    const LatentShape ls = latent_shape(F, H, W, cfg);
    const int64_t ss = cfg.spatial_stride;

    std::vector<float> proj_first = projection_rows(cfg, 1);
    std::vector<float> proj_run = projection_rows(cfg, cfg.temporal_stride);

    LatentVideo out;
    out.z = Tensor({ls.c, ls.f, ls.h, ls.w});
    const auto& px = v.rgb.data();
    auto pixel = [&](int64_t ch, int64_t fr, int64_t y, int64_t x) {
        return px[size_t(((ch * F + fr) * H + y) * W + x)];
    };

    for (int64_t j = 0; j < ls.f; ++j) {
        int64_t first, last;
        latent_block_span(j, cfg.temporal_stride, first, last);
        int64_t len = last - first + 1;
        const std::vector<float>& proj = (j == 0) ? proj_first : proj_run;
        int64_t cols = 3 * len * ss * ss;
        for (int64_t ty = 0; ty < ls.h; ++ty) {
            for (int64_t tx = 0; tx < ls.w; ++tx) {
                // mean channels, double accumulation keeps re-encoding of a
                // block-constant video an exact fixed point
                for (int64_t ch = 0; ch < 3; ++ch) {
                    double acc = 0.0;
                    for (int64_t fr = first; fr <= last; ++fr)
                        for (int64_t dy = 0; dy < ss; ++dy)
                            for (int64_t dx = 0; dx < ss; ++dx)
                                acc += double(pixel(ch, fr, ty * ss + dy, tx * ss + dx));
                    out.z.ref4(ch, j, ty, tx) = float(acc / double(len * ss * ss));
                }
                // seeded projection channels
                for (int64_t k = 3; k < ls.c; ++k) {
                    const float* wrow = &proj[size_t((k - 3) * cols)];
                    double acc = 0.0;
                    int64_t idx = 0;
                    for (int64_t ch = 0; ch < 3; ++ch)
                        for (int64_t fr = first; fr <= last; ++fr)
                            for (int64_t dy = 0; dy < ss; ++dy)
                                for (int64_t dx = 0; dx < ss; ++dx) {
                                    acc += double(wrow[idx]) *
                                           double(pixel(ch, fr, ty * ss + dy, tx * ss + dx));
                                    ++idx;
                                }
                    out.z.ref4(k, j, ty, tx) = float(acc);
                }
            }
        }
    }
    return out;
}

PixelVideo decode(const LatentVideo& z, const CodecConfig& cfg) {
    if (z.z.rank() != 4 || z.channels() != cfg.channels) {
        throw ShapeError("decode expects [" + std::to_string(cfg.channels) +
                         ",f,h,w], got " + shape_str(z.z.shape()));
    }
    const int64_t s = cfg.temporal_stride, ss = cfg.spatial_stride;
    const int64_t F = 1 + (z.frames() - 1) * s;
    const int64_t H = z.height() * ss, W = z.width() * ss;

    PixelVideo out;
    out.rgb = Tensor({3, F, H, W});
    auto& px = out.rgb.mut_data();
    for (int64_t j = 0; j < z.frames(); ++j) {
        int64_t first, last;
        latent_block_span(j, s, first, last);
        for (int64_t ty = 0; ty < z.height(); ++ty)
            for (int64_t tx = 0; tx < z.width(); ++tx)
                for (int64_t ch = 0; ch < 3; ++ch) {
                    float m = std::clamp(z.z.at4(ch, j, ty, tx), 0.0f, 1.0f);
                    for (int64_t fr = first; fr <= last; ++fr)
                        for (int64_t dy = 0; dy < ss; ++dy)
                            for (int64_t dx = 0; dx < ss; ++dx)
                                px[size_t(((ch * F + fr) * H + ty * ss + dy) * W + tx * ss +
                                          dx)] = m;
                }
    }
    return out;
}

}  // namespace posegen
