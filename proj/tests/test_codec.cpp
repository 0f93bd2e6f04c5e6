#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "posegen/codec.hpp"
#include "posegen/ops.hpp"
#include "posegen/rng.hpp"

using namespace posegen;

namespace {

PixelVideo random_video(int64_t F, int64_t H, int64_t W, uint64_t seed) {
    Rng rng(seed);
    PixelVideo v;
    v.rgb = Tensor({3, F, H, W});
    for (auto& x : v.rgb.mut_data()) x = float(rng.uniform());
    return v;
}

// naive mean over the causal block, long-double accumulation
long double block_mean_oracle(const PixelVideo& v, int64_t ch, int64_t j, int64_t ty,
                              int64_t tx, const CodecConfig& cfg) {
    int64_t first, last;
    latent_block_span(j, cfg.temporal_stride, first, last);
    const int64_t ss = cfg.spatial_stride;
    long double acc = 0.0L;
    for (int64_t fr = first; fr <= last; ++fr)
        for (int64_t dy = 0; dy < ss; ++dy)
            for (int64_t dx = 0; dx < ss; ++dx)
                acc += (long double)v.rgb.at4(ch, fr, ty * ss + dy, tx * ss + dx);
    return acc / (long double)((last - first + 1) * ss * ss);
}

}  // namespace

TEST_CASE("latent shape arithmetic and divisibility errors") {
    CodecConfig cfg;  // c=8, s=4, spatial 8

    struct Case {
        int64_t F, H, W, f, h, w;
    };
    // f = (F-1)/4 + 1, h = H/8, w = W/8
    std::vector<Case> cases = {
        {17, 64, 64, 5, 8, 8},   {1, 8, 8, 1, 1, 1},     {5, 16, 24, 2, 2, 3},
        {9, 32, 64, 3, 4, 8},    {13, 64, 32, 4, 8, 4},  {21, 128, 64, 6, 16, 8},
        {33, 64, 128, 9, 8, 16}, {41, 96, 96, 11, 12, 12}};
    for (const auto& c : cases) {
        LatentShape ls = latent_shape(c.F, c.H, c.W, cfg);
        CHECK(ls.c == 8);
        CHECK(ls.f == c.f);
        CHECK(ls.h == c.h);
        CHECK(ls.w == c.w);
    }

    CodecConfig wide = cfg;
    wide.channels = 16;
    CHECK(latent_shape(17, 64, 64, wide).c == 16);

    CodecConfig unit = cfg;
    unit.temporal_stride = 1;
    CHECK(latent_shape(16, 64, 64, unit).f == 16);

    CHECK_THROWS_AS(latent_shape(16, 64, 64, cfg), ShapeError);  // F-1 % 4 != 0
    CHECK_THROWS_AS(latent_shape(17, 60, 64, cfg), ShapeError);  // H % 8 != 0
    CHECK_THROWS_AS(latent_shape(17, 64, 60, cfg), ShapeError);  // W % 8 != 0
    CHECK_THROWS_AS(latent_shape(0, 64, 64, cfg), ShapeError);
    CodecConfig thin = cfg;
    thin.channels = 3;
    CHECK_THROWS_AS(latent_shape(17, 64, 64, thin), ConfigError);
}

TEST_CASE("encode: first three channels are exact block means") {
    CodecConfig cfg;
    PixelVideo v = random_video(9, 16, 24, 77);
    LatentVideo z = encode(v, cfg);
    CHECK(z.channels() == 8);
    CHECK(z.frames() == 3);
    CHECK(z.height() == 2);
    CHECK(z.width() == 3);
    for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t j = 0; j < z.frames(); ++j)
            for (int64_t ty = 0; ty < z.height(); ++ty)
                for (int64_t tx = 0; tx < z.width(); ++tx) {
                    long double want = block_mean_oracle(v, ch, j, ty, tx, cfg);
                    CHECK(std::abs(double(z.z.at4(ch, j, ty, tx)) - double(want)) < 1e-6);
                }
}

TEST_CASE("encode determinism and zero maps to zero") {
    CodecConfig cfg;
    PixelVideo v = random_video(5, 16, 16, 3);
    LatentVideo a = encode(v, cfg), b = encode(v, cfg);
    CHECK(bit_equal(a.z, b.z));

    PixelVideo zero;
    zero.rgb = Tensor({3, 5, 16, 16}, 0.0f);
    LatentVideo z = encode(zero, cfg);
    for (float x : z.z.data()) CHECK(x == 0.0f);
}

TEST_CASE("decode paints block-constant means and round trip is idempotent") {
    CodecConfig cfg;
    PixelVideo v = random_video(9, 16, 16, 12);
    LatentVideo z = encode(v, cfg);
    PixelVideo r1 = decode(z, cfg);
    CHECK(r1.frames() == 9);
    CHECK(r1.height() == 16);
    CHECK(r1.width() == 16);

    // every pixel inside a block equals that block's (clamped) mean channel
    for (int64_t j = 0; j < z.frames(); ++j) {
        int64_t first, last;
        latent_block_span(j, cfg.temporal_stride, first, last);
        for (int64_t ch = 0; ch < 3; ++ch) {
            float m = std::clamp(z.z.at4(ch, j, 1, 0), 0.0f, 1.0f);
            for (int64_t fr = first; fr <= last; ++fr)
                CHECK(v.rgb.at4(ch, fr, 8, 0) >= 0.0f);  // guard
            CHECK(r1.rgb.at4(ch, first, 8, 3) == m);
            CHECK(r1.rgb.at4(ch, last, 15, 7) == m);
        }
    }

    // decode(encode(.)) twice lands on exactly the same bytes
    LatentVideo z2 = encode(r1, cfg);
    PixelVideo r2 = decode(z2, cfg);
    CHECK(bit_equal(r1.rgb, r2.rgb));
    // and the mean channels themselves are a fixed point
    for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t j = 0; j < z.frames(); ++j)
            for (int64_t ty = 0; ty < z.height(); ++ty)
                for (int64_t tx = 0; tx < z.width(); ++tx)
                    CHECK(z2.z.at4(ch, j, ty, tx) ==
                          std::clamp(z.z.at4(ch, j, ty, tx), 0.0f, 1.0f));
}

TEST_CASE("reconstruction error equals the blockwise variance floor") {
    CodecConfig cfg;
    PixelVideo v = random_video(13, 24, 16, 5);
    LatentVideo z = encode(v, cfg);
    PixelVideo r = decode(z, cfg);

    double mse = 0.0;
    for (size_t i = 0; i < v.rgb.data().size(); ++i) {
        double d = double(v.rgb.data()[i]) - double(r.rgb.data()[i]);
        mse += d * d;
    }
    mse /= double(v.rgb.numel());

    // oracle: mean over all pixels of squared deviation from own block mean
    long double floor_acc = 0.0L;
    const int64_t ss = cfg.spatial_stride;
    for (int64_t j = 0; j < z.frames(); ++j) {
        int64_t first, last;
        latent_block_span(j, cfg.temporal_stride, first, last);
        for (int64_t ch = 0; ch < 3; ++ch)
            for (int64_t ty = 0; ty < z.height(); ++ty)
                for (int64_t tx = 0; tx < z.width(); ++tx) {
                    long double m = block_mean_oracle(v, ch, j, ty, tx, cfg);
                    for (int64_t fr = first; fr <= last; ++fr)
                        for (int64_t dy = 0; dy < ss; ++dy)
                            for (int64_t dx = 0; dx < ss; ++dx) {
                                long double d =
                                    (long double)v.rgb.at4(ch, fr, ty * ss + dy,
                                                           tx * ss + dx) - m;
                                floor_acc += d * d;
                            }
                }
    }
    double floor = double(floor_acc / (long double)v.rgb.numel());
    CHECK(std::abs(mse - floor) < 1e-5);
}

TEST_CASE("causality: latent frame j ignores later pixel frames") {
    CodecConfig cfg;
    PixelVideo v = random_video(9, 16, 16, 21);
    LatentVideo base = encode(v, cfg);

    // perturb only the final block's frames; earlier latents must not move
    PixelVideo v2;
    v2.rgb = v.rgb.clone();
    for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t fr = 5; fr < 9; ++fr)
            for (int64_t y = 0; y < 16; ++y)
                for (int64_t x = 0; x < 16; ++x)
                    v2.rgb.ref4(ch, fr, y, x) = 1.0f - v2.rgb.at4(ch, fr, y, x);
    LatentVideo z2 = encode(v2, cfg);
    for (int64_t k = 0; k < 8; ++k)
        for (int64_t j = 0; j < 2; ++j)  // latent frames 0 and 1 cover frames 0..4
            for (int64_t ty = 0; ty < 2; ++ty)
                for (int64_t tx = 0; tx < 2; ++tx)
                    CHECK(z2.z.at4(k, j, ty, tx) == base.z.at4(k, j, ty, tx));
    // and the final latent frame did move
    CHECK(z2.z.at4(0, 2, 0, 0) != base.z.at4(0, 2, 0, 0));
}
