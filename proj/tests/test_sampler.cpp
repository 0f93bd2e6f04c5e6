#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "posegen/error.hpp"
#include "posegen/ops.hpp"
#include "posegen/sampler.hpp"

using namespace posegen;

namespace {

DitConfig small_config() {
    DitConfig c;
    c.layers = 2;
    c.dim = 24;
    c.heads = 4;
    c.ffn_mult = 2;
    c.lora_rank = 2;
    c.lora_alpha = 2.0f;
    c.codec.channels = 4;
    c.codec.temporal_stride = 2;
    c.seed = 0xFACE;
    return c;
}

// latent grid [4,5,4,4] <-> 9 pixel frames at stride 2
ConditionBundle small_template(const Model& m, uint64_t seed) {
    Rng rng(seed);
    Tensor z_vid({4, 5, 4, 4});
    return make_bundle(m, z_vid, Tensor({2, 5, 4, 4}),
                       Tensor::gaussian({4, 5, 4, 4}, rng),
                       Tensor::gaussian({4, 5, 4, 4}, rng),
                       Tensor::gaussian({4, 1, 4, 4}, rng),
                       {1, 2, 3, 4, 5, 6, 7, 8}, {2});
}

std::vector<int32_t> flags_where(int64_t F, std::initializer_list<int64_t> ones) {
    std::vector<int32_t> f(size_t(F), 0);
    for (int64_t i : ones) f[size_t(i)] = 1;
    return f;
}

}  // namespace

TEST_CASE("frame masks follow the retention rule") {
    FrameMask base = build_frame_mask(SegmentRole::base, 17, 2, 4, 4);
    CHECK(base.pixel_flags == std::vector<int32_t>(17, 0));
    CHECK(base.latent_mask.shape() == Shape{2, 9, 4, 4});
    CHECK(max_abs_diff(base.latent_mask, Tensor({2, 9, 4, 4})) == 0.0f);

    FrameMask st16 = build_frame_mask(SegmentRole::stitch, 16, 1, 4, 4);
    CHECK(st16.pixel_flags ==
          flags_where(16, {0, 1, 2, 3, 12, 13, 14, 15}));
    CHECK(st16.latent_mask.shape() == Shape{1, 16, 4, 4});

    FrameMask st17 = build_frame_mask(SegmentRole::stitch, 17, 2, 4, 4);
    CHECK(st17.pixel_flags ==
          flags_where(17, {0, 1, 2, 3, 13, 14, 15, 16}));

    // floor rule bottoms out at one frame per end
    FrameMask tiny = build_frame_mask(SegmentRole::stitch, 5, 2, 4, 4, 0.1);
    CHECK(tiny.pixel_flags == flags_where(5, {0, 4}));

    CHECK_THROWS_AS(build_frame_mask(SegmentRole::stitch, 3, 1, 4, 4), ConfigError);
    CHECK_THROWS_AS(build_frame_mask(SegmentRole::stitch, 8, 1, 4, 4, 0.0), ConfigError);
    CHECK_THROWS_AS(build_frame_mask(SegmentRole::stitch, 8, 1, 4, 4, 0.6), ConfigError);
    CHECK_THROWS_AS(build_frame_mask(SegmentRole::base, 0, 1, 4, 4), ConfigError);
}

TEST_CASE("mask packing round trips through the latent grid") {
    Rng rng(11);
    for (auto [F, s] : std::vector<std::pair<int64_t, int64_t>>{
             {9, 2}, {17, 4}, {7, 1}, {1, 3}, {5, 4}}) {
        for (int trial = 0; trial < 8; ++trial) {
            std::vector<int32_t> flags(static_cast<size_t>(F));
            for (auto& v : flags) v = int32_t(rng.next_u64() & 1);
            Tensor lm = pack_frame_mask(flags, s, 3, 2);
            CHECK(lm.shape() == Shape{s, (F - 1) / s + 1, 3, 2});
            CHECK(unpack_frame_mask(lm) == flags);
            // the singleton first block repeats its flag on every channel
            for (int64_t ch = 0; ch < s; ++ch)
                CHECK(lm.at4(ch, 0, 0, 0) == float(flags[0]));
        }
    }

    CHECK_THROWS_AS(pack_frame_mask({0, 1, 0, 1, 0, 1}, 2, 3, 2), ConfigError);
    CHECK_THROWS_AS(pack_frame_mask({0, 2, 0}, 2, 3, 2), ConfigError);
    CHECK_THROWS_AS(pack_frame_mask({}, 1, 3, 2), ConfigError);

    Tensor bad = pack_frame_mask({1, 0, 1}, 2, 3, 2);
    bad.mut_data()[1] = 0.0f;  // break per-frame constancy
    CHECK_THROWS_AS(unpack_frame_mask(bad), ShapeError);
    Tensor nonbin = pack_frame_mask({1, 0, 1}, 2, 3, 2);
    for (auto& v : nonbin.mut_data()) v *= 0.5f;
    CHECK_THROWS_AS(unpack_frame_mask(nonbin), ShapeError);
    // first-block channels must agree
    Tensor split = pack_frame_mask({1, 0, 1}, 2, 3, 2);
    for (int64_t y = 0; y < 3; ++y)
        for (int64_t x = 0; x < 2; ++x) split.ref4(1, 0, y, x) = 0.0f;
    CHECK_THROWS_AS(unpack_frame_mask(split), ShapeError);
}

TEST_CASE("only fully retained blocks are pinned") {
    CHECK(pinned_latent_frames(flags_where(5, {0, 1, 2}), 2) ==
          std::vector<int64_t>{0, 1});
    CHECK(pinned_latent_frames(flags_where(5, {1, 2, 3, 4}), 2) ==
          std::vector<int64_t>{1, 2});
    CHECK(pinned_latent_frames(flags_where(5, {0, 2, 3, 4}), 2) ==
          std::vector<int64_t>{0, 2});
    // a half-retained block is generated, not pinned
    CHECK(pinned_latent_frames(flags_where(5, {0, 1}), 2) ==
          std::vector<int64_t>{0});
    CHECK(pinned_latent_frames(flags_where(5, {}), 2).empty());
    CHECK_THROWS_AS(pinned_latent_frames(flags_where(6, {0}), 2), ConfigError);
}

TEST_CASE("noising interpolates with exact endpoints") {
    Rng rng(21);
    Tensor x0 = Tensor::gaussian({4, 3, 4, 4}, rng);
    Tensor eps = Tensor::gaussian({4, 3, 4, 4}, rng);

    CHECK(bit_equal(noise(x0, eps, 0.0), x0));
    CHECK(bit_equal(noise(x0, eps, 1.0), eps));

    Tensor mid = noise(x0, eps, 0.5);
    for (int64_t i = 0; i < mid.numel(); ++i)
        CHECK(mid.at(i) == 0.5f * x0.at(i) + 0.5f * eps.at(i));

    Tensor q = noise(x0, eps, 0.25);
    for (int64_t i = 0; i < q.numel(); ++i)
        CHECK(q.at(i) == 0.75f * x0.at(i) + 0.25f * eps.at(i));

    CHECK_THROWS_AS(noise(x0, Tensor({4, 3, 4, 3}), 0.5), ShapeError);
    CHECK_THROWS_AS(noise(x0, eps, 1.5), UsageError);
    CHECK_THROWS_AS(noise(x0, eps, -0.1), UsageError);
}

TEST_CASE("the zero velocity field leaves the initial noise untouched") {
    Model m(small_config());
    for (auto& v : m.param("final/out.w").mut_data()) v = 0.0f;

    ConditionBundle tmpl = small_template(m, 31);
    FrameMask base = build_frame_mask(SegmentRole::base, 9, 2, 4, 4);

    for (int64_t T : {1, 3}) {
        SamplerConfig cfg;
        cfg.steps = T;
        cfg.seed = 42;
        Tensor out = sample(m, tmpl, base, nullptr, cfg);
        Rng r(42);
        Tensor eps = Tensor::gaussian({4, 5, 4, 4}, r);
        CHECK(bit_equal(out, eps));
    }
}

TEST_CASE("sampling is deterministic and pins preserved frames exactly") {
    Model m(small_config());
    ConditionBundle tmpl = small_template(m, 32);
    FrameMask stitch = build_frame_mask(SegmentRole::stitch, 9, 2, 4, 4);
    // q = 2: frames {0,1,7,8} -> pinned latent frames {0,4}
    CHECK(stitch.pixel_flags == flags_where(9, {0, 1, 7, 8}));
    CHECK(pinned_latent_frames(stitch.pixel_flags, 2) == std::vector<int64_t>{0, 4});

    Rng rng(33);
    Tensor preserved = Tensor::gaussian({4, 5, 4, 4}, rng);
    SamplerConfig cfg;
    cfg.steps = 4;
    cfg.seed = 5;

    Tensor out = sample(m, tmpl, stitch, &preserved, cfg);
    REQUIRE(out.shape() == Shape{4, 5, 4, 4});
    for (int64_t ch = 0; ch < 4; ++ch)
        for (int64_t g : {0, 4})
            for (int64_t y = 0; y < 4; ++y)
                for (int64_t x = 0; x < 4; ++x)
                    CHECK(out.at4(ch, g, y, x) == preserved.at4(ch, g, y, x));
    // generated frames moved away from both the noise and the pinned source
    CHECK(!bit_equal(out, preserved));

    Tensor again = sample(m, tmpl, stitch, &preserved, cfg);
    CHECK(bit_equal(out, again));
    SamplerConfig other = cfg;
    other.seed = 6;
    CHECK(!bit_equal(sample(m, tmpl, stitch, &preserved, other), out));
}

TEST_CASE("sampling validates its inputs") {
    Model m(small_config());
    ConditionBundle tmpl = small_template(m, 34);
    FrameMask stitch = build_frame_mask(SegmentRole::stitch, 9, 2, 4, 4);
    FrameMask base = build_frame_mask(SegmentRole::base, 9, 2, 4, 4);
    SamplerConfig cfg;
    cfg.steps = 2;

    CHECK_THROWS_AS(sample(m, tmpl, stitch, nullptr, cfg), UsageError);
    Rng rng(1);
    Tensor wrong = Tensor::gaussian({4, 5, 4, 2}, rng);
    CHECK_THROWS_AS(sample(m, tmpl, stitch, &wrong, cfg), ShapeError);

    FrameMask off = build_frame_mask(SegmentRole::base, 7, 2, 4, 4);
    CHECK_THROWS_AS(sample(m, tmpl, off, nullptr, cfg), ConfigError);

    SamplerConfig bad;
    bad.steps = 0;
    CHECK_THROWS_AS(sample(m, tmpl, base, nullptr, bad), ConfigError);

    KvCache cache;
    SharePlan both;
    both.capture = &cache;
    both.source = &cache;
    both.gate = GateConfig::defaults(2, 2);
    CHECK_THROWS_AS(sample(m, tmpl, base, nullptr, cfg, both), UsageError);

    SharePlan oob;
    oob.source = &cache;
    oob.gate.shared_timesteps = 3;  // more than cfg.steps
    oob.gate.shared_layers = 1;
    CHECK_THROWS_AS(sample(m, tmpl, base, nullptr, cfg, oob), ConfigError);
}

TEST_CASE("an empty gate is bit-identical to plain sampling") {
    Model m(small_config());
    ConditionBundle tmpl = small_template(m, 35);
    FrameMask base = build_frame_mask(SegmentRole::base, 9, 2, 4, 4);
    SamplerConfig cfg;
    cfg.steps = 3;
    cfg.seed = 9;

    Tensor plain = sample(m, tmpl, base, nullptr, cfg);

    KvCache cache;
    SharePlan consume_none;
    consume_none.source = &cache;
    CHECK(bit_equal(sample(m, tmpl, base, nullptr, cfg, consume_none), plain));

    SharePlan capture_none;
    capture_none.capture = &cache;
    CHECK(bit_equal(sample(m, tmpl, base, nullptr, cfg, capture_none), plain));
    CHECK(cache.entry_count() == 0);
}

TEST_CASE("capture and consume drive the sharing pathway") {
    Model m(small_config());
    ConditionBundle src_tmpl = small_template(m, 36);
    ConditionBundle con_tmpl = small_template(m, 37);
    FrameMask base = build_frame_mask(SegmentRole::base, 9, 2, 4, 4);

    SamplerConfig src_cfg;
    src_cfg.steps = 4;
    src_cfg.seed = 7;
    SamplerConfig con_cfg;
    con_cfg.steps = 4;
    con_cfg.seed = 8;

    GateConfig gate;
    gate.shared_timesteps = 2;
    gate.shared_layers = 2;

    // capture is an observer: the source run is unchanged by it
    Tensor src_plain = sample(m, src_tmpl, base, nullptr, src_cfg);
    KvCache cache;
    SharePlan cap;
    cap.capture = &cache;
    cap.gate = gate;
    Tensor src_cap = sample(m, src_tmpl, base, nullptr, src_cfg, cap);
    CHECK(bit_equal(src_plain, src_cap));

    CHECK(cache.entry_count() == 4);  // 2 steps x 2 layers
    const int64_t n_vid = 5 * 2 * 2;
    for (int64_t l : {0, 1})
        for (int64_t t : {0, 1}) {
            const KvEntry& e = cache.at(l, t);
            CHECK(e.k.shape() == Shape{n_vid, 24});
            CHECK(e.v.shape() == Shape{n_vid, 24});
            CHECK(int64_t(e.mask.size()) == n_vid);
            for (float v : e.mask) CHECK((v == 0.0f || v == 1.0f));
        }
    CHECK(cache.find(0, 2) == nullptr);

    // consuming engages fusion and leaves the cache untouched
    const uint64_t hash_before = cache.content_hash();
    Tensor con_plain = sample(m, con_tmpl, base, nullptr, con_cfg);
    SharePlan use;
    use.source = &cache;
    use.gate = gate;
    Tensor con_shared = sample(m, con_tmpl, base, nullptr, con_cfg, use);
    CHECK(cache.content_hash() == hash_before);
    CHECK(!bit_equal(con_shared, con_plain));
    CHECK(bit_equal(sample(m, con_tmpl, base, nullptr, con_cfg, use), con_shared));

    // forcing the current mask to ones makes fusion the identity
    SharePlan forced = use;
    forced.gate.force_subject_ones = true;
    CHECK(bit_equal(sample(m, con_tmpl, base, nullptr, con_cfg, forced), con_plain));

    // a gate wider than the capture is a gating bug
    SharePlan wider = use;
    wider.gate.shared_timesteps = 3;
    CHECK_THROWS_AS(sample(m, con_tmpl, base, nullptr, con_cfg, wider), UsageError);

    // ablation path: softmax-first mask extraction still runs end to end
    SharePlan ablate = use;
    ablate.gate.softmax_first = true;
    Tensor con_ablate = sample(m, con_tmpl, base, nullptr, con_cfg, ablate);
    CHECK(con_ablate.shape() == con_plain.shape());
    CHECK(bit_equal(sample(m, con_tmpl, base, nullptr, con_cfg, ablate), con_ablate));
    CHECK(cache.content_hash() == hash_before);
}
