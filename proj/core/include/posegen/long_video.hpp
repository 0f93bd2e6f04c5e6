#pragma once

#include <cstdint>
#include <vector>

#include "posegen/config.hpp"
#include "posegen/dit.hpp"
#include "posegen/kv_share.hpp"
#include "posegen/sampler.hpp"
#include "posegen/synth.hpp"

namespace posegen {

enum class SegmentKind { key, stitch };

struct Segment {
    SegmentKind kind = SegmentKind::key;
    int64_t start = 0, end = 0;  // global pixel frames [start, end)
    uint64_t seed = 0;
    bool shortened = false;  // final key cut below the nominal length
    int64_t frames() const { return end - start; }
};

// Interleaved cover of [0, total_frames): keys at a fixed stride, one
// stitch bridging each gap. A stitch's first q frames coincide with the
// preceding key's last q, its last q with the following key's first q;
// assembly takes keys verbatim and only the interior of each stitch.
struct SegmentPlan {
    std::vector<Segment> segments;  // K0 S0 K1 S1 ... Kn
    int64_t total_frames = 0;
    int64_t f_seg = 0;
    int64_t q = 0;
    int64_t source_index = 0;  // segment whose run captures the KV cache
    double retain_ratio = 0.25;
    uint64_t seed = 0;

    void validate() const;
    KvMap to_kv() const;
    static SegmentPlan from_kv(const KvMap& kv);
};

// q = floor(f_seg * retain_ratio); keys every 2*(f_seg - q) frames, the
// last one shortened to fit (flagged). total <= f_seg degenerates to a
// single key. Per-segment seeds derive from `seed` by list position.
SegmentPlan plan_segments(int64_t total_frames, int64_t f_seg, double retain_ratio,
                          uint64_t seed);

PixelVideo slice_frames(const PixelVideo& v, int64_t start, int64_t end);

struct LongGenResult {
    PixelVideo video;  // assembled [3, total_frames, H, W]
    std::vector<Tensor> segment_latents;
    std::vector<PixelVideo> segment_pixels;
    KvCache cache;  // captured from the source segment; empty when not sharing
};

// Wave schedule: the source key runs alone and captures K/V, the remaining
// keys run as one parallel wave of cache consumers, then the stitches run
// as a second wave with preserved frames pinned from their neighbor keys.
// An empty gate turns all sharing off. Scene streams supply pose, hand,
// reference, and caption; they must cover the planned length.
LongGenResult generate_long(const SegmentPlan& plan, const Sample& scene,
                            const Model& base_model, const Model& stitch_model,
                            const GateConfig& gate, const SamplerConfig& scfg);

// Keys verbatim plus stitch interiors, in global order. Every global frame
// is written exactly once.
PixelVideo assemble(const SegmentPlan& plan, const std::vector<PixelVideo>& segment_pixels);

// POSEGEN_THREADS override, else hardware concurrency, at least 1.
int64_t thread_budget();

}  // namespace posegen
