#pragma once

#include <cstdint>
#include <vector>

#include "posegen/dit.hpp"
#include "posegen/kv_share.hpp"
#include "posegen/tensor.hpp"

namespace posegen {

enum class SegmentRole { base, stitch };

// Frame retention mask. pixel_flags has one entry per pixel frame (1 =
// preserve, 0 = generate); latent_mask is its packed broadcast over the
// latent grid, one channel per slot of a temporal block. The singleton
// first block repeats its flag across all channels.
struct FrameMask {
    std::vector<int32_t> pixel_flags;
    Tensor latent_mask;  // [s,f,h,w]
};

Tensor pack_frame_mask(const std::vector<int32_t>& flags, int64_t temporal_stride,
                       int64_t latent_h, int64_t latent_w);
std::vector<int32_t> unpack_frame_mask(const Tensor& latent_mask);

// base: all zeros. stitch: first q and last q frames preserved with
// q = max(1, floor(frames * retain_ratio)); needs frames >= 4.
FrameMask build_frame_mask(SegmentRole role, int64_t frames, int64_t temporal_stride,
                           int64_t latent_h, int64_t latent_w,
                           double retain_ratio = 0.25);

// Latent frames whose pixel frames are all flagged; only these are pinned
// during sampling (partially retained blocks are generated freely and only
// conditioned through the mask channels).
std::vector<int64_t> pinned_latent_frames(const std::vector<int32_t>& flags,
                                          int64_t temporal_stride);

// x_t = (1-t) x0 + t eps, exact at both endpoints.
Tensor noise(const Tensor& x0, const Tensor& eps, double t);

struct SamplerConfig {
    int64_t steps = 20;
    uint64_t seed = 0;
    void validate() const;
};

// Sharing role of one sampling run: capture writes gated K/V into a fresh
// cache, source consumes a previously captured one. A run is one or the
// other, never both; an empty gate disables the pathway entirely.
struct SharePlan {
    KvCache* capture = nullptr;
    const KvCache* source = nullptr;
    GateConfig gate;
};

// Euler integration of the velocity field from t=1 to t=0 in cfg.steps
// steps, starting from seeded gaussian noise. Preserved latent frames are
// re-noised to the current level after every step and copied exactly at
// the end. tmpl supplies conditioning; its z_vid is only consulted for the
// grid shape and its mask_latent is replaced by mask.latent_mask.
Tensor sample(const Model& m, const ConditionBundle& tmpl, const FrameMask& mask,
              const Tensor* preserved, const SamplerConfig& cfg,
              const SharePlan& plan = {});

}  // namespace posegen
