#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "posegen/config.hpp"
#include "posegen/dit.hpp"
#include "posegen/sampler.hpp"
#include "posegen/synth.hpp"

namespace posegen {

const char* role_name(SegmentRole role);
SegmentRole role_from_name(const std::string& name);

struct TrainConfig {
    SegmentRole role = SegmentRole::base;
    int64_t steps = 200;
    int64_t batch_size = 1;
    double peak_lr = 1e-3;
    double hand_dropout_p = 0.1;
    double retain_ratio = 0.25;  // stitch only
    uint64_t seed = 0;

    int64_t warmup_steps() const { return steps / 10; }
    void validate() const;
    KvMap to_kv() const;
};

// 1-based schedule: linear to peak over the warmup, cosine to zero after.
double lr_at(const TrainConfig& cfg, int64_t step);

// One scene, fully encoded. Both pose variants are kept so condition
// dropout can swap in the hands-free render instead of surgically editing
// latents (the codec mixes channels, so there is no hand channel to zero).
struct TrainItem {
    Tensor x0;           // [c,f,h,w] clean video latents
    Tensor z_pose;       // pose render including hand markers
    Tensor z_pose_body;  // pose render without them
    Tensor z_hand;       // [c,f,h,w]
    Tensor z_img;        // [c,1,h,w] reference image latents
    std::vector<int64_t> caption;
    std::vector<int64_t> subject_ids;
};

TrainItem encode_item(const Sample& s, const CodecConfig& codec);

// Two independent draws: first the hand latents (rebound to zeros), then the
// hand markers inside the pose render (rebound to the body-only encoding).
// Members are rebound, never written through, so items may share storage.
void apply_condition_dropout(TrainItem& item, double p, Rng& rng);

// Squared error averaged over positions outside the pinned latent frames.
Tensor masked_frame_mse(const Tensor& pred, const Tensor& target,
                        const std::vector<int64_t>& pinned_frames);

// Rectified-flow objective for one item: draw t and eps, noise the latents,
// regress the velocity eps - x0 where the frame mask is clear. Stitch items
// carry their ground truth at preserved positions through the noised input,
// matching the sampler's pinning.
Tensor training_loss(const Model& m, const TrainItem& item, SegmentRole role,
                     double retain_ratio, Rng& rng);

struct LossRecord {
    int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<LossRecord> curve;
};

// Adapter-only optimization in place; frozen base weights are untouched.
// Aborts with NumericError if the loss stops being finite.
TrainResult train(Model& m, const std::vector<TrainItem>& data, const TrainConfig& cfg);

void write_loss_csv(const std::filesystem::path& path,
                    const std::vector<LossRecord>& curve);

}  // namespace posegen
