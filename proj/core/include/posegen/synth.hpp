#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "posegen/codec.hpp"
#include "posegen/rng.hpp"
#include "posegen/tensor.hpp"

namespace posegen {

// Procedural stick-figure scenes on a static textured background. Every
// stream is a pure function of the scene spec, so regeneration is bit-stable.

struct Appearance {
    std::array<float, 3> body_rgb{0.8f, 0.2f, 0.2f};
    std::array<float, 3> head_rgb{0.9f, 0.7f, 0.3f};
    float torso_len = 0.27f;  // fractions of min(H,W)
    float arm_len = 0.22f;
    float leg_len = 0.20f;
    float head_radius = 0.058f;
};

struct MotionFrame {
    float tx = 0.0f, ty = 0.0f;  // root offset, pixels
    float torso_angle = 0.0f;    // lean from vertical, radians
    float arm_l = 0.0f;          // swing relative to rest pose
    float arm_r = 0.0f;
};

struct SceneSpec {
    uint64_t seed = 0;
    int64_t frames = 17, height = 64, width = 64;
    Appearance appearance;
    std::vector<MotionFrame> motion;  // length == frames
    uint64_t background_id = 0;
    std::vector<int64_t> caption_tokens;        // 8 ids in [0,32)
    std::vector<int64_t> subject_token_indices; // positions into the caption
};

// joints: base, pelvis, neck, head, hand_l, hand_r
struct SkeletonFrame {
    std::array<float, 2> base, pelvis, neck, head, hand_l, hand_r;
    float hand_angle_l = 0.0f, hand_angle_r = 0.0f;
    bool clamped = false;
};

struct Sample {
    SceneSpec spec;
    PixelVideo video;      // subject composited over background
    PixelVideo pose;       // skeleton limbs plus hand markers on black
    PixelVideo pose_body;  // skeleton limbs only
    PixelVideo hand;       // oriented gradient patches at the hands
    Tensor reference;      // [3,H,W]: frame 0 of a same-appearance sibling
    Tensor gt_subject_mask;  // [F,H,W], exactly the subject-touched pixels
    bool clamped = false;
    std::vector<SkeletonFrame> skeleton;  // per frame, for inspection
};

SkeletonFrame skeleton_at(const SceneSpec& spec, int64_t frame);
// limb segments of a posed skeleton as (x0,y0,x1,y1)
std::vector<std::array<float, 4>> skeleton_segments(const SkeletonFrame& sk);

Tensor render_background(uint64_t background_id, int64_t H, int64_t W);  // [3,H,W]

SceneSpec random_scene_spec(uint64_t seed, int64_t F, int64_t H, int64_t W);
Sample generate_scene(const SceneSpec& spec);

// i.i.d. specs; scene i uses split(seed, i) and a distinct background id
std::vector<SceneSpec> dataset_specs(int64_t n, int64_t F, int64_t H, int64_t W,
                                     uint64_t seed);
// deterministic parity split over scene index: even -> train, odd -> val
void split_dataset(const std::vector<Sample>& all, std::vector<const Sample*>& train,
                   std::vector<const Sample*>& val);

void export_scene(const std::filesystem::path& dir, const Sample& s);
Sample load_scene(const std::filesystem::path& dir);

// stroke radii shared by renderer and tests
float subject_stroke_radius(const SceneSpec& spec);
constexpr float kPoseStrokeRadius = 1.0f;
constexpr float kHandMarkerRadius = 1.2f;
constexpr int64_t kHandPatchHalf = 3;

}  // namespace posegen
