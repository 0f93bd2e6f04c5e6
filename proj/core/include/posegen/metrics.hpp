#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "posegen/codec.hpp"
#include "posegen/dit.hpp"
#include "posegen/kv_share.hpp"
#include "posegen/tensor.hpp"

namespace posegen {

// One row of the run report. `gate` is a comma-free label like "2x8" so the
// csv stays trivially splittable.
struct SegmentMetrics {
    int64_t segment = 0;
    std::string kind;  // key | stitch
    double bg_mse_vs_source = 0.0;
    double mask_iou = 0.0;
    int64_t cache_bytes = 0;
    std::string gate;
};

std::string gate_label(const GateConfig& gate);

// Mean squared error of every segment frame against one source frame,
// restricted to pixels that are background in both (per-channel samples).
double background_mse(const PixelVideo& seg, const Tensor& seg_subject_mask,
                      const Tensor& src_frame, const Tensor& src_subject_mask);

// Ground-truth subject occupancy on the video token grid, rows ordered like
// the patchifier (frame-major). A token is subject when any pixel of its
// temporal-spatial block is.
std::vector<float> token_grid_gt(const Tensor& subject_mask, const CodecConfig& codec);

// Intersection over union of two binary token masks; two empty masks agree
// perfectly.
double mask_iou(const std::vector<float>& a, const std::vector<float>& b);

// Majority-vote subject tokens from one clean diagnostic forward (t = 0).
std::vector<float> predicted_subject_tokens(const Model& m, const ConditionBundle& b);

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<SegmentMetrics>& rows);
std::vector<SegmentMetrics> read_metrics_csv(const std::filesystem::path& path);

}  // namespace posegen
