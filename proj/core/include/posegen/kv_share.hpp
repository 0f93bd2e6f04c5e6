#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <utility>
#include <vector>

#include "posegen/tensor.hpp"

namespace posegen {

// Background KV-sharing primitives: subject-mask extraction from
// cross-attention logits, attention against a cached source segment with the
// source subject suppressed, and per-token fusion. The pieces are pure so
// each can be checked against a direct-formula oracle; the sampler wires
// them into the denoising loop.

// Per-head context-to-video logits (scaled, pre-softmax): rows are context
// tokens acting as queries, columns are video tokens.
struct CrossInternals {
    std::vector<Tensor> t2v;  // heads x [n_ctx, n_vid]
};

// Mean over the subject context rows and over heads -> [n_vid]. No softmax
// by default; softmax_first applies a per-row softmax before averaging.
Tensor subject_attn_map(const CrossInternals& in, const std::vector<int64_t>& subject_ids,
                        bool softmax_first = false);

// Threshold maximizing between-class variance across 64 histogram-bin
// boundaries; ties resolve to the lowest boundary. Constant input returns
// the constant (so `v > threshold` marks nothing as subject).
float otsu_threshold(const std::vector<float>& values);

struct BinarizedMap {
    std::vector<float> mask;  // {0,1}, 1 = subject (value > threshold)
    float threshold = 0.0f;
    bool empty_subject = false;  // no token cleared the threshold
};
BinarizedMap binarize_by_otsu(const Tensor& map);

// Majority vote across per-layer binarized maps: mean, re-binarized at 0.5.
std::vector<float> layer_mask(const std::vector<std::vector<float>>& binarized);

enum class MaskMode {
    literal,    // (1 - M_src) scales post-softmax weights, no renormalization
    presoftmax  // additive -inf on masked keys, softmax renormalizes
};

// Attention of current queries against cached source keys/values with source
// subject columns suppressed. q and k_src are post-rotary; head layout is
// contiguous d/heads column groups.
Tensor shared_attention(const Tensor& q, const Tensor& k_src, const Tensor& v_src,
                        const std::vector<float>& src_mask, int64_t heads,
                        MaskMode mode = MaskMode::literal);

// Per-token select: rows where m or m_src is set keep `cur`, the rest take
// `src`. Copies are bit-exact.
Tensor fuse(const Tensor& cur, const Tensor& src, const std::vector<float>& m,
            const std::vector<float>& m_src);

// Gating: sharing runs during the first shared_timesteps denoising steps
// (step index 0 = highest noise) and in the last shared_layers blocks.
struct GateConfig {
    int64_t shared_timesteps = 0;
    int64_t shared_layers = 0;
    MaskMode mode = MaskMode::literal;
    bool softmax_first = false;      // ablation: row softmax before map averaging
    bool force_subject_ones = false; // diagnostic: fusion keeps every current token

    bool empty() const { return shared_timesteps == 0 || shared_layers == 0; }
    bool gated(int64_t layer, int64_t step, int64_t total_layers) const {
        return step < shared_timesteps && layer >= total_layers - shared_layers;
    }
    void validate(int64_t steps, int64_t layers) const;  // (0,0) = disabled
    static GateConfig defaults(int64_t steps, int64_t layers);
};

struct KvEntry {
    Tensor k, v;              // [n_vid, d]
    std::vector<float> mask;  // [n_vid] source subject mask
};

// Write-once store keyed by (layer, step), immutable after capture.
class KvCache {
  public:
    void put(int64_t layer, int64_t step, KvEntry e);
    const KvEntry* find(int64_t layer, int64_t step) const;
    const KvEntry& at(int64_t layer, int64_t step) const;
    int64_t entry_count() const { return int64_t(entries_.size()); }
    int64_t bytes() const;
    uint64_t content_hash() const;

    void save(const std::filesystem::path& path) const;  // kv/<l>/<t>/{k,v,mask}
    static KvCache load(const std::filesystem::path& path);

    const std::map<std::pair<int64_t, int64_t>, KvEntry>& entries() const {
        return entries_;
    }

  private:
    std::map<std::pair<int64_t, int64_t>, KvEntry> entries_;
};

}  // namespace posegen
