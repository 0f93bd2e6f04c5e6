#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "posegen/codec.hpp"
#include "posegen/config.hpp"
#include "posegen/kv_share.hpp"
#include "posegen/ops.hpp"
#include "posegen/tensor.hpp"

namespace posegen {

struct DitConfig {
    int64_t layers = 8;
    int64_t dim = 64;
    int64_t heads = 4;
    int64_t ffn_mult = 4;
    int64_t text_vocab = 32;
    int64_t text_len = 8;
    int64_t lora_rank = 4;
    float lora_alpha = 4.0f;  // alpha == rank by default
    bool literal_concat = false;   // single patchifier over [z_vid; m; z_pose; z_hand]
    bool ref_shift_time = false;   // shift image tokens along t instead of width
    CodecConfig codec;
    uint64_t seed = 0xD17;

    int64_t head_dim() const { return dim / heads; }
    // rotary covers the largest 6-divisible prefix of each head
    int64_t rotary_dim() const { return (head_dim() / 6) * 6; }
    void validate() const;
    KvMap to_kv() const;
    static DitConfig from_kv(const KvMap& kv);
};

// Everything the denoiser conditions on, latent-space. All grids share
// (f,h,w); mask_latent carries one channel per frame of a temporal block.
struct ConditionBundle {
    Tensor z_vid;        // [c,f,h,w] noisy video latents
    Tensor mask_latent;  // [s,f,h,w] preserved-frame mask
    Tensor z_pose;       // [c,f,h,w]
    Tensor z_hand;       // [c,f,h,w]
    Tensor z_img;        // [c,1,h,w] reference image latents
    Tensor text_ctx;     // [n_text,d]
    Tensor ref_pooled;   // [1,d]
    std::vector<int64_t> subject_ids;  // rows of text_ctx naming the subject
};

struct TokenSeq {
    Tensor tokens;  // [n,d]
    std::vector<TokenPos> positions;
};

// Sharing integration points inside the block stack. shared_for_layer is
// consulted before each self-attention; on_kv and on_subject_map report the
// per-layer internals the cache and mask state feed on.
struct SharedLayerInput {
    const KvEntry* src = nullptr;
    std::vector<float> cur_mask;
    MaskMode mode = MaskMode::literal;
};
class SharingHooks {
  public:
    virtual ~SharingHooks() = default;
    virtual bool shared_for_layer(int64_t, SharedLayerInput&) { return false; }
    virtual void on_kv(int64_t, const Tensor&, const Tensor&) {}
    virtual void on_subject_map(int64_t, const Tensor&) {}
    virtual void on_cross_internals(int64_t, const CrossInternals&) {}
};

class Model {
  public:
    explicit Model(const DitConfig& cfg);

    const DitConfig& config() const { return cfg_; }
    std::map<std::string, Tensor>& params() { return params_; }
    const std::map<std::string, Tensor>& params() const { return params_; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    bool has_param(const std::string& name) const;

    // trainable set: LoRA pairs plus every patchifier-side weight
    static bool is_adapter_param(const std::string& name);
    std::vector<std::string> adapter_names() const;
    void set_trainable(bool adapters_only);

    // fold A/B into the base weights and zero the B factors
    void merge_lora();

    void save_full(const std::filesystem::path& path, const KvMap& info = {}) const;
    void save_adapters(const std::filesystem::path& path, const KvMap& info = {}) const;
    static Model load_full(const std::filesystem::path& path, KvMap* info = nullptr);
    void load_adapters(const std::filesystem::path& path, KvMap* info = nullptr);

    // y = x W^T (+ scale B A pathway) + b for the named linear
    Tensor lin(const Tensor& x, const std::string& base) const;

  private:
    DitConfig cfg_;
    std::map<std::string, Tensor> params_;
};

// W' = W + (alpha/rank) B A; shapes W [out,in], A [rank,in], B [out,rank].
void lora_merge_into(Tensor& w, const Tensor& a, const Tensor& b, float alpha);

// Fresh model built from the config embedded in an adapter checkpoint,
// with the adapters applied.
Model load_adapter_model(const std::filesystem::path& path, KvMap* info = nullptr);

Tensor text_embed(const Model& m, const std::vector<int64_t>& tokens);
Tensor mean_rows(const Tensor& x);  // [n,d] -> [1,d]

TokenSeq patchify_video(const Model& m, const ConditionBundle& b);
TokenSeq patchify_ref(const Model& m, const Tensor& z_img, int64_t f_video);
Tensor time_embedding(const Model& m, double t_scalar);  // [1,d]

Tensor self_attention_layer(const Model& m, int64_t layer, const Tensor& x,
                            const std::vector<TokenPos>& pos, int64_t n_vid,
                            SharingHooks* hooks = nullptr);
Tensor cross_attention_layer(const Model& m, int64_t layer, const Tensor& x_vid,
                             const Tensor& ctx, CrossInternals* internals = nullptr);

// Full block stack over explicit token sequences; dit_forward patchifies
// and then delegates here. Returns the velocity prediction [c,f,h,w].
Tensor dit_forward_tokens(const Model& m, const TokenSeq& vid, const TokenSeq& img,
                          const ConditionBundle& b, double t_scalar,
                          SharingHooks* hooks = nullptr);
Tensor dit_forward(const Model& m, const ConditionBundle& b, double t_scalar,
                   SharingHooks* hooks = nullptr);

// Fills text_ctx / ref_pooled from the model's embedding table and reference
// patchifier. Latent inputs are taken as-is.
ConditionBundle make_bundle(const Model& m, Tensor z_vid, Tensor mask_latent,
                            Tensor z_pose, Tensor z_hand, Tensor z_img,
                            const std::vector<int64_t>& caption,
                            const std::vector<int64_t>& subject_ids);

}  // namespace posegen
