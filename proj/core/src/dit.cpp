#include "posegen/dit.hpp"

#include <cmath>
#include <cstring>
#include <set>
#include <tuple>

#include "posegen/checkpoint.hpp"
#include "posegen/error.hpp"

namespace posegen {
namespace {

// strings ride inside the tensor container as one byte per float
TensorRecord text_record(const std::string& name, const std::string& text) {
    TensorRecord r;
    r.name = name;
    r.shape = {std::max<int64_t>(1, int64_t(text.size()))};
    r.data.assign(size_t(r.shape[0]), 0.0f);
    for (size_t i = 0; i < text.size(); ++i)
        r.data[i] = float(static_cast<unsigned char>(text[i]));
    return r;
}

std::string record_text(const TensorRecord& r) {
    std::string s;
    s.reserve(r.data.size());
    for (float v : r.data) {
        int code = int(std::lround(v));
        if (code == 0) continue;  // padding for the empty-string case
        s.push_back(char(static_cast<unsigned char>(code)));
    }
    return s;
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
    int64_t f = parts[0]->size(1), h = parts[0]->size(2), w = parts[0]->size(3);
    int64_t total = 0;
    for (const Tensor* p : parts) total += p->size(0);
    Tensor out({total, f, h, w});
    auto& od = out.mut_data();
    size_t off = 0;
    for (const Tensor* p : parts) {
        std::memcpy(od.data() + off, p->data().data(), p->data().size() * sizeof(float));
        off += p->data().size();
    }
    return out;
}

Tensor rope_head(const Tensor& head, const std::vector<TokenPos>& pos, int64_t rot) {
    int64_t hd = head.size(1);
    if (rot == 0) return head;
    if (rot == hd) return rope_apply(head, pos);
    Tensor lo = rope_apply(slice_cols(head, 0, rot), pos);
    return concat_cols(lo, slice_cols(head, rot, hd - rot));
}

}  // namespace

void DitConfig::validate() const {
    if (layers < 1) throw ConfigError("dit: layers must be >= 1");
    if (heads < 1 || dim < heads || dim % heads != 0)
        throw ConfigError("dit: dim must be a positive multiple of heads");
    if (dim % 2 != 0) throw ConfigError("dit: dim must be even");
    if (head_dim() % 2 != 0) throw ConfigError("dit: head dim must be even");
    if (ffn_mult < 1) throw ConfigError("dit: ffn_mult must be >= 1");
    if (text_vocab < 1 || text_len < 1) throw ConfigError("dit: empty text space");
    if (lora_rank < 0) throw ConfigError("dit: negative lora rank");
    if (lora_rank > 0 && !(lora_alpha > 0.0f))
        throw ConfigError("dit: lora_alpha must be positive");
    if (codec.channels < 4) throw ConfigError("dit: codec channels must be >= 4");
}

KvMap DitConfig::to_kv() const {
    KvMap kv;
    kv.set_i64("dit.layers", layers);
    kv.set_i64("dit.dim", dim);
    kv.set_i64("dit.heads", heads);
    kv.set_i64("dit.ffn_mult", ffn_mult);
    kv.set_i64("dit.text_vocab", text_vocab);
    kv.set_i64("dit.text_len", text_len);
    kv.set_i64("dit.lora_rank", lora_rank);
    kv.set_f64("dit.lora_alpha", double(lora_alpha));
    kv.set_i64("dit.literal_concat", literal_concat ? 1 : 0);
    kv.set_i64("dit.ref_shift_time", ref_shift_time ? 1 : 0);
    kv.set_u64("dit.seed", seed);
    kv.set_i64("codec.channels", codec.channels);
    kv.set_i64("codec.temporal_stride", codec.temporal_stride);
    kv.set_i64("codec.spatial_stride", codec.spatial_stride);
    kv.set_u64("codec.seed", codec.seed);
    return kv;
}

DitConfig DitConfig::from_kv(const KvMap& kv) {
    DitConfig c;
    c.layers = kv.get_i64_or("dit.layers", c.layers);
    c.dim = kv.get_i64_or("dit.dim", c.dim);
    c.heads = kv.get_i64_or("dit.heads", c.heads);
    c.ffn_mult = kv.get_i64_or("dit.ffn_mult", c.ffn_mult);
    c.text_vocab = kv.get_i64_or("dit.text_vocab", c.text_vocab);
    c.text_len = kv.get_i64_or("dit.text_len", c.text_len);
    c.lora_rank = kv.get_i64_or("dit.lora_rank", c.lora_rank);
    c.lora_alpha = float(kv.get_f64_or("dit.lora_alpha", double(c.lora_alpha)));
    c.literal_concat = kv.get_i64_or("dit.literal_concat", 0) != 0;
    c.ref_shift_time = kv.get_i64_or("dit.ref_shift_time", 0) != 0;
    c.seed = kv.get_u64_or("dit.seed", c.seed);
    c.codec.channels = kv.get_i64_or("codec.channels", c.codec.channels);
    c.codec.temporal_stride = kv.get_i64_or("codec.temporal_stride", c.codec.temporal_stride);
    c.codec.spatial_stride = kv.get_i64_or("codec.spatial_stride", c.codec.spatial_stride);
    c.codec.seed = kv.get_u64_or("codec.seed", c.codec.seed);
    c.validate();
    return c;
}

Model::Model(const DitConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    // adapters draw from their own stream so base weights are identical
    // across lora ranks (rank 0 vs rank r differ only by the adapter params)
    Rng rng(cfg_.seed);
    Rng rng_lora = Rng(cfg_.seed).split(0x10A);

    auto linear = [&](const std::string& name, int64_t out, int64_t in) {
        params_[name + ".w"] = Tensor::gaussian({out, in}, rng, 1.0f / std::sqrt(float(in)));
        params_[name + ".b"] = Tensor({out});
    };
    auto lora = [&](const std::string& name, int64_t out, int64_t in) {
        if (cfg_.lora_rank == 0) return;
        params_[name + ".lora_a"] = Tensor::gaussian({cfg_.lora_rank, in}, rng_lora,
                                                     1.0f / std::sqrt(float(in)));
        params_[name + ".lora_b"] = Tensor({out, cfg_.lora_rank});
    };
    auto gain = [&](const std::string& name, int64_t n) {
        params_[name] = Tensor({n}, 1.0f);
    };

    const int64_t d = cfg_.dim, c = cfg_.codec.channels, s = cfg_.codec.temporal_stride;
    const int64_t vid_in = 4 * (cfg_.literal_concat ? 3 * c + s : 2 * c + s);

    linear("patch/video", d, vid_in);
    if (!cfg_.literal_concat) {
        linear("patch/hand", d, 4 * c);
        params_["patch/hand_proj.w"] = Tensor({d, d});  // zero-init projection
    }
    // reference patchifier starts as the video patchifier's noisy-channel slice
    {
        Tensor rw({d, 4 * c});
        const Tensor& vw = params_.at("patch/video.w");
        for (int64_t r = 0; r < d; ++r)
            for (int64_t k = 0; k < 4 * c; ++k)
                rw.mut_data()[size_t(r * 4 * c + k)] = vw.at2(r, k);
        params_["patch/ref.w"] = rw;
        params_["patch/ref.b"] = params_.at("patch/video.b").clone();
    }

    params_["text/emb"] = Tensor::gaussian({cfg_.text_vocab, d}, rng, 0.02f);
    linear("time/w1", d, d);
    linear("time/w2", d, d);

    for (int64_t l = 0; l < cfg_.layers; ++l) {
        std::string pre = "blocks/" + std::to_string(l) + "/";
        gain(pre + "norm1.g", d);
        for (const char* nm : {"q", "k", "v", "o"}) {
            linear(pre + "attn/" + nm, d, d);
            lora(pre + "attn/" + nm, d, d);
        }
        gain(pre + "norm2.g", d);
        for (const char* nm : {"q", "k", "v", "o"}) {
            linear(pre + "cross/" + nm, d, d);
            lora(pre + "cross/" + nm, d, d);
        }
        gain(pre + "norm3.g", d);
        linear(pre + "ffn/w1", cfg_.ffn_mult * d, d);
        lora(pre + "ffn/w1", cfg_.ffn_mult * d, d);
        linear(pre + "ffn/w2", d, cfg_.ffn_mult * d);
        lora(pre + "ffn/w2", d, cfg_.ffn_mult * d);
    }
    gain("final/norm.g", d);
    linear("final/out", 4 * c, d);
}

Tensor& Model::param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("dit: no parameter named " + name);
    return it->second;
}

const Tensor& Model::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("dit: no parameter named " + name);
    return it->second;
}

bool Model::has_param(const std::string& name) const { return params_.count(name) > 0; }

bool Model::is_adapter_param(const std::string& name) {
    return name.find(".lora_") != std::string::npos || name.rfind("patch/", 0) == 0;
}

std::vector<std::string> Model::adapter_names() const {
    std::vector<std::string> out;
    for (const auto& [name, t] : params_)
        if (is_adapter_param(name)) out.push_back(name);
    return out;
}

void Model::set_trainable(bool adapters_only) {
    for (auto& [name, t] : params_) {
        t.set_requires_grad(!adapters_only || is_adapter_param(name));
        t.zero_grad();
    }
}

void lora_merge_into(Tensor& w, const Tensor& a, const Tensor& b, float alpha) {
    if (a.rank() != 2 || b.rank() != 2 || w.rank() != 2 || b.size(1) != a.size(0) ||
        w.size(0) != b.size(0) || w.size(1) != a.size(1))
        throw ConfigError("lora_merge: rank/shape mismatch between W " +
                          shape_str(w.shape()) + ", A " + shape_str(a.shape()) + ", B " +
                          shape_str(b.shape()));
    const int64_t out = w.size(0), in = w.size(1), r = a.size(0);
    const float scale = alpha / float(r);
    for (int64_t i = 0; i < out; ++i)
        for (int64_t j = 0; j < in; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < r; ++k)
                acc += double(b.at2(i, k)) * double(a.at2(k, j));
            w.mut_data()[size_t(i * in + j)] += float(double(scale) * acc);
        }
}

void Model::merge_lora() {
    for (auto& [name, t] : params_) {
        if (name.size() < 7 || name.compare(name.size() - 7, 7, ".lora_a") != 0) continue;
        std::string stem = name.substr(0, name.size() - 7);
        lora_merge_into(param(stem + ".w"), t, param(stem + ".lora_b"), cfg_.lora_alpha);
        auto& b = param(stem + ".lora_b").mut_data();
        std::fill(b.begin(), b.end(), 0.0f);
    }
}

Tensor Model::lin(const Tensor& x, const std::string& base) const {
    const Tensor& w = param(base + ".w");
    if (x.rank() != 2 || x.size(1) != w.size(1))
        throw ConfigError("dit: input width " + shape_str(x.shape()) +
                          " does not match " + base + ".w " + shape_str(w.shape()));
    Tensor y = matmul(x, transpose2d(w));
    auto it = params_.find(base + ".lora_a");
    if (it != params_.end()) {
        const Tensor& a = it->second;
        const Tensor& b = param(base + ".lora_b");
        float scale = cfg_.lora_alpha / float(a.size(0));
        Tensor low = matmul(matmul(x, transpose2d(a)), transpose2d(b));
        y = add(y, mul_scalar(low, scale));
    }
    return add_rowvec(y, param(base + ".b"));
}

Tensor text_embed(const Model& m, const std::vector<int64_t>& tokens) {
    if (int64_t(tokens.size()) != m.config().text_len)
        throw ConfigError("dit: caption length " + std::to_string(tokens.size()) +
                          " != text_len " + std::to_string(m.config().text_len));
    return gather_rows(m.param("text/emb"), tokens);
}

Tensor mean_rows(const Tensor& x) {
    Tensor ones({1, x.size(0)}, 1.0f / float(x.size(0)));
    return matmul(ones, x);
}

Tensor time_embedding(const Model& m, double t_scalar) {
    const int64_t d = m.config().dim;
    Tensor feat({1, d});
    const int64_t half = d / 2;
    for (int64_t i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        double a = 1000.0 * t_scalar * freq;
        feat.mut_data()[size_t(i)] = float(std::sin(a));
        feat.mut_data()[size_t(half + i)] = float(std::cos(a));
    }
    return m.lin(gelu(m.lin(feat, "time/w1")), "time/w2");
}

TokenSeq patchify_video(const Model& m, const ConditionBundle& b) {
    const DitConfig& cfg = m.config();
    const int64_t c = cfg.codec.channels, s = cfg.codec.temporal_stride;
    if (b.z_vid.rank() != 4 || b.z_vid.size(0) != c)
        throw ConfigError("patchify_video: z_vid channels do not match the codec (" +
                          shape_str(b.z_vid.shape()) + ")");
    const int64_t f = b.z_vid.size(1), h = b.z_vid.size(2), w = b.z_vid.size(3);
    auto want = [&](const Tensor& t, int64_t ch, const char* what) {
        if (t.rank() != 4 || t.size(0) != ch || t.size(1) != f || t.size(2) != h ||
            t.size(3) != w)
            throw ConfigError(std::string("patchify_video: ") + what +
                              " grid mismatch: " + shape_str(t.shape()));
    };
    want(b.mask_latent, s, "mask_latent");
    want(b.z_pose, c, "z_pose");
    want(b.z_hand, c, "z_hand");

    Tensor cat = cfg.literal_concat
                     ? concat_channels({&b.z_vid, &b.mask_latent, &b.z_pose, &b.z_hand})
                     : concat_channels({&b.z_vid, &b.mask_latent, &b.z_pose});
    TokenSeq seq;
    seq.tokens = m.lin(unfold_patches(cat), "patch/video");
    if (!cfg.literal_concat) {
        Tensor hand_tok = m.lin(unfold_patches(b.z_hand), "patch/hand");
        Tensor routed = matmul(hand_tok, transpose2d(m.param("patch/hand_proj.w")));
        seq.tokens = add(seq.tokens, routed);
    }
    const int64_t gh = h / 2, gw = w / 2;
    seq.positions.reserve(size_t(f * gh * gw));
    for (int64_t t = 0; t < f; ++t)
        for (int64_t y = 0; y < gh; ++y)
            for (int64_t x = 0; x < gw; ++x)
                seq.positions.push_back({int32_t(t), int32_t(y), int32_t(x)});
    return seq;
}

TokenSeq patchify_ref(const Model& m, const Tensor& z_img, int64_t f_video) {
    const DitConfig& cfg = m.config();
    if (z_img.rank() != 4 || z_img.size(0) != cfg.codec.channels || z_img.size(1) != 1)
        throw ConfigError("patchify_ref: expected [c,1,h,w], got " +
                          shape_str(z_img.shape()));
    const int64_t h = z_img.size(2), w = z_img.size(3);
    TokenSeq seq;
    seq.tokens = m.lin(unfold_patches(z_img), "patch/ref");
    const int64_t gh = h / 2, gw = w / 2;
    for (int64_t y = 0; y < gh; ++y)
        for (int64_t x = 0; x < gw; ++x) {
            TokenPos p;
            if (cfg.ref_shift_time) {
                p = {int32_t(f_video), int32_t(y), int32_t(x)};
            } else {
                p = {0, int32_t(y), int32_t(x + gw)};
            }
            seq.positions.push_back(p);
        }
    return seq;
}

Tensor self_attention_layer(const Model& m, int64_t layer, const Tensor& x,
                            const std::vector<TokenPos>& pos, int64_t n_vid,
                            SharingHooks* hooks) {
    const DitConfig& cfg = m.config();
    const std::string pre = "blocks/" + std::to_string(layer) + "/attn/";
    const int64_t n = x.size(0), hd = cfg.head_dim(), rot = cfg.rotary_dim();
    if (int64_t(pos.size()) != n)
        throw ShapeError("self_attention: position count mismatch");
    if (n_vid < 0 || n_vid > n) throw UsageError("self_attention: bad n_vid");

    Tensor q = m.lin(x, pre + "q"), k = m.lin(x, pre + "k"), v = m.lin(x, pre + "v");
    const float scale = 1.0f / std::sqrt(float(hd));

    Tensor out, q_rot_all, k_rot_all;
    for (int64_t hI = 0; hI < cfg.heads; ++hI) {
        Tensor qh = rope_head(slice_cols(q, hI * hd, hd), pos, rot);
        Tensor kh = rope_head(slice_cols(k, hI * hd, hd), pos, rot);
        Tensor vh = slice_cols(v, hI * hd, hd);
        Tensor p = softmax_rows(mul_scalar(matmul(qh, transpose2d(kh)), scale));
        Tensor oh = matmul(p, vh);
        out = hI == 0 ? oh : concat_cols(out, oh);
        if (hooks) {
            q_rot_all = hI == 0 ? qh : concat_cols(q_rot_all, qh);
            k_rot_all = hI == 0 ? kh : concat_cols(k_rot_all, kh);
        }
    }

    if (hooks) {
        hooks->on_kv(layer, slice_rows(k_rot_all, 0, n_vid).clone(),
                     slice_rows(v, 0, n_vid).clone());
        SharedLayerInput sli;
        if (hooks->shared_for_layer(layer, sli) && sli.src) {
            Tensor q_vid = slice_rows(q_rot_all, 0, n_vid);
            Tensor shared = shared_attention(q_vid, sli.src->k, sli.src->v,
                                             sli.src->mask, cfg.heads, sli.mode);
            Tensor fused = fuse(slice_rows(out, 0, n_vid), shared, sli.cur_mask,
                                sli.src->mask);
            out = n_vid == n ? fused
                             : concat_rows(fused, slice_rows(out, n_vid, n - n_vid));
        }
    }
    return m.lin(out, pre + "o");
}

Tensor cross_attention_layer(const Model& m, int64_t layer, const Tensor& x_vid,
                             const Tensor& ctx, CrossInternals* internals) {
    const DitConfig& cfg = m.config();
    const std::string pre = "blocks/" + std::to_string(layer) + "/cross/";
    const int64_t hd = cfg.head_dim();
    if (ctx.size(0) < 1) throw ConfigError("cross_attention: empty context");

    Tensor q = m.lin(x_vid, pre + "q"), k = m.lin(ctx, pre + "k"), v = m.lin(ctx, pre + "v");
    const float scale = 1.0f / std::sqrt(float(hd));

    Tensor out;
    for (int64_t hI = 0; hI < cfg.heads; ++hI) {
        Tensor qh = slice_cols(q, hI * hd, hd);
        Tensor kh = slice_cols(k, hI * hd, hd);
        Tensor vh = slice_cols(v, hI * hd, hd);
        Tensor logits = mul_scalar(matmul(qh, transpose2d(kh)), scale);
        if (internals) internals->t2v.push_back(transpose2d(logits));
        Tensor oh = matmul(softmax_rows(logits), vh);
        out = hI == 0 ? oh : concat_cols(out, oh);
    }
    return m.lin(out, pre + "o");
}

Tensor dit_forward_tokens(const Model& m, const TokenSeq& vid, const TokenSeq& img,
                          const ConditionBundle& b, double t_scalar,
                          SharingHooks* hooks) {
    const DitConfig& cfg = m.config();
    const int64_t d = cfg.dim;
    const int64_t n_vid = vid.tokens.size(0), n_img = img.tokens.size(0);
    if (vid.tokens.size(1) != d || img.tokens.size(1) != d)
        throw ConfigError("dit_forward: token width does not match the model");
    if (t_scalar < 0.0 || t_scalar > 1.0)
        throw UsageError("dit_forward: t outside [0,1]");
    if (b.text_ctx.rank() != 2 || b.text_ctx.size(1) != d || b.ref_pooled.rank() != 2 ||
        b.ref_pooled.size(0) != 1 || b.ref_pooled.size(1) != d)
        throw ConfigError("dit_forward: context shapes invalid");
    for (int64_t id : b.subject_ids)
        if (id < 0 || id >= b.text_ctx.size(0))
            throw ConfigError("dit_forward: subject index outside text context");

    std::vector<TokenPos> pos = vid.positions;
    pos.insert(pos.end(), img.positions.begin(), img.positions.end());
    {
        std::set<std::tuple<int32_t, int32_t, int32_t>> seen;
        for (const TokenPos& p : pos)
            if (!seen.insert({p.t, p.y, p.x}).second)
                throw UsageError("dit_forward: duplicate token position");
    }

    Tensor x = concat_rows(vid.tokens, img.tokens);
    x = add_rowvec(x, reshape(time_embedding(m, t_scalar), {d}));
    Tensor ctx = concat_rows(b.text_ctx, b.ref_pooled);

    for (int64_t l = 0; l < cfg.layers; ++l) {
        const std::string pre = "blocks/" + std::to_string(l) + "/";
        Tensor h1 = rms_norm(x, m.param(pre + "norm1.g"));
        x = add(x, self_attention_layer(m, l, h1, pos, n_vid, hooks));

        Tensor h2 = slice_rows(rms_norm(x, m.param(pre + "norm2.g")), 0, n_vid);
        CrossInternals internals;
        Tensor cr = cross_attention_layer(m, l, h2, ctx, hooks ? &internals : nullptr);
        if (hooks) {
            hooks->on_cross_internals(l, internals);
            if (!b.subject_ids.empty())
                hooks->on_subject_map(l, subject_attn_map(internals, b.subject_ids));
        }
        Tensor vid_rows = add(slice_rows(x, 0, n_vid), cr);
        x = n_img == 0 ? vid_rows : concat_rows(vid_rows, slice_rows(x, n_vid, n_img));

        Tensor h3 = rms_norm(x, m.param(pre + "norm3.g"));
        Tensor ff = m.lin(gelu(m.lin(h3, pre + "ffn/w1")), pre + "ffn/w2");
        x = add(x, ff);
    }

    Tensor y = rms_norm(x, m.param("final/norm.g"));
    Tensor out_tokens = m.lin(slice_rows(y, 0, n_vid), "final/out");
    const int64_t c = cfg.codec.channels;
    const int64_t f = b.z_vid.size(1), h = b.z_vid.size(2), w = b.z_vid.size(3);
    return fold_patches(out_tokens, c, f, h, w);
}

Tensor dit_forward(const Model& m, const ConditionBundle& b, double t_scalar,
                   SharingHooks* hooks) {
    TokenSeq vid = patchify_video(m, b);
    TokenSeq img = patchify_ref(m, b.z_img, b.z_vid.size(1));
    if (vid.tokens.size(0) != b.z_vid.size(1) * (b.z_vid.size(2) / 2) *
                                  (b.z_vid.size(3) / 2))
        throw UsageError("dit_forward: video token count law violated");
    return dit_forward_tokens(m, vid, img, b, t_scalar, hooks);
}

ConditionBundle make_bundle(const Model& m, Tensor z_vid, Tensor mask_latent,
                            Tensor z_pose, Tensor z_hand, Tensor z_img,
                            const std::vector<int64_t>& caption,
                            const std::vector<int64_t>& subject_ids) {
    ConditionBundle b;
    b.z_vid = std::move(z_vid);
    b.mask_latent = std::move(mask_latent);
    b.z_pose = std::move(z_pose);
    b.z_hand = std::move(z_hand);
    b.z_img = std::move(z_img);
    b.text_ctx = text_embed(m, caption);
    for (int64_t id : subject_ids)
        if (id < 0 || id >= m.config().text_len)
            throw ConfigError("make_bundle: subject index outside the caption");
    b.subject_ids = subject_ids;
    b.ref_pooled = mean_rows(patchify_ref(m, b.z_img, b.z_vid.size(1)).tokens);
    return b;
}

void Model::save_full(const std::filesystem::path& path, const KvMap& info) const {
    std::vector<TensorRecord> recs;
    recs.push_back(text_record("meta/config", cfg_.to_kv().serialize()));
    recs.push_back(text_record("meta/info", info.serialize()));
    for (const auto& [name, t] : params_)
        recs.push_back({name, t.shape(), t.data()});
    save_container(path, recs);
}

void Model::save_adapters(const std::filesystem::path& path, const KvMap& info) const {
    std::vector<TensorRecord> recs;
    recs.push_back(text_record("meta/config", cfg_.to_kv().serialize()));
    recs.push_back(text_record("meta/info", info.serialize()));
    for (const auto& [name, t] : params_)
        if (is_adapter_param(name)) recs.push_back({name, t.shape(), t.data()});
    save_container(path, recs);
}

namespace {
KvMap split_meta(const std::vector<TensorRecord>& recs, std::string* config_text) {
    KvMap info;
    bool saw_config = false;
    for (const auto& r : recs) {
        if (r.name == "meta/config") {
            *config_text = record_text(r);
            saw_config = true;
        } else if (r.name == "meta/info") {
            info = KvMap::parse_text(record_text(r), "meta/info");
        }
    }
    if (!saw_config) throw IoError("checkpoint: missing meta/config record");
    return info;
}
}  // namespace

Model Model::load_full(const std::filesystem::path& path, KvMap* info) {
    auto recs = load_container(path);
    std::string cfg_text;
    KvMap meta = split_meta(recs, &cfg_text);
    Model m(DitConfig::from_kv(KvMap::parse_text(cfg_text, "meta/config")));
    std::set<std::string> seen;
    for (const auto& r : recs) {
        if (r.name.rfind("meta/", 0) == 0) continue;
        auto it = m.params_.find(r.name);
        if (it == m.params_.end())
            throw IoError("checkpoint: unknown parameter " + r.name);
        if (!same_shape(it->second.shape(), r.shape))
            throw IoError("checkpoint: shape mismatch for " + r.name);
        it->second.mut_data() = r.data;
        seen.insert(r.name);
    }
    for (const auto& [name, t] : m.params_)
        if (!seen.count(name)) throw IoError("checkpoint: missing parameter " + name);
    if (info) *info = meta;
    return m;
}

Model load_adapter_model(const std::filesystem::path& path, KvMap* info) {
    auto recs = load_container(path);
    std::string cfg_text;
    split_meta(recs, &cfg_text);
    Model m(DitConfig::from_kv(KvMap::parse_text(cfg_text, "meta/config")));
    m.load_adapters(path, info);
    return m;
}

void Model::load_adapters(const std::filesystem::path& path, KvMap* info) {
    auto recs = load_container(path);
    std::string cfg_text;
    KvMap meta = split_meta(recs, &cfg_text);
    DitConfig other = DitConfig::from_kv(KvMap::parse_text(cfg_text, "meta/config"));
    if (other.to_kv().serialize() != cfg_.to_kv().serialize())
        throw ConfigError("checkpoint: adapter config does not match this model");
    for (const auto& r : recs) {
        if (r.name.rfind("meta/", 0) == 0) continue;
        if (!is_adapter_param(r.name))
            throw IoError("checkpoint: non-adapter parameter " + r.name +
                          " in adapter checkpoint");
        Tensor& p = param(r.name);
        if (!same_shape(p.shape(), r.shape))
            throw IoError("checkpoint: shape mismatch for " + r.name);
        p.mut_data() = r.data;
    }
    if (info) *info = meta;
}

}  // namespace posegen
