#include "posegen/sampler.hpp"

#include <cmath>
#include <cstring>

#include "posegen/error.hpp"
#include "posegen/ops.hpp"

namespace posegen {

Tensor pack_frame_mask(const std::vector<int32_t>& flags, int64_t s, int64_t h,
                       int64_t w) {
    const int64_t F = int64_t(flags.size());
    if (F < 1 || s < 1 || h < 1 || w < 1)
        throw ConfigError("pack_frame_mask: empty grid");
    if ((F - 1) % s != 0)
        throw ConfigError("pack_frame_mask: " + std::to_string(F) +
                          " frames do not block with stride " + std::to_string(s));
    for (int32_t v : flags)
        if (v != 0 && v != 1) throw ConfigError("pack_frame_mask: flags must be 0/1");

    const int64_t f = (F - 1) / s + 1;
    Tensor out({s, f, h, w});
    auto& od = out.mut_data();
    const int64_t plane = h * w;
    for (int64_t ch = 0; ch < s; ++ch)
        for (int64_t g = 0; g < f; ++g) {
            // the singleton first block repeats its flag across channels
            const int32_t flag = g == 0 ? flags[0] : flags[size_t(1 + (g - 1) * s + ch)];
            float* dst = od.data() + (ch * f + g) * plane;
            std::fill(dst, dst + plane, float(flag));
        }
    return out;
}

std::vector<int32_t> unpack_frame_mask(const Tensor& lm) {
    if (lm.rank() != 4) throw ShapeError("unpack_frame_mask: expected [s,f,h,w]");
    const int64_t s = lm.size(0), f = lm.size(1), h = lm.size(2), w = lm.size(3);
    auto plane_flag = [&](int64_t ch, int64_t g) {
        const float v = lm.at4(ch, g, 0, 0);
        if (v != 0.0f && v != 1.0f)
            throw ShapeError("unpack_frame_mask: non-binary mask value");
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                if (lm.at4(ch, g, y, x) != v)
                    throw ShapeError("unpack_frame_mask: mask not constant per frame");
        return int32_t(v);
    };
    std::vector<int32_t> flags(size_t((f - 1) * s + 1));
    flags[0] = plane_flag(0, 0);
    for (int64_t ch = 1; ch < s; ++ch)
        if (plane_flag(ch, 0) != flags[0])
            throw ShapeError("unpack_frame_mask: first-block channels disagree");
    for (int64_t g = 1; g < f; ++g)
        for (int64_t ch = 0; ch < s; ++ch)
            flags[size_t(1 + (g - 1) * s + ch)] = plane_flag(ch, g);
    return flags;
}

FrameMask build_frame_mask(SegmentRole role, int64_t frames, int64_t s, int64_t h,
                           int64_t w, double retain_ratio) {
    if (frames < 1) throw ConfigError("build_frame_mask: frames must be >= 1");
    FrameMask m;
    m.pixel_flags.assign(size_t(frames), 0);
    if (role == SegmentRole::stitch) {
        if (frames < 4)
            throw ConfigError("build_frame_mask: stitch needs >= 4 frames, got " +
                              std::to_string(frames));
        if (!(retain_ratio > 0.0) || retain_ratio > 0.5)
            throw ConfigError("build_frame_mask: retain ratio must be in (0, 0.5]");
        const int64_t q =
            std::max<int64_t>(1, int64_t(std::floor(double(frames) * retain_ratio)));
        for (int64_t i = 0; i < q; ++i) {
            m.pixel_flags[size_t(i)] = 1;
            m.pixel_flags[size_t(frames - 1 - i)] = 1;
        }
    }
    m.latent_mask = pack_frame_mask(m.pixel_flags, s, h, w);
    return m;
}

std::vector<int64_t> pinned_latent_frames(const std::vector<int32_t>& flags,
                                          int64_t s) {
    const int64_t F = int64_t(flags.size());
    if (F < 1 || (F - 1) % s != 0)
        throw ConfigError("pinned_latent_frames: bad flag count for stride");
    std::vector<int64_t> out;
    if (flags[0] == 1) out.push_back(0);
    const int64_t f = (F - 1) / s + 1;
    for (int64_t g = 1; g < f; ++g) {
        bool all = true;
        for (int64_t ch = 0; ch < s; ++ch) all = all && flags[size_t(1 + (g - 1) * s + ch)] == 1;
        if (all) out.push_back(g);
    }
    return out;
}

Tensor noise(const Tensor& x0, const Tensor& eps, double t) {
    if (!same_shape(x0.shape(), eps.shape()))
        throw ShapeError("noise: shapes differ, " + shape_str(x0.shape()) + " vs " +
                         shape_str(eps.shape()));
    if (t < 0.0 || t > 1.0) throw UsageError("noise: t outside [0,1]");
    if (t == 0.0) return x0.clone();
    if (t == 1.0) return eps.clone();
    Tensor out(x0.shape());
    const float a = float(1.0 - t), b = float(t);
    const auto& xd = x0.data();
    const auto& ed = eps.data();
    auto& od = out.mut_data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = a * xd[i] + b * ed[i];
    return out;
}

void SamplerConfig::validate() const {
    if (steps < 1) throw ConfigError("sampler: steps must be >= 1");
}

namespace {

// Wires the sharing pathway into the block stack for one sampling run.
// Keeps the evolving subject-mask state: the vote is over this timestep's
// binarized maps so far, falling back to the previous timestep's full set,
// and to all-zeros before any cross-attention has run.
class ShareRuntime final : public SharingHooks {
  public:
    ShareRuntime(const SharePlan& plan, int64_t layers, int64_t n_vid,
                 std::vector<int64_t> subject_ids)
        : plan_(plan), layers_(layers), n_vid_(n_vid),
          subject_ids_(std::move(subject_ids)) {}

    void begin_step(int64_t step) { step_ = step; }
    void end_step() {
        previous_ = std::move(current_);
        current_.clear();
    }

    bool shared_for_layer(int64_t layer, SharedLayerInput& sli) override {
        if (!plan_.source || !plan_.gate.gated(layer, step_, layers_)) return false;
        sli.src = &plan_.source->at(layer, step_);
        sli.cur_mask = plan_.gate.force_subject_ones
                           ? std::vector<float>(size_t(n_vid_), 1.0f)
                           : mask_now();
        sli.mode = plan_.gate.mode;
        return true;
    }

    void on_kv(int64_t layer, const Tensor& k, const Tensor& v) override {
        if (plan_.capture && plan_.gate.gated(layer, step_, layers_))
            plan_.capture->put(layer, step_, {k, v, mask_now()});
    }

    void on_subject_map(int64_t, const Tensor& map) override {
        if (!plan_.gate.softmax_first)
            current_.push_back(binarize_by_otsu(map).mask);
    }

    void on_cross_internals(int64_t, const CrossInternals& in) override {
        if (plan_.gate.softmax_first && !subject_ids_.empty())
            current_.push_back(
                binarize_by_otsu(subject_attn_map(in, subject_ids_, true)).mask);
    }

  private:
    std::vector<float> mask_now() const {
        if (!current_.empty()) return layer_mask(current_);
        if (!previous_.empty()) return layer_mask(previous_);
        return std::vector<float>(size_t(n_vid_), 0.0f);
    }

    const SharePlan& plan_;
    int64_t layers_;
    int64_t n_vid_;
    std::vector<int64_t> subject_ids_;
    int64_t step_ = 0;
    std::vector<std::vector<float>> current_;
    std::vector<std::vector<float>> previous_;
};

}  // namespace

Tensor sample(const Model& m, const ConditionBundle& tmpl, const FrameMask& mask,
              const Tensor* preserved, const SamplerConfig& cfg,
              const SharePlan& plan) {
    cfg.validate();
    const DitConfig& mc = m.config();
    const int64_t s = mc.codec.temporal_stride;
    const Shape& zs = tmpl.z_vid.shape();
    if (tmpl.z_vid.rank() != 4)
        throw ConfigError("sample: z_vid template must be [c,f,h,w]");
    const int64_t c = zs[0], f = zs[1], h = zs[2], w = zs[3];
    if (mask.latent_mask.rank() != 4 || mask.latent_mask.size(0) != s ||
        mask.latent_mask.size(1) != f || mask.latent_mask.size(2) != h ||
        mask.latent_mask.size(3) != w)
        throw ConfigError("sample: frame mask grid " +
                          shape_str(mask.latent_mask.shape()) +
                          " does not match the latents " + shape_str(zs));
    if (int64_t(mask.pixel_flags.size()) != (f - 1) * s + 1)
        throw ConfigError("sample: pixel flag count does not match the latent grid");

    bool any_preserved = false;
    for (int32_t v : mask.pixel_flags) any_preserved = any_preserved || v != 0;
    if (any_preserved && !preserved)
        throw UsageError("sample: mask preserves frames but no latents were given");
    if (preserved && !same_shape(preserved->shape(), zs))
        throw ShapeError("sample: preserved latents " + shape_str(preserved->shape()) +
                         " do not match " + shape_str(zs));
    if (plan.capture && plan.source)
        throw UsageError("sample: a run either captures or consumes a cache");
    plan.gate.validate(cfg.steps, mc.layers);
    const bool sharing = (plan.capture || plan.source) && !plan.gate.empty();

    NoGradGuard ng;
    Rng rng(cfg.seed);
    Tensor eps = Tensor::gaussian(zs, rng);
    Tensor z = eps.clone();
    const std::vector<int64_t> pinned = pinned_latent_frames(mask.pixel_flags, s);

    ConditionBundle b = tmpl;
    b.mask_latent = mask.latent_mask;

    ShareRuntime rt(plan, mc.layers, f * (h / 2) * (w / 2), b.subject_ids);
    const int64_t plane = h * w;
    for (int64_t k = 0; k < cfg.steps; ++k) {
        rt.begin_step(k);
        b.z_vid = z;
        const double t = 1.0 - double(k) / double(cfg.steps);
        Tensor v = dit_forward(m, b, t, sharing ? &rt : nullptr);
        z = sub(z, mul_scalar(v, 1.0 / double(cfg.steps)));
        const double t_next = 1.0 - double(k + 1) / double(cfg.steps);
        if (preserved && !pinned.empty()) {
            Tensor pin = noise(*preserved, eps, t_next);
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t g : pinned)
                    std::memcpy(z.mut_data().data() + (ch * f + g) * plane,
                                pin.data().data() + (ch * f + g) * plane,
                                size_t(plane) * sizeof(float));
        }
        rt.end_step();
    }
    return z;
}

}  // namespace posegen
