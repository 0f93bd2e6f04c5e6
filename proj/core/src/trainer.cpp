#include "posegen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "posegen/error.hpp"
#include "posegen/ops.hpp"

namespace posegen {

const char* role_name(SegmentRole role) {
    return role == SegmentRole::base ? "base" : "stitch";
}

SegmentRole role_from_name(const std::string& name) {
    if (name == "base") return SegmentRole::base;
    if (name == "stitch") return SegmentRole::stitch;
    throw ConfigError("unknown role '" + name + "', want base or stitch");
}

void TrainConfig::validate() const {
    if (steps < 0) throw ConfigError("train: steps must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(peak_lr > 0.0)) throw ConfigError("train: peak_lr must be positive");
    if (hand_dropout_p < 0.0 || hand_dropout_p > 1.0)
        throw ConfigError("train: dropout probability outside [0,1]");
    if (!(retain_ratio > 0.0) || retain_ratio > 0.5)
        throw ConfigError("train: retain ratio must be in (0, 0.5]");
}

KvMap TrainConfig::to_kv() const {
    KvMap kv;
    kv.set("role", role_name(role));
    kv.set_i64("steps", steps);
    kv.set_i64("batch_size", batch_size);
    kv.set_f64("peak_lr", peak_lr);
    kv.set_f64("hand_dropout_p", hand_dropout_p);
    kv.set_f64("retain_ratio", retain_ratio);
    kv.set_u64("seed", seed);
    return kv;
}

double lr_at(const TrainConfig& cfg, int64_t step) {
    if (step < 1 || step > cfg.steps)
        throw UsageError("lr_at: step " + std::to_string(step) + " outside [1," +
                         std::to_string(cfg.steps) + "]");
    const int64_t wu = cfg.warmup_steps();
    if (wu > 0 && step <= wu) return cfg.peak_lr * double(step) / double(wu);
    const double prog = double(step - wu) / double(cfg.steps - wu);
    return cfg.peak_lr * 0.5 * (1.0 + std::cos(M_PI * prog));
}

TrainItem encode_item(const Sample& s, const CodecConfig& codec) {
    TrainItem it;
    it.x0 = encode(s.video, codec).z;
    it.z_pose = encode(s.pose, codec).z;
    it.z_pose_body = encode(s.pose_body, codec).z;
    it.z_hand = encode(s.hand, codec).z;
    PixelVideo ref;
    ref.rgb = reshape(s.reference, {3, 1, s.reference.size(1), s.reference.size(2)});
    it.z_img = encode(ref, codec).z;
    it.caption = s.spec.caption_tokens;
    it.subject_ids = s.spec.subject_token_indices;
    return it;
}

void apply_condition_dropout(TrainItem& item, double p, Rng& rng) {
    if (p < 0.0 || p > 1.0) throw ConfigError("condition dropout: p outside [0,1]");
    // both draws always happen so the stream advance is outcome-independent
    if (rng.uniform() < p) item.z_hand = Tensor(item.z_hand.shape());
    if (rng.uniform() < p) item.z_pose = item.z_pose_body;
}

Tensor masked_frame_mse(const Tensor& pred, const Tensor& target,
                        const std::vector<int64_t>& pinned_frames) {
    if (pred.rank() != 4 || !same_shape(pred.shape(), target.shape()))
        throw ShapeError("masked_frame_mse: want matching [c,f,h,w], got " +
                         shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    const int64_t c = pred.size(0), f = pred.size(1);
    const int64_t plane = pred.size(2) * pred.size(3);

    std::vector<int64_t> pinned = pinned_frames;
    std::sort(pinned.begin(), pinned.end());
    pinned.erase(std::unique(pinned.begin(), pinned.end()), pinned.end());

    Tensor weight(pred.shape());
    auto& wd = weight.mut_data();
    std::fill(wd.begin(), wd.end(), 1.0f);
    for (int64_t g : pinned) {
        if (g < 0 || g >= f)
            throw UsageError("masked_frame_mse: pinned frame " + std::to_string(g) +
                             " outside the grid");
        for (int64_t ch = 0; ch < c; ++ch) {
            float* dst = wd.data() + (ch * f + g) * plane;
            std::fill(dst, dst + plane, 0.0f);
        }
    }
    const int64_t counted = pred.numel() - int64_t(pinned.size()) * c * plane;
    if (counted <= 0) throw ConfigError("masked_frame_mse: every position is pinned");

    Tensor diff = sub(pred, target);
    return mul_scalar(sum_all(mul(mul(diff, diff), weight)), 1.0 / double(counted));
}

Tensor training_loss(const Model& m, const TrainItem& item, SegmentRole role,
                     double retain_ratio, Rng& rng) {
    if (item.x0.rank() != 4) throw ShapeError("training_loss: x0 must be [c,f,h,w]");
    const Shape& zs = item.x0.shape();
    const int64_t f = zs[1], h = zs[2], w = zs[3];
    const int64_t s = m.config().codec.temporal_stride;
    const int64_t F = (f - 1) * s + 1;
    FrameMask fm = build_frame_mask(role, F, s, h, w, retain_ratio);

    const double t = rng.uniform();
    Tensor eps = Tensor::gaussian(zs, rng);
    Tensor x_t = noise(item.x0, eps, t);  // preserved positions ride along noised
    Tensor target = sub(eps, item.x0);

    ConditionBundle b = make_bundle(m, x_t, fm.latent_mask, item.z_pose, item.z_hand,
                                    item.z_img, item.caption, item.subject_ids);
    Tensor pred = dit_forward(m, b, t);
    return masked_frame_mse(pred, target, pinned_latent_frames(fm.pixel_flags, s));
}

TrainResult train(Model& m, const std::vector<TrainItem>& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw ConfigError("train: dataset is empty");
    for (const TrainItem& it : data)
        if (it.x0.rank() != 4) throw ShapeError("train: items must be encoded latents");

    m.set_trainable(true);
    const std::vector<std::string> names = m.adapter_names();
    std::map<std::string, std::vector<double>> mom1, mom2;
    for (const auto& n : names) {
        mom1[n].assign(m.param(n).data().size(), 0.0);
        mom2[n].assign(m.param(n).data().size(), 0.0);
    }

    TrainResult res;
    res.curve.reserve(size_t(cfg.steps));
    Rng root(cfg.seed);
    const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;

    for (int64_t step = 1; step <= cfg.steps; ++step) {
        Rng sr = root.split(uint64_t(step));
        for (const auto& n : names) m.param(n).zero_grad();

        Tensor loss;
        for (int64_t bi = 0; bi < cfg.batch_size; ++bi) {
            TrainItem it = data[size_t(sr.uniform_int(int64_t(data.size())))];
            apply_condition_dropout(it, cfg.hand_dropout_p, sr);
            Tensor l = training_loss(m, it, cfg.role, cfg.retain_ratio, sr);
            loss = bi == 0 ? l : add(loss, l);
        }
        if (cfg.batch_size > 1) loss = mul_scalar(loss, 1.0 / double(cfg.batch_size));

        const double lv = double(loss.at(0));
        if (!std::isfinite(lv))
            throw NumericError("train: non-finite loss at step " + std::to_string(step));
        backward(loss);

        const double lr = lr_at(cfg, step);
        const double c1 = 1.0 - std::pow(b1, double(step));
        const double c2 = 1.0 - std::pow(b2, double(step));
        for (const auto& n : names) {
            Tensor& p = m.param(n);
            auto& pd = p.mut_data();
            const auto& g = p.grad();
            auto& am = mom1[n];
            auto& av = mom2[n];
            for (size_t i = 0; i < pd.size(); ++i) {
                const double gi = g.empty() ? 0.0 : double(g[i]);
                am[i] = b1 * am[i] + (1.0 - b1) * gi;
                av[i] = b2 * av[i] + (1.0 - b2) * gi * gi;
                pd[i] = float(double(pd[i]) -
                              lr * (am[i] / c1) / (std::sqrt(av[i] / c2) + adam_eps));
            }
        }
        res.curve.push_back({step, lv, lr});
    }
    for (const auto& n : names) m.param(n).zero_grad();
    return res;
}

void write_loss_csv(const std::filesystem::path& path,
                    const std::vector<LossRecord>& curve) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write loss curve: " + path.string());
    out << "step,loss,lr\n";
    char line[96];
    for (const LossRecord& r : curve) {
        std::snprintf(line, sizeof line, "%lld,%.9g,%.9g\n",
                      static_cast<long long>(r.step), r.loss, r.lr);
        out << line;
    }
    if (!out) throw IoError("short write: " + path.string());
}

}  // namespace posegen
