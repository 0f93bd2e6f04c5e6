#include "posegen/long_video.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <mutex>
#include <thread>

#include "posegen/error.hpp"

namespace posegen {

namespace {

const char* kind_name(SegmentKind k) { return k == SegmentKind::key ? "key" : "stitch"; }

SegmentKind kind_from_name(const std::string& s) {
    if (s == "key") return SegmentKind::key;
    if (s == "stitch") return SegmentKind::stitch;
    throw ConfigError("segment plan: unknown kind '" + s + "'");
}

}  // namespace

SegmentPlan plan_segments(int64_t total, int64_t f_seg, double ratio, uint64_t seed) {
    if (total < 1) throw ConfigError("plan: total_frames must be >= 1");
    if (f_seg < 4) throw ConfigError("plan: segment length must be >= 4");
    if (!(ratio > 0.0) || ratio > 0.5)
        throw ConfigError("plan: retain ratio must be in (0, 0.5]");

    SegmentPlan p;
    p.total_frames = total;
    p.f_seg = f_seg;
    p.retain_ratio = ratio;
    p.seed = seed;
    p.q = int64_t(std::floor(double(f_seg) * ratio));
    Rng root(seed);
    auto seg_seed = [&](int64_t i) { return root.split(uint64_t(i)).key(); };

    if (total <= f_seg) {
        Segment k;
        k.start = 0;
        k.end = total;
        k.shortened = total < f_seg;
        k.seed = seg_seed(0);
        p.segments.push_back(k);
        return p;
    }

    if (p.q < 1) throw ConfigError("plan: this ratio retains no frames for stitching");
    const int64_t stride = 2 * (f_seg - p.q);
    int64_t keys = 2;
    while ((keys - 1) * stride + f_seg < total) ++keys;
    const int64_t last_start = (keys - 1) * stride;
    if (total - last_start < p.q)
        throw ConfigError("plan: " + std::to_string(total) +
                          " frames leave a final key shorter than the overlap q=" +
                          std::to_string(p.q) + "; adjust the length");

    for (int64_t i = 0; i < keys; ++i) {
        Segment k;
        k.start = i * stride;
        k.end = i + 1 == keys ? total : k.start + f_seg;
        k.shortened = k.frames() < f_seg;
        k.seed = seg_seed(int64_t(p.segments.size()));
        p.segments.push_back(k);
        if (i + 1 < keys) {
            Segment s;
            s.kind = SegmentKind::stitch;
            s.start = k.start + f_seg - p.q;
            s.end = (i + 1) * stride + p.q;
            s.seed = seg_seed(int64_t(p.segments.size()));
            p.segments.push_back(s);
        }
    }
    p.validate();
    return p;
}

void SegmentPlan::validate() const {
    if (segments.empty()) throw ConfigError("plan: no segments");
    if (total_frames < 1 || f_seg < 1 || q < 0)
        throw ConfigError("plan: bad frame arithmetic");
    if (source_index < 0 || source_index >= int64_t(segments.size()) ||
        segments[size_t(source_index)].kind != SegmentKind::key)
        throw ConfigError("plan: source segment must be a key");

    for (size_t i = 0; i < segments.size(); ++i) {
        const Segment& s = segments[i];
        const bool want_key = i % 2 == 0;
        if ((s.kind == SegmentKind::key) != want_key)
            throw ConfigError("plan: segments must alternate key/stitch");
        if (s.start < 0 || s.end <= s.start || s.end > total_frames)
            throw ConfigError("plan: segment " + std::to_string(i) + " span invalid");
    }
    if (segments.size() % 2 == 0) throw ConfigError("plan: must end on a key");
    if (segments.front().start != 0) throw ConfigError("plan: must start at frame 0");
    if (segments.back().end != total_frames)
        throw ConfigError("plan: must end at total_frames");

    // stitch overlap and seamless coverage of the gaps between keys
    for (size_t i = 1; i + 1 < segments.size(); i += 2) {
        const Segment& prev = segments[i - 1];
        const Segment& st = segments[i];
        const Segment& next = segments[i + 1];
        if (st.start != prev.end - q || st.end != next.start + q)
            throw ConfigError("plan: stitch " + std::to_string(i) +
                              " does not overlap its keys by q");
        if (st.start + q > st.end - q)
            throw ConfigError("plan: stitch " + std::to_string(i) + " has negative interior");
    }
}

KvMap SegmentPlan::to_kv() const {
    KvMap kv;
    kv.set_i64("total_frames", total_frames);
    kv.set_i64("f_seg", f_seg);
    kv.set_i64("q", q);
    kv.set_f64("retain_ratio", retain_ratio);
    kv.set_i64("source_index", source_index);
    kv.set_u64("seed", seed);
    kv.set_i64("segments", int64_t(segments.size()));
    for (size_t i = 0; i < segments.size(); ++i) {
        const std::string pre = "segment/" + std::to_string(i) + "/";
        kv.set(pre + "kind", kind_name(segments[i].kind));
        kv.set_i64(pre + "start", segments[i].start);
        kv.set_i64(pre + "end", segments[i].end);
        kv.set_u64(pre + "seed", segments[i].seed);
        kv.set_i64(pre + "shortened", segments[i].shortened ? 1 : 0);
    }
    return kv;
}

SegmentPlan SegmentPlan::from_kv(const KvMap& kv) {
    SegmentPlan p;
    p.total_frames = kv.get_i64("total_frames");
    p.f_seg = kv.get_i64("f_seg");
    p.q = kv.get_i64("q");
    p.retain_ratio = kv.get_f64("retain_ratio");
    p.source_index = kv.get_i64("source_index");
    p.seed = kv.get_u64_or("seed", 0);
    const int64_t n = kv.get_i64("segments");
    for (int64_t i = 0; i < n; ++i) {
        const std::string pre = "segment/" + std::to_string(i) + "/";
        Segment s;
        s.kind = kind_from_name(kv.get(pre + "kind"));
        s.start = kv.get_i64(pre + "start");
        s.end = kv.get_i64(pre + "end");
        s.seed = kv.get_u64_or(pre + "seed", 0);
        s.shortened = kv.get_i64(pre + "shortened") != 0;
        p.segments.push_back(s);
    }
    p.validate();
    return p;
}

PixelVideo slice_frames(const PixelVideo& v, int64_t start, int64_t end) {
    if (v.rgb.rank() != 4 || v.rgb.size(0) != 3)
        throw ShapeError("slice_frames: want [3,F,H,W], got " + shape_str(v.rgb.shape()));
    if (start < 0 || end <= start || end > v.frames())
        throw UsageError("slice_frames: span [" + std::to_string(start) + "," +
                         std::to_string(end) + ") outside 0.." +
                         std::to_string(v.frames()));
    const int64_t F = v.frames(), n = end - start;
    const int64_t plane = v.height() * v.width();
    PixelVideo out;
    out.rgb = Tensor({3, n, v.height(), v.width()});
    for (int64_t c = 0; c < 3; ++c)
        std::memcpy(out.rgb.mut_data().data() + c * n * plane,
                    v.rgb.data().data() + (c * F + start) * plane,
                    size_t(n * plane) * sizeof(float));
    return out;
}

int64_t thread_budget() {
    if (const char* e = std::getenv("POSEGEN_THREADS")) {
        char* endp = nullptr;
        const long v = std::strtol(e, &endp, 10);
        if (endp == e || *endp != '\0' || v < 1)
            throw ConfigError("POSEGEN_THREADS must be a positive integer, got '" +
                              std::string(e) + "'");
        return int64_t(v);
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : int64_t(hc);
}

namespace {

// first exception wins; the wave always joins fully
void run_wave(std::vector<std::function<void()>> jobs) {
    if (jobs.empty()) return;
    const int64_t budget = std::min<int64_t>(thread_budget(), int64_t(jobs.size()));
    if (budget <= 1) {
        for (auto& j : jobs) j();
        return;
    }
    std::atomic<size_t> next{0};
    std::mutex mu;
    std::exception_ptr first;
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            try {
                jobs[i]();
            } catch (...) {
                std::lock_guard<std::mutex> lk(mu);
                if (!first) first = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int64_t i = 0; i < budget; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first) std::rethrow_exception(first);
}

// preserved latents for a stitch: verbatim neighbor latents when each pixel
// frame is its own temporal block, otherwise a re-encode of the decoded
// neighbor frames laid out in this segment's blocking
Tensor stitch_preserved(const SegmentPlan& plan, size_t idx, const LongGenResult& res,
                        const CodecConfig& cc, int64_t H, int64_t W) {
    const Segment& sg = plan.segments[idx];
    const Segment& kp = plan.segments[idx - 1];
    const Segment& kn = plan.segments[idx + 1];
    const int64_t q = plan.q, F = sg.frames();

    if (cc.temporal_stride == 1) {
        const Tensor& zp = res.segment_latents[idx - 1];
        const Tensor& zn = res.segment_latents[idx + 1];
        const int64_t c = zp.size(0), h = zp.size(2), w = zp.size(3);
        const int64_t plane = h * w;
        Tensor out({c, F, h, w});
        auto copy_frame = [&](const Tensor& src, int64_t sf, int64_t df) {
            for (int64_t ch = 0; ch < c; ++ch)
                std::memcpy(out.mut_data().data() + (ch * F + df) * plane,
                            src.data().data() + (ch * src.size(1) + sf) * plane,
                            size_t(plane) * sizeof(float));
        };
        for (int64_t j = 0; j < q; ++j) copy_frame(zp, sg.start + j - kp.start, j);
        for (int64_t j = F - q; j < F; ++j) copy_frame(zn, sg.start + j - kn.start, j);
        return out;
    }

    PixelVideo tpl;
    tpl.rgb = Tensor({3, F, H, W});
    const int64_t plane = H * W;
    auto copy_pixels = [&](const PixelVideo& src, int64_t sf, int64_t df) {
        for (int64_t ch = 0; ch < 3; ++ch)
            std::memcpy(tpl.rgb.mut_data().data() + (ch * F + df) * plane,
                        src.rgb.data().data() + (ch * src.frames() + sf) * plane,
                        size_t(plane) * sizeof(float));
    };
    for (int64_t j = 0; j < q; ++j)
        copy_pixels(res.segment_pixels[idx - 1], sg.start + j - kp.start, j);
    for (int64_t j = F - q; j < F; ++j)
        copy_pixels(res.segment_pixels[idx + 1], sg.start + j - kn.start, j);
    return encode(tpl, cc).z;
}

}  // namespace

LongGenResult generate_long(const SegmentPlan& plan, const Sample& scene,
                            const Model& base_model, const Model& stitch_model,
                            const GateConfig& gate, const SamplerConfig& scfg) {
    plan.validate();
    scfg.validate();
    const DitConfig& bc = base_model.config();
    const DitConfig& sc = stitch_model.config();
    if (bc.dim != sc.dim || bc.layers != sc.layers || bc.heads != sc.heads ||
        bc.codec.channels != sc.codec.channels ||
        bc.codec.temporal_stride != sc.codec.temporal_stride ||
        bc.codec.spatial_stride != sc.codec.spatial_stride)
        throw ConfigError("generate_long: base and stitch checkpoints disagree on shape");
    gate.validate(scfg.steps, bc.layers);

    if (scene.pose.frames() < plan.total_frames || scene.hand.frames() < plan.total_frames)
        throw ConfigError("generate_long: scene provides " +
                          std::to_string(scene.pose.frames()) + " frames, plan needs " +
                          std::to_string(plan.total_frames));
    const int64_t H = scene.pose.height(), W = scene.pose.width();
    const CodecConfig& cc = bc.codec;

    NoGradGuard ng;
    PixelVideo refv;
    refv.rgb = reshape(scene.reference, {3, 1, H, W});
    const Tensor z_ref = encode(refv, cc).z;

    LongGenResult res;
    const size_t n = plan.segments.size();
    res.segment_latents.assign(n, Tensor());
    res.segment_pixels.assign(n, PixelVideo());
    const bool sharing = !gate.empty();

    auto gen_segment = [&](size_t idx, SharePlan sp) {
        NoGradGuard worker_ng;  // waves run on fresh threads
        const Segment& sg = plan.segments[idx];
        const Model& mm = sg.kind == SegmentKind::key ? base_model : stitch_model;
        const LatentShape ls = latent_shape(sg.frames(), H, W, cc);

        const Tensor z_pose = encode(slice_frames(scene.pose, sg.start, sg.end), cc).z;
        const Tensor z_hand = encode(slice_frames(scene.hand, sg.start, sg.end), cc).z;
        FrameMask fm = sg.kind == SegmentKind::key
                           ? build_frame_mask(SegmentRole::base, sg.frames(),
                                              cc.temporal_stride, ls.h, ls.w)
                           : build_frame_mask(SegmentRole::stitch, sg.frames(),
                                              cc.temporal_stride, ls.h, ls.w,
                                              plan.retain_ratio);
        ConditionBundle b =
            make_bundle(mm, Tensor({ls.c, ls.f, ls.h, ls.w}), fm.latent_mask, z_pose,
                        z_hand, z_ref, scene.spec.caption_tokens,
                        scene.spec.subject_token_indices);

        Tensor preserved;
        const Tensor* pres = nullptr;
        if (sg.kind == SegmentKind::stitch) {
            preserved = stitch_preserved(plan, idx, res, cc, H, W);
            pres = &preserved;
        }
        SamplerConfig scfg_i = scfg;
        scfg_i.seed = sg.seed;
        res.segment_latents[idx] = sample(mm, b, fm, pres, scfg_i, sp);
        res.segment_pixels[idx] = decode({res.segment_latents[idx]}, cc);
    };

    {
        SharePlan sp;
        if (sharing) {
            sp.capture = &res.cache;
            sp.gate = gate;
        }
        gen_segment(size_t(plan.source_index), sp);
    }
    std::vector<std::function<void()>> wave;
    for (size_t i = 0; i < n; ++i) {
        if (int64_t(i) == plan.source_index || plan.segments[i].kind != SegmentKind::key)
            continue;
        wave.push_back([&, i] {
            SharePlan sp;
            if (sharing) {
                sp.source = &res.cache;
                sp.gate = gate;
            }
            gen_segment(i, sp);
        });
    }
    run_wave(std::move(wave));

    wave.clear();
    for (size_t i = 0; i < n; ++i) {
        if (plan.segments[i].kind != SegmentKind::stitch) continue;
        wave.push_back([&, i] {
            SharePlan sp;
            if (sharing) {
                sp.source = &res.cache;
                sp.gate = gate;
            }
            gen_segment(i, sp);
        });
    }
    run_wave(std::move(wave));

    res.video = assemble(plan, res.segment_pixels);
    return res;
}

PixelVideo assemble(const SegmentPlan& plan, const std::vector<PixelVideo>& pix) {
    plan.validate();
    if (pix.size() != plan.segments.size())
        throw UsageError("assemble: got " + std::to_string(pix.size()) +
                         " segments, plan has " + std::to_string(plan.segments.size()));
    const PixelVideo& first = pix[0];
    if (first.rgb.rank() != 4) throw UsageError("assemble: segment 0 is missing");
    const int64_t H = first.height(), W = first.width(), plane = H * W;

    PixelVideo out;
    out.rgb = Tensor({3, plan.total_frames, H, W});
    std::vector<int32_t> written(size_t(plan.total_frames), 0);

    for (size_t i = 0; i < plan.segments.size(); ++i) {
        const Segment& sg = plan.segments[i];
        const PixelVideo& v = pix[i];
        if (v.rgb.rank() != 4 || v.frames() != sg.frames() || v.height() != H ||
            v.width() != W)
            throw UsageError("assemble: segment " + std::to_string(i) +
                             " does not match its planned span");
        const int64_t lo = sg.kind == SegmentKind::key ? sg.start : sg.start + plan.q;
        const int64_t hi = sg.kind == SegmentKind::key ? sg.end : sg.end - plan.q;
        for (int64_t g = lo; g < hi; ++g) {
            const int64_t local = g - sg.start;
            for (int64_t c = 0; c < 3; ++c)
                std::memcpy(
                    out.rgb.mut_data().data() + (c * plan.total_frames + g) * plane,
                    v.rgb.data().data() + (c * v.frames() + local) * plane,
                    size_t(plane) * sizeof(float));
            ++written[size_t(g)];
        }
    }
    for (int64_t g = 0; g < plan.total_frames; ++g)
        if (written[size_t(g)] != 1)
            throw ConfigError("assemble: frame " + std::to_string(g) + " written " +
                              std::to_string(written[size_t(g)]) + " times");
    return out;
}

}  // namespace posegen
