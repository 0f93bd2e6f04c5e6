#include "posegen/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "posegen/config.hpp"
#include "posegen/error.hpp"
#include "posegen/image_io.hpp"

namespace posegen {
namespace {

constexpr uint64_t kSiblingStream = 0x51B11u;

struct Vec2 {
    float x = 0.0f, y = 0.0f;
};

float dist_to_segment(float px, float py, const std::array<float, 4>& s) {
    float vx = s[2] - s[0], vy = s[3] - s[1];
    float wx = px - s[0], wy = py - s[1];
    float vv = vx * vx + vy * vy;
    float t = vv > 0.0f ? std::clamp((wx * vx + wy * vy) / vv, 0.0f, 1.0f) : 0.0f;
    float dx = wx - t * vx, dy = wy - t * vy;
    return std::sqrt(dx * dx + dy * dy);
}

float clamp_coord(float v, float lo, float hi, bool& clamped) {
    float c = std::clamp(v, lo, hi);
    if (c != v) clamped = true;
    return c;
}

void clamp_joint(std::array<float, 2>& j, float margin, int64_t H, int64_t W,
                 bool& clamped) {
    j[0] = clamp_coord(j[0], margin, float(W - 1) - margin, clamped);
    j[1] = clamp_coord(j[1], margin, float(H - 1) - margin, clamped);
}

// stamp a disc of color `rgb` into frame t of `vid`, optionally recording
// touched pixels in `mask`
void stamp_disc(PixelVideo& vid, Tensor* mask, int64_t t, float cx, float cy,
                float r, const std::array<float, 3>& rgb) {
    int64_t H = vid.height(), W = vid.width();
    int64_t y0 = std::max<int64_t>(0, int64_t(std::floor(cy - r)));
    int64_t y1 = std::min<int64_t>(H - 1, int64_t(std::ceil(cy + r)));
    int64_t x0 = std::max<int64_t>(0, int64_t(std::floor(cx - r)));
    int64_t x1 = std::min<int64_t>(W - 1, int64_t(std::ceil(cx + r)));
    for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x) {
            float dx = float(x) - cx, dy = float(y) - cy;
            if (dx * dx + dy * dy > r * r) continue;
            for (int64_t c = 0; c < 3; ++c) vid.rgb.ref4(c, t, y, x) = rgb[size_t(c)];
            if (mask) mask->ref4(0, t, y, x) = 1.0f;
        }
}

void stamp_segment(PixelVideo& vid, Tensor* mask, int64_t t,
                   const std::array<float, 4>& seg, float r,
                   const std::array<float, 3>& rgb) {
    int64_t H = vid.height(), W = vid.width();
    float xlo = std::min(seg[0], seg[2]) - r, xhi = std::max(seg[0], seg[2]) + r;
    float ylo = std::min(seg[1], seg[3]) - r, yhi = std::max(seg[1], seg[3]) + r;
    int64_t y0 = std::max<int64_t>(0, int64_t(std::floor(ylo)));
    int64_t y1 = std::min<int64_t>(H - 1, int64_t(std::ceil(yhi)));
    int64_t x0 = std::max<int64_t>(0, int64_t(std::floor(xlo)));
    int64_t x1 = std::min<int64_t>(W - 1, int64_t(std::ceil(xhi)));
    for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x) {
            if (dist_to_segment(float(x), float(y), seg) > r) continue;
            for (int64_t c = 0; c < 3; ++c) vid.rgb.ref4(c, t, y, x) = rgb[size_t(c)];
            if (mask) mask->ref4(0, t, y, x) = 1.0f;
        }
}

// one limb color per segment index so pose frames stay unambiguous
const std::array<std::array<float, 3>, 5> kLimbColors{{
    {1.0f, 0.0f, 0.0f},  // legs
    {0.0f, 1.0f, 0.0f},  // torso
    {0.0f, 0.0f, 1.0f},  // neck-head
    {1.0f, 1.0f, 0.0f},  // left arm
    {0.0f, 1.0f, 1.0f},  // right arm
}};

const std::array<std::array<float, 3>, 8> kBodyPalette{{
    {0.85f, 0.20f, 0.20f},
    {0.20f, 0.70f, 0.25f},
    {0.20f, 0.35f, 0.85f},
    {0.90f, 0.55f, 0.15f},
    {0.55f, 0.25f, 0.75f},
    {0.15f, 0.65f, 0.65f},
    {0.80f, 0.25f, 0.70f},
    {0.50f, 0.55f, 0.15f},
}};

const std::array<std::array<float, 3>, 4> kHeadPalette{{
    {0.85f, 0.70f, 0.55f},
    {0.95f, 0.85f, 0.30f},
    {0.75f, 0.75f, 0.78f},
    {0.95f, 0.60f, 0.65f},
}};

struct MotionParams {
    float ax, ay, fx, fy, px, py;
    float lean_amp, lean_f, lean_p;
    float arm_amp_l, arm_f_l, arm_p_l;
    float arm_amp_r, arm_f_r, arm_p_r;
    int64_t motion_class;
};

MotionParams draw_motion(Rng& r, int64_t W, int64_t H) {
    MotionParams m;
    m.ax = float(r.uniform(0.08, 0.16) * double(W));
    m.ay = float(r.uniform(0.02, 0.06) * double(H));
    m.fx = float(1 + r.uniform_int(2));
    m.fy = float(1 + r.uniform_int(2));
    m.px = float(r.uniform(0.0, 6.2831853));
    m.py = float(r.uniform(0.0, 6.2831853));
    m.lean_amp = float(r.uniform(0.05, 0.22));
    m.lean_f = float(1 + r.uniform_int(2));
    m.lean_p = float(r.uniform(0.0, 6.2831853));
    m.arm_amp_l = float(r.uniform(0.25, 0.75));
    m.arm_f_l = float(1 + r.uniform_int(3));
    m.arm_p_l = float(r.uniform(0.0, 6.2831853));
    m.arm_amp_r = float(r.uniform(0.25, 0.75));
    m.arm_f_r = float(1 + r.uniform_int(3));
    m.arm_p_r = float(r.uniform(0.0, 6.2831853));
    m.motion_class = r.uniform_int(4);
    return m;
}

std::vector<MotionFrame> roll_motion(const MotionParams& m, int64_t F) {
    std::vector<MotionFrame> out(static_cast<size_t>(F));
    for (int64_t t = 0; t < F; ++t) {
        float u = 6.2831853f * float(t) / float(F);
        MotionFrame& fr = out[size_t(t)];
        fr.tx = m.ax * std::sin(m.fx * u + m.px);
        fr.ty = m.ay * std::sin(m.fy * u + m.py);
        fr.torso_angle = m.lean_amp * std::sin(m.lean_f * u + m.lean_p);
        fr.arm_l = m.arm_amp_l * std::sin(m.arm_f_l * u + m.arm_p_l);
        fr.arm_r = m.arm_amp_r * std::sin(m.arm_f_r * u + m.arm_p_r);
    }
    return out;
}

void render_subject_frame(const SceneSpec& spec, const SkeletonFrame& sk,
                          PixelVideo& vid, Tensor* mask, int64_t t) {
    float r = subject_stroke_radius(spec);
    auto segs = skeleton_segments(sk);
    for (const auto& s : segs) stamp_segment(vid, mask, t, s, r, spec.appearance.body_rgb);
    float head_r = spec.appearance.head_radius * float(std::min(spec.height, spec.width));
    stamp_disc(vid, mask, t, sk.head[0], sk.head[1], head_r, spec.appearance.head_rgb);
}

void render_pose_frame(const SceneSpec& spec, const SkeletonFrame& sk,
                       PixelVideo& vid, int64_t t, bool with_hands) {
    auto segs = skeleton_segments(sk);
    for (size_t i = 0; i < segs.size(); ++i)
        stamp_segment(vid, nullptr, t, segs[i], kPoseStrokeRadius, kLimbColors[i]);
    if (!with_hands) return;
    const std::array<float, 3> white{1.0f, 1.0f, 1.0f};
    stamp_disc(vid, nullptr, t, sk.hand_l[0], sk.hand_l[1], kHandMarkerRadius, white);
    stamp_disc(vid, nullptr, t, sk.hand_r[0], sk.hand_r[1], kHandMarkerRadius, white);
}

void render_hand_patch(PixelVideo& vid, int64_t t, const std::array<float, 2>& pos,
                       float angle) {
    int64_t H = vid.height(), W = vid.width();
    int64_t cx = int64_t(std::lround(pos[0])), cy = int64_t(std::lround(pos[1]));
    float dirx = std::sin(angle), diry = std::cos(angle);
    float red = 0.5f + 0.5f * std::sin(angle);
    float green = 0.5f + 0.5f * std::cos(angle);
    for (int64_t dy = -kHandPatchHalf; dy <= kHandPatchHalf; ++dy)
        for (int64_t dx = -kHandPatchHalf; dx <= kHandPatchHalf; ++dx) {
            int64_t x = cx + dx, y = cy + dy;
            if (x < 0 || x >= W || y < 0 || y >= H) continue;
            float along = float(dx) * dirx + float(dy) * diry;
            float grad = std::clamp(0.5f + along / (2.0f * float(kHandPatchHalf)),
                                    0.0f, 1.0f);
            vid.rgb.ref4(0, t, y, x) = red;
            vid.rgb.ref4(1, t, y, x) = green;
            vid.rgb.ref4(2, t, y, x) = grad;
        }
}

PixelVideo black_video(int64_t F, int64_t H, int64_t W) {
    return PixelVideo{Tensor({3, F, H, W})};
}

// mask frames live under masks/, every other stream under its own name
std::string stream_dir(const char* stem) {
    return std::string(stem) == "mask" ? "masks" : stem;
}

std::string frame_name(const char* stem, int64_t t) {
    char buf[80];
    std::snprintf(buf, sizeof buf, "%s/frame_%04lld.ppm", stream_dir(stem).c_str(),
                  (long long)t);
    return buf;
}

}  // namespace

float subject_stroke_radius(const SceneSpec& spec) {
    float s = float(std::min(spec.height, spec.width));
    return std::max(1.6f, 0.036f * s);
}

SkeletonFrame skeleton_at(const SceneSpec& spec, int64_t frame) {
    if (frame < 0 || frame >= spec.frames)
        throw UsageError("skeleton_at: frame out of range");
    const MotionFrame& m = spec.motion.at(size_t(frame));
    float s = float(std::min(spec.height, spec.width));
    float cx = 0.5f * float(spec.width) + m.tx;
    float cy = 0.56f * float(spec.height) + m.ty;
    float upx = std::sin(m.torso_angle), upy = -std::cos(m.torso_angle);

    const Appearance& ap = spec.appearance;
    SkeletonFrame sk;
    sk.pelvis = {cx, cy};
    sk.neck = {cx + ap.torso_len * s * upx, cy + ap.torso_len * s * upy};
    sk.base = {cx - ap.leg_len * s * upx, cy - ap.leg_len * s * upy};
    float head_off = ap.head_radius * s * 1.7f;
    sk.head = {sk.neck[0] + head_off * upx, sk.neck[1] + head_off * upy};

    // arm angles measured from straight-down, rest pose at +-pi/3
    float rest = 1.0471976f;
    sk.hand_angle_l = m.torso_angle - rest - m.arm_l;
    sk.hand_angle_r = m.torso_angle + rest + m.arm_r;
    float al = ap.arm_len * s;
    sk.hand_l = {sk.neck[0] + al * std::sin(sk.hand_angle_l),
                 sk.neck[1] + al * std::cos(sk.hand_angle_l)};
    sk.hand_r = {sk.neck[0] + al * std::sin(sk.hand_angle_r),
                 sk.neck[1] + al * std::cos(sk.hand_angle_r)};

    float margin = subject_stroke_radius(spec) + 1.0f;
    clamp_joint(sk.base, margin, spec.height, spec.width, sk.clamped);
    clamp_joint(sk.pelvis, margin, spec.height, spec.width, sk.clamped);
    clamp_joint(sk.neck, margin, spec.height, spec.width, sk.clamped);
    clamp_joint(sk.hand_l, margin, spec.height, spec.width, sk.clamped);
    clamp_joint(sk.hand_r, margin, spec.height, spec.width, sk.clamped);
    float head_margin = ap.head_radius * s + 1.0f;
    clamp_joint(sk.head, head_margin, spec.height, spec.width, sk.clamped);
    return sk;
}

std::vector<std::array<float, 4>> skeleton_segments(const SkeletonFrame& sk) {
    return {
        {sk.base[0], sk.base[1], sk.pelvis[0], sk.pelvis[1]},
        {sk.pelvis[0], sk.pelvis[1], sk.neck[0], sk.neck[1]},
        {sk.neck[0], sk.neck[1], sk.head[0], sk.head[1]},
        {sk.neck[0], sk.neck[1], sk.hand_l[0], sk.hand_l[1]},
        {sk.neck[0], sk.neck[1], sk.hand_r[0], sk.hand_r[1]},
    };
}

Tensor render_background(uint64_t background_id, int64_t H, int64_t W) {
    Rng r = Rng(0xB6u).split(background_id);
    Tensor bg({3, 1, H, W});
    float s = float(std::min(H, W));
    for (int64_t c = 0; c < 3; ++c) {
        float f1x = float(1 + r.uniform_int(4)), f1y = float(1 + r.uniform_int(4));
        float f2x = float(1 + r.uniform_int(6)), f2y = float(1 + r.uniform_int(6));
        float p1 = float(r.uniform(0.0, 6.2831853));
        float p2 = float(r.uniform(0.0, 6.2831853));
        float base = float(r.uniform(0.35, 0.65));
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                float u = 6.2831853f / s;
                float v = base +
                          0.20f * std::sin(u * (f1x * float(x) + f1y * float(y)) + p1) +
                          0.14f * std::sin(u * (f2x * float(x) - f2y * float(y)) + p2);
                bg.ref4(c, 0, y, x) = std::clamp(v, 0.02f, 0.98f);
            }
    }
    return bg;
}

SceneSpec random_scene_spec(uint64_t seed, int64_t F, int64_t H, int64_t W) {
    if (F < 1 || H < 16 || W < 16)
        throw ConfigError("random_scene_spec: need F >= 1 and H, W >= 16");
    SceneSpec spec;
    spec.seed = seed;
    spec.frames = F;
    spec.height = H;
    spec.width = W;

    Rng r(seed);
    int64_t body_idx = r.uniform_int(int64_t(kBodyPalette.size()));
    int64_t head_idx = r.uniform_int(int64_t(kHeadPalette.size()));
    spec.appearance.body_rgb = kBodyPalette[size_t(body_idx)];
    spec.appearance.head_rgb = kHeadPalette[size_t(head_idx)];
    spec.background_id = r.next_u64();

    MotionParams mp = draw_motion(r, W, H);
    spec.motion = roll_motion(mp, F);

    // 8 tokens from a 32-word vocab; index 2 names the subject
    spec.caption_tokens = {2 + body_idx,
                           10 + head_idx,
                           14,
                           15 + mp.motion_class,
                           19 + int64_t(spec.background_id % 8u),
                           27,
                           28,
                           29};
    spec.subject_token_indices = {2};
    return spec;
}

Sample generate_scene(const SceneSpec& spec) {
    if (int64_t(spec.motion.size()) != spec.frames)
        throw ConfigError("generate_scene: motion length must equal frame count");
    int64_t F = spec.frames, H = spec.height, W = spec.width;

    Sample s;
    s.spec = spec;
    s.video = black_video(F, H, W);
    s.pose = black_video(F, H, W);
    s.pose_body = black_video(F, H, W);
    s.hand = black_video(F, H, W);
    s.gt_subject_mask = Tensor({1, F, H, W});

    Tensor bg = render_background(spec.background_id, H, W);
    for (int64_t t = 0; t < F; ++t)
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x)
                    s.video.rgb.ref4(c, t, y, x) = bg.at4(c, 0, y, x);

    s.skeleton.reserve(size_t(F));
    for (int64_t t = 0; t < F; ++t) {
        SkeletonFrame sk = skeleton_at(spec, t);
        s.clamped = s.clamped || sk.clamped;
        render_subject_frame(spec, sk, s.video, &s.gt_subject_mask, t);
        render_pose_frame(spec, sk, s.pose, t, true);
        render_pose_frame(spec, sk, s.pose_body, t, false);
        render_hand_patch(s.hand, t, sk.hand_l, sk.hand_angle_l);
        render_hand_patch(s.hand, t, sk.hand_r, sk.hand_angle_r);
        s.skeleton.push_back(sk);
    }

    // reference: same appearance and background, independent motion
    SceneSpec sib = spec;
    sib.frames = 1;
    Rng sr = Rng(spec.seed).split(kSiblingStream);
    MotionParams mp = draw_motion(sr, W, H);
    sib.motion = roll_motion(mp, 1);
    PixelVideo ref_vid = black_video(1, H, W);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                ref_vid.rgb.ref4(c, 0, y, x) = bg.at4(c, 0, y, x);
    SkeletonFrame rsk = skeleton_at(sib, 0);
    render_subject_frame(sib, rsk, ref_vid, nullptr, 0);
    s.reference = Tensor({3, H, W});
    std::copy(ref_vid.rgb.data().begin(), ref_vid.rgb.data().end(),
              s.reference.mut_data().begin());

    // squeeze mask to [F,H,W]
    Tensor mask({F, H, W});
    std::copy(s.gt_subject_mask.data().begin(), s.gt_subject_mask.data().end(),
              mask.mut_data().begin());
    s.gt_subject_mask = mask;
    return s;
}

std::vector<SceneSpec> dataset_specs(int64_t n, int64_t F, int64_t H, int64_t W,
                                     uint64_t seed) {
    if (n < 1) throw ConfigError("dataset_specs: need n >= 1");
    Rng root(seed);
    std::vector<SceneSpec> specs;
    specs.reserve(size_t(n));
    for (int64_t i = 0; i < n; ++i)
        specs.push_back(random_scene_spec(root.split(uint64_t(i)).key(), F, H, W));
    return specs;
}

void split_dataset(const std::vector<Sample>& all, std::vector<const Sample*>& train,
                   std::vector<const Sample*>& val) {
    train.clear();
    val.clear();
    for (size_t i = 0; i < all.size(); ++i)
        (i % 2 == 0 ? train : val).push_back(&all[i]);
}

void export_scene(const std::filesystem::path& dir, const Sample& s) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("export_scene: cannot create " + dir.string());

    int64_t F = s.spec.frames, H = s.spec.height, W = s.spec.width;
    for (const char* stem : {"video", "pose", "pose_body", "hand", "mask"}) {
        std::filesystem::create_directories(dir / stream_dir(stem), ec);
        if (ec) throw IoError("export_scene: cannot create " + dir.string());
    }
    auto write_stream = [&](const char* stem, const PixelVideo& v) {
        for (int64_t t = 0; t < F; ++t) {
            Tensor frame({3, H, W});
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t y = 0; y < H; ++y)
                    for (int64_t x = 0; x < W; ++x)
                        frame.mut_data()[size_t((c * H + y) * W + x)] =
                            v.rgb.at4(c, t, y, x);
            write_ppm(dir / frame_name(stem, t), frame);
        }
    };
    write_stream("video", s.video);
    write_stream("pose", s.pose);
    write_stream("pose_body", s.pose_body);
    write_stream("hand", s.hand);
    for (int64_t t = 0; t < F; ++t) {
        Tensor frame({3, H, W});
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x)
                    frame.mut_data()[size_t((c * H + y) * W + x)] =
                        s.gt_subject_mask.data()[size_t((t * H + y) * W + x)];
        write_ppm(dir / frame_name("mask", t), frame);
    }
    write_ppm(dir / "reference.ppm", s.reference);

    KvMap meta;
    meta.set("frames", std::to_string(F));
    meta.set("height", std::to_string(H));
    meta.set("width", std::to_string(W));
    meta.set("seed", std::to_string(s.spec.seed));
    meta.set("background_id", std::to_string(s.spec.background_id));
    meta.set("clamped", s.clamped ? "1" : "0");
    std::string cap, subj;
    for (size_t i = 0; i < s.spec.caption_tokens.size(); ++i)
        cap += (i ? "," : "") + std::to_string(s.spec.caption_tokens[i]);
    for (size_t i = 0; i < s.spec.subject_token_indices.size(); ++i)
        subj += (i ? "," : "") + std::to_string(s.spec.subject_token_indices[i]);
    meta.set("caption_tokens", cap);
    meta.set("subject_token_indices", subj);
    meta.write_file(dir / "meta.txt");
}

namespace {
std::vector<int64_t> parse_int_list(const std::string& s) {
    std::vector<int64_t> out;
    size_t pos = 0;
    while (pos < s.size()) {
        size_t comma = s.find(',', pos);
        if (comma == std::string::npos) comma = s.size();
        out.push_back(std::stoll(s.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return out;
}
}  // namespace

Sample load_scene(const std::filesystem::path& dir) {
    KvMap meta = KvMap::parse_file(dir / "meta.txt");
    int64_t F = meta.get_i64("frames");
    int64_t H = meta.get_i64("height");
    int64_t W = meta.get_i64("width");

    Sample s;
    s.spec.seed = meta.get_u64_or("seed", 0);
    s.spec.frames = F;
    s.spec.height = H;
    s.spec.width = W;
    s.spec.background_id = meta.get_u64_or("background_id", 0);
    s.spec.caption_tokens = parse_int_list(meta.get("caption_tokens"));
    s.spec.subject_token_indices = parse_int_list(meta.get("subject_token_indices"));
    s.clamped = meta.get_or("clamped", "0") == "1";

    auto read_stream = [&](const char* stem) {
        PixelVideo v = black_video(F, H, W);
        for (int64_t t = 0; t < F; ++t) {
            Tensor frame = read_ppm(dir / frame_name(stem, t));
            if (frame.size(1) != H || frame.size(2) != W)
                throw IoError("load_scene: frame size mismatch in " + dir.string());
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t y = 0; y < H; ++y)
                    for (int64_t x = 0; x < W; ++x)
                        v.rgb.ref4(c, t, y, x) =
                            frame.data()[size_t((c * H + y) * W + x)];
        }
        return v;
    };
    s.video = read_stream("video");
    s.pose = read_stream("pose");
    s.pose_body = read_stream("pose_body");
    s.hand = read_stream("hand");
    PixelVideo mask_v = read_stream("mask");
    s.gt_subject_mask = Tensor({F, H, W});
    for (int64_t t = 0; t < F; ++t)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                s.gt_subject_mask.mut_data()[size_t((t * H + y) * W + x)] =
                    mask_v.rgb.at4(0, t, y, x) > 0.5f ? 1.0f : 0.0f;
    s.reference = read_ppm(dir / "reference.ppm");
    return s;
}

}  // namespace posegen
