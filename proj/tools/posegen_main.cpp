#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "posegen/codec.hpp"
#include "posegen/config.hpp"
#include "posegen/dit.hpp"
#include "posegen/error.hpp"
#include "posegen/image_io.hpp"
#include "posegen/kv_share.hpp"
#include "posegen/long_video.hpp"
#include "posegen/metrics.hpp"
#include "posegen/ops.hpp"
#include "posegen/sampler.hpp"
#include "posegen/synth.hpp"
#include "posegen/tensor.hpp"
#include "posegen/trainer.hpp"

namespace fs = std::filesystem;
using namespace posegen;

namespace {

int usage() {
    std::fprintf(stderr,
                 "usage: posegen <command> [--config FILE] [--key value ...]\n"
                 "\n"
                 "commands:\n"
                 "  gen-data  --out DIR [--scenes N --frames F --size HxW --seed S]\n"
                 "  train     --role base|stitch --data DIR --out DIR\n"
                 "            [--steps N --batch-size B --peak-lr LR --seed S\n"
                 "             --layers L --dim D --heads H --lora-rank R ...]\n"
                 "  generate  --poses SCENE --length N --base CKPT --stitch CKPT --out DIR\n"
                 "            [--ref SCENE --f-seg F --gate KT,KL --steps N --seed S]\n"
                 "  eval      --run DIR\n"
                 "  inspect   --cache FILE [--layer L --timestep T --grid GxHxW --out FILE]\n"
                 "\n"
                 "flags override values from --config; every run writes its resolved\n"
                 "config next to its outputs. POSEGEN_THREADS caps worker parallelism.\n");
    return 4;
}

KvMap parse_flags(int argc, char** argv) {
    KvMap file_cfg, flags;
    for (int i = 2; i < argc; i += 2) {
        std::string key = argv[i];
        if (key.rfind("--", 0) != 0) throw UsageError("expected --flag, got " + key);
        if (i + 1 >= argc) throw UsageError("flag " + key + " needs a value");
        key = key.substr(2);
        std::replace(key.begin(), key.end(), '-', '_');
        if (key == "config")
            file_cfg = KvMap::parse_file(argv[i + 1]);
        else
            flags.set(key, argv[i + 1]);
    }
    for (const auto& [k, v] : flags.items()) file_cfg.set(k, v);
    return file_cfg;
}

// defaults fill, flags override, anything else is a typo
KvMap resolve(const KvMap& given, const std::map<std::string, std::string>& defaults,
              const std::set<std::string>& required) {
    std::set<std::string> allowed(required);
    for (const auto& [k, v] : defaults) allowed.insert(k);
    given.require_known(allowed);
    KvMap out;
    for (const auto& [k, v] : defaults) out.set(k, v);
    for (const auto& [k, v] : given.items()) out.set(k, v);
    for (const auto& k : required)
        if (!out.has(k)) throw ConfigError("missing required flag --" + k);
    return out;
}

void write_resolved(const fs::path& dir, const std::string& command, const KvMap& cfg) {
    std::ofstream out(dir / "config.txt", std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + (dir / "config.txt").string());
    out << "# posegen " << command << "\n" << cfg.serialize();
    if (!out) throw IoError("write failed: " + (dir / "config.txt").string());
}

std::string seq_name(const char* prefix, int width, int64_t i, const char* suffix) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s%0*lld%s", prefix, width, (long long)i, suffix);
    return buf;
}

void parse_size(const std::string& s, int64_t* H, int64_t* W) {
    size_t x = s.find('x');
    bool ok = x != std::string::npos && x > 0 && x + 1 < s.size();
    if (ok) {
        try {
            size_t p1 = 0, p2 = 0;
            *H = std::stoll(s.substr(0, x), &p1);
            *W = std::stoll(s.substr(x + 1), &p2);
            ok = p1 == x && p2 == s.size() - x - 1;
        } catch (const std::exception&) {
            ok = false;
        }
    }
    if (!ok) throw ConfigError("size must be HxW, got '" + s + "'");
}

GateConfig parse_gate(const std::string& s, int64_t steps, int64_t layers) {
    if (s == "default") return GateConfig::defaults(steps, layers);
    GateConfig g;
    size_t c = s.find(',');
    bool ok = c != std::string::npos && c > 0 && c + 1 < s.size();
    if (ok) {
        try {
            size_t p1 = 0, p2 = 0;
            g.shared_timesteps = std::stoll(s.substr(0, c), &p1);
            g.shared_layers = std::stoll(s.substr(c + 1), &p2);
            ok = p1 == c && p2 == s.size() - c - 1;
        } catch (const std::exception&) {
            ok = false;
        }
    }
    if (!ok) throw ConfigError("gate must be KT,KL or 'default', got '" + s + "'");
    g.validate(steps, layers);
    return g;
}

std::vector<fs::path> scene_dirs(const fs::path& data) {
    if (!fs::is_directory(data)) throw IoError("not a directory: " + data.string());
    std::vector<fs::path> dirs;
    for (const auto& ent : fs::directory_iterator(data))
        if (ent.is_directory() && ent.path().filename().string().rfind("scene_", 0) == 0)
            dirs.push_back(ent.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw ConfigError("no scene_* directories under " + data.string());
    return dirs;
}

void check_role(const KvMap& info, const std::string& want, const std::string& path) {
    const std::string got = info.get_or("role", "<none>");
    if (got != want)
        throw ConfigError("checkpoint " + path + " has role '" + got + "', need '" +
                          want + "'");
}

// gt subject mask frames are contiguous, [F,H,W]
Tensor mask_slice(const Tensor& gt, int64_t start, int64_t end) {
    const int64_t H = gt.size(1), W = gt.size(2), plane = H * W;
    Tensor out({end - start, H, W});
    std::copy_n(gt.data().begin() + size_t(start * plane), size_t((end - start) * plane),
                out.mut_data().begin());
    return out;
}

Tensor frame_slice(const PixelVideo& v, int64_t f) {
    return reshape(slice_frames(v, f, f + 1).rgb, {3, v.height(), v.width()});
}

void write_segment_tree(const fs::path& dir, const PixelVideo& v) {
    fs::create_directories(dir);
    for (int64_t j = 0; j < v.frames(); ++j)
        write_ppm(dir / seq_name("frame_", 3, j, ".ppm"), frame_slice(v, j));
}

PixelVideo read_segment_tree(const fs::path& dir, int64_t frames) {
    PixelVideo v;
    for (int64_t j = 0; j < frames; ++j) {
        Tensor img = read_ppm(dir / seq_name("frame_", 3, j, ".ppm"));
        const int64_t plane = img.size(1) * img.size(2);
        if (j == 0) v.rgb = Tensor({3, frames, img.size(1), img.size(2)});
        for (int64_t c = 0; c < 3; ++c)
            std::copy_n(img.data().begin() + size_t(c * plane), size_t(plane),
                        v.rgb.mut_data().begin() + size_t((c * frames + j) * plane));
    }
    return v;
}

void write_token_mask(const fs::path& p, const std::vector<float>& m) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + p.string());
    for (size_t i = 0; i < m.size(); ++i)
        out << (i ? " " : "") << (m[i] != 0.0f ? 1 : 0);
    out << "\n";
    if (!out) throw IoError("write failed: " + p.string());
}

std::vector<float> read_token_mask(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open: " + p.string());
    std::vector<float> m;
    int v = 0;
    while (in >> v) {
        if (v != 0 && v != 1) throw IoError("token mask entries must be 0/1: " + p.string());
        m.push_back(float(v));
    }
    if (m.empty()) throw IoError("empty token mask: " + p.string());
    return m;
}

// one clean forward at t=0 over the finished latent, conditioned exactly
// like the segment's generation pass
std::vector<float> segment_pred_tokens(const Model& mm, const SegmentPlan& plan,
                                       size_t idx, const Sample& scene,
                                       const Tensor& z_ref, const Tensor& latent) {
    NoGradGuard ng;
    const Segment& sg = plan.segments[idx];
    const CodecConfig& cc = mm.config().codec;
    const LatentShape ls =
        latent_shape(sg.frames(), scene.pose.height(), scene.pose.width(), cc);
    const Tensor z_pose = encode(slice_frames(scene.pose, sg.start, sg.end), cc).z;
    const Tensor z_hand = encode(slice_frames(scene.hand, sg.start, sg.end), cc).z;
    FrameMask fm = sg.kind == SegmentKind::key
                       ? build_frame_mask(SegmentRole::base, sg.frames(),
                                          cc.temporal_stride, ls.h, ls.w)
                       : build_frame_mask(SegmentRole::stitch, sg.frames(),
                                          cc.temporal_stride, ls.h, ls.w,
                                          plan.retain_ratio);
    ConditionBundle b =
        make_bundle(mm, latent, fm.latent_mask, z_pose, z_hand, z_ref,
                    scene.spec.caption_tokens, scene.spec.subject_token_indices);
    return predicted_subject_tokens(mm, b);
}

// shared by generate and eval so a fresh eval reproduces the run's own csv
std::vector<SegmentMetrics> compute_metrics(const SegmentPlan& plan, const Sample& scene,
                                            const CodecConfig& cc,
                                            const std::vector<PixelVideo>& segs,
                                            const std::vector<std::vector<float>>& preds,
                                            int64_t cache_bytes,
                                            const std::string& glabel) {
    const int64_t H = scene.pose.height(), W = scene.pose.width();
    const Segment& src = plan.segments[size_t(plan.source_index)];
    const Tensor src_frame = frame_slice(segs[size_t(plan.source_index)], 0);
    const Tensor src_mask =
        reshape(mask_slice(scene.gt_subject_mask, src.start, src.start + 1), {H, W});
    std::vector<SegmentMetrics> rows;
    for (size_t i = 0; i < plan.segments.size(); ++i) {
        const Segment& sg = plan.segments[i];
        const Tensor seg_mask = mask_slice(scene.gt_subject_mask, sg.start, sg.end);
        SegmentMetrics r;
        r.segment = int64_t(i);
        r.kind = sg.kind == SegmentKind::key ? "key" : "stitch";
        r.bg_mse_vs_source = background_mse(segs[i], seg_mask, src_frame, src_mask);
        r.mask_iou = mask_iou(preds[i], token_grid_gt(seg_mask, cc));
        r.cache_bytes = cache_bytes;
        r.gate = glabel;
        rows.push_back(r);
    }
    return rows;
}

void cmd_gen_data(const KvMap& given) {
    KvMap cfg = resolve(given,
                        {{"scenes", "8"}, {"frames", "17"}, {"size", "64x64"}, {"seed", "0"}},
                        {"out"});
    int64_t H = 0, W = 0;
    parse_size(cfg.get("size"), &H, &W);
    const int64_t n = cfg.get_i64("scenes");
    if (n < 1) throw ConfigError("gen-data: scenes must be >= 1, got " + std::to_string(n));
    const fs::path out = cfg.get("out");
    std::vector<SceneSpec> specs =
        dataset_specs(n, cfg.get_i64("frames"), H, W, cfg.get_u64_or("seed", 0));
    fs::create_directories(out);
    for (int64_t i = 0; i < n; ++i)
        export_scene(out / seq_name("scene_", 3, i, ""), generate_scene(specs[size_t(i)]));
    write_resolved(out, "gen-data", cfg);
    std::printf("wrote %lld scenes under %s\n", (long long)n, out.string().c_str());
}

void cmd_train(const KvMap& given) {
    KvMap cfg = resolve(
        given,
        {{"steps", "200"},
         {"batch_size", "1"},
         {"peak_lr", "0.001"},
         {"hand_dropout_p", "0.1"},
         {"retain_ratio", "0.25"},
         {"seed", "0"},
         {"layers", "4"},
         {"dim", "32"},
         {"heads", "4"},
         {"ffn_mult", "4"},
         {"lora_rank", "4"},
         {"lora_alpha", "4"},
         {"channels", "8"},
         {"temporal_stride", "4"},
         {"spatial_stride", "8"},
         {"model_seed", "3351"},
         {"literal_concat", "0"},
         {"ref_shift_time", "0"}},
        {"role", "data", "out"});

    DitConfig dc;
    dc.layers = cfg.get_i64("layers");
    dc.dim = cfg.get_i64("dim");
    dc.heads = cfg.get_i64("heads");
    dc.ffn_mult = cfg.get_i64("ffn_mult");
    dc.lora_rank = cfg.get_i64("lora_rank");
    dc.lora_alpha = float(cfg.get_f64("lora_alpha"));
    dc.literal_concat = cfg.get_i64("literal_concat") != 0;
    dc.ref_shift_time = cfg.get_i64("ref_shift_time") != 0;
    dc.codec.channels = cfg.get_i64("channels");
    dc.codec.temporal_stride = cfg.get_i64("temporal_stride");
    dc.codec.spatial_stride = cfg.get_i64("spatial_stride");
    dc.seed = cfg.get_u64_or("model_seed", 0xD17);

    TrainConfig tc;
    tc.role = role_from_name(cfg.get("role"));
    tc.steps = cfg.get_i64("steps");
    tc.batch_size = cfg.get_i64("batch_size");
    tc.peak_lr = cfg.get_f64("peak_lr");
    tc.hand_dropout_p = cfg.get_f64("hand_dropout_p");
    tc.retain_ratio = cfg.get_f64("retain_ratio");
    tc.seed = cfg.get_u64_or("seed", 0);

    std::vector<TrainItem> items;
    for (const fs::path& d : scene_dirs(cfg.get("data")))
        items.push_back(encode_item(load_scene(d), dc.codec));

    Model m(dc);
    TrainResult res = train(m, items, tc);

    const fs::path out = cfg.get("out");
    fs::create_directories(out);
    KvMap info = tc.to_kv();
    info.set("data", cfg.get("data"));
    m.save_adapters(out / "adapters.pgck", info);
    write_loss_csv(out / "loss.csv", res.curve);
    write_resolved(out, "train", cfg);
    std::printf("trained %s adapters on %zu scenes for %lld steps, final loss %.6g\n",
                cfg.get("role").c_str(), items.size(), (long long)tc.steps,
                res.curve.empty() ? 0.0 : res.curve.back().loss);
}

void cmd_generate(const KvMap& given) {
    KvMap cfg = resolve(given,
                        {{"ref", ""},
                         {"f_seg", "16"},
                         {"retain_ratio", "0.25"},
                         {"gate", "default"},
                         {"steps", "8"},
                         {"seed", "0"}},
                        {"poses", "length", "base", "stitch", "out"});

    KvMap base_info, stitch_info;
    Model base_model = load_adapter_model(cfg.get("base"), &base_info);
    Model stitch_model = load_adapter_model(cfg.get("stitch"), &stitch_info);
    check_role(base_info, "base", cfg.get("base"));
    check_role(stitch_info, "stitch", cfg.get("stitch"));

    Sample scene = load_scene(cfg.get("poses"));
    const std::string ref = cfg.get("ref");
    if (!ref.empty() && ref != cfg.get("poses")) {
        Sample ref_scene = load_scene(ref);
        if (ref_scene.reference.shape() != scene.reference.shape())
            throw ConfigError("generate: reference image size differs from pose scene");
        scene.reference = ref_scene.reference;
    }

    SegmentPlan plan =
        plan_segments(cfg.get_i64("length"), cfg.get_i64("f_seg"),
                      cfg.get_f64("retain_ratio"), cfg.get_u64_or("seed", 0));
    SamplerConfig scfg;
    scfg.steps = cfg.get_i64("steps");
    const GateConfig gate =
        parse_gate(cfg.get("gate"), scfg.steps, base_model.config().layers);

    LongGenResult res = generate_long(plan, scene, base_model, stitch_model, gate, scfg);

    const fs::path out = cfg.get("out");
    fs::create_directories(out / "frames");
    fs::create_directories(out / "masks");
    for (int64_t g = 0; g < res.video.frames(); ++g)
        write_ppm(out / "frames" / seq_name("frame_", 5, g, ".ppm"),
                  frame_slice(res.video, g));

    const CodecConfig& cc = base_model.config().codec;
    PixelVideo refv;
    refv.rgb = reshape(scene.reference, {3, 1, scene.pose.height(), scene.pose.width()});
    const Tensor z_ref = encode(refv, cc).z;

    std::vector<PixelVideo> quantized;
    std::vector<std::vector<float>> preds;
    for (size_t i = 0; i < plan.segments.size(); ++i) {
        const fs::path seg_dir = out / "segments" / seq_name("seg_", 3, int64_t(i), "");
        write_segment_tree(seg_dir, res.segment_pixels[i]);
        // metrics run over the 8-bit frames actually on disk so a later
        // eval pass reproduces them from artifacts alone
        quantized.push_back(read_segment_tree(seg_dir, plan.segments[i].frames()));
        const Model& mm =
            plan.segments[i].kind == SegmentKind::key ? base_model : stitch_model;
        preds.push_back(
            segment_pred_tokens(mm, plan, i, scene, z_ref, res.segment_latents[i]));
        write_token_mask(out / "masks" / seq_name("pred_", 3, int64_t(i), ".txt"),
                         preds.back());
    }

    std::vector<SegmentMetrics> rows = compute_metrics(
        plan, scene, cc, quantized, preds, res.cache.bytes(), gate_label(gate));
    write_metrics_csv(out / "metrics.csv", rows);
    plan.to_kv().write_file(out / "plan.txt");
    res.cache.save(out / "cache.pgck");
    write_resolved(out, "generate", cfg);
    std::printf("wrote %lld frames in %zu segments to %s (cache: %lld entries, %lld bytes)\n",
                (long long)res.video.frames(), plan.segments.size(),
                out.string().c_str(), (long long)res.cache.entry_count(),
                (long long)res.cache.bytes());
}

void cmd_eval(const KvMap& given) {
    KvMap args = resolve(given, {}, {"run"});
    const fs::path run = args.get("run");
    KvMap cfg = KvMap::parse_file(run / "config.txt");
    SegmentPlan plan = SegmentPlan::from_kv(KvMap::parse_file(run / "plan.txt"));
    std::vector<SegmentMetrics> stored = read_metrics_csv(run / "metrics.csv");
    if (stored.size() != plan.segments.size())
        throw ConfigError("eval: metrics.csv has " + std::to_string(stored.size()) +
                          " rows for " + std::to_string(plan.segments.size()) +
                          " segments");

    Sample scene = load_scene(cfg.get("poses"));
    Model base_model = load_adapter_model(cfg.get("base"));
    const CodecConfig& cc = base_model.config().codec;

    std::vector<PixelVideo> segs;
    std::vector<std::vector<float>> preds;
    for (size_t i = 0; i < plan.segments.size(); ++i) {
        segs.push_back(
            read_segment_tree(run / "segments" / seq_name("seg_", 3, int64_t(i), ""),
                              plan.segments[i].frames()));
        preds.push_back(
            read_token_mask(run / "masks" / seq_name("pred_", 3, int64_t(i), ".txt")));
    }
    std::vector<SegmentMetrics> rows =
        compute_metrics(plan, scene, cc, segs, preds, stored[0].cache_bytes,
                        stored[0].gate);

    double max_dev = 0.0;
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].kind != stored[i].kind || stored[i].segment != int64_t(i))
            throw ConfigError("eval: metrics.csv row " + std::to_string(i) +
                              " does not match the plan");
        max_dev = std::max(max_dev,
                           std::abs(rows[i].bg_mse_vs_source - stored[i].bg_mse_vs_source));
        max_dev = std::max(max_dev, std::abs(rows[i].mask_iou - stored[i].mask_iou));
        std::printf("segment %zu (%s): bg_mse %.9g iou %.6g\n", i, rows[i].kind.c_str(),
                    rows[i].bg_mse_vs_source, rows[i].mask_iou);
    }
    write_metrics_csv(run / "eval.csv", rows);
    std::printf("eval: %zu segments, max deviation from run metrics %.3g\n", rows.size(),
                max_dev);
    if (max_dev > 1e-9)
        throw NumericError("eval deviates from the run's metrics by " +
                           std::to_string(max_dev));
}

void cmd_inspect(const KvMap& given) {
    KvMap cfg = resolve(
        given, {{"layer", "-1"}, {"timestep", "-1"}, {"grid", ""}, {"out", ""}},
        {"cache"});
    const fs::path path = cfg.get("cache");
    KvCache cache = KvCache::load(path);
    std::printf("%lld entries, %lld bytes\n", (long long)cache.entry_count(),
                (long long)cache.bytes());
    for (const auto& [key, e] : cache.entries()) {
        double subject = 0.0;
        for (float v : e.mask) subject += double(v != 0.0f);
        std::printf("  layer %lld timestep %lld: %zu tokens, subject fraction %.4f\n",
                    (long long)key.first, (long long)key.second, e.mask.size(),
                    e.mask.empty() ? 0.0 : subject / double(e.mask.size()));
    }

    const int64_t l = cfg.get_i64("layer"), t = cfg.get_i64("timestep");
    if (l < 0 && t < 0) return;
    if (l < 0 || t < 0)
        throw ConfigError("inspect: --layer and --timestep go together");
    const KvEntry* e = cache.find(l, t);
    if (!e)
        throw ConfigError("inspect: no cache entry at layer " + std::to_string(l) +
                          ", timestep " + std::to_string(t));

    const int64_t n = int64_t(e->mask.size());
    int64_t g = 1, th = 1, tw = n;
    const std::string grid = cfg.get("grid");
    if (!grid.empty()) {
        size_t a = grid.find('x'), b = a == std::string::npos ? a : grid.find('x', a + 1);
        if (b == std::string::npos)
            throw ConfigError("grid must be GxHxW, got '" + grid + "'");
        try {
            g = std::stoll(grid.substr(0, a));
            th = std::stoll(grid.substr(a + 1, b - a - 1));
            tw = std::stoll(grid.substr(b + 1));
        } catch (const std::exception&) {
            throw ConfigError("grid must be GxHxW, got '" + grid + "'");
        }
        if (g < 1 || th < 1 || tw < 1 || g * th * tw != n)
            throw ConfigError("grid " + grid + " does not cover " + std::to_string(n) +
                              " tokens");
    }

    // temporal blocks stacked top to bottom, subject hot, background cold
    Tensor img({3, g * th, tw});
    std::vector<float>& d = img.mut_data();
    const int64_t rows = g * th;
    for (int64_t i = 0; i < n; ++i) {
        const float v = e->mask[size_t(i)];
        d[size_t(i)] = v;
        d[size_t(rows * tw + i)] = 0.15f;
        d[size_t(2 * rows * tw + i)] = 1.0f - v;
    }
    fs::path out = cfg.get("out").empty()
                       ? path.parent_path() / (path.stem().string() + "_l" +
                                               std::to_string(l) + "_t" +
                                               std::to_string(t) + ".ppm")
                       : fs::path(cfg.get("out"));
    write_ppm(out, img);
    std::printf("wrote mask image %s\n", out.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
    try {
        if (argc < 2) return usage();
        const std::string cmd = argv[1];
        if (cmd == "help" || cmd == "--help") {
            usage();
            return 0;
        }
        KvMap args = parse_flags(argc, argv);
        if (cmd == "gen-data")
            cmd_gen_data(args);
        else if (cmd == "train")
            cmd_train(args);
        else if (cmd == "generate")
            cmd_generate(args);
        else if (cmd == "eval")
            cmd_eval(args);
        else if (cmd == "inspect")
            cmd_inspect(args);
        else {
            std::fprintf(stderr, "unknown command: %s\n", cmd.c_str());
            return usage();
        }
        return 0;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "shape error: %s\n", e.what());
        return 4;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 4;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
