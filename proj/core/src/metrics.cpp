#include "posegen/metrics.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "posegen/error.hpp"

namespace posegen {

namespace {
constexpr const char* kSchema = "# posegen-metrics-v1";
constexpr const char* kHeader = "segment,kind,bg_mse_vs_source,mask_iou,cache_bytes,gate";
}  // namespace

std::string gate_label(const GateConfig& gate) {
    return std::to_string(gate.shared_timesteps) + "x" + std::to_string(gate.shared_layers);
}

double background_mse(const PixelVideo& seg, const Tensor& seg_subject_mask,
                      const Tensor& src_frame, const Tensor& src_subject_mask) {
    if (seg.rgb.rank() != 4 || seg.rgb.size(0) != 3)
        throw ShapeError("background_mse: segment must be [3,F,H,W]");
    const int64_t F = seg.frames(), H = seg.height(), W = seg.width();
    if (seg_subject_mask.shape() != Shape{F, H, W})
        throw ShapeError("background_mse: subject mask " +
                         shape_str(seg_subject_mask.shape()) + " does not cover [F,H,W]");
    if (src_frame.shape() != Shape{3, H, W})
        throw ShapeError("background_mse: source frame must be [3,H,W]");
    if (src_subject_mask.shape() != Shape{H, W})
        throw ShapeError("background_mse: source mask must be [H,W]");

    const auto& sm = seg_subject_mask.data();
    const auto& cm = src_subject_mask.data();
    const auto& sv = seg.rgb.data();
    const auto& fv = src_frame.data();
    const int64_t plane = H * W;
    double acc = 0.0;
    int64_t cnt = 0;
    for (int64_t f = 0; f < F; ++f)
        for (int64_t p = 0; p < plane; ++p) {
            if (sm[size_t(f * plane + p)] != 0.0f || cm[size_t(p)] != 0.0f) continue;
            for (int64_t c = 0; c < 3; ++c) {
                const double d = double(sv[size_t((c * F + f) * plane + p)]) -
                                 double(fv[size_t(c * plane + p)]);
                acc += d * d;
                ++cnt;
            }
        }
    if (cnt == 0) throw ConfigError("background_mse: no joint background pixels");
    return acc / double(cnt);
}

std::vector<float> token_grid_gt(const Tensor& subject_mask, const CodecConfig& cc) {
    if (subject_mask.rank() != 3)
        throw ShapeError("token_grid_gt: want [F,H,W], got " +
                         shape_str(subject_mask.shape()));
    const int64_t F = subject_mask.size(0), H = subject_mask.size(1),
                  W = subject_mask.size(2);
    const LatentShape ls = latent_shape(F, H, W, cc);
    if (ls.h % 2 != 0 || ls.w % 2 != 0)
        throw ShapeError("token_grid_gt: latent grid " + std::to_string(ls.h) + "x" +
                         std::to_string(ls.w) + " does not split into 2x2 tokens");
    const int64_t th = ls.h / 2, tw = ls.w / 2;
    const int64_t px = cc.spatial_stride * 2;  // pixels per token side
    const auto& md = subject_mask.data();

    std::vector<float> out(size_t(ls.f * th * tw), 0.0f);
    for (int64_t g = 0; g < ls.f; ++g) {
        int64_t first = 0, last = 0;
        latent_block_span(g, cc.temporal_stride, first, last);
        last = std::min<int64_t>(last, F - 1);
        for (int64_t ty = 0; ty < th; ++ty)
            for (int64_t tx = 0; tx < tw; ++tx) {
                bool any = false;
                for (int64_t f = first; f <= last && !any; ++f)
                    for (int64_t y = ty * px; y < (ty + 1) * px && !any; ++y)
                        for (int64_t x = tx * px; x < (tx + 1) * px && !any; ++x)
                            any = md[size_t((f * H + y) * W + x)] != 0.0f;
                out[size_t((g * th + ty) * tw + tx)] = any ? 1.0f : 0.0f;
            }
    }
    return out;
}

double mask_iou(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.empty() || a.size() != b.size())
        throw UsageError("mask_iou: mask sizes " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const bool av = a[i] != 0.0f, bv = b[i] != 0.0f;
        inter += av && bv;
        uni += av || bv;
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

namespace {
class MapRecorder final : public SharingHooks {
  public:
    void on_subject_map(int64_t, const Tensor& map) override {
        maps.push_back(binarize_by_otsu(map).mask);
    }
    std::vector<std::vector<float>> maps;
};
}  // namespace

std::vector<float> predicted_subject_tokens(const Model& m, const ConditionBundle& b) {
    if (b.subject_ids.empty())
        throw UsageError("predicted_subject_tokens: bundle names no subject");
    NoGradGuard ng;
    MapRecorder rec;
    (void)dit_forward(m, b, 0.0, &rec);
    if (rec.maps.empty())
        throw UsageError("predicted_subject_tokens: no cross-attention maps recorded");
    return layer_mask(rec.maps);
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<SegmentMetrics>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write metrics: " + path.string());
    out << kSchema << "\n" << kHeader << "\n";
    char line[192];
    for (const SegmentMetrics& r : rows) {
        if (r.kind.find(',') != std::string::npos || r.gate.find(',') != std::string::npos)
            throw UsageError("metrics: text fields must not contain commas");
        std::snprintf(line, sizeof line, "%lld,%s,%.17g,%.17g,%lld,%s\n",
                      static_cast<long long>(r.segment), r.kind.c_str(),
                      r.bg_mse_vs_source, r.mask_iou,
                      static_cast<long long>(r.cache_bytes), r.gate.c_str());
        out << line;
    }
    if (!out) throw IoError("short write: " + path.string());
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    size_t at = 0;
    for (;;) {
        const size_t c = line.find(',', at);
        if (c == std::string::npos) {
            out.push_back(line.substr(at));
            return out;
        }
        out.push_back(line.substr(at, c - at));
        at = c + 1;
    }
}

int64_t parse_i64(const std::string& s, const std::string& what) {
    char* endp = nullptr;
    const long long v = std::strtoll(s.c_str(), &endp, 10);
    if (endp == s.c_str() || *endp != '\0')
        throw IoError("metrics: bad " + what + " '" + s + "'");
    return int64_t(v);
}

double parse_f64(const std::string& s, const std::string& what) {
    char* endp = nullptr;
    const double v = std::strtod(s.c_str(), &endp);
    if (endp == s.c_str() || *endp != '\0')
        throw IoError("metrics: bad " + what + " '" + s + "'");
    return v;
}

}  // namespace

std::vector<SegmentMetrics> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read metrics: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kSchema)
        throw IoError("metrics: unsupported schema line '" + line + "'");
    if (!std::getline(in, line) || line != kHeader)
        throw IoError("metrics: unexpected header '" + line + "'");

    std::vector<SegmentMetrics> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> f = split_csv(line);
        if (f.size() != 6) throw IoError("metrics: malformed row '" + line + "'");
        SegmentMetrics r;
        r.segment = parse_i64(f[0], "segment");
        r.kind = f[1];
        r.bg_mse_vs_source = parse_f64(f[2], "bg_mse_vs_source");
        r.mask_iou = parse_f64(f[3], "mask_iou");
        r.cache_bytes = parse_i64(f[4], "cache_bytes");
        r.gate = f[5];
        rows.push_back(r);
    }
    return rows;
}

}  // namespace posegen
