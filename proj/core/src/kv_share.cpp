#include "posegen/kv_share.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "posegen/checkpoint.hpp"
#include "posegen/error.hpp"
#include "posegen/ops.hpp"

namespace posegen {

Tensor subject_attn_map(const CrossInternals& in, const std::vector<int64_t>& subject_ids,
                        bool softmax_first) {
    if (subject_ids.empty())
        throw ConfigError("subject_attn_map: no subject token indices");
    if (in.t2v.empty()) throw UsageError("subject_attn_map: no internals captured");
    const int64_t n_ctx = in.t2v[0].size(0), n_vid = in.t2v[0].size(1);
    for (int64_t id : subject_ids)
        if (id < 0 || id >= n_ctx)
            throw ConfigError("subject_attn_map: subject index " + std::to_string(id) +
                              " outside context of " + std::to_string(n_ctx));

    Tensor map({n_vid});
    std::vector<double> acc(size_t(n_vid), 0.0);
    for (const Tensor& head : in.t2v) {
        if (head.size(0) != n_ctx || head.size(1) != n_vid)
            throw ShapeError("subject_attn_map: inconsistent head shapes");
        Tensor rows = softmax_first ? softmax_rows(head) : head;
        for (int64_t id : subject_ids)
            for (int64_t j = 0; j < n_vid; ++j) acc[size_t(j)] += double(rows.at2(id, j));
    }
    const double norm = 1.0 / (double(in.t2v.size()) * double(subject_ids.size()));
    for (int64_t j = 0; j < n_vid; ++j) map.mut_data()[size_t(j)] = float(acc[size_t(j)] * norm);
    return map;
}

float otsu_threshold(const std::vector<float>& values) {
    if (values.size() < 2) throw UsageError("otsu_threshold: need at least 2 values");
    float lo = values[0], hi = values[0];
    for (float v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (lo == hi) return lo;

    // candidates are the 63 interior bin boundaries of a 64-bin histogram;
    // class split and statistics come from the raw values, so the result
    // matches an exhaustive sweep exactly
    const double width = (double(hi) - double(lo)) / 64.0;
    double best_var = -1.0;
    float best_thr = lo;
    for (int k = 1; k < 64; ++k) {
        const double thr = double(lo) + width * k;
        double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
        for (float v : values) {
            if (double(v) < thr) {
                n0 += 1;
                s0 += double(v);
            } else {
                n1 += 1;
                s1 += double(v);
            }
        }
        if (n0 == 0 || n1 == 0) continue;
        const double m0 = s0 / n0, m1 = s1 / n1;
        const double var = n0 * n1 * (m0 - m1) * (m0 - m1);
        if (var > best_var) {
            best_var = var;
            best_thr = float(thr);
        }
    }
    return best_thr;
}

BinarizedMap binarize_by_otsu(const Tensor& map) {
    const auto& vals = map.data();
    BinarizedMap out;
    out.threshold = otsu_threshold(std::vector<float>(vals.begin(), vals.end()));
    out.mask.resize(vals.size());
    bool any = false;
    for (size_t i = 0; i < vals.size(); ++i) {
        out.mask[i] = vals[i] > out.threshold ? 1.0f : 0.0f;
        any = any || out.mask[i] != 0.0f;
    }
    out.empty_subject = !any;
    return out;
}

std::vector<float> layer_mask(const std::vector<std::vector<float>>& binarized) {
    if (binarized.empty()) throw UsageError("layer_mask: no maps");
    const size_t n = binarized[0].size();
    // integer vote count so an exact half split stays below the bar
    std::vector<int64_t> votes(n, 0);
    for (const auto& m : binarized) {
        if (m.size() != n) throw ShapeError("layer_mask: map length mismatch");
        for (size_t i = 0; i < n; ++i) votes[i] += m[i] != 0.0f;
    }
    std::vector<float> out(n);
    for (size_t i = 0; i < n; ++i)
        out[i] = 2 * votes[i] > int64_t(binarized.size()) ? 1.0f : 0.0f;
    return out;
}

Tensor shared_attention(const Tensor& q, const Tensor& k_src, const Tensor& v_src,
                        const std::vector<float>& src_mask, int64_t heads,
                        MaskMode mode) {
    if (q.rank() != 2 || k_src.rank() != 2 || v_src.rank() != 2)
        throw ShapeError("shared_attention: expected 2D tensors");
    const int64_t n = q.size(0), d = q.size(1), msrc = k_src.size(0);
    if (k_src.size(1) != d || v_src.size(1) != d || v_src.size(0) != msrc)
        throw ShapeError("shared_attention: source shapes inconsistent");
    if (int64_t(src_mask.size()) != msrc)
        throw ShapeError("shared_attention: mask length != source token count");
    if (heads < 1 || d % heads != 0)
        throw ConfigError("shared_attention: bad head count");

    const int64_t hd = d / heads;
    const double scale = 1.0 / std::sqrt(double(hd));
    Tensor out({n, d});
    std::vector<double> logits(static_cast<size_t>(msrc));
    std::vector<double> probs(static_cast<size_t>(msrc));
    for (int64_t hI = 0; hI < heads; ++hI) {
        const int64_t c0 = hI * hd;
        for (int64_t i = 0; i < n; ++i) {
            double mx = -1e300;
            for (int64_t j = 0; j < msrc; ++j) {
                double dot = 0.0;
                for (int64_t k = 0; k < hd; ++k)
                    dot += double(q.at2(i, c0 + k)) * double(k_src.at2(j, c0 + k));
                logits[size_t(j)] = dot * scale;
            }
            if (mode == MaskMode::presoftmax) {
                bool all_masked = true;
                for (int64_t j = 0; j < msrc; ++j) {
                    if (src_mask[size_t(j)] != 0.0f)
                        logits[size_t(j)] = -1e300;
                    else
                        all_masked = false;
                }
                if (all_masked) {
                    for (int64_t k = 0; k < hd; ++k)
                        out.mut_data()[size_t(i * d + c0 + k)] = 0.0f;
                    continue;
                }
            }
            for (int64_t j = 0; j < msrc; ++j) mx = std::max(mx, logits[size_t(j)]);
            double denom = 0.0;
            for (int64_t j = 0; j < msrc; ++j) {
                probs[size_t(j)] = std::exp(logits[size_t(j)] - mx);
                denom += probs[size_t(j)];
            }
            for (int64_t j = 0; j < msrc; ++j) {
                probs[size_t(j)] /= denom;
                // literal form: suppress source-subject keys after the
                // softmax, without renormalizing
                if (mode == MaskMode::literal)
                    probs[size_t(j)] *= 1.0 - double(src_mask[size_t(j)]);
            }
            for (int64_t k = 0; k < hd; ++k) {
                double acc = 0.0;
                for (int64_t j = 0; j < msrc; ++j)
                    acc += probs[size_t(j)] * double(v_src.at2(j, c0 + k));
                out.mut_data()[size_t(i * d + c0 + k)] = float(acc);
            }
        }
    }
    return out;
}

Tensor fuse(const Tensor& cur, const Tensor& src, const std::vector<float>& m,
            const std::vector<float>& m_src) {
    if (cur.rank() != 2 || !same_shape(cur.shape(), src.shape()))
        throw ShapeError("fuse: token shapes differ");
    const int64_t n = cur.size(0), d = cur.size(1);
    if (int64_t(m.size()) != n || int64_t(m_src.size()) != n)
        throw ShapeError("fuse: mask length != token count");
    Tensor out({n, d});
    for (int64_t i = 0; i < n; ++i) {
        const bool keep = m[size_t(i)] != 0.0f || m_src[size_t(i)] != 0.0f;
        const Tensor& from = keep ? cur : src;
        std::memcpy(out.mut_data().data() + i * d, from.data().data() + i * d,
                    size_t(d) * sizeof(float));
    }
    return out;
}

void GateConfig::validate(int64_t steps, int64_t layers) const {
    if (shared_timesteps == 0 && shared_layers == 0) return;  // disabled
    if (shared_timesteps < 1 || shared_timesteps > steps)
        throw ConfigError("gate: shared_timesteps " + std::to_string(shared_timesteps) +
                          " outside [1," + std::to_string(steps) + "]");
    if (shared_layers < 1 || shared_layers > layers)
        throw ConfigError("gate: shared_layers " + std::to_string(shared_layers) +
                          " outside [1," + std::to_string(layers) + "]");
}

GateConfig GateConfig::defaults(int64_t steps, int64_t layers) {
    GateConfig g;
    g.shared_timesteps = std::max<int64_t>(1, (steps + 3) / 4);
    g.shared_layers = (layers + 1) / 2;
    return g;
}

void KvCache::put(int64_t layer, int64_t step, KvEntry e) {
    auto key = std::make_pair(layer, step);
    if (entries_.count(key))
        throw UsageError("kv cache: duplicate entry for layer " + std::to_string(layer) +
                         ", step " + std::to_string(step));
    if (e.k.rank() != 2 || !same_shape(e.k.shape(), e.v.shape()) ||
        int64_t(e.mask.size()) != e.k.size(0))
        throw ShapeError("kv cache: inconsistent entry shapes");
    entries_.emplace(key, std::move(e));
}

const KvEntry* KvCache::find(int64_t layer, int64_t step) const {
    auto it = entries_.find({layer, step});
    return it == entries_.end() ? nullptr : &it->second;
}

const KvEntry& KvCache::at(int64_t layer, int64_t step) const {
    const KvEntry* e = find(layer, step);
    if (!e)
        throw UsageError("kv cache: missing entry for layer " + std::to_string(layer) +
                         ", step " + std::to_string(step) + " (gating bug)");
    return *e;
}

int64_t KvCache::bytes() const {
    int64_t total = 0;
    for (const auto& [key, e] : entries_)
        total += int64_t((e.k.data().size() + e.v.data().size() + e.mask.size()) *
                         sizeof(float));
    return total;
}

uint64_t KvCache::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto eat = [&h](const void* p, size_t nbytes) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < nbytes; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& [key, e] : entries_) {
        eat(&key.first, sizeof key.first);
        eat(&key.second, sizeof key.second);
        eat(e.k.data().data(), e.k.data().size() * sizeof(float));
        eat(e.v.data().data(), e.v.data().size() * sizeof(float));
        eat(e.mask.data(), e.mask.size() * sizeof(float));
    }
    return h;
}

void KvCache::save(const std::filesystem::path& path) const {
    std::vector<TensorRecord> recs;
    for (const auto& [key, e] : entries_) {
        std::string pre =
            "kv/" + std::to_string(key.first) + "/" + std::to_string(key.second) + "/";
        recs.push_back({pre + "k", e.k.shape(), e.k.data()});
        recs.push_back({pre + "v", e.v.shape(), e.v.data()});
        recs.push_back({pre + "mask", {int64_t(e.mask.size())}, e.mask});
    }
    save_container(path, recs);
}

KvCache KvCache::load(const std::filesystem::path& path) {
    KvCache cache;
    std::map<std::pair<int64_t, int64_t>, KvEntry> staged;
    for (const auto& r : load_container(path)) {
        if (r.name.rfind("kv/", 0) != 0)
            throw IoError("kv cache: unexpected record " + r.name);
        size_t a = r.name.find('/', 3);
        size_t b = a == std::string::npos ? a : r.name.find('/', a + 1);
        if (b == std::string::npos) throw IoError("kv cache: malformed name " + r.name);
        int64_t layer = 0, step = 0;
        try {
            layer = std::stoll(r.name.substr(3, a - 3));
            step = std::stoll(r.name.substr(a + 1, b - a - 1));
        } catch (const std::exception&) {
            throw IoError("kv cache: malformed name " + r.name);
        }
        std::string leaf = r.name.substr(b + 1);
        KvEntry& e = staged[{layer, step}];
        if (leaf == "k")
            e.k = Tensor::from_data(r.shape, r.data);
        else if (leaf == "v")
            e.v = Tensor::from_data(r.shape, r.data);
        else if (leaf == "mask")
            e.mask = r.data;
        else
            throw IoError("kv cache: unexpected leaf " + r.name);
    }
    for (auto& [key, e] : staged) {
        if (e.k.numel() == 0 || e.v.numel() == 0 || e.mask.empty())
            throw IoError("kv cache: incomplete entry at layer " +
                          std::to_string(key.first));
        cache.put(key.first, key.second, std::move(e));
    }
    return cache;
}

}  // namespace posegen
