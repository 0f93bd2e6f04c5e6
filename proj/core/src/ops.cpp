#include "posegen/ops.hpp"

#include <cmath>
#include <cstring>

namespace posegen {

namespace {

bool want_grad(std::initializer_list<const Tensor*> ts) {
    if (!grad_enabled()) return false;
    for (auto* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

void attach(Tensor& out, std::vector<std::shared_ptr<TensorNode>> parents,
            std::function<void(TensorNode&)> fn) {
    out.node()->requires_grad = true;
    out.node()->parents = std::move(parents);
    out.node()->backward_fn = std::move(fn);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!same_shape(a.shape(), b.shape())) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

void check_rank2(const Tensor& a, const char* op) {
    if (a.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected rank 2, got " + shape_str(a.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape());
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.mut_data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
    if (want_grad({&a, &b})) {
        attach(out, {a.node(), b.node()}, [](TensorNode& self) {
            const auto& g = self.grad;
            if (self.parents[0]->requires_grad) {
                auto& ga = self.parents[0]->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (self.parents[1]->requires_grad) {
                auto& gb = self.parents[1]->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.shape());
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.mut_data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] - bd[i];
    if (want_grad({&a, &b})) {
        attach(out, {a.node(), b.node()}, [](TensorNode& self) {
            const auto& g = self.grad;
            if (self.parents[0]->requires_grad) {
                auto& ga = self.parents[0]->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (self.parents[1]->requires_grad) {
                auto& gb = self.parents[1]->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.shape());
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.mut_data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
    if (want_grad({&a, &b})) {
        attach(out, {a.node(), b.node()}, [](TensorNode& self) {
            const auto& g = self.grad;
            const auto& ad = self.parents[0]->data;
            const auto& bd = self.parents[1]->data;
            if (self.parents[0]->requires_grad) {
                auto& ga = self.parents[0]->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
            }
            if (self.parents[1]->requires_grad) {
                auto& gb = self.parents[1]->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
            }
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& a, double s) {
    Tensor out(a.shape());
    const auto& ad = a.data();
    auto& od = out.mut_data();
    const float fs = float(s);
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + fs;
    if (want_grad({&a})) {
        attach(out, {a.node()}, [](TensorNode& self) {
            auto& ga = self.parents[0]->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
        });
    }
    return out;
}

Tensor mul_scalar(const Tensor& a, double s) {
    Tensor out(a.shape());
    const auto& ad = a.data();
    auto& od = out.mut_data();
    const float fs = float(s);
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * fs;
    if (want_grad({&a})) {
        attach(out, {a.node()}, [fs](TensorNode& self) {
            auto& ga = self.parents[0]->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * fs;
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " has " +
                         std::to_string(x.numel()) + " elements, target " +
                         shape_str(shape) + " wants " +
                         std::to_string(shape_numel(shape)));
    Tensor out(std::move(shape));
    out.mut_data() = x.data();
    if (want_grad({&x})) {
        attach(out, {x.node()}, [](TensorNode& self) {
            auto& gx = self.parents[0]->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out(x.shape());
    const auto& xd = x.data();
    auto& od = out.mut_data();
    const float k = 0.7978845608028654f;  // sqrt(2/pi)
    for (size_t i = 0; i < od.size(); ++i) {
        float v = xd[i];
        float u = k * (v + 0.044715f * v * v * v);
        float y = 0.5f * v * (1.0f + std::tanh(u));
        od[i] = y + 0.0f;  // normalizes negative zero from saturated inputs
    }
    if (want_grad({&x})) {
        attach(out, {x.node()}, [k](TensorNode& self) {
            const auto& xd = self.parents[0]->data;
            auto& gx = self.parents[0]->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                float v = xd[i];
                float u = k * (v + 0.044715f * v * v * v);
                float th = std::tanh(u);
                float du = k * (1.0f + 3.0f * 0.044715f * v * v);
                float dy = 0.5f * (1.0f + th) + 0.5f * v * (1.0f - th * th) * du;
                gx[i] += self.grad[i] * dy;
            }
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_rank2(a, "matmul");
    check_rank2(b, "matmul");
    if (a.size(1) != b.size(0)) {
        throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const int64_t m = a.size(0), k = a.size(1), p = b.size(1);
    Tensor out({m, p});
    const float* ad = a.data().data();
    const float* bd = b.data().data();
    float* od = out.mut_data().data();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < p; ++j) {
            float acc = 0.0f;
            for (int64_t kk = 0; kk < k; ++kk) acc += ad[i * k + kk] * bd[kk * p + j];
            od[i * p + j] = acc;
        }
    }
    if (want_grad({&a, &b})) {
        attach(out, {a.node(), b.node()}, [m, k, p](TensorNode& self) {
            const auto& g = self.grad;
            const auto& ad = self.parents[0]->data;
            const auto& bd = self.parents[1]->data;
            if (self.parents[0]->requires_grad) {
                auto& ga = self.parents[0]->ensure_grad();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t kk = 0; kk < k; ++kk) {
                        float acc = 0.0f;
                        for (int64_t j = 0; j < p; ++j)
                            acc += g[size_t(i * p + j)] * bd[size_t(kk * p + j)];
                        ga[size_t(i * k + kk)] += acc;
                    }
            }
            if (self.parents[1]->requires_grad) {
                auto& gb = self.parents[1]->ensure_grad();
                for (int64_t kk = 0; kk < k; ++kk)
                    for (int64_t j = 0; j < p; ++j) {
                        float acc = 0.0f;
                        for (int64_t i = 0; i < m; ++i)
                            acc += ad[size_t(i * k + kk)] * g[size_t(i * p + j)];
                        gb[size_t(kk * p + j)] += acc;
                    }
            }
        });
    }
    return out;
}

Tensor transpose2d(const Tensor& a) {
    check_rank2(a, "transpose2d");
    const int64_t m = a.size(0), n = a.size(1);
    Tensor out({n, m});
    const auto& ad = a.data();
    auto& od = out.mut_data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) od[size_t(j * m + i)] = ad[size_t(i * n + j)];
    if (want_grad({&a})) {
        attach(out, {a.node()}, [m, n](TensorNode& self) {
            auto& ga = self.parents[0]->ensure_grad();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j)
                    ga[size_t(i * n + j)] += self.grad[size_t(j * m + i)];
        });
    }
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    check_rank2(x, "softmax_rows");
    const int64_t m = x.size(0), n = x.size(1);
    Tensor out({m, n});
    const auto& xd = x.data();
    auto& od = out.mut_data();
    for (int64_t i = 0; i < m; ++i) {
        const float* row = &xd[size_t(i * n)];
        float mx = row[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;  // accumulation in double for row stability
        float* orow = &od[size_t(i * n)];
        for (int64_t j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += double(orow[j]);
        }
        float inv = float(1.0 / sum);
        for (int64_t j = 0; j < n; ++j) orow[j] *= inv;
    }
    if (want_grad({&x})) {
        attach(out, {x.node()}, [m, n](TensorNode& self) {
            auto& gx = self.parents[0]->ensure_grad();
            const auto& y = self.data;
            const auto& g = self.grad;
            for (int64_t i = 0; i < m; ++i) {
                double dot = 0.0;  // double accumulation over the row
                for (int64_t j = 0; j < n; ++j)
                    dot += double(g[size_t(i * n + j)]) * double(y[size_t(i * n + j)]);
                for (int64_t j = 0; j < n; ++j) {
                    size_t ij = size_t(i * n + j);
                    gx[ij] += y[ij] * (g[ij] - float(dot));
                }
            }
        });
    }
    return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain) {
    check_rank2(x, "rms_norm");
    const int64_t m = x.size(0), n = x.size(1);
    if (gain.rank() != 1 || gain.size(0) != n) {
        throw ShapeError("rms_norm: gain shape " + shape_str(gain.shape()) +
                         " does not match row width " + std::to_string(n));
    }
    const double eps = 1e-6;
    Tensor out({m, n});
    const auto& xd = x.data();
    const auto& gd = gain.data();
    auto& od = out.mut_data();
    for (int64_t i = 0; i < m; ++i) {
        double ms = 0.0;  // mean square in double
        for (int64_t j = 0; j < n; ++j) {
            double v = double(xd[size_t(i * n + j)]);
            ms += v * v;
        }
        ms /= double(n);
        float r = float(1.0 / std::sqrt(ms + eps));
        for (int64_t j = 0; j < n; ++j)
            od[size_t(i * n + j)] = xd[size_t(i * n + j)] * r * gd[size_t(j)];
    }
    if (want_grad({&x, &gain})) {
        attach(out, {x.node(), gain.node()}, [m, n, eps](TensorNode& self) {
            const auto& xd = self.parents[0]->data;
            const auto& gd = self.parents[1]->data;
            const auto& g = self.grad;
            for (int64_t i = 0; i < m; ++i) {
                double ms = 0.0;
                for (int64_t j = 0; j < n; ++j) {
                    double v = double(xd[size_t(i * n + j)]);
                    ms += v * v;
                }
                ms /= double(n);
                double r = 1.0 / std::sqrt(ms + eps);
                if (self.parents[0]->requires_grad) {
                    auto& gx = self.parents[0]->ensure_grad();
                    double inner = 0.0;  // sum_j gy_j * gain_j * x_j
                    for (int64_t j = 0; j < n; ++j) {
                        size_t ij = size_t(i * n + j);
                        inner += double(g[ij]) * double(gd[size_t(j)]) * double(xd[ij]);
                    }
                    double r3_over_n = r * r * r / double(n);
                    for (int64_t j = 0; j < n; ++j) {
                        size_t ij = size_t(i * n + j);
                        gx[ij] += float(r * double(g[ij]) * double(gd[size_t(j)]) -
                                        r3_over_n * double(xd[ij]) * inner);
                    }
                }
                if (self.parents[1]->requires_grad) {
                    auto& gg = self.parents[1]->ensure_grad();
                    for (int64_t j = 0; j < n; ++j) {
                        size_t ij = size_t(i * n + j);
                        gg[size_t(j)] += float(double(g[ij]) * double(xd[ij]) * r);
                    }
                }
            }
        });
    }
    return out;
}

namespace {

// Rotation schedule shared by forward and backward: axis a owns pairs
// [a*P, (a+1)*P) where P = d/6; pair j rotates dims (2*(a*P+j), +1) by
// angle pos_axis * 10000^(-j/P).
inline void rope_row(const float* src, float* dst, const TokenPos& p, int64_t d, bool invert) {
    const int64_t P = d / 6;
    const int32_t axes[3] = {p.t, p.y, p.x};
    for (int a = 0; a < 3; ++a) {
        for (int64_t j = 0; j < P; ++j) {
            int64_t base = 2 * (a * P + j);
            float x0 = src[base], x1 = src[base + 1];
            if (axes[a] == 0) {  // exact identity at the origin
                dst[base] = x0;
                dst[base + 1] = x1;
                continue;
            }
            double theta = double(axes[a]) * std::pow(10000.0, -double(j) / double(P));
            if (invert) theta = -theta;
            double c = std::cos(theta), s = std::sin(theta);
            dst[base] = float(c * double(x0) - s * double(x1));
            dst[base + 1] = float(s * double(x0) + c * double(x1));
        }
    }
}

}  // namespace

Tensor rope_apply(const Tensor& x, const std::vector<TokenPos>& pos) {
    check_rank2(x, "rope_apply");
    const int64_t n = x.size(0), d = x.size(1);
    if (d % 6 != 0) {
        throw ConfigError("rope_apply: width " + std::to_string(d) +
                          " not divisible by 2*3 axes");
    }
    if (int64_t(pos.size()) != n) {
        throw ShapeError("rope_apply: " + std::to_string(pos.size()) + " positions for " +
                         std::to_string(n) + " rows");
    }
    Tensor out({n, d});
    const auto& xd = x.data();
    auto& od = out.mut_data();
    for (int64_t i = 0; i < n; ++i)
        rope_row(&xd[size_t(i * d)], &od[size_t(i * d)], pos[size_t(i)], d, false);
    if (want_grad({&x})) {
        auto pcopy = pos;
        attach(out, {x.node()}, [n, d, pcopy](TensorNode& self) {
            auto& gx = self.parents[0]->ensure_grad();
            std::vector<float> tmp(static_cast<size_t>(d), 0.0f);
            for (int64_t i = 0; i < n; ++i) {
                // gradient rotates by the inverse angle
                rope_row(&self.grad[size_t(i * d)], tmp.data(), pcopy[size_t(i)], d, true);
                for (int64_t j = 0; j < d; ++j) gx[size_t(i * d + j)] += tmp[size_t(j)];
            }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    Tensor out({1});
    double acc = 0.0;  // reduction in double
    for (float v : x.data()) acc += double(v);
    out.mut_data()[0] = float(acc);
    if (want_grad({&x})) {
        attach(out, {x.node()}, [](TensorNode& self) {
            auto& gx = self.parents[0]->ensure_grad();
            float g = self.grad[0];
            for (auto& v : gx) v += g;
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) {
    Tensor out({1});
    double acc = 0.0;
    for (float v : x.data()) acc += double(v);
    const int64_t n = x.numel();
    out.mut_data()[0] = float(acc / double(n));
    if (want_grad({&x})) {
        attach(out, {x.node()}, [n](TensorNode& self) {
            auto& gx = self.parents[0]->ensure_grad();
            float g = self.grad[0] / float(n);
            for (auto& v : gx) v += g;
        });
    }
    return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    check_rank2(a, "concat_rows");
    check_rank2(b, "concat_rows");
    if (a.size(1) != b.size(1)) {
        throw ShapeError("concat_rows: widths differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const int64_t ma = a.size(0), mb = b.size(0), n = a.size(1);
    Tensor out({ma + mb, n});
    auto& od = out.mut_data();
    std::memcpy(od.data(), a.data().data(), size_t(ma * n) * sizeof(float));
    std::memcpy(od.data() + ma * n, b.data().data(), size_t(mb * n) * sizeof(float));
    if (want_grad({&a, &b})) {
        attach(out, {a.node(), b.node()}, [ma, mb, n](TensorNode& self) {
            if (self.parents[0]->requires_grad) {
                auto& ga = self.parents[0]->ensure_grad();
                for (int64_t i = 0; i < ma * n; ++i) ga[size_t(i)] += self.grad[size_t(i)];
            }
            if (self.parents[1]->requires_grad) {
                auto& gb = self.parents[1]->ensure_grad();
                for (int64_t i = 0; i < mb * n; ++i)
                    gb[size_t(i)] += self.grad[size_t(ma * n + i)];
            }
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& a, int64_t r0, int64_t rows) {
    check_rank2(a, "slice_rows");
    const int64_t m = a.size(0), n = a.size(1);
    if (r0 < 0 || rows <= 0 || r0 + rows > m) {
        throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," +
                         std::to_string(r0 + rows) + ") outside " + shape_str(a.shape()));
    }
    Tensor out({rows, n});
    std::memcpy(out.mut_data().data(), a.data().data() + r0 * n,
                size_t(rows * n) * sizeof(float));
    if (want_grad({&a})) {
        attach(out, {a.node()}, [r0, rows, n](TensorNode& self) {
            auto& ga = self.parents[0]->ensure_grad();
            for (int64_t i = 0; i < rows * n; ++i)
                ga[size_t(r0 * n + i)] += self.grad[size_t(i)];
        });
    }
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    check_rank2(a, "concat_cols");
    check_rank2(b, "concat_cols");
    if (a.size(0) != b.size(0)) {
        throw ShapeError("concat_cols: heights differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const int64_t m = a.size(0), na = a.size(1), nb = b.size(1);
    Tensor out({m, na + nb});
    auto& od = out.mut_data();
    for (int64_t i = 0; i < m; ++i) {
        std::memcpy(&od[size_t(i * (na + nb))], &a.data()[size_t(i * na)],
                    size_t(na) * sizeof(float));
        std::memcpy(&od[size_t(i * (na + nb) + na)], &b.data()[size_t(i * nb)],
                    size_t(nb) * sizeof(float));
    }
    if (want_grad({&a, &b})) {
        attach(out, {a.node(), b.node()}, [m, na, nb](TensorNode& self) {
            if (self.parents[0]->requires_grad) {
                auto& ga = self.parents[0]->ensure_grad();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < na; ++j)
                        ga[size_t(i * na + j)] += self.grad[size_t(i * (na + nb) + j)];
            }
            if (self.parents[1]->requires_grad) {
                auto& gb = self.parents[1]->ensure_grad();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < nb; ++j)
                        gb[size_t(i * nb + j)] += self.grad[size_t(i * (na + nb) + na + j)];
            }
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& a, int64_t c0, int64_t cols) {
    check_rank2(a, "slice_cols");
    const int64_t m = a.size(0), n = a.size(1);
    if (c0 < 0 || cols <= 0 || c0 + cols > n) {
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," +
                         std::to_string(c0 + cols) + ") outside " + shape_str(a.shape()));
    }
    Tensor out({m, cols});
    auto& od = out.mut_data();
    for (int64_t i = 0; i < m; ++i)
        std::memcpy(&od[size_t(i * cols)], &a.data()[size_t(i * n + c0)],
                    size_t(cols) * sizeof(float));
    if (want_grad({&a})) {
        attach(out, {a.node()}, [m, n, c0, cols](TensorNode& self) {
            auto& ga = self.parents[0]->ensure_grad();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < cols; ++j)
                    ga[size_t(i * n + c0 + j)] += self.grad[size_t(i * cols + j)];
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& ids) {
    check_rank2(table, "gather_rows");
    const int64_t v = table.size(0), d = table.size(1);
    for (int64_t id : ids) {
        if (id < 0 || id >= v) {
            throw ShapeError("gather_rows: id " + std::to_string(id) + " outside table " +
                             shape_str(table.shape()));
        }
    }
    const int64_t m = int64_t(ids.size());
    Tensor out({m, d});
    auto& od = out.mut_data();
    for (int64_t i = 0; i < m; ++i)
        std::memcpy(&od[size_t(i * d)], &table.data()[size_t(ids[size_t(i)] * d)],
                    size_t(d) * sizeof(float));
    if (want_grad({&table})) {
        auto idcopy = ids;
        attach(out, {table.node()}, [d, idcopy](TensorNode& self) {
            auto& gt = self.parents[0]->ensure_grad();
            for (size_t i = 0; i < idcopy.size(); ++i)
                for (int64_t j = 0; j < d; ++j)
                    gt[size_t(idcopy[i] * d + j)] += self.grad[i * size_t(d) + size_t(j)];
        });
    }
    return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    check_rank2(x, "add_rowvec");
    const int64_t m = x.size(0), n = x.size(1);
    if (v.rank() != 1 || v.size(0) != n) {
        throw ShapeError("add_rowvec: vector shape " + shape_str(v.shape()) +
                         " does not match row width " + std::to_string(n));
    }
    Tensor out({m, n});
    const auto& xd = x.data();
    const auto& vd = v.data();
    auto& od = out.mut_data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            od[size_t(i * n + j)] = xd[size_t(i * n + j)] + vd[size_t(j)];
    if (want_grad({&x, &v})) {
        attach(out, {x.node(), v.node()}, [m, n](TensorNode& self) {
            if (self.parents[0]->requires_grad) {
                auto& gx = self.parents[0]->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
            }
            if (self.parents[1]->requires_grad) {
                auto& gv = self.parents[1]->ensure_grad();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j)
                        gv[size_t(j)] += self.grad[size_t(i * n + j)];
            }
        });
    }
    return out;
}

Tensor unfold_patches(const Tensor& z) {
    if (z.rank() != 4) {
        throw ShapeError("unfold_patches: expected rank 4, got " + shape_str(z.shape()));
    }
    const int64_t C = z.size(0), f = z.size(1), h = z.size(2), w = z.size(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("unfold_patches: spatial dims must be even, got " +
                         shape_str(z.shape()));
    }
    const int64_t gh = h / 2, gw = w / 2, n = f * gh * gw;
    Tensor out({n, 4 * C});
    const auto& zd = z.data();
    auto& od = out.mut_data();
    for (int64_t t = 0; t < f; ++t)
        for (int64_t py = 0; py < gh; ++py)
            for (int64_t px = 0; px < gw; ++px) {
                int64_t row = (t * gh + py) * gw + px;
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t ky = 0; ky < 2; ++ky)
                        for (int64_t kx = 0; kx < 2; ++kx) {
                            int64_t col = c * 4 + ky * 2 + kx;
                            od[size_t(row * 4 * C + col)] =
                                zd[size_t(((c * f + t) * h + 2 * py + ky) * w + 2 * px + kx)];
                        }
            }
    if (want_grad({&z})) {
        attach(out, {z.node()}, [C, f, h, w, gh, gw](TensorNode& self) {
            auto& gz = self.parents[0]->ensure_grad();
            for (int64_t t = 0; t < f; ++t)
                for (int64_t py = 0; py < gh; ++py)
                    for (int64_t px = 0; px < gw; ++px) {
                        int64_t row = (t * gh + py) * gw + px;
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t ky = 0; ky < 2; ++ky)
                                for (int64_t kx = 0; kx < 2; ++kx) {
                                    int64_t col = c * 4 + ky * 2 + kx;
                                    gz[size_t(((c * f + t) * h + 2 * py + ky) * w + 2 * px +
                                              kx)] += self.grad[size_t(row * 4 * C + col)];
                                }
                    }
        });
    }
    return out;
}

Tensor fold_patches(const Tensor& x, int64_t C, int64_t f, int64_t h, int64_t w) {
    check_rank2(x, "fold_patches");
    const int64_t gh = h / 2, gw = w / 2;
    if (h % 2 != 0 || w % 2 != 0 || x.size(0) != f * gh * gw || x.size(1) != 4 * C) {
        throw ShapeError("fold_patches: input " + shape_str(x.shape()) +
                         " does not match target [" + std::to_string(C) + "," +
                         std::to_string(f) + "," + std::to_string(h) + "," +
                         std::to_string(w) + "]");
    }
    Tensor out({C, f, h, w});
    const auto& xd = x.data();
    auto& od = out.mut_data();
    for (int64_t t = 0; t < f; ++t)
        for (int64_t py = 0; py < gh; ++py)
            for (int64_t px = 0; px < gw; ++px) {
                int64_t row = (t * gh + py) * gw + px;
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t ky = 0; ky < 2; ++ky)
                        for (int64_t kx = 0; kx < 2; ++kx) {
                            int64_t col = c * 4 + ky * 2 + kx;
                            od[size_t(((c * f + t) * h + 2 * py + ky) * w + 2 * px + kx)] =
                                xd[size_t(row * 4 * C + col)];
                        }
            }
    if (want_grad({&x})) {
        attach(out, {x.node()}, [C, f, h, w, gh, gw](TensorNode& self) {
            auto& gx = self.parents[0]->ensure_grad();
            for (int64_t t = 0; t < f; ++t)
                for (int64_t py = 0; py < gh; ++py)
                    for (int64_t px = 0; px < gw; ++px) {
                        int64_t row = (t * gh + py) * gw + px;
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t ky = 0; ky < 2; ++ky)
                                for (int64_t kx = 0; kx < 2; ++kx) {
                                    int64_t col = c * 4 + ky * 2 + kx;
                                    gx[size_t(row * 4 * C + col)] +=
                                        self.grad[size_t(((c * f + t) * h + 2 * py + ky) * w +
                                                         2 * px + kx)];
                                }
                    }
        });
    }
    return out;
}

float l2_diff(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "l2_diff");
    double acc = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i) {
        double d = double(a.data()[i]) - double(b.data()[i]);
        acc += d * d;
    }
    return float(std::sqrt(acc));
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "max_abs_diff");
    float mx = 0.0f;
    for (size_t i = 0; i < a.data().size(); ++i)
        mx = std::max(mx, std::abs(a.data()[i] - b.data()[i]));
    return mx;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (!same_shape(a.shape(), b.shape())) return false;
    return std::memcmp(a.data().data(), b.data().data(),
                       a.data().size() * sizeof(float)) == 0;
}

}  // namespace posegen
