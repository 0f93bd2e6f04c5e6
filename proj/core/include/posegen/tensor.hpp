#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "posegen/error.hpp"
#include "posegen/rng.hpp"

namespace posegen {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

// Reverse-mode tape node. Tensors are shared handles onto these; ops attach
// parents plus a closure that scatters self.grad into the parents' grads.
struct TensorNode {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first touched
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::vector<float>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0f);
        return grad;
    }
};

class Tensor {
  public:
    Tensor() : node_(std::make_shared<TensorNode>()) {}
    explicit Tensor(Shape shape, float fill = 0.0f);
    static Tensor from_data(Shape shape, std::vector<float> data);
    static Tensor scalar(float v) { return from_data({1}, {v}); }
    static Tensor gaussian(Shape shape, Rng& rng, float scale = 1.0f);

    const Shape& shape() const { return node_->shape; }
    int64_t rank() const { return int64_t(node_->shape.size()); }
    int64_t size(int64_t dim) const { return node_->shape[size_t(dim)]; }
    int64_t numel() const { return int64_t(node_->data.size()); }

    const std::vector<float>& data() const { return node_->data; }
    std::vector<float>& mut_data() { return node_->data; }
    const std::vector<float>& grad() const { return node_->grad; }

    float at(int64_t i) const { return node_->data[size_t(i)]; }
    float at2(int64_t i, int64_t j) const {
        return node_->data[size_t(i * size(1) + j)];
    }
    // [c, t, y, x] rank-4 accessor
    float at4(int64_t c, int64_t t, int64_t y, int64_t x) const {
        return node_->data[size_t(((c * size(1) + t) * size(2) + y) * size(3) + x)];
    }
    float& ref4(int64_t c, int64_t t, int64_t y, int64_t x) {
        return node_->data[size_t(((c * size(1) + t) * size(2) + y) * size(3) + x)];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    void zero_grad() { node_->grad.clear(); }

    Tensor clone() const;     // deep copy of data, detached from the tape
    Tensor detached() const;  // same data buffer semantics as clone

    std::shared_ptr<TensorNode>& node() { return node_; }
    const std::shared_ptr<TensorNode>& node() const { return node_; }
    bool same_node(const Tensor& o) const { return node_ == o.node_; }

  private:
    std::shared_ptr<TensorNode> node_;
};

// Tape recording switch. Forward-only code (sampling, metrics) runs inside
// a NoGradGuard so no graph is built and memory stays flat.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

// Runs reverse-mode accumulation from a scalar loss. Throws UsageError if
// loss is not a single element.
void backward(const Tensor& loss);

}  // namespace posegen
