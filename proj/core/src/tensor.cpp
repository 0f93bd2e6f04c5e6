#include "posegen/tensor.hpp"

#include <unordered_set>

namespace posegen {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape shape, float fill) : node_(std::make_shared<TensorNode>()) {
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("tensor dim must be positive, got " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data.assign(size_t(shape_numel(node_->shape)), fill);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data) {
    Tensor t;
    if (shape_numel(shape) != int64_t(data.size())) {
        throw ShapeError("data size " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    return t;
}

Tensor Tensor::gaussian(Shape shape, Rng& rng, float scale) {
    Tensor t(shape);
    for (auto& v : t.mut_data()) v = rng.normal() * scale;
    return t;
}

Tensor Tensor::clone() const {
    Tensor t;
    t.node_->shape = node_->shape;
    t.node_->data = node_->data;
    return t;
}

Tensor Tensor::detached() const { return clone(); }

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw UsageError("backward expects a scalar loss, got shape " +
                         shape_str(loss.shape()));
    }
    // iterative topological order over the tape
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.push_back({loss.node().get(), 0});
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad()[0] = 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

}  // namespace posegen
