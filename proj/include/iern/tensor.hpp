#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "iern/error.hpp"

namespace iern {

class Tensor;

namespace detail {

// One node of the recorded computation. Interior nodes are created per forward
// pass and die with the last Tensor handle referencing them; parameter leaves
// live inside ParamSets and persist across steps.
struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    std::vector<Tensor> parents;
    std::function<void(Node&)> backprop;  // pulls from this->grad into parents' grads
    const char* op = "leaf";
    bool requires_grad = false;  // leaf flag; interior nodes derive it from parents
    bool receiving = false;      // set transiently during backward for leaves
    bool bp_useful = false;      // transient: lies on a path to a receiving leaf

    std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
    bool is_leaf() const { return !backprop; }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

inline std::int64_t numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

}  // namespace detail

/// Dense row-major tensor with an optional gradient slot. Computation in
/// double; serialized forms are 32-bit floats. Copies share the underlying
/// node (handle semantics); clone() makes an independent leaf.
class Tensor {
public:
    Tensor() : n_(std::make_shared<detail::Node>()) {}

    explicit Tensor(std::vector<int> shape) : n_(std::make_shared<detail::Node>()) {
        validate_shape(shape);
        n_->shape = std::move(shape);
        n_->value.assign(static_cast<std::size_t>(detail::numel(n_->shape)), 0.0);
    }

    Tensor(std::vector<int> shape, std::vector<double> data)
        : n_(std::make_shared<detail::Node>()) {
        validate_shape(shape);
        if (detail::numel(shape) != static_cast<std::int64_t>(data.size()))
            throw ContractError("Tensor: data length does not match shape");
        for (double v : data)
            if (!std::isfinite(v)) throw ContractError("Tensor: non-finite value rejected");
        n_->shape = std::move(shape);
        n_->value = std::move(data);
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.n_->value) x = v;
        return t;
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    const std::vector<int>& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    std::int64_t size() const { return n_->size(); }
    int dim(int i) const { return n_->shape.at(static_cast<std::size_t>(i)); }

    std::span<double> data() { return n_->value; }
    std::span<const double> data() const { return n_->value; }

    bool has_grad() const { return !n_->grad.empty(); }
    std::span<double> grad() { return n_->grad; }
    std::span<const double> grad() const { return n_->grad; }
    void alloc_grad() { n_->ensure_grad(); }
    void zero_grad() {
        if (!n_->grad.empty()) n_->grad.assign(n_->value.size(), 0.0);
    }
    void drop_grad() { n_->grad.clear(); }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool b) {
        if (b && !n_->is_leaf()) throw ContractError("requires_grad only settable on leaves");
        n_->requires_grad = b;
    }

    bool is_leaf() const { return n_->is_leaf(); }

    double item() const {
        if (size() != 1) throw ContractError("item(): tensor is not scalar");
        return n_->value[0];
    }

    /// Deep copy of values into a fresh leaf (no graph history, no grad).
    Tensor clone() const {
        Tensor t;
        t.n_->shape = n_->shape;
        t.n_->value = n_->value;
        return t;
    }

    bool same_shape(const Tensor& o) const { return n_->shape == o.n_->shape; }

    detail::Node* node() const { return n_.get(); }

    /// Internal: wrap an op result. Skips finite-validation (interior values).
    static Tensor make_op(std::vector<int> shape, std::vector<double> value,
                          std::vector<Tensor> parents, std::function<void(detail::Node&)> back,
                          const char* op) {
        Tensor t;
        t.n_->shape = std::move(shape);
        t.n_->value = std::move(value);
        t.n_->parents = std::move(parents);
        t.n_->backprop = std::move(back);
        t.n_->op = op;
        for (const Tensor& p : t.n_->parents) {
            if (p.n_->requires_grad) {
                t.n_->requires_grad = true;
                break;
            }
        }
        return t;
    }

private:
    static void validate_shape(const std::vector<int>& shape) {
        if (shape.empty()) throw ContractError("Tensor: empty shape");
        for (int d : shape)
            if (d <= 0) throw ContractError("Tensor: dimensions must be positive");
    }

    std::shared_ptr<detail::Node> n_;
};

namespace detail {

inline void topo_from(Node* root, std::vector<Node*>& order) {
    // iterative post-order; parents first in `order`
    std::unordered_set<Node*> done;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next == 0 && done.count(node)) {
            stack.pop_back();
            continue;
        }
        if (next < node->parents.size()) {
            Node* p = node->parents[next].node();
            ++next;
            if (!done.count(p) && p->requires_grad) stack.emplace_back(p, 0);
        } else {
            done.insert(node);
            order.push_back(node);
            stack.pop_back();
        }
    }
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Gradients are accumulated only into
/// leaves listed in `receiving`; the sweep still flows through every interior
/// node, so excluded leaves block nothing upstream.
inline void backward(const Tensor& loss, const std::vector<Tensor>& receiving) {
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar");
    if (loss.is_leaf()) throw StateError("backward: no recorded forward computation");

    for (const Tensor& t : receiving) {
        if (!t.is_leaf()) throw ContractError("backward: receiving entries must be leaves");
        t.node()->receiving = true;
    }

    std::vector<detail::Node*> order;
    detail::topo_from(loss.node(), order);

    // A node's backprop matters only if some ancestor chain ends in a
    // receiving leaf; everything else is skipped (identical results, the
    // excluded subgraphs would only feed grads nobody reads).
    for (detail::Node* n : order) {  // parents-first order
        n->bp_useful = false;
        for (const Tensor& p : n->parents) {
            const detail::Node* pn = p.node();
            if ((pn->is_leaf() && pn->receiving) || pn->bp_useful) {
                n->bp_useful = true;
                break;
            }
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backprop && n->bp_useful && !n->grad.empty()) n->backprop(*n);
    }

    for (const Tensor& t : receiving) t.node()->receiving = false;
}

namespace detail {

/// True when a parent should have gradient accumulated into it.
inline bool wants_grad(const Node& parent) {
    if (!parent.requires_grad) return false;
    if (parent.is_leaf()) return parent.receiving;
    return true;
}

}  // namespace detail

}  // namespace iern
