#pragma once

// Dense NCHW tensor with a tape-free reverse-mode autograd graph.
//
// Every Tensor is a handle to a shared node holding its values, an optional
// gradient buffer, and (when it was produced by a differentiable op) the
// parents plus a closure that scatters the node's gradient into them.
// backward() on a scalar walks the graph in reverse topological order.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace aglnet {

/// Raised whenever an input violates a shape, range or configuration contract.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  [[nodiscard]] std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << "(" << s.n << "," << s.c << "," << s.h << "," << s.w << ")";
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
      throw ValidationError("negative tensor dimension " + aglnet::to_string(shape));
    }
    node_->shape = shape;
    node_->value.assign(shape.numel(), fill);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (values.size() != shape.numel()) {
      throw ValidationError("value count does not match shape " + aglnet::to_string(shape));
    }
    node_->shape = shape;
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
  [[nodiscard]] const Shape& shape() const { return node_->shape; }
  [[nodiscard]] std::size_t numel() const { return node_->value.size(); }

  [[nodiscard]] std::span<double> data() { return node_->value; }
  [[nodiscard]] std::span<const double> data() const { return node_->value; }

  [[nodiscard]] double& at(int n, int c, int y, int x) {
    const auto& s = node_->shape;
    return node_->value[((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x];
  }
  [[nodiscard]] double at(int n, int c, int y, int x) const {
    const auto& s = node_->shape;
    return node_->value[((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x];
  }

  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Gradient buffer; zero-filled if nothing has been accumulated yet. A
  /// Tensor is a handle, so this is available through const handles too.
  [[nodiscard]] std::span<double> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  /// Scalar value of a one-element tensor.
  [[nodiscard]] double item() const {
    if (numel() != 1) throw ValidationError("item() on non-scalar tensor " + aglnet::to_string(shape()));
    return node_->value[0];
  }

  /// Copy of the values with no graph attached.
  [[nodiscard]] Tensor detach() const { return Tensor(shape(), node_->value); }
  [[nodiscard]] Tensor clone() const { return detach(); }

  /// Reverse-mode sweep from this scalar.
  void backward() {
    if (numel() != 1) throw ValidationError("backward() requires a scalar tensor");
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    // Iterative DFS post-order; graphs can be thousands of nodes deep.
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::Node* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* node = *it;
      if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
  }

  [[nodiscard]] const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds an op result. The graph edge is recorded only when grad mode is on
  /// and some parent requires a gradient.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward_fn) {
    Tensor out(shape, std::move(values));
    if (!grad_enabled()) return out;
    bool any = std::any_of(parents.begin(), parents.end(),
                           [](const Tensor& t) { return t.defined() && t.requires_grad(); });
    if (!any) return out;
    out.node_->requires_grad = true;
    for (auto& p : parents) {
      if (p.defined()) out.node_->parents.push_back(p.node_);
    }
    out.node_->backward_fn = std::move(backward_fn);
    return out;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

inline bool wants_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(what) + ": shape mismatch " + to_string(a.shape()) +
                          " vs " + to_string(b.shape()));
  }
}

}  // namespace aglnet
