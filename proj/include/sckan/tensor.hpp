#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sckan/rng.hpp"

namespace sckan {

// Thrown when a caller breaks an operation contract (shape mismatch etc.).
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

// One node of the dynamically recorded computation graph. Values are always
// f64: the project's correctness story is finite-difference verification,
// which is unreliable in 32-bit.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;  // accumulates this->grad into parents

  std::vector<double>& grad_buf() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense f64 tensor handle with optional reverse-mode gradient tracking.
// Ops record a graph while any input requires a gradient; backward() runs the
// chain rule in reverse topological order and then frees the recorded graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

  static Tensor filled(Shape shape, double v) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<std::size_t>(numel(n->shape)), v);
    return Tensor(std::move(n));
  }

  static Tensor from_vector(Shape shape, std::vector<double> data) {
    require(numel(shape) == static_cast<std::int64_t>(data.size()),
            "from_vector: shape " + shape_str(shape) + " does not match data size " +
                std::to_string(data.size()));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v) { return from_vector({1}, {v}); }

  // Leaf parameter with gradient tracking enabled.
  static Tensor param(Shape shape, std::vector<double> data) {
    Tensor t = from_vector(std::move(shape), std::move(data));
    t.n_->requires_grad = true;
    return t;
  }

  static Tensor param_normal(Shape shape, Rng& rng, double stddev) {
    std::vector<double> data(static_cast<std::size_t>(numel(shape)));
    for (auto& v : data) v = rng.normal(0.0, stddev);
    return param(std::move(shape), std::move(data));
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(n_->value.size()); }
  bool requires_grad() const { return n_->requires_grad; }

  std::span<const double> values() const { return n_->value; }
  std::vector<double>& mutable_values() { return n_->value; }

  double item() const {
    require(n_->value.size() == 1, "item: tensor is not scalar");
    return n_->value[0];
  }

  double operator[](std::size_t i) const { return n_->value[i]; }

  // Gradient buffer; zeros if backward has not touched this tensor.
  std::span<const double> grad() const {
    const_cast<detail::Node*>(n_.get())->grad_buf();
    return n_->grad;
  }

  void zero_grad() { n_->grad.assign(n_->value.size(), 0.0); }

  void set_requires_grad(bool b) {
    require(n_->parents.empty(), "set_requires_grad: only valid on leaf tensors");
    n_->requires_grad = b;
  }

  // Leaf copy of the values; no graph history, no gradient tracking.
  Tensor detach() const { return from_vector(n_->shape, n_->value); }

  // Reverse-mode pass from a scalar root. The recorded graph is freed on
  // completion; leaf gradients accumulate until zero_grad().
  void backward() {
    require(n_->value.size() == 1, "backward: root must be scalar");
    std::vector<std::shared_ptr<detail::Node>> order = topo_order();
    n_->grad_buf()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn();
    }
    for (auto& node : order) {
      node->parents.clear();
      node->backward_fn = nullptr;
    }
  }

  std::shared_ptr<detail::Node> node() const { return n_; }

  // --- op construction helpers -------------------------------------------

  static Tensor make_op(Shape shape, std::vector<double> value,
                        std::vector<Tensor> inputs,
                        std::function<void()> backward_fn_factory_done = nullptr) {
    Tensor out = from_vector(std::move(shape), std::move(value));
    bool track = false;
    for (const auto& in : inputs) track = track || in.n_->requires_grad;
    if (track) {
      out.n_->requires_grad = true;
      out.n_->parents.reserve(inputs.size());
      for (const auto& in : inputs) out.n_->parents.push_back(in.n_);
      out.n_->backward_fn = std::move(backward_fn_factory_done);
    }
    return out;
  }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

  std::vector<std::shared_ptr<detail::Node>> topo_order() const {
    std::vector<std::shared_ptr<detail::Node>> order;
    std::unordered_set<detail::Node*> visited;
    // Iterative DFS; graphs can hold tens of thousands of nodes.
    struct Frame {
      std::shared_ptr<detail::Node> node;
      std::size_t next_parent = 0;
    };
    std::vector<Frame> stack;
    if (!n_->requires_grad) return order;
    stack.push_back({n_});
    visited.insert(n_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        auto& p = f.node->parents[f.next_parent++];
        if (p->requires_grad && !visited.count(p.get())) {
          visited.insert(p.get());
          stack.push_back({p});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
    return order;
  }

  std::shared_ptr<detail::Node> n_;
};

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

}  // namespace detail

// --- elementwise arithmetic ------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a[i] + b[i];
  auto an = a.node(), bn = b.node();
  Tensor out = Tensor::make_op(a.shape(), std::move(v), {a, b}, nullptr);
  if (out.requires_grad()) {
    auto on = out.node();
    on->backward_fn = [an, bn, onp = on.get()] {
      const auto& g = onp->grad;
      if (an->requires_grad) {
        auto& ga = an->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    };
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a[i] - b[i];
  Tensor out = Tensor::make_op(a.shape(), std::move(v), {a, b}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    out.node()->backward_fn = [an, bn, onp = on.get()] {
      const auto& g = onp->grad;
      if (an->requires_grad) {
        auto& ga = an->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    };
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a[i] * b[i];
  Tensor out = Tensor::make_op(a.shape(), std::move(v), {a, b}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    out.node()->backward_fn = [an, bn, onp = on.get()] {
      const auto& g = onp->grad;
      if (an->requires_grad) {
        auto& ga = an->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
      }
    };
  }
  return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "div");
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a[i] / b[i];
  Tensor out = Tensor::make_op(a.shape(), std::move(v), {a, b}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    out.node()->backward_fn = [an, bn, onp = on.get()] {
      const auto& g = onp->grad;
      if (an->requires_grad) {
        auto& ga = an->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bn->value[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i)
          gb[i] -= g[i] * an->value[i] / (bn->value[i] * bn->value[i]);
      }
    };
  }
  return out;
}

inline Tensor mul_scalar(const Tensor& a, double s) {
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a[i] * s;
  Tensor out = Tensor::make_op(a.shape(), std::move(v), {a}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    out.node()->backward_fn = [an, s, onp = on.get()] {
      auto& ga = an->grad_buf();
      const auto& g = onp->grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    };
  }
  return out;
}

inline Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a[i] + s;
  Tensor out = Tensor::make_op(a.shape(), std::move(v), {a}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    out.node()->backward_fn = [an, onp = on.get()] {
      auto& ga = an->grad_buf();
      const auto& g = onp->grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
  }
  return out;
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }

// --- elementwise functions ---------------------------------------------------

inline Tensor exp_t(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = std::exp(a[i]);
  Tensor out = Tensor::make_op(a.shape(), std::move(v), {a}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    out.node()->backward_fn = [an, onp = on.get()] {
      auto& ga = an->grad_buf();
      for (std::size_t i = 0; i < onp->grad.size(); ++i)
        ga[i] += onp->grad[i] * onp->value[i];
    };
  }
  return out;
}

inline Tensor log_t(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = std::log(a[i]);
  Tensor out = Tensor::make_op(a.shape(), std::move(v), {a}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    out.node()->backward_fn = [an, onp = on.get()] {
      auto& ga = an->grad_buf();
      for (std::size_t i = 0; i < onp->grad.size(); ++i)
        ga[i] += onp->grad[i] / an->value[i];
    };
  }
  return out;
}

inline Tensor sqrt_t(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = std::sqrt(a[i]);
  Tensor out = Tensor::make_op(a.shape(), std::move(v), {a}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    out.node()->backward_fn = [an, onp = on.get()] {
      auto& ga = an->grad_buf();
      for (std::size_t i = 0; i < onp->grad.size(); ++i)
        ga[i] += onp->grad[i] * 0.5 / onp->value[i];
    };
  }
  return out;
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a[i] > 0.0 ? a[i] : 0.0;
  Tensor out = Tensor::make_op(a.shape(), std::move(v), {a}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    out.node()->backward_fn = [an, onp = on.get()] {
      auto& ga = an->grad_buf();
      for (std::size_t i = 0; i < onp->grad.size(); ++i)
        if (an->value[i] > 0.0) ga[i] += onp->grad[i];
    };
  }
  return out;
}

// x * sigmoid(x); the smooth activation used across the project.
inline Tensor silu(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a[i] / (1.0 + std::exp(-a[i]));
  Tensor out = Tensor::make_op(a.shape(), std::move(v), {a}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    out.node()->backward_fn = [an, onp = on.get()] {
      auto& ga = an->grad_buf();
      for (std::size_t i = 0; i < onp->grad.size(); ++i) {
        const double x = an->value[i];
        const double s = 1.0 / (1.0 + std::exp(-x));
        ga[i] += onp->grad[i] * (s * (1.0 + x * (1.0 - s)));
      }
    };
  }
  return out;
}

// max(a, m) elementwise; gradient passes only where a > m.
inline Tensor clamp_min(const Tensor& a, double m) {
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a[i] > m ? a[i] : m;
  Tensor out = Tensor::make_op(a.shape(), std::move(v), {a}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    out.node()->backward_fn = [an, m, onp = on.get()] {
      auto& ga = an->grad_buf();
      for (std::size_t i = 0; i < onp->grad.size(); ++i)
        if (an->value[i] > m) ga[i] += onp->grad[i];
    };
  }
  return out;
}

// --- reductions --------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += a[i];
  Tensor out = Tensor::make_op({1}, {s}, {a}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    out.node()->backward_fn = [an, onp = on.get()] {
      auto& ga = an->grad_buf();
      const double g = onp->grad[0];
      for (auto& gi : ga) gi += g;
    };
  }
  return out;
}

inline Tensor mean(const Tensor& a) {
  require(a.size() > 0, "mean: empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size()));
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  Tensor out = Tensor::make_op({1}, {s}, {a, b}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    out.node()->backward_fn = [an, bn, onp = on.get()] {
      const double g = onp->grad[0];
      if (an->requires_grad) {
        auto& ga = an->grad_buf();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bn->value[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buf();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * an->value[i];
      }
    };
  }
  return out;
}

// --- shape ops ---------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  require(numel(shape) == a.size(), "reshape: element count mismatch");
  std::vector<double> v(a.values().begin(), a.values().end());
  Tensor out = Tensor::make_op(std::move(shape), std::move(v), {a}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    out.node()->backward_fn = [an, onp = on.get()] {
      auto& ga = an->grad_buf();
      for (std::size_t i = 0; i < onp->grad.size(); ++i) ga[i] += onp->grad[i];
    };
  }
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat: no inputs");
  std::int64_t total = 0;
  for (const auto& p : parts) total += p.size();
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(total));
  for (const auto& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
  Tensor out = Tensor::make_op({static_cast<int>(total)}, std::move(v), parts, nullptr);
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<detail::Node>> nodes;
    nodes.reserve(parts.size());
    for (const auto& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    out.node()->backward_fn = [nodes, onp = on.get()] {
      std::size_t off = 0;
      for (auto& n : nodes) {
        if (n->requires_grad) {
          auto& g = n->grad_buf();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += onp->grad[off + i];
        }
        off += n->value.size();
      }
    };
  }
  return out;
}

// Row r of a [R, N] matrix as a length-N vector.
inline Tensor slice_row(const Tensor& a, int r) {
  require(a.shape().size() == 2, "slice_row: expected 2-D tensor");
  const int rows = a.shape()[0], cols = a.shape()[1];
  require(r >= 0 && r < rows, "slice_row: row out of range");
  std::vector<double> v(a.values().begin() + static_cast<std::size_t>(r) * cols,
                        a.values().begin() + static_cast<std::size_t>(r + 1) * cols);
  Tensor out = Tensor::make_op({cols}, std::move(v), {a}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    out.node()->backward_fn = [an, r, cols, onp = on.get()] {
      auto& ga = an->grad_buf();
      for (int i = 0; i < cols; ++i)
        ga[static_cast<std::size_t>(r) * cols + i] += onp->grad[i];
    };
  }
  return out;
}

// --- similarity --------------------------------------------------------------

// a.b / (max(|a|, eps) * max(|b|, eps)); differentiable in both inputs.
inline Tensor cosine_sim(const Tensor& a, const Tensor& b, double eps_norm = 1e-8) {
  require(a.shape() == b.shape() && a.shape().size() == 1 && a.size() >= 1,
          "cosine_sim: expects equal-length vectors");
  Tensor na = clamp_min(sqrt_t(dot(a, a)), eps_norm);
  Tensor nb = clamp_min(sqrt_t(dot(b, b)), eps_norm);
  return div(dot(a, b), mul(na, nb));
}

// L2-normalizes a vector, guarding degenerate inputs with eps.
inline Tensor l2_normalize(const Tensor& a, double eps_norm = 1e-8) {
  Tensor n = clamp_min(sqrt_t(dot(a, a)), eps_norm);
  // Broadcast the scalar norm across the vector, then divide.
  Tensor nb = Tensor::make_op(a.shape(), std::vector<double>(a.size(), n.item()), {n}, nullptr);
  if (nb.requires_grad()) {
    auto nn = n.node(), on = nb.node();
    nb.node()->backward_fn = [nn, onp = on.get()] {
      auto& g = nn->grad_buf();
      for (double gi : onp->grad) g[0] += gi;
    };
  }
  return div(a, nb);
}

}  // namespace sckan
