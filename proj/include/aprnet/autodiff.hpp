#pragma once

// Reverse-mode differentiation over a closed operator set. A Tape owns every
// forward value; ops append nodes in execution order, so reverse id order is a
// valid topological order for the backward sweep.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aprnet/kernels.hpp"
#include "aprnet/tensor.hpp"

namespace aprnet {

/// A trainable tensor with its gradient accumulator.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    grad.fill(T(0));
  }
};

template <class T>
using ParamList = std::vector<Parameter<T>*>;

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const noexcept { return id != static_cast<std::size_t>(-1); }
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}); }

  /// Leaf whose gradient is tracked but not tied to a Parameter.
  Var variable(Tensor<T> value) { return push(std::move(value), true, nullptr, {}); }

  /// Leaf bound to a parameter; backward() adds into p.grad.
  Var parameter(Parameter<T>& p) { return push(p.value, true, &p, {}); }

  /// Records a derived node. The backward closure runs only when some input
  /// requires a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  Var record(Tensor<T> value, std::span<const Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    return push(std::move(value), needs, nullptr, needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() root with respect to v; zeros if v did
  /// not contribute.
  Tensor<T> grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad) return *n.grad;
    return Tensor<T>(n.value.shape());
  }

  /// Adds g into the gradient slot of v (no-op for constants).
  void accumulate(Var v, const Tensor<T>& g) {
    auto& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    if (!n.grad) {
      n.grad = std::make_unique<Tensor<T>>(g);
      return;
    }
    add_into(*n.grad, g);
  }

  /// Mutable gradient slot, allocated as zeros; null for constants.
  Tensor<T>* grad_slot(Var v) {
    auto& n = nodes_.at(v.id);
    if (!n.requires_grad) return nullptr;
    if (!n.grad) n.grad = std::make_unique<Tensor<T>>(n.value.shape());
    return n.grad.get();
  }

  void backward(Var root) {
    const auto& r = nodes_.at(root.id);
    if (r.value.size() != 1) {
      throw DomainError("backward: root must be a scalar, got shape " + to_string(r.value.shape()));
    }
    for (auto& n : nodes_) n.grad.reset();
    if (!r.requires_grad) return;
    accumulate(root, Tensor<T>(r.value.shape(), T(1)));
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.grad) continue;
      if (n.backward) {
        // The closure may accumulate into earlier nodes only.
        n.backward(*this, *n.grad);
      }
      if (n.param != nullptr) {
        if (n.param->grad.shape() != n.param->value.shape()) n.param->zero_grad();
        add_into(n.param->grad, *n.grad);
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    std::unique_ptr<Tensor<T>> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var push(Tensor<T> value, bool requires_grad, Parameter<T>* param, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.param = param;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

namespace detail {

/// Records a node whose backward closure needs the node's own id.
template <class T, class F>
Var record_with_self(Tape<T>& t, Tensor<T> value, std::initializer_list<Var> inputs,
                     F make_backward) {
  const Var self{t.size()};
  return t.record(std::move(value), inputs, make_backward(self));
}

}  // namespace detail

namespace ops {

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var add(Tape<T>& t, Var a, Var b) {
  require_same_shape(t.shape(a), t.shape(b), "add");
  Tensor<T> y = t.value(a);
  add_into(y, t.value(b));
  return t.record(std::move(y), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

template <class T>
Var sub(Tape<T>& t, Var a, Var b) {
  require_same_shape(t.shape(a), t.shape(b), "sub");
  Tensor<T> y = t.value(a);
  const auto& vb = t.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= vb[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(a, g);
    if (auto* gb = tp.grad_slot(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

template <class T>
Var mul(Tape<T>& t, Var a, Var b) {
  require_same_shape(t.shape(a), t.shape(b), "mul");
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  Tensor<T> y(va.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = va[i] * vb[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    const auto& xa = tp.value(a);
    const auto& xb = tp.value(b);
    if (auto* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * xb[i];
    }
    if (auto* gb = tp.grad_slot(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * xa[i];
    }
  });
}

template <class T>
Var div(Tape<T>& t, Var a, Var b) {
  require_same_shape(t.shape(a), t.shape(b), "div");
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  Tensor<T> y(va.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = va[i] / vb[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    const auto& xa = tp.value(a);
    const auto& xb = tp.value(b);
    if (auto* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / xb[i];
    }
    if (auto* gb = tp.grad_slot(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i] * xa[i] / (xb[i] * xb[i]);
    }
  });
}

template <class T>
Var scale(Tape<T>& t, Var a, T s) {
  Tensor<T> y = t.value(a);
  for (auto& e : y.storage()) e *= s;
  return t.record(std::move(y), {a}, [a, s](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
    }
  });
}

template <class T>
Var add_scalar(Tape<T>& t, Var a, T s) {
  Tensor<T> y = t.value(a);
  for (auto& e : y.storage()) e += s;
  return t.record(std::move(y), {a}, [a](Tape<T>& tp, const Tensor<T>& g) { tp.accumulate(a, g); });
}

template <class T>
Var square(Tape<T>& t, Var a) {
  const auto& va = t.value(a);
  Tensor<T> y(va.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = va[i] * va[i];
  return t.record(std::move(y), {a}, [a](Tape<T>& tp, const Tensor<T>& g) {
    const auto& x = tp.value(a);
    if (auto* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += T(2) * x[i] * g[i];
    }
  });
}

template <class T>
Var leaky_relu(Tape<T>& t, Var a, T slope) {
  Tensor<T> y = aprnet::leaky_relu(t.value(a), slope);
  return t.record(std::move(y), {a}, [a, slope](Tape<T>& tp, const Tensor<T>& g) {
    const auto& x = tp.value(a);
    if (auto* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += x[i] > T(0) ? g[i] : slope * g[i];
    }
  });
}

/// Stops gradient flow: the result is a constant copy.
template <class T>
Var detach(Tape<T>& t, Var a) {
  return t.constant(t.value(a));
}

// ---------------------------------------------------------------------------
// Linear structure

template <class T>
Var conv2d(Tape<T>& t, Var x, Var w, std::size_t kh, std::size_t kw, std::size_t stride,
           Padding padding, std::optional<Var> bias = std::nullopt) {
  const Tensor<T>* b = bias ? &t.value(*bias) : nullptr;
  Tensor<T> y = aprnet::conv2d(t.value(x), t.value(w), kh, kw, stride, padding, b);
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return t.record(std::move(y), std::span<const Var>(inputs),
                  [=](Tape<T>& tp, const Tensor<T>& g) {
                    conv2d_backward(tp.value(x), tp.value(w), kh, kw, stride, padding, g,
                                    tp.grad_slot(x), tp.grad_slot(w),
                                    bias ? tp.grad_slot(*bias) : nullptr);
                  });
}

template <class T>
Var resize_bilinear(Tape<T>& t, Var x, std::size_t out_h, std::size_t out_w) {
  const Shape in = t.shape(x);
  if (in.h == out_h && in.w == out_w) return x;
  Tensor<T> y = aprnet::resize_bilinear(t.value(x), out_h, out_w);
  return t.record(std::move(y), {x}, [x, in](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* gx = tp.grad_slot(x)) resize_bilinear_backward(in, g, *gx);
  });
}

template <class T>
Var avg_pool_to(Tape<T>& t, Var x, std::size_t out_h, std::size_t out_w) {
  const Shape in = t.shape(x);
  Tensor<T> y = aprnet::avg_pool_to(t.value(x), out_h, out_w);
  return t.record(std::move(y), {x}, [x, in](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* gx = tp.grad_slot(x)) avg_pool_to_backward(in, g, *gx);
  });
}

template <class T>
Var concat_channels(Tape<T>& t, std::span<const Var> xs) {
  std::vector<const Tensor<T>*> ptrs;
  ptrs.reserve(xs.size());
  for (const auto& v : xs) ptrs.push_back(&t.value(v));
  Tensor<T> y = aprnet::concat_channels<T>(std::span<const Tensor<T>* const>(ptrs));
  std::vector<Var> ins(xs.begin(), xs.end());
  return t.record(std::move(y), xs, [ins](Tape<T>& tp, const Tensor<T>& g) {
    std::size_t offset = 0;
    for (const auto& v : ins) {
      const std::size_t c = tp.shape(v).c;
      if (auto* gx = tp.grad_slot(v)) {
        for (std::size_t p = 0; p < g.h() * g.w(); ++p) {
          const T* src = g.data() + p * g.c() + offset;
          T* dst = gx->data() + p * c;
          for (std::size_t i = 0; i < c; ++i) dst[i] += src[i];
        }
      }
      offset += c;
    }
  });
}

template <class T>
Var concat_channels(Tape<T>& t, const std::vector<Var>& xs) {
  return concat_channels(t, std::span<const Var>(xs));
}

// ---------------------------------------------------------------------------
// Reductions and losses. All return 1x1x1 tensors.

template <class T>
Var sum(Tape<T>& t, Var x) {
  const auto& v = t.value(x);
  T s = std::accumulate(v.storage().begin(), v.storage().end(), T(0));
  return t.record(Tensor<T>(Shape{1, 1, 1}, s), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* gx = tp.grad_slot(x)) {
      for (auto& e : gx->storage()) e += g[0];
    }
  });
}

template <class T>
Var mean(Tape<T>& t, Var x) {
  const auto n = static_cast<T>(t.value(x).size());
  return scale(t, sum(t, x), T(1) / n);
}

/// mean |a - b|
template <class T>
Var l1_mean(Tape<T>& t, Var a, Var b) {
  require_same_shape(t.shape(a), t.shape(b), "l1_mean");
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  T s = 0;
  for (std::size_t i = 0; i < va.size(); ++i) s += std::abs(va[i] - vb[i]);
  const T n = static_cast<T>(va.size());
  return t.record(Tensor<T>(Shape{1, 1, 1}, s / n), {a, b},
                  [a, b, n](Tape<T>& tp, const Tensor<T>& g) {
                    const auto& xa = tp.value(a);
                    const auto& xb = tp.value(b);
                    auto* ga = tp.grad_slot(a);
                    auto* gb = tp.grad_slot(b);
                    for (std::size_t i = 0; i < xa.size(); ++i) {
                      const T d = xa[i] - xb[i];
                      const T sg = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                      if (ga) (*ga)[i] += g[0] * sg / n;
                      if (gb) (*gb)[i] -= g[0] * sg / n;
                    }
                  });
}

/// mean (a - b)^2
template <class T>
Var mse_mean(Tape<T>& t, Var a, Var b) {
  require_same_shape(t.shape(a), t.shape(b), "mse_mean");
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  T s = 0;
  for (std::size_t i = 0; i < va.size(); ++i) s += (va[i] - vb[i]) * (va[i] - vb[i]);
  const T n = static_cast<T>(va.size());
  return t.record(Tensor<T>(Shape{1, 1, 1}, s / n), {a, b},
                  [a, b, n](Tape<T>& tp, const Tensor<T>& g) {
                    const auto& xa = tp.value(a);
                    const auto& xb = tp.value(b);
                    auto* ga = tp.grad_slot(a);
                    auto* gb = tp.grad_slot(b);
                    for (std::size_t i = 0; i < xa.size(); ++i) {
                      const T d = T(2) * (xa[i] - xb[i]) / n * g[0];
                      if (ga) (*ga)[i] += d;
                      if (gb) (*gb)[i] -= d;
                    }
                  });
}

/// Numerically stable log(1 + exp(x)).
template <class T>
T softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <class T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

/// Mean binary cross-entropy with logits against a constant label in {0, 1}.
template <class T>
Var bce_with_logits_mean(Tape<T>& t, Var logits, T label) {
  const auto& z = t.value(logits);
  if (!z.all_finite()) throw DomainError("bce_with_logits: non-finite logits");
  T s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    s += label * softplus(-z[i]) + (T(1) - label) * softplus(z[i]);
  }
  const T n = static_cast<T>(z.size());
  return t.record(Tensor<T>(Shape{1, 1, 1}, s / n), {logits},
                  [logits, label, n](Tape<T>& tp, const Tensor<T>& g) {
                    const auto& x = tp.value(logits);
                    if (auto* gx = tp.grad_slot(logits)) {
                      for (std::size_t i = 0; i < x.size(); ++i) {
                        (*gx)[i] += g[0] * (sigmoid(x[i]) - label) / n;
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Ops whose backward reads their own output

template <class T>
Var sqrt(Tape<T>& t, Var a) {
  const auto& va = t.value(a);
  Tensor<T> y(va.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(va[i] > T(0))) throw DomainError("sqrt: argument must be positive");
    y[i] = std::sqrt(va[i]);
  }
  return detail::record_with_self(t, std::move(y), {a}, [a](Var self) {
    return [a, self](Tape<T>& tp, const Tensor<T>& g) {
      const auto& yv = tp.value(self);
      if (auto* ga = tp.grad_slot(a)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / (T(2) * yv[i]);
      }
    };
  });
}

template <class T>
Var softmax_channels(Tape<T>& t, Var x) {
  Tensor<T> y = t.value(x);
  const std::size_t C = y.c();
  for (std::size_t p = 0; p < y.h() * y.w(); ++p) {
    softmax_inplace(std::span<T>(y.data() + p * C, C));
  }
  return detail::record_with_self(t, std::move(y), {x}, [x](Var self) {
    return [x, self](Tape<T>& tp, const Tensor<T>& g) {
      const auto& yv = tp.value(self);
      auto* gx = tp.grad_slot(x);
      if (!gx) return;
      const std::size_t C = yv.c();
      for (std::size_t p = 0; p < yv.h() * yv.w(); ++p) {
        const T* s = yv.data() + p * C;
        const T* gp = g.data() + p * C;
        T dot = 0;
        for (std::size_t i = 0; i < C; ++i) dot += s[i] * gp[i];
        T* d = gx->data() + p * C;
        for (std::size_t i = 0; i < C; ++i) d[i] += s[i] * (gp[i] - dot);
      }
    };
  });
}

}  // namespace ops
}  // namespace aprnet
