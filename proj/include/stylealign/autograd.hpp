#pragma once

// Minimal reverse-mode automatic differentiation over dense tensors.
//
// Every op returns a Var (shared node). When gradient recording is enabled and
// any input requires a gradient, the node keeps its parents and a closure that
// pushes its output gradient back into them. `backward(loss)` walks the graph
// in reverse topological order. Parameter nodes live across graphs and
// accumulate gradients until `zero_grad`.

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "stylealign/errors.hpp"
#include "stylealign/tensor.hpp"

namespace stylealign::nn {

template <typename T>
struct Node;

template <typename T>
using Var = std::shared_ptr<Node<T>>;

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<Var<T>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
  const Shape& shape() const { return value.shape(); }
};

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MapMat = Eigen::Map<MatR<T>>;
template <typename T>
using CMapMat = Eigen::Map<const MatR<T>>;
template <typename T>
using MapVec = Eigen::Map<VecX<T>>;
template <typename T>
using CMapVec = Eigen::Map<const VecX<T>>;

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (grad_enabled()) {
    for (const auto& p : parents) {
      if (p->requires_grad) {
        n->requires_grad = true;
        break;
      }
    }
    if (n->requires_grad) {
      n->parents = std::move(parents);
      n->backward_fn = std::move(fn);
    }
  }
  return n;
}

/// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
template <typename T>
void backward(const Var<T>& root) {
  if (root->value.size() != 1) throw InvalidInput("backward() requires a scalar root");
  if (!root->requires_grad) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Release interior gradients so a later backward through shared subgraphs starts clean.
  for (Node<T>* n : order) {
    if (n->backward_fn) n->grad = Tensor<T>();
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a->shape() != b->shape())
    throw InvalidInput("add: shape mismatch " + shape_str(a->shape()) + " vs " + shape_str(b->shape()));
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (a->shape() != b->shape()) throw InvalidInput("sub: shape mismatch");
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a->shape() != b->shape()) throw InvalidInput("mul: shape mismatch");
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * s;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(0.2)) {
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = a->value[i];
    out[i] = v > T(0) ? v : slope * v;
  }
  return make_result<T>(std::move(out), {a}, [slope](Node<T>& self) {
    const auto& x = self.parents[0]->value;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (x[i] > T(0) ? T(1) : slope);
  });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a->value[i]);
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * (T(1) - y * y);
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a->value.reshaped(std::move(shape));
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Concatenates along the leading dimension; trailing dimensions must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw InvalidInput("concat: no inputs");
  Shape shape = parts[0]->shape();
  int lead = 0;
  for (const auto& p : parts) {
    Shape s = p->shape();
    if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1))
      throw InvalidInput("concat: trailing shape mismatch " + shape_str(s) + " vs " + shape_str(shape));
    lead += s[0];
  }
  shape[0] = lead;
  Tensor<T> out(shape);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->value.data(), p->value.data() + p->value.size(), out.data() + off);
    off += p->value.size();
  }
  return make_result<T>(std::move(out), parts, [](Node<T>& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->value.size();
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

/// Contiguous 1-D window [offset, offset + n) of the flattened input.
template <typename T>
Var<T> slice(const Var<T>& a, std::size_t offset, std::size_t n) {
  if (offset + n > a->value.size()) throw InvalidInput("slice: window exceeds tensor size");
  Tensor<T> out({static_cast<int>(n)});
  std::copy_n(a->value.data() + offset, n, out.data());
  return make_result<T>(std::move(out), {a}, [offset, n](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data() + offset;
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = T(0);
  for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  return make_result<T>(Tensor<T>({1}, s), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T d = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d;
  });
}

/// Mean of (a - b)^2 over all elements.
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  if (a->shape() != b->shape())
    throw InvalidInput("mse: shape mismatch " + shape_str(a->shape()) + " vs " + shape_str(b->shape()));
  const std::size_t n = a->value.size();
  T s = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T d = a->value[i] - b->value[i];
    s += d * d;
  }
  return make_result<T>(Tensor<T>({1}, s / T(n)), {a, b}, [n](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const T k = T(2) * self.grad[0] / T(n);
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] += k * (av[i] - bv[i]);
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] -= k * (av[i] - bv[i]);
    }
  });
}

/// KL(N(mu, exp(logvar)) || N(0, I)) summed over dimensions.
template <typename T>
Var<T> kl_unit_gaussian(const Var<T>& mu, const Var<T>& logvar) {
  if (mu->shape() != logvar->shape()) throw InvalidInput("kl: mu/logvar shape mismatch");
  T s = T(0);
  for (std::size_t i = 0; i < mu->value.size(); ++i) {
    const T m = mu->value[i], lv = logvar->value[i];
    s += m * m + std::exp(lv) - lv - T(1);
  }
  return make_result<T>(Tensor<T>({1}, T(0.5) * s), {mu, logvar}, [](Node<T>& self) {
    const T d = self.grad[0];
    const auto& m = self.parents[0]->value;
    const auto& lv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * m[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * T(0.5) * (std::exp(lv[i]) - T(1));
    }
  });
}

/// z = mu + exp(logvar / 2) * eps, with eps held fixed.
template <typename T>
Var<T> reparameterize(const Var<T>& mu, const Var<T>& logvar, const Tensor<T>& eps) {
  if (mu->shape() != logvar->shape() || mu->shape() != eps.shape())
    throw InvalidInput("reparameterize: shape mismatch");
  Tensor<T> out(mu->shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = mu->value[i] + std::exp(T(0.5) * logvar->value[i]) * eps[i];
  return make_result<T>(std::move(out), {mu, logvar}, [eps](Node<T>& self) {
    const auto& lv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += self.grad[i] * T(0.5) * std::exp(T(0.5) * lv[i]) * eps[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Spatial ops on (C, H, W)

namespace detail {

template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int oh, int ow, T* cols) {
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + (static_cast<std::size_t>(ci * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int c, int h, int w, int k, int stride, int pad, int oh, int ow, T* x) {
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(ci * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * ow;
          T* dst = x + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution. x: (C, H, W); weight: (O, C, k, k); bias: (O).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const Shape& xs = x->shape();
  const Shape& ws = weight->shape();
  if (xs.size() != 3 || ws.size() != 4 || ws[1] != xs[0] || ws[2] != ws[3])
    throw InvalidInput("conv2d: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
  const int c = xs[0], h = xs[1], w = xs[2];
  const int o = ws[0], k = ws[2];
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw InvalidInput("conv2d: input too small");
  const int ck = c * k * k;
  const int plane = oh * ow;

  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(ck) * plane);
  detail::im2col(x->value.data(), c, h, w, k, stride, pad, oh, ow, cols->data());

  Tensor<T> out({o, oh, ow});
  MapMat<T> y(out.data(), o, plane);
  CMapMat<T> wm(weight->value.data(), o, ck);
  CMapMat<T> cm(cols->data(), ck, plane);
  y.noalias() = wm * cm;
  CMapVec<T> bv(bias->value.data(), o);
  y.colwise() += bv;

  return make_result<T>(std::move(out), {x, weight, bias},
                        [cols, c, h, w, k, stride, pad, oh, ow, o, ck, plane](Node<T>& self) {
                          CMapMat<T> dy(self.grad.data(), o, plane);
                          auto& xn = self.parents[0];
                          auto& wn = self.parents[1];
                          auto& bn = self.parents[2];
                          CMapMat<T> cm(cols->data(), ck, plane);
                          if (wn->requires_grad) {
                            MapMat<T> dw(wn->grad_buffer().data(), o, ck);
                            dw.noalias() += dy * cm.transpose();
                          }
                          if (bn->requires_grad) {
                            MapVec<T> db(bn->grad_buffer().data(), o);
                            db += dy.rowwise().sum();
                          }
                          if (xn->requires_grad) {
                            MatR<T> dcols(ck, plane);
                            CMapMat<T> wm(wn->value.data(), o, ck);
                            dcols.noalias() = wm.transpose() * dy;
                            detail::col2im(dcols.data(), c, h, w, k, stride, pad, oh, ow,
                                           xn->grad_buffer().data());
                          }
                        });
}

/// Fully connected layer on the flattened input. weight: (O, I); bias: (O).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Shape& ws = weight->shape();
  const int o = ws.at(0), in = ws.at(1);
  if (static_cast<int>(x->value.size()) != in)
    throw InvalidInput("linear: input size " + std::to_string(x->value.size()) + ", expected " +
                       std::to_string(in));
  Tensor<T> out({o});
  MapVec<T> y(out.data(), o);
  y.noalias() = CMapMat<T>(weight->value.data(), o, in) * CMapVec<T>(x->value.data(), in);
  y += CMapVec<T>(bias->value.data(), o);
  return make_result<T>(std::move(out), {x, weight, bias}, [o, in](Node<T>& self) {
    CMapVec<T> dy(self.grad.data(), o);
    auto& xn = self.parents[0];
    auto& wn = self.parents[1];
    auto& bn = self.parents[2];
    if (wn->requires_grad) {
      MapMat<T> dw(wn->grad_buffer().data(), o, in);
      dw.noalias() += dy * CMapVec<T>(xn->value.data(), in).transpose();
    }
    if (bn->requires_grad) MapVec<T>(bn->grad_buffer().data(), o) += dy;
    if (xn->requires_grad) {
      MapVec<T> dx(xn->grad_buffer().data(), in);
      dx.noalias() += CMapMat<T>(wn->value.data(), o, in).transpose() * dy;
    }
  });
}

template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  const Shape& s = x->shape();
  const int c = s.at(0), h = s.at(1), w = s.at(2);
  Tensor<T> out({c, 2 * h, 2 * w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) out.at(ci, y, xx) = x->value.at(ci, y / 2, xx / 2);
  return make_result<T>(std::move(out), {x}, [c, h, w](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) g.at(ci, y / 2, xx / 2) += self.grad.at(ci, y, xx);
  });
}

template <typename T>
Var<T> avgpool2x(const Var<T>& x) {
  const Shape& s = x->shape();
  const int c = s.at(0), h = s.at(1) / 2, w = s.at(2) / 2;
  if (h == 0 || w == 0) throw InvalidInput("avgpool2x: input too small");
  Tensor<T> out({c, h, w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        out.at(ci, y, xx) = T(0.25) * (x->value.at(ci, 2 * y, 2 * xx) + x->value.at(ci, 2 * y, 2 * xx + 1) +
                                       x->value.at(ci, 2 * y + 1, 2 * xx) +
                                       x->value.at(ci, 2 * y + 1, 2 * xx + 1));
  return make_result<T>(std::move(out), {x}, [c, h, w](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const T d = T(0.25) * self.grad.at(ci, y, xx);
          g.at(ci, 2 * y, 2 * xx) += d;
          g.at(ci, 2 * y, 2 * xx + 1) += d;
          g.at(ci, 2 * y + 1, 2 * xx) += d;
          g.at(ci, 2 * y + 1, 2 * xx + 1) += d;
        }
  });
}

/// (C, H, W) -> (C)
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape& s = x->shape();
  const int c = s.at(0);
  const std::size_t plane = static_cast<std::size_t>(s.at(1)) * s.at(2);
  Tensor<T> out({c});
  for (int ci = 0; ci < c; ++ci) {
    T acc = T(0);
    const T* p = x->value.data() + ci * plane;
    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    out[ci] = acc / T(plane);
  }
  return make_result<T>(std::move(out), {x}, [c, plane](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int ci = 0; ci < c; ++ci) {
      const T d = self.grad[ci] / T(plane);
      T* p = g.data() + ci * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += d;
    }
  });
}

/// Per-channel affine modulation: h * (1 + gamma) + beta, gamma/beta of shape (C).
template <typename T>
Var<T> film(const Var<T>& h, const Var<T>& gamma, const Var<T>& beta) {
  const Shape& s = h->shape();
  const int c = s.at(0);
  if (static_cast<int>(gamma->value.size()) != c || static_cast<int>(beta->value.size()) != c)
    throw InvalidInput("film: modulation size does not match channel count");
  const std::size_t plane = static_cast<std::size_t>(s.at(1)) * s.at(2);
  Tensor<T> out(s);
  for (int ci = 0; ci < c; ++ci) {
    const T a = T(1) + gamma->value[ci], b = beta->value[ci];
    const T* src = h->value.data() + ci * plane;
    T* dst = out.data() + ci * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * a + b;
  }
  return make_result<T>(std::move(out), {h, gamma, beta}, [c, plane](Node<T>& self) {
    auto& hn = self.parents[0];
    auto& gn = self.parents[1];
    auto& bn = self.parents[2];
    for (int ci = 0; ci < c; ++ci) {
      const T* dy = self.grad.data() + ci * plane;
      const T* hv = hn->value.data() + ci * plane;
      if (hn->requires_grad) {
        T* dh = hn->grad_buffer().data() + ci * plane;
        const T a = T(1) + gn->value[ci];
        for (std::size_t i = 0; i < plane; ++i) dh[i] += dy[i] * a;
      }
      if (gn->requires_grad) {
        T acc = T(0);
        for (std::size_t i = 0; i < plane; ++i) acc += dy[i] * hv[i];
        gn->grad_buffer()[ci] += acc;
      }
      if (bn->requires_grad) {
        T acc = T(0);
        for (std::size_t i = 0; i < plane; ++i) acc += dy[i];
        bn->grad_buffer()[ci] += acc;
      }
    }
  });
}

}  // namespace stylealign::nn
