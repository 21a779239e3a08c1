#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "stylealign/autograd.hpp"
#include "stylealign/rng.hpp"

namespace stylealign::nn {

/// Ordered, named collection of trainable tensors. Order is construction order
/// and is what checkpoints and the optimizer rely on.
template <typename T>
class ParameterSet {
 public:
  Var<T> add(std::string name, Tensor<T> init) {
    auto v = parameter(std::move(init));
    entries_.emplace_back(std::move(name), v);
    return v;
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, v] : entries_) n += v->value.size();
    return n;
  }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  const Var<T>& operator[](std::size_t i) const { return entries_[i].second; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad() {
    for (auto& [_, v] : entries_) v->grad = Tensor<T>();
  }

  bool grads_finite() const {
    for (const auto& [_, v] : entries_)
      for (std::size_t i = 0; i < v->grad.size(); ++i)
        if (!std::isfinite(static_cast<double>(v->grad[i]))) return false;
    return true;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
};

/// He-normal initialisation drawn in double precision so float and double
/// models built from one seed hold the same (rounded) values.
template <typename T>
Tensor<T> he_normal(Shape shape, int fan_in, Rng& rng, double gain = std::sqrt(2.0 / (1.0 + 0.04))) {
  Tensor<T> t(std::move(shape));
  const double sd = gain / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.normal() * sd);
  return t;
}

template <typename T>
struct Conv2d {
  Var<T> weight, bias;
  int stride = 1, pad = 1;

  static Conv2d make(ParameterSet<T>& ps, const std::string& name, int cin, int cout, int k, int stride,
                     Rng& rng, double gain_scale = 1.0) {
    Conv2d c;
    c.weight = ps.add(name + ".weight",
                      he_normal<T>({cout, cin, k, k}, cin * k * k, rng, gain_scale * std::sqrt(2.0 / 1.04)));
    c.bias = ps.add(name + ".bias", Tensor<T>({cout}));
    c.stride = stride;
    c.pad = k / 2;
    return c;
  }
  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
  int out_channels() const { return weight->shape()[0]; }
};

template <typename T>
struct Linear {
  Var<T> weight, bias;

  static Linear make(ParameterSet<T>& ps, const std::string& name, int in, int out, Rng& rng,
                     double gain = 1.0) {
    Linear l;
    l.weight = ps.add(name + ".weight", he_normal<T>({out, in}, in, rng, gain));
    l.bias = ps.add(name + ".bias", Tensor<T>({out}));
    return l;
  }
  Var<T> operator()(const Var<T>& x) const { return linear(x, weight, bias); }
};

/// Stride-2 residual block without normalisation:
/// out = lrelu(conv3x3(lrelu(conv3x3_s2(x))) + conv1x1_s2(x)).
template <typename T>
struct ResidualDown {
  Conv2d<T> first, second, shortcut;

  static ResidualDown make(ParameterSet<T>& ps, const std::string& name, int cin, int cout, Rng& rng) {
    ResidualDown b;
    b.first = Conv2d<T>::make(ps, name + ".conv1", cin, cout, 3, 2, rng);
    b.second = Conv2d<T>::make(ps, name + ".conv2", cout, cout, 3, 1, rng, 0.5);
    b.shortcut = Conv2d<T>::make(ps, name + ".shortcut", cin, cout, 1, 2, rng, 0.5);
    return b;
  }
  Var<T> operator()(const Var<T>& x) const {
    auto h = leaky_relu(first(x));
    return leaky_relu(add(second(h), shortcut(x)));
  }
};

/// Same-resolution residual block; the shortcut is a 1x1 projection.
template <typename T>
struct ResidualBlock {
  Conv2d<T> first, second, shortcut;

  static ResidualBlock make(ParameterSet<T>& ps, const std::string& name, int cin, int cout, Rng& rng) {
    ResidualBlock b;
    b.first = Conv2d<T>::make(ps, name + ".conv1", cin, cout, 3, 1, rng);
    b.second = Conv2d<T>::make(ps, name + ".conv2", cout, cout, 3, 1, rng, 0.5);
    b.shortcut = Conv2d<T>::make(ps, name + ".shortcut", cin, cout, 1, 1, rng, 0.5);
    return b;
  }
  Var<T> operator()(const Var<T>& x) const {
    auto h = leaky_relu(first(x));
    return leaky_relu(add(second(h), shortcut(x)));
  }
};

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are kept in double regardless of
/// the parameter type.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(const ParameterSet<T>& params, AdamSettings s) : settings_(s) {
    for (const auto& [_, v] : params) {
      m_.emplace_back(v->value.size(), 0.0);
      v_.emplace_back(v->value.size(), 0.0);
    }
  }

  void step(ParameterSet<T>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& node = *params[p];
      if (node.grad.empty()) continue;
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double g = static_cast<double>(node.grad[i]);
        m[i] = settings_.beta1 * m[i] + (1.0 - settings_.beta1) * g;
        v[i] = settings_.beta2 * v[i] + (1.0 - settings_.beta2) * g * g;
        const double update = lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + settings_.eps);
        node.value[i] = static_cast<T>(static_cast<double>(node.value[i]) - update);
      }
    }
  }

  long long steps() const { return t_; }
  void set_steps(long long t) { t_ = t; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  const AdamSettings& settings() const { return settings_; }

 private:
  AdamSettings settings_;
  std::vector<std::vector<double>> m_, v_;
  long long t_ = 0;
};

/// Linear interpolation from `start` to `end` over `total` steps.
inline double linear_lr(double start, double end, long long step, long long total) {
  if (total <= 1) return start;
  const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(total - 1));
  return start * (1.0 - f) + end * f;
}

}  // namespace stylealign::nn
