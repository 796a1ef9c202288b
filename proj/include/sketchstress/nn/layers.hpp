#pragma once

#include <cmath>
#include <string>

#include "sketchstress/nn/autograd.hpp"
#include "sketchstress/random.hpp"

namespace sketchstress::nn {

template <class T>
struct Parameter {
  std::string name;
  Var<T> var;
};

/// Ordered collection of trainable tensors; order fixes init and serialization.
template <class T>
class ParameterSet {
 public:
  Var<T> add(const std::string& name, const std::array<int, 4>& shape) {
    params_.push_back({name, Var<T>(Tensor<T>(shape), true)});
    return params_.back().var;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().size();
    return n;
  }

  std::vector<Parameter<T>>& items() { return params_; }
  const std::vector<Parameter<T>>& items() const { return params_; }

 private:
  std::vector<Parameter<T>> params_;
};

template <class T>
struct Conv2d {
  Var<T> weight;
  Var<T> bias;
  int stride = 1;
  int pad = 0;

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

/// Xavier-uniform weights, zero bias.
template <class T>
Conv2d<T> make_conv(ParameterSet<T>& params, const std::string& name, int cin, int cout, int kernel, int stride,
                    int pad, Rng& rng) {
  Conv2d<T> conv;
  conv.weight = params.add(name + ".weight", {cout, cin, kernel, kernel});
  conv.bias = params.add(name + ".bias", {1, cout, 1, 1});
  conv.stride = stride;
  conv.pad = pad;
  const double fan_in = static_cast<double>(cin) * kernel * kernel;
  const double fan_out = static_cast<double>(cout) * kernel * kernel;
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& w : conv.weight.value().data) w = static_cast<T>((2.0 * uniform01(rng) - 1.0) * limit);
  return conv;
}

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
class Adam {
 public:
  Adam(ParameterSet<T>& params, AdamConfig config) : params_(params), config_(config) {
    for (const auto& p : params_.items()) {
      m_.emplace_back(p.var.value().size(), T(0));
      v_.emplace_back(p.var.value().size(), T(0));
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, t_);
    const double c2 = 1.0 - std::pow(config_.beta2, t_);
    const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
    const T step = static_cast<T>(config_.lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(config_.eps);
    auto& items = params_.items();
    for (std::size_t k = 0; k < items.size(); ++k) {
      auto& value = items[k].var.value().data;
      const auto& grad = items[k].var.grad().data;
      if (grad.size() != value.size()) continue;  // untouched this step
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < value.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * grad[i];
        v[i] = b2 * v[i] + (T(1) - b2) * grad[i] * grad[i];
        value[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
    }
  }

  long steps() const { return t_; }

 private:
  ParameterSet<T>& params_;
  AdamConfig config_;
  std::vector<std::vector<T>> m_, v_;
  long t_ = 0;
};

}  // namespace sketchstress::nn
