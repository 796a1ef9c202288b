#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>

#include "sketchstress/nn/tensor.hpp"

namespace sketchstress::nn {

// Reverse-mode autodiff over NCHW tensors. Each op records a closure that
// pushes the output gradient back into its parents.

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.shape != value.shape || grad.size() != value.size()) grad = Tensor<T>(value.shape);
    return grad;
  }
};

inline thread_local int grad_disabled_depth = 0;

/// Scope guard: ops inside record no graph.
struct NoGradGuard {
  NoGradGuard() { ++grad_disabled_depth; }
  ~NoGradGuard() { --grad_disabled_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node(std::make_shared<Node<T>>()) {
    node->value = std::move(value);
    node->requires_grad = requires_grad;
  }

  const Tensor<T>& value() const { return node->value; }
  Tensor<T>& value() { return node->value; }
  const Tensor<T>& grad() const { return node->grad; }
  bool requires_grad() const { return node && node->requires_grad; }
  bool defined() const { return static_cast<bool>(node); }
  const std::array<int, 4>& shape() const { return node->value.shape; }
  T item() const { return node->value.item(); }

  void zero_grad() {
    if (node->grad.size() == node->value.size()) node->grad.fill(T(0));
  }

  std::shared_ptr<Node<T>> node;
};

template <class T>
Var<T> make_op(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents, std::function<void(Node<T>&)> fn) {
  Var<T> out(std::move(value));
  if (grad_disabled_depth > 0) return out;
  bool any = false;
  for (const auto& p : parents) any = any || (p && p->requires_grad);
  if (!any) return out;
  out.node->requires_grad = true;
  out.node->parents = std::move(parents);
  out.node->backward = std::move(fn);
  return out;
}

template <class T>
Var<T> detach(const Var<T>& x) {
  return Var<T>(x.value());
}

/// Backpropagates from a scalar (or seeds all-ones for a tensor).
template <class T>
void backward(const Var<T>& root) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node.get(), 0}};
  seen.insert(root.node.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node->grad_buffer().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& n = **it;
    if (n.backward) n.backward(n);
  }
}

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
bool wants(const std::shared_ptr<Node<T>>& p) {
  return p && p->requires_grad;
}

struct ConvGeometry {
  int n, cin, h, w, cout, k, stride, pad, ho, wo;
  int rows() const { return cin * k * k; }
  int cols() const { return n * ho * wo; }
};

/// Output columns [lo, hi) whose input column ox*stride - pad + kx lies inside [0, w).
inline std::pair<int, int> valid_span(int kx, const ConvGeometry& g) {
  const int first = g.pad - kx;  // smallest ox*stride allowed
  int lo = first <= 0 ? 0 : (first + g.stride - 1) / g.stride;
  int hi = (g.w - 1 + g.pad - kx) / g.stride + 1;
  if (g.w - 1 + g.pad - kx < 0) hi = 0;
  lo = std::min(lo, g.wo);
  hi = std::clamp(hi, lo, g.wo);
  return {lo, hi};
}

template <class T>
RowMatrix<T> im2col(const Tensor<T>& x, const ConvGeometry& g) {
  RowMatrix<T> col(g.rows(), g.cols());
  const int plane = g.ho * g.wo;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const auto [lo, hi] = valid_span(kx, g);
        T* row = col.data() + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * g.cols();
        for (int in = 0; in < g.n; ++in) {
          T* dst = row + static_cast<std::size_t>(in) * plane;
          for (int oy = 0; oy < g.ho; ++oy) {
            T* out = dst + oy * g.wo;
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) {
              std::fill(out, out + g.wo, T(0));
              continue;
            }
            std::fill(out, out + lo, T(0));
            std::fill(out + hi, out + g.wo, T(0));
            const T* src = &x.data[x.index(in, ci, iy, 0)] - g.pad + kx;
            if (g.stride == 1) {
              std::copy(src + lo, src + hi, out + lo);
            } else {
              for (int ox = lo; ox < hi; ++ox) out[ox] = src[ox * g.stride];
            }
          }
        }
      }
    }
  }
  return col;
}

template <class T>
void col2im_add(const RowMatrix<T>& col, const ConvGeometry& g, Tensor<T>& dx) {
  const int plane = g.ho * g.wo;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const auto [lo, hi] = valid_span(kx, g);
        const T* row = col.data() + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * g.cols();
        for (int in = 0; in < g.n; ++in) {
          const T* src = row + static_cast<std::size_t>(in) * plane;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            T* dst = &dx.data[dx.index(in, ci, iy, 0)] - g.pad + kx;
            const T* s = src + oy * g.wo;
            if (g.stride == 1) {
              for (int ox = lo; ox < hi; ++ox) dst[ox] += s[ox];
            } else {
              for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride] += s[ox];
            }
          }
        }
      }
    }
  }
}

template <class T, class F, class D>
Var<T> unary(const Var<T>& x, F f, D df) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f(xv.data[i]);
  auto px = x.node;
  return make_op<T>(std::move(out), {px}, [px, df](Node<T>& self) {
    auto& gx = px->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += self.grad.data[i] * df(px->value.data[i], self.value.data[i]);
  });
}

}  // namespace detail

/// 2-D convolution, weight (Cout, Cin, k, k), optional bias (1, Cout, 1, 1).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  require(xv.c() == wv.c() && wv.h() == wv.w(), ErrorCode::kInvalidArgument,
          "conv2d: input " + xv.shape_string() + " does not match weight " + wv.shape_string());
  detail::ConvGeometry g{xv.n(), xv.c(), xv.h(), xv.w(), wv.n(), wv.h(), stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  require(g.ho > 0 && g.wo > 0, ErrorCode::kInvalidArgument, "conv2d: input smaller than kernel");

  using Mat = detail::RowMatrix<T>;
  const Mat col = detail::im2col(xv, g);
  Eigen::Map<const Mat> wm(wv.data.data(), g.cout, g.rows());
  const Mat r = wm * col;
  Tensor<T> out(g.n, g.cout, g.ho, g.wo);
  const int plane = g.ho * g.wo;
  for (int in = 0; in < g.n; ++in) {
    for (int co = 0; co < g.cout; ++co) {
      const T b = bias.defined() ? bias.value().data[static_cast<std::size_t>(co)] : T(0);
      const T* src = r.data() + static_cast<std::size_t>(co) * g.cols() + static_cast<std::size_t>(in) * plane;
      T* dst = &out.data[out.index(in, co, 0, 0)];
      for (int p = 0; p < plane; ++p) dst[p] = src[p] + b;
    }
  }

  auto px = x.node, pw = weight.node, pb = bias.node;
  return make_op<T>(std::move(out), {px, pw, pb}, [px, pw, pb, g](Node<T>& self) {
    const int plane = g.ho * g.wo;
    Mat dr(g.cout, g.cols());
    for (int in = 0; in < g.n; ++in) {
      for (int co = 0; co < g.cout; ++co) {
        const T* src = &self.grad.data[self.grad.index(in, co, 0, 0)];
        std::copy(src, src + plane, dr.data() + static_cast<std::size_t>(co) * g.cols() + static_cast<std::size_t>(in) * plane);
      }
    }
    if (detail::wants(pb)) {
      auto& gb = pb->grad_buffer();
      for (int co = 0; co < g.cout; ++co) gb.data[static_cast<std::size_t>(co)] += dr.row(co).sum();
    }
    if (detail::wants(pw)) {
      const Mat col = detail::im2col(px->value, g);
      auto& gw = pw->grad_buffer();
      Eigen::Map<Mat> gwm(gw.data.data(), g.cout, g.rows());
      gwm.noalias() += dr * col.transpose();
    }
    if (detail::wants(px)) {
      Eigen::Map<const Mat> wm(pw->value.data.data(), g.cout, g.rows());
      const Mat dcol = wm.transpose() * dr;
      detail::col2im_add(dcol, g, px->grad_buffer());
    }
  });
}

/// Nearest-neighbour 2x upsampling.
template <class T>
Var<T> upsample2(const Var<T>& x) {
  const auto& xv = x.value();
  Tensor<T> out(xv.n(), xv.c(), 2 * xv.h(), 2 * xv.w());
  for (int in = 0; in < xv.n(); ++in)
    for (int c = 0; c < xv.c(); ++c)
      for (int y = 0; y < out.h(); ++y)
        for (int x0 = 0; x0 < out.w(); ++x0) out.at(in, c, y, x0) = xv.at(in, c, y / 2, x0 / 2);
  auto px = x.node;
  return make_op<T>(std::move(out), {px}, [px](Node<T>& self) {
    auto& gx = px->grad_buffer();
    const auto& g = self.grad;
    for (int in = 0; in < g.n(); ++in)
      for (int c = 0; c < g.c(); ++c)
        for (int y = 0; y < g.h(); ++y)
          for (int x0 = 0; x0 < g.w(); ++x0) gx.at(in, c, y / 2, x0 / 2) += g.at(in, c, y, x0);
  });
}

/// 2x2 average pooling with stride 2 (odd trailing rows/columns dropped).
template <class T>
Var<T> avgpool2(const Var<T>& x) {
  const auto& xv = x.value();
  require(xv.h() >= 2 && xv.w() >= 2, ErrorCode::kInvalidArgument, "avgpool2: input too small");
  Tensor<T> out(xv.n(), xv.c(), xv.h() / 2, xv.w() / 2);
  for (int in = 0; in < xv.n(); ++in)
    for (int c = 0; c < xv.c(); ++c)
      for (int y = 0; y < out.h(); ++y)
        for (int x0 = 0; x0 < out.w(); ++x0)
          out.at(in, c, y, x0) = T(0.25) * (xv.at(in, c, 2 * y, 2 * x0) + xv.at(in, c, 2 * y, 2 * x0 + 1) +
                                            xv.at(in, c, 2 * y + 1, 2 * x0) + xv.at(in, c, 2 * y + 1, 2 * x0 + 1));
  auto px = x.node;
  return make_op<T>(std::move(out), {px}, [px](Node<T>& self) {
    auto& gx = px->grad_buffer();
    const auto& g = self.grad;
    for (int in = 0; in < g.n(); ++in)
      for (int c = 0; c < g.c(); ++c)
        for (int y = 0; y < g.h(); ++y)
          for (int x0 = 0; x0 < g.w(); ++x0) {
            const T v = T(0.25) * g.at(in, c, y, x0);
            gx.at(in, c, 2 * y, 2 * x0) += v;
            gx.at(in, c, 2 * y, 2 * x0 + 1) += v;
            gx.at(in, c, 2 * y + 1, 2 * x0) += v;
            gx.at(in, c, 2 * y + 1, 2 * x0 + 1) += v;
          }
  });
}

/// Channel concatenation.
template <class T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), ErrorCode::kInvalidArgument, "concat: no inputs");
  const auto& first = parts.front().value();
  int channels = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    require(v.n() == first.n() && v.h() == first.h() && v.w() == first.w(), ErrorCode::kInvalidArgument,
            "concat: spatial mismatch " + v.shape_string() + " vs " + first.shape_string());
    channels += v.c();
  }
  Tensor<T> out(first.n(), channels, first.h(), first.w());
  const std::size_t plane = first.plane();
  for (int in = 0; in < first.n(); ++in) {
    int offset = 0;
    for (const auto& p : parts) {
      const auto& v = p.value();
      const T* src = &v.data[v.index(in, 0, 0, 0)];
      std::copy(src, src + v.c() * plane, &out.data[out.index(in, offset, 0, 0)]);
      offset += v.c();
    }
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node);
  return make_op<T>(std::move(out), nodes, [nodes, plane](Node<T>& self) {
    const auto& g = self.grad;
    for (int in = 0; in < g.n(); ++in) {
      int offset = 0;
      for (const auto& p : nodes) {
        const int c = p->value.c();
        if (detail::wants(p)) {
          auto& gp = p->grad_buffer();
          const T* src = &g.data[g.index(in, offset, 0, 0)];
          T* dst = &gp.data[gp.index(in, 0, 0, 0)];
          for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
        }
        offset += c;
      }
    }
  });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return detail::unary(
      x, [slope](T v) { return v > T(0) ? v : slope * v; }, [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return leaky_relu(x, T(0));
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> abs(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return std::abs(v); }, [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Var<T> square(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Var<T> scale(const Var<T>& x, T s) {
  return detail::unary(
      x, [s](T v) { return s * v; }, [s](T, T) { return s; });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, T s) {
  return detail::unary(
      x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

/// a + sa * b, elementwise on equal shapes.
template <class T>
Var<T> axpy(const Var<T>& a, const Var<T>& b, T sb) {
  require_shape(a.value(), b.value(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] + sb * b.value().data[i];
  auto pa = a.node, pb = b.node;
  return make_op<T>(std::move(out), {pa, pb}, [pa, pb, sb](Node<T>& self) {
    if (detail::wants(pa)) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i];
    }
    if (detail::wants(pb)) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += sb * self.grad.data[i];
    }
  });
}

template <class T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  return axpy(a, b, T(1));
}

template <class T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  return axpy(a, b, T(-1));
}

/// Elementwise product; `b` may have one channel and is then broadcast over a's channels.
template <class T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool broadcast = bv.c() == 1 && av.c() != 1;
  require(av.n() == bv.n() && av.h() == bv.h() && av.w() == bv.w() && (broadcast || av.c() == bv.c()),
          ErrorCode::kInvalidArgument, "mul: shape mismatch " + av.shape_string() + " vs " + bv.shape_string());
  const std::size_t plane = av.plane();
  auto b_index = [broadcast, plane, &av](std::size_t i) {
    if (!broadcast) return i;
    const std::size_t sample = i / (static_cast<std::size_t>(av.c()) * plane);
    return sample * plane + i % plane;
  };
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = av.data[i] * bv.data[b_index(i)];
  auto pa = a.node, pb = b.node;
  const int channels = av.c();
  return make_op<T>(std::move(out), {pa, pb}, [pa, pb, broadcast, plane, channels](Node<T>& self) {
    auto b_index = [&](std::size_t i) {
      if (!broadcast) return i;
      const std::size_t sample = i / (static_cast<std::size_t>(channels) * plane);
      return sample * plane + i % plane;
    };
    if (detail::wants(pa)) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i] * pb->value.data[b_index(i)];
    }
    if (detail::wants(pb)) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g.data[b_index(i)] += self.grad.data[i] * pa->value.data[i];
    }
  });
}

/// Mean over every element, as a scalar.
template <class T>
Var<T> mean(const Var<T>& x) {
  const auto& xv = x.value();
  T total(0);
  for (T v : xv.data) total += v;
  Tensor<T> out;
  out.data[0] = total / static_cast<T>(xv.size());
  auto px = x.node;
  return make_op<T>(std::move(out), {px}, [px](Node<T>& self) {
    auto& g = px->grad_buffer();
    const T v = self.grad.data[0] / static_cast<T>(g.size());
    for (auto& e : g.data) e += v;
  });
}

/// Per-sample, per-channel normalization to zero mean and unit variance.
template <class T>
Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5)) {
  const auto& xv = x.value();
  const std::size_t plane = xv.plane();
  const std::size_t groups = static_cast<std::size_t>(xv.n()) * xv.c();
  Tensor<T> out(xv.shape);
  std::vector<T> inv_std(groups);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const T* src = xv.data.data() + gi * plane;
    T mu(0), var(0);
    for (std::size_t i = 0; i < plane; ++i) mu += src[i];
    mu /= static_cast<T>(plane);
    for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<T>(plane);
    inv_std[gi] = T(1) / std::sqrt(var + eps);
    T* dst = out.data.data() + gi * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - mu) * inv_std[gi];
  }
  auto px = x.node;
  return make_op<T>(std::move(out), {px}, [px, inv_std, plane, groups](Node<T>& self) {
    auto& gx = px->grad_buffer();
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const T* g = self.grad.data.data() + gi * plane;
      const T* xh = self.value.data.data() + gi * plane;
      T mg(0), mgx(0);
      for (std::size_t i = 0; i < plane; ++i) {
        mg += g[i];
        mgx += g[i] * xh[i];
      }
      mg /= static_cast<T>(plane);
      mgx /= static_cast<T>(plane);
      T* dst = gx.data.data() + gi * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += inv_std[gi] * (g[i] - mg - xh[i] * mgx);
    }
  });
}

}  // namespace sketchstress::nn
