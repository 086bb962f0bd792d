#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace ingraph {

using Shape = std::vector<std::size_t>;

// Error taxonomy. Shape/Value/Usage map to CLI exit code 1, Numeric to 2.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ValueError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

// Fault-injection hook for the grad-check command: scales the matmul
// input-gradient so a deliberately broken backward rule is detectable.
inline double matmul_backward_fault = 0.0;

}  // namespace detail

// Dense row-major 64-bit tensor with reverse-mode autodiff. Copying a
// Tensor copies the handle; the storage and tape node are shared.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode>()) {
    node_->shape = std::move(shape);
    node_->values.assign(shape_numel(node_->shape), fill);
    node_->requires_grad = requires_grad;
  }

  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false) {
    if (values.size() != shape_numel(shape))
      throw ShapeError("tensor: " + std::to_string(values.size()) +
                       " values do not fill shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->values.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  const std::vector<double>& values() const { return node_->values; }
  std::vector<double>& mutable_values() { return node_->values; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool b) {
    if (node_->backprop)
      throw UsageError("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = b;
  }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<double>& grad() const {
    if (!has_grad()) throw UsageError("tensor has no gradient; run backward first");
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  // Scalar convenience accessor.
  double value() const {
    if (numel() != 1)
      throw UsageError("value() called on non-scalar tensor " + shape_str(shape()));
    return node_->values[0];
  }

  double at(std::initializer_list<std::size_t> idx) const {
    return node_->values[flat_index(idx)];
  }
  void set(std::initializer_list<std::size_t> idx, double v) {
    node_->values[flat_index(idx)] = v;
  }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
    const Shape& s = node_->shape;
    if (idx.size() != s.size())
      throw ShapeError("index rank does not match tensor rank " + shape_str(s));
    std::size_t flat = 0, i = 0;
    for (std::size_t v : idx) {
      flat = flat * s[i] + v;
      ++i;
    }
    return flat;
  }

  std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs,
                      std::function<void(TensorNode&)> backprop) {
  Tensor out = Tensor::from_values(std::move(shape), std::move(values));
  bool needs_grad = false;
  for (const Tensor& t : inputs) needs_grad = needs_grad || t.requires_grad();
  if (needs_grad) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) node->parents.push_back(t.node());
    node->backprop = std::move(backprop);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward operations
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  std::vector<double> out(m * p, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t t = 0; t < k; ++t) {
      const double x = av[i * k + t];
      const double* brow = &bv[t * p];
      double* orow = &out[i * p];
      for (std::size_t j = 0; j < p; ++j) orow[j] += x * brow[j];
    }
  return detail::make_op(
      {m, p}, std::move(out), {a, b}, [m, k, p](detail::TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {
          const double fault = 1.0 + detail::matmul_backward_fault;
          auto& ga = pa.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t t = 0; t < k; ++t) {
              double acc = 0.0;
              for (std::size_t j = 0; j < p; ++j)
                acc += g[i * p + j] * pb.values[t * p + j];
              ga[i * k + t] += acc * fault;
            }
        }
        if (pb.requires_grad) {
          auto& gb = pb.ensure_grad();
          for (std::size_t t = 0; t < k; ++t)
            for (std::size_t j = 0; j < p; ++j) {
              double acc = 0.0;
              for (std::size_t i = 0; i < m; ++i)
                acc += pa.values[i * k + t] * g[i * p + j];
              gb[t * p + j] += acc;
            }
        }
      });
}

inline Tensor transpose2d(const Tensor& x) {
  if (x.shape().size() != 2)
    throw ShapeError("transpose2d: expected rank-2 tensor, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return detail::make_op({c, r}, std::move(out), {x},
                         [r, c](detail::TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& gp = p.ensure_grad();
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j)
                               gp[i * c + j] += self.grad[j * r + i];
                         });
}

// Per-location affine map over the channel axis of an [H,W,Din] map.
inline Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.shape().size() != 3)
    throw ShapeError("conv1x1: input must be [H,W,D], got " + shape_str(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1), din = x.dim(2);
  if (weight.shape().size() != 2 || weight.dim(0) != din)
    throw ShapeError("conv1x1: weight " + shape_str(weight.shape()) +
                     " does not match input channels " + shape_str(x.shape()));
  const std::size_t dout = weight.dim(1);
  if (bias.shape() != Shape{dout})
    throw ShapeError("conv1x1: bias " + shape_str(bias.shape()) + " does not match [" +
                     std::to_string(dout) + "]");
  const std::size_t l = h * w;
  std::vector<double> out(l * dout);
  const auto& xv = x.values();
  const auto& wv = weight.values();
  const auto& bv = bias.values();
  for (std::size_t p = 0; p < l; ++p) {
    double* orow = &out[p * dout];
    for (std::size_t o = 0; o < dout; ++o) orow[o] = bv[o];
    for (std::size_t i = 0; i < din; ++i) {
      const double xval = xv[p * din + i];
      const double* wrow = &wv[i * dout];
      for (std::size_t o = 0; o < dout; ++o) orow[o] += xval * wrow[o];
    }
  }
  return detail::make_op(
      {h, w, dout}, std::move(out), {x, weight, bias},
      [l, din, dout](detail::TensorNode& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& g = self.grad;
        if (px.requires_grad) {
          auto& gx = px.ensure_grad();
          for (std::size_t p = 0; p < l; ++p)
            for (std::size_t i = 0; i < din; ++i) {
              double acc = 0.0;
              for (std::size_t o = 0; o < dout; ++o)
                acc += g[p * dout + o] * pw.values[i * dout + o];
              gx[p * din + i] += acc;
            }
        }
        if (pw.requires_grad) {
          auto& gw = pw.ensure_grad();
          for (std::size_t p = 0; p < l; ++p)
            for (std::size_t i = 0; i < din; ++i) {
              const double xval = px.values[p * din + i];
              for (std::size_t o = 0; o < dout; ++o)
                gw[i * dout + o] += xval * g[p * dout + o];
            }
        }
        if (pb.requires_grad) {
          auto& gb = pb.ensure_grad();
          for (std::size_t p = 0; p < l; ++p)
            for (std::size_t o = 0; o < dout; ++o) gb[o] += g[p * dout + o];
        }
      });
}

inline Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeError("reshape: cannot reshape " + shape_str(x.shape()) + " to " +
                     shape_str(new_shape));
  return detail::make_op(std::move(new_shape), x.values(), {x},
                         [](detail::TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& gp = p.ensure_grad();
                           for (std::size_t i = 0; i < gp.size(); ++i)
                             gp[i] += self.grad[i];
                         });
}

namespace detail {

struct AxisBlocks {
  std::size_t outer, inner;  // products of dims before/after the axis
};

inline AxisBlocks axis_blocks(const Shape& s, std::size_t axis) {
  AxisBlocks b{1, 1};
  for (std::size_t i = 0; i < axis; ++i) b.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) b.inner *= s[i];
  return b;
}

}  // namespace detail

inline Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || axis >= sa.size())
    throw ShapeError("concat: incompatible shapes " + shape_str(sa) + " and " +
                     shape_str(sb) + " on axis " + std::to_string(axis));
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (i != axis && sa[i] != sb[i])
      throw ShapeError("concat: incompatible shapes " + shape_str(sa) + " and " +
                       shape_str(sb) + " on axis " + std::to_string(axis));
  Shape out_shape = sa;
  out_shape[axis] = sa[axis] + sb[axis];
  const auto blocks = detail::axis_blocks(sa, axis);
  const std::size_t arow = sa[axis] * blocks.inner;
  const std::size_t brow = sb[axis] * blocks.inner;
  std::vector<double> out(shape_numel(out_shape));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t o = 0; o < blocks.outer; ++o) {
    std::copy_n(&av[o * arow], arow, &out[o * (arow + brow)]);
    std::copy_n(&bv[o * brow], brow, &out[o * (arow + brow) + arow]);
  }
  return detail::make_op(
      std::move(out_shape), std::move(out), {a, b},
      [outer = blocks.outer, arow, brow](detail::TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t o = 0; o < outer; ++o) {
          const double* g = &self.grad[o * (arow + brow)];
          if (pa.requires_grad) {
            auto& ga = pa.ensure_grad();
            for (std::size_t i = 0; i < arow; ++i) ga[o * arow + i] += g[i];
          }
          if (pb.requires_grad) {
            auto& gb = pb.ensure_grad();
            for (std::size_t i = 0; i < brow; ++i) gb[o * brow + i] += g[arow + i];
          }
        }
      });
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
                    std::size_t len) {
  const Shape& s = x.shape();
  if (axis >= s.size() || start + len > s[axis])
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for " +
                     shape_str(s) + " axis " + std::to_string(axis));
  Shape out_shape = s;
  out_shape[axis] = len;
  const auto blocks = detail::axis_blocks(s, axis);
  const std::size_t xrow = s[axis] * blocks.inner;
  const std::size_t orow = len * blocks.inner;
  const std::size_t off = start * blocks.inner;
  std::vector<double> out(shape_numel(out_shape));
  const auto& xv = x.values();
  for (std::size_t o = 0; o < blocks.outer; ++o)
    std::copy_n(&xv[o * xrow + off], orow, &out[o * orow]);
  return detail::make_op(std::move(out_shape), std::move(out), {x},
                         [outer = blocks.outer, xrow, orow, off](detail::TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& gp = p.ensure_grad();
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t i = 0; i < orow; ++i)
                               gp[o * xrow + off + i] += self.grad[o * orow + i];
                         });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return detail::make_op(a.shape(), std::move(out), {a, b},
                         [](detail::TensorNode& self) {
                           for (auto& p : self.parents) {
                             if (!p->requires_grad) continue;
                             auto& gp = p->ensure_grad();
                             for (std::size_t i = 0; i < gp.size(); ++i)
                               gp[i] += self.grad[i];
                           }
                         });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.values()[i]);
  return detail::make_op(x.shape(), std::move(out), {x},
                         [](detail::TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& gp = p.ensure_grad();
                           for (std::size_t i = 0; i < gp.size(); ++i)
                             if (p.values[i] > 0.0) gp[i] += self.grad[i];
                         });
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  const double hi = std::nextafter(1.0, 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    double s;
    if (v >= 0.0) {
      s = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      s = e / (1.0 + e);
    }
    out[i] = std::clamp(s, 1e-300, hi);  // keep the open interval (0,1)
  }
  return detail::make_op(x.shape(), std::move(out), {x},
                         [](detail::TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& gp = p.ensure_grad();
                           for (std::size_t i = 0; i < gp.size(); ++i) {
                             const double s = self.values[i];
                             gp[i] += self.grad[i] * s * (1.0 - s);
                           }
                         });
}

inline Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * factor;
  return detail::make_op(x.shape(), std::move(out), {x},
                         [factor](detail::TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& gp = p.ensure_grad();
                           for (std::size_t i = 0; i < gp.size(); ++i)
                             gp[i] += self.grad[i] * factor;
                         });
}

inline Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return detail::make_op({1}, {acc}, {x}, [](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gp = p.ensure_grad();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[0];
  });
}

// Mean over the spatial locations of an [H,W,D] map.
inline Tensor global_avg_pool(const Tensor& x) {
  if (x.shape().size() != 3)
    throw ShapeError("global_avg_pool: input must be [H,W,D], got " +
                     shape_str(x.shape()));
  const std::size_t l = x.dim(0) * x.dim(1), d = x.dim(2);
  std::vector<double> out(d, 0.0);
  for (std::size_t p = 0; p < l; ++p)
    for (std::size_t c = 0; c < d; ++c) out[c] += x.values()[p * d + c];
  for (std::size_t c = 0; c < d; ++c) out[c] /= static_cast<double>(l);
  return detail::make_op({d}, std::move(out), {x},
                         [l, d](detail::TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& gp = p.ensure_grad();
                           const double inv = 1.0 / static_cast<double>(l);
                           for (std::size_t q = 0; q < l; ++q)
                             for (std::size_t c = 0; c < d; ++c)
                               gp[q * d + c] += self.grad[c] * inv;
                         });
}

// Non-overlapping 2x2 mean over the spatial axes; a trailing odd row or
// column is dropped.
inline Tensor avg_pool2x2(const Tensor& x) {
  if (x.shape().size() != 3 || x.dim(0) < 2 || x.dim(1) < 2)
    throw ShapeError("avg_pool2x2: input must be [H>=2,W>=2,D], got " +
                     shape_str(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1), d = x.dim(2);
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<double> out(oh * ow * d, 0.0);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t c = 0; c < d; ++c) {
        const std::size_t r = 2 * i, q = 2 * j;
        const double sum = xv[(r * w + q) * d + c] + xv[(r * w + q + 1) * d + c] +
                           xv[((r + 1) * w + q) * d + c] +
                           xv[((r + 1) * w + q + 1) * d + c];
        out[(i * ow + j) * d + c] = 0.25 * sum;
      }
  return detail::make_op(
      {oh, ow, d}, std::move(out), {x}, [h, w, d, oh, ow](detail::TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& gp = p.ensure_grad();
        for (std::size_t i = 0; i < oh; ++i)
          for (std::size_t j = 0; j < ow; ++j)
            for (std::size_t c = 0; c < d; ++c) {
              const double g = 0.25 * self.grad[(i * ow + j) * d + c];
              const std::size_t r = 2 * i, q = 2 * j;
              gp[(r * w + q) * d + c] += g;
              gp[(r * w + q + 1) * d + c] += g;
              gp[((r + 1) * w + q) * d + c] += g;
              gp[((r + 1) * w + q + 1) * d + c] += g;
            }
      });
}

inline Tensor fully_connected(const Tensor& x, const Tensor& weight,
                              const Tensor& bias) {
  if (x.shape().size() != 1)
    throw ShapeError("fully_connected: input must be rank-1, got " +
                     shape_str(x.shape()));
  const std::size_t din = x.dim(0);
  if (weight.shape().size() != 2 || weight.dim(0) != din)
    throw ShapeError("fully_connected: weight " + shape_str(weight.shape()) +
                     " does not match input " + shape_str(x.shape()));
  const std::size_t dout = weight.dim(1);
  if (bias.shape() != Shape{dout})
    throw ShapeError("fully_connected: bias " + shape_str(bias.shape()) +
                     " does not match [" + std::to_string(dout) + "]");
  std::vector<double> out(bias.values());
  for (std::size_t i = 0; i < din; ++i) {
    const double xv = x.values()[i];
    for (std::size_t o = 0; o < dout; ++o) out[o] += xv * weight.values()[i * dout + o];
  }
  return detail::make_op(
      {dout}, std::move(out), {x, weight, bias},
      [din, dout](detail::TensorNode& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& g = self.grad;
        if (px.requires_grad) {
          auto& gx = px.ensure_grad();
          for (std::size_t i = 0; i < din; ++i) {
            double acc = 0.0;
            for (std::size_t o = 0; o < dout; ++o) acc += g[o] * pw.values[i * dout + o];
            gx[i] += acc;
          }
        }
        if (pw.requires_grad) {
          auto& gw = pw.ensure_grad();
          for (std::size_t i = 0; i < din; ++i)
            for (std::size_t o = 0; o < dout; ++o)
              gw[i * dout + o] += px.values[i] * g[o];
        }
        if (pb.requires_grad) {
          auto& gb = pb.ensure_grad();
          for (std::size_t o = 0; o < dout; ++o) gb[o] += g[o];
        }
      });
}

inline constexpr double kBceEps = 1e-7;

// Multi-label binary cross-entropy, summed over categories. Predictions
// are clamped to [eps, 1-eps] before the log.
inline Tensor bce_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("bce_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  for (std::size_t i = 0; i < target.numel(); ++i) {
    const double t = target.values()[i];
    if (t != 0.0 && t != 1.0)
      throw ValueError("bce_loss: target[" + std::to_string(i) + "] = " +
                       std::to_string(t) + " is not binary");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double p = std::clamp(pred.values()[i], kBceEps, 1.0 - kBceEps);
    const double t = target.values()[i];
    loss -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return detail::make_op({1}, {loss}, {pred, target},
                         [](detail::TensorNode& self) {
                           auto& pp = *self.parents[0];
                           auto& pt = *self.parents[1];
                           if (!pp.requires_grad) return;
                           auto& gp = pp.ensure_grad();
                           for (std::size_t i = 0; i < gp.size(); ++i) {
                             const double raw = pp.values[i];
                             if (raw <= kBceEps || raw >= 1.0 - kBceEps)
                               continue;  // clamped: zero slope
                             const double t = pt.values[i];
                             gp[i] += self.grad[0] * (-t / raw + (1.0 - t) / (1.0 - raw));
                           }
                         });
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

// Populates gradients of every tensor reachable from `loss` that requires
// them. Gradients accumulate across calls until explicitly zeroed.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw UsageError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  using Node = detail::TensorNode;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop && node->requires_grad && !node->grad.empty())
      node->backprop(*node);
  }
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace ingraph
