#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include <Eigen/Core>

#include "adlgnn/error.hpp"
#include "adlgnn/nn.hpp"

namespace adlgnn::nn {

namespace {

using detail::Node;
using BackwardFn = std::function<void(Node&)>;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> parents,
                   BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& parents,
                   BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void require(bool ok, const std::string& op, const std::string& detail) {
  if (!ok) throw ShapeError(op + ": " + detail);
}

std::string shapes(const Tensor& a, const Tensor& b) {
  return shape_string(a.shape()) + " vs " + shape_string(b.shape());
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

// Elementwise unary op from value and derivative (in terms of input x and
// output y).
template <class F, class D>
Tensor unary(const Tensor& a, F f, D df) {
  const auto in = a.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  auto pa = a.node().get();
  return make_result(a.shape(), std::move(out), {a}, [pa, df](Node& self) {
    if (!pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * df(pa->value[i], self.value[i]);
  });
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

}  // namespace

Mask Mask::ones(std::size_t rows, std::size_t cols) {
  return Mask{rows, cols, std::vector<std::uint8_t>(rows * cols, 1)};
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(is_suffix(a.shape(), b.shape()), "add", shapes(a, b));
  const std::size_t inner = b.numel();
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % inner];
  auto pa = a.node().get();
  auto pb = b.node().get();
  return make_result(a.shape(), std::move(out), {a, b}, [pa, pb, inner](Node& self) {
    if (pa->requires_grad) {
      auto& ga = pa->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& gb = pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % inner] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require(is_suffix(a.shape(), b.shape()), "mul", shapes(a, b));
  const std::size_t inner = b.numel();
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i % inner];
  auto pa = a.node().get();
  auto pb = b.node().get();
  return make_result(a.shape(), std::move(out), {a, b}, [pa, pb, inner](Node& self) {
    if (pa->requires_grad) {
      auto& ga = pa->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * pb->value[i % inner];
    }
    if (pb->requires_grad) {
      auto& gb = pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % inner] += self.grad[i] * pa->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor& a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sum(const Tensor& a) {
  const auto v = a.values();
  double s = 0.0;
  for (double x : v) s += x;
  auto pa = a.node().get();
  return make_result(Shape{1}, {s}, {a}, [pa](Node& self) {
    if (!pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    for (auto& g : ga) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  require(a.numel() > 0, "mean", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_squares(const Tensor& a) {
  const auto v = a.values();
  double s = 0.0;
  for (double x : v) s += x * x;
  auto pa = a.node().get();
  return make_result(Shape{1}, {s}, {a}, [pa](Node& self) {
    if (!pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * pa->value[i] * self.grad[0];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() >= 2 && b.rank() >= 2, "matmul", "operands need rank >= 2, got " + shapes(a, b));
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2);
  const std::size_t p = b.dim(b.rank() - 1);
  require(k == kb, "matmul", "inner dimensions differ, " + shapes(a, b));
  const bool shared = b.rank() == 2;
  const std::size_t batch = a.numel() / (m * k);
  if (!shared) {
    require(b.rank() == a.rank() &&
                std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()),
            "matmul", "batch axes differ, " + shapes(a, b));
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(p);
  std::vector<double> out(batch * m * p);
  for (std::size_t g = 0; g < batch; ++g) {
    ConstMap am(a.values().data() + g * m * k, m, k);
    ConstMap bm(b.values().data() + (shared ? 0 : g * k * p), k, p);
    MutMap(out.data() + g * m * p, m, p).noalias() = am * bm;
  }
  auto pa = a.node().get();
  auto pb = b.node().get();
  return make_result(std::move(out_shape), std::move(out), {a, b},
                     [pa, pb, batch, m, k, p, shared](Node& self) {
                       for (std::size_t g = 0; g < batch; ++g) {
                         ConstMap gm(self.grad.data() + g * m * p, m, p);
                         const std::size_t boff = shared ? 0 : g * k * p;
                         if (pa->requires_grad) {
                           auto& ga = pa->ensure_grad();
                           ConstMap bm(pb->value.data() + boff, k, p);
                           MutMap(ga.data() + g * m * k, m, k).noalias() += gm * bm.transpose();
                         }
                         if (pb->requires_grad) {
                           auto& gb = pb->ensure_grad();
                           ConstMap am(pa->value.data() + g * m * k, m, k);
                           MutMap(gb.data() + boff, k, p).noalias() += am.transpose() * gm;
                         }
                       }
                     });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b, double factor) {
  require(a.rank() >= 2 && b.rank() == a.rank(), "matmul_nt", "operand ranks differ, " + shapes(a, b));
  require(std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()), "matmul_nt",
          "batch axes differ, " + shapes(a, b));
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t p = b.dim(b.rank() - 2);
  require(k == b.dim(b.rank() - 1), "matmul_nt", "inner dimensions differ, " + shapes(a, b));
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(p);
  std::vector<double> out(batch * m * p);
  for (std::size_t g = 0; g < batch; ++g) {
    ConstMap am(a.values().data() + g * m * k, m, k);
    ConstMap bm(b.values().data() + g * p * k, p, k);
    MutMap(out.data() + g * m * p, m, p).noalias() = factor * (am * bm.transpose());
  }
  auto pa = a.node().get();
  auto pb = b.node().get();
  return make_result(std::move(out_shape), std::move(out), {a, b},
                     [pa, pb, batch, m, k, p, factor](Node& self) {
                       for (std::size_t g = 0; g < batch; ++g) {
                         ConstMap gm(self.grad.data() + g * m * p, m, p);
                         if (pa->requires_grad) {
                           auto& ga = pa->ensure_grad();
                           ConstMap bm(pb->value.data() + g * p * k, p, k);
                           MutMap(ga.data() + g * m * k, m, k).noalias() += factor * (gm * bm);
                         }
                         if (pb->requires_grad) {
                           auto& gb = pb->ensure_grad();
                           ConstMap am(pa->value.data() + g * m * k, m, k);
                           MutMap(gb.data() + g * p * k, p, k).noalias() += factor * (gm.transpose() * am);
                         }
                       }
                     });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& order) {
  const auto& in_shape = a.shape();
  const std::size_t r = in_shape.size();
  require(order.size() == r, "permute", "order rank differs from " + shape_string(in_shape));
  std::vector<bool> seen(r, false);
  for (auto o : order) {
    require(o < r && !seen[o], "permute", "invalid axis order for " + shape_string(in_shape));
    seen[o] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[order[i]];
    stride[i] = in_stride[order[i]];
  }
  // map[i] = source flat index for output flat index i
  const std::size_t n = a.numel();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      src += stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= stride[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  std::vector<double> out(n);
  const auto v = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = v[map[i]];
  auto pa = a.node().get();
  return make_result(std::move(out_shape), std::move(out), {a},
                     [pa, map = std::move(map)](Node& self) {
                       if (!pa->requires_grad) return;
                       auto& ga = pa->ensure_grad();
                       for (std::size_t i = 0; i < map.size(); ++i) ga[map[i]] += self.grad[i];
                     });
}

Tensor transpose(const Tensor& a, std::size_t axis0, std::size_t axis1) {
  std::vector<std::size_t> order(a.rank());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  require(axis0 < order.size() && axis1 < order.size(), "transpose",
          "axis out of range for " + shape_string(a.shape()));
  std::swap(order[axis0], order[axis1]);
  return permute(a, order);
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(), "reshape",
          shape_string(a.shape()) + " cannot become " + shape_string(shape));
  auto pa = a.node().get();
  return make_result(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()), {a},
                     [pa](Node& self) {
                       if (!pa->requires_grad) return;
                       auto& ga = pa->ensure_grad();
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat", "no inputs");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat", "axis out of range for " + shape_string(first));
  std::size_t total = 0;
  for (const auto& t : parts) {
    const auto& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    require(ok, "concat", "incompatible shapes " + shape_string(first) + " and " + shape_string(s));
    total += s[axis];
  }
  const std::size_t outer = prod(first, 0, axis);
  const std::size_t inner = prod(first, axis + 1, first.size());
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : parts) {
    offsets.push_back(off);
    const std::size_t chunk = t.dim(axis) * inner;
    const auto v = t.values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.data() + o * chunk, chunk, out.data() + o * total * inner + off * inner);
    }
    off += t.dim(axis);
  }
  std::vector<Node*> nodes;
  for (const auto& t : parts) nodes.push_back(t.node().get());
  return make_result(std::move(out_shape), std::move(out), parts,
                     [nodes, offsets, outer, inner, total](Node& self) {
                       for (std::size_t p = 0; p < nodes.size(); ++p) {
                         if (!nodes[p]->requires_grad) continue;
                         auto& g = nodes[p]->ensure_grad();
                         const std::size_t chunk = g.size() / outer;
                         for (std::size_t o = 0; o < outer; ++o) {
                           const double* src = self.grad.data() + o * total * inner + offsets[p] * inner;
                           double* dst = g.data() + o * chunk;
                           for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto& s = a.shape();
  require(axis < s.size() && begin < end && end <= s[axis], "slice",
          "range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid on axis " +
              std::to_string(axis) + " of " + shape_string(s));
  const std::size_t outer = prod(s, 0, axis);
  const std::size_t inner = prod(s, axis + 1, s.size());
  const std::size_t len = end - begin;
  const std::size_t full = s[axis];
  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<double> out(outer * len * inner);
  const auto v = a.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(v.data() + (o * full + begin) * inner, len * inner, out.data() + o * len * inner);
  }
  auto pa = a.node().get();
  return make_result(std::move(out_shape), std::move(out), {a},
                     [pa, outer, inner, len, full, begin](Node& self) {
                       if (!pa->requires_grad) return;
                       auto& ga = pa->ensure_grad();
                       for (std::size_t o = 0; o < outer; ++o) {
                         const double* src = self.grad.data() + o * len * inner;
                         double* dst = ga.data() + (o * full + begin) * inner;
                         for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto& s = a.shape();
  require(axis < s.size(), "softmax", "axis out of range for " + shape_string(s));
  const std::size_t outer = prod(s, 0, axis);
  const std::size_t n = s[axis];
  const std::size_t inner = prod(s, axis + 1, s.size());
  const auto v = a.values();
  std::vector<double> out(v.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, v[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) z += out[base + k * inner] = std::exp(v[base + k * inner] - mx);
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }
  }
  auto pa = a.node().get();
  return make_result(s, std::move(out), {a}, [pa, outer, n, inner](Node& self) {
    if (!pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += self.grad[base + k * inner] * self.value[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t i = base + k * inner;
          ga[i] += self.value[i] * (self.grad[i] - dot);
        }
      }
    }
  });
}

Tensor masked_softmax(const Tensor& a, const Mask& mask) {
  const auto& s = a.shape();
  require(s.size() >= 2 && s[s.size() - 2] == mask.rows && s.back() == mask.cols, "masked_softmax",
          "mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) + " does not fit " +
              shape_string(s));
  const std::size_t cols = mask.cols;
  const std::size_t rows_total = a.numel() / cols;
  // Support as a CSR list so the loops skip masked entries.
  auto offsets = std::make_shared<std::vector<std::size_t>>(mask.rows + 1, 0);
  auto support = std::make_shared<std::vector<std::size_t>>();
  for (std::size_t r = 0; r < mask.rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c)
      if (mask(r, c)) support->push_back(c);
    (*offsets)[r + 1] = support->size();
  }
  const auto v = a.values();
  std::vector<double> out(v.size(), 0.0);
  for (std::size_t row = 0; row < rows_total; ++row) {
    const std::size_t r = row % mask.rows;
    const std::size_t* cb = support->data() + (*offsets)[r];
    const std::size_t* ce = support->data() + (*offsets)[r + 1];
    if (cb == ce) continue;
    const double* x = v.data() + row * cols;
    double* y = out.data() + row * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (auto* c = cb; c != ce; ++c) mx = std::max(mx, x[*c]);
    double z = 0.0;
    for (auto* c = cb; c != ce; ++c) z += y[*c] = std::exp(x[*c] - mx);
    const double inv = 1.0 / z;
    for (auto* c = cb; c != ce; ++c) y[*c] *= inv;
  }
  auto pa = a.node().get();
  const std::size_t mask_rows = mask.rows;
  return make_result(s, std::move(out), {a}, [pa, cols, rows_total, mask_rows, offsets, support](Node& self) {
    if (!pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    for (std::size_t row = 0; row < rows_total; ++row) {
      const std::size_t r = row % mask_rows;
      const std::size_t* cb = support->data() + (*offsets)[r];
      const std::size_t* ce = support->data() + (*offsets)[r + 1];
      const double* y = self.value.data() + row * cols;
      const double* g = self.grad.data() + row * cols;
      double* gr = ga.data() + row * cols;
      double dot = 0.0;
      for (auto* c = cb; c != ce; ++c) dot += g[*c] * y[*c];
      // Off-support entries have y == 0 so they receive no gradient.
      for (auto* c = cb; c != ce; ++c) gr[*c] += y[*c] * (g[*c] - dot);
    }
  });
}

Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ShapeError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  const double factor = 1.0 / (1.0 - rate);
  std::vector<double> scale_mask(a.numel());
  for (auto& m : scale_mask) m = keep(rng) ? factor : 0.0;
  Tensor m(a.shape(), std::move(scale_mask), false);
  return mul(a, m);
}

Tensor conv_time(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t dilation) {
  require(x.rank() == 4, "conv_time", "input must be [B,Cin,N,L], got " + shape_string(x.shape()));
  require(weight.rank() == 3 && weight.dim(1) == x.dim(1), "conv_time",
          "weight " + shape_string(weight.shape()) + " does not match input " + shape_string(x.shape()));
  require(dilation >= 1, "conv_time", "dilation must be >= 1");
  const std::size_t B = x.dim(0), Cin = x.dim(1), N = x.dim(2), L = x.dim(3);
  const std::size_t Cout = weight.dim(0), K = weight.dim(2);
  const bool has_bias = bias.defined();
  if (has_bias) {
    require(bias.numel() == Cout, "conv_time",
            "bias " + shape_string(bias.shape()) + " does not match " + std::to_string(Cout) + " outputs");
  }
  std::vector<double> out(B * Cout * N * L, 0.0);
  const double* xv = x.values().data();
  const double* wv = weight.values().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < Cout; ++o) {
      double* ob = out.data() + ((b * Cout + o) * N) * L;
      if (has_bias) std::fill_n(ob, N * L, bias.values()[o]);
      for (std::size_t c = 0; c < Cin; ++c) {
        const double* xb = xv + ((b * Cin + c) * N) * L;
        for (std::size_t s = 0; s < K; ++s) {
          const double w = wv[(o * Cin + c) * K + s];
          const std::size_t shift = dilation * s;
          if (w == 0.0 || shift >= L) continue;
          for (std::size_t n = 0; n < N; ++n) {
            double* orow = ob + n * L;
            const double* xrow = xb + n * L;
            for (std::size_t t = shift; t < L; ++t) orow[t] += w * xrow[t - shift];
          }
        }
      }
    }
  }
  auto px = x.node().get();
  auto pw = weight.node().get();
  auto pb = has_bias ? bias.node().get() : nullptr;
  std::vector<Tensor> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result(Shape{B, Cout, N, L}, std::move(out), parents,
                     [px, pw, pb, B, Cin, N, L, Cout, K, dilation](Node& self) {
                       const double* g = self.grad.data();
                       if (pb && pb->requires_grad) {
                         auto& gb = pb->ensure_grad();
                         for (std::size_t b = 0; b < B; ++b)
                           for (std::size_t o = 0; o < Cout; ++o) {
                             const double* gr = g + ((b * Cout + o) * N) * L;
                             double acc = 0.0;
                             for (std::size_t i = 0; i < N * L; ++i) acc += gr[i];
                             gb[o] += acc;
                           }
                       }
                       double* gx = px->requires_grad ? px->ensure_grad().data() : nullptr;
                       double* gw = pw->requires_grad ? pw->ensure_grad().data() : nullptr;
                       for (std::size_t b = 0; b < B; ++b) {
                         for (std::size_t o = 0; o < Cout; ++o) {
                           const double* gb = g + ((b * Cout + o) * N) * L;
                           for (std::size_t c = 0; c < Cin; ++c) {
                             const std::size_t xoff = ((b * Cin + c) * N) * L;
                             for (std::size_t s = 0; s < K; ++s) {
                               const std::size_t shift = dilation * s;
                               if (shift >= L) continue;
                               const std::size_t widx = (o * Cin + c) * K + s;
                               const double w = pw->value[widx];
                               double acc = 0.0;
                               for (std::size_t n = 0; n < N; ++n) {
                                 const double* grow = gb + n * L;
                                 const double* xrow = px->value.data() + xoff + n * L;
                                 double* gxrow = gx ? gx + xoff + n * L : nullptr;
                                 for (std::size_t t = shift; t < L; ++t) {
                                   acc += grow[t] * xrow[t - shift];
                                   if (gxrow) gxrow[t - shift] += w * grow[t];
                                 }
                               }
                               if (gw) gw[widx] += acc;
                             }
                           }
                         }
                       }
                     });
}

Tensor causal_dilated_conv1d(const Tensor& input, const Tensor& filter, std::size_t dilation) {
  require(input.rank() >= 1 && filter.rank() == 1, "causal_dilated_conv1d",
          "expected input [..., L] and filter [K], got " + shapes(input, filter));
  const std::size_t L = input.shape().back();
  const std::size_t rows = input.numel() / std::max<std::size_t>(L, 1);
  Tensor x = reshape(input, Shape{1, 1, rows, L});
  Tensor w = reshape(filter, Shape{1, 1, filter.numel()});
  return reshape(conv_time(x, w, Tensor{}, dilation), input.shape());
}

Tensor graph_propagate(const Tensor& adj, const Tensor& h) {
  require(h.rank() == 4, "graph_propagate", "features must be [B,C,N,L], got " + shape_string(h.shape()));
  const std::size_t B = h.dim(0), C = h.dim(1), N = h.dim(2), L = h.dim(3);
  const bool per_step = adj.rank() == 4;
  if (per_step) {
    require(adj.shape() == Shape{B, L, N, N}, "graph_propagate",
            "per-step adjacency must be [B,L,N,N], " + shapes(adj, h));
  } else {
    require(adj.shape() == Shape{N, N}, "graph_propagate", "adjacency must be [N,N], " + shapes(adj, h));
  }
  std::vector<double> out(h.numel(), 0.0);
  const double* av = adj.values().data();
  const double* hv = h.values().data();
  if (!per_step) {
    ConstMap a(av, N, N);
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      MutMap(out.data() + bc * N * L, N, L).noalias() = a * ConstMap(hv + bc * N * L, N, L);
    }
  } else {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l) {
        const double* al = av + ((b * L + l) * N) * N;
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t j = 0; j < N; ++j) {
            const double w = al[i * N + j];
            if (w == 0.0) continue;
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t base = (b * C + c) * N * L;
              out[base + i * L + l] += w * hv[base + j * L + l];
            }
          }
      }
  }
  auto pa = adj.node().get();
  auto ph = h.node().get();
  return make_result(h.shape(), std::move(out), {adj, h}, [pa, ph, B, C, N, L, per_step](Node& self) {
    const double* g = self.grad.data();
    if (!per_step) {
      ConstMap a(pa->value.data(), N, N);
      if (ph->requires_grad) {
        auto& gh = ph->ensure_grad();
        for (std::size_t bc = 0; bc < B * C; ++bc)
          MutMap(gh.data() + bc * N * L, N, L).noalias() += a.transpose() * ConstMap(g + bc * N * L, N, L);
      }
      if (pa->requires_grad) {
        MutMap ga(pa->ensure_grad().data(), N, N);
        for (std::size_t bc = 0; bc < B * C; ++bc)
          ga.noalias() += ConstMap(g + bc * N * L, N, L) * ConstMap(ph->value.data() + bc * N * L, N, L).transpose();
      }
      return;
    }
    double* gh = ph->requires_grad ? ph->ensure_grad().data() : nullptr;
    double* ga = pa->requires_grad ? pa->ensure_grad().data() : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l) {
        const std::size_t aoff = ((b * L + l) * N) * N;
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t j = 0; j < N; ++j) {
            const double w = pa->value[aoff + i * N + j];
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t base = (b * C + c) * N * L;
              const double gi = g[base + i * L + l];
              acc += gi * ph->value[base + j * L + l];
              if (gh) gh[base + j * L + l] += w * gi;
            }
            if (ga) ga[aoff + i * N + j] += acc;
          }
      }
  });
}

Tensor normalize_adjacency(const Tensor& adj, bool transpose_first) {
  require(adj.rank() >= 2 && adj.dim(adj.rank() - 1) == adj.dim(adj.rank() - 2), "normalize_adjacency",
          "expected [..., N, N], got " + shape_string(adj.shape()));
  const std::size_t N = adj.shape().back();
  const std::size_t count = adj.numel() / (N * N);
  const auto v = adj.values();
  std::vector<double> out(v.size());
  std::vector<double> row_sum(count * N);
  for (std::size_t g = 0; g < count; ++g) {
    const double* a = v.data() + g * N * N;
    double* y = out.data() + g * N * N;
    for (std::size_t i = 0; i < N; ++i) {
      double r = 0.0;
      for (std::size_t j = 0; j < N; ++j) {
        y[i * N + j] = (transpose_first ? a[j * N + i] : a[i * N + j]) + (i == j ? 1.0 : 0.0);
        r += y[i * N + j];
      }
      row_sum[g * N + i] = r;
      for (std::size_t j = 0; j < N; ++j) y[i * N + j] /= r;
    }
  }
  auto pa = adj.node().get();
  return make_result(adj.shape(), std::move(out), {adj},
                     [pa, N, count, transpose_first, row_sum = std::move(row_sum)](Node& self) {
                       if (!pa->requires_grad) return;
                       auto& ga = pa->ensure_grad();
                       for (std::size_t g = 0; g < count; ++g) {
                         const double* y = self.value.data() + g * N * N;
                         const double* gr = self.grad.data() + g * N * N;
                         double* gout = ga.data() + g * N * N;
                         for (std::size_t i = 0; i < N; ++i) {
                           double dot = 0.0;
                           for (std::size_t j = 0; j < N; ++j) dot += gr[i * N + j] * y[i * N + j];
                           const double r = row_sum[g * N + i];
                           for (std::size_t j = 0; j < N; ++j) {
                             const double d = (gr[i * N + j] - dot) / r;
                             gout[transpose_first ? j * N + i : i * N + j] += d;
                           }
                         }
                       }
                     });
}

Tensor row_max_rescale(const Tensor& a) {
  require(a.rank() >= 1, "row_max_rescale", "rank-0 input");
  const std::size_t M = a.shape().back();
  const std::size_t rows = a.numel() / std::max<std::size_t>(M, 1);
  const auto v = a.values();
  std::vector<double> out(v.begin(), v.end());
  std::vector<std::size_t> argmax(rows);
  std::vector<double> divisor(rows, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = v.data() + r * M;
    std::size_t best = 0;
    for (std::size_t c = 1; c < M; ++c)
      if (x[c] > x[best]) best = c;
    argmax[r] = best;
    if (x[best] > 1.0) {
      divisor[r] = x[best];
      for (std::size_t c = 0; c < M; ++c) out[r * M + c] = x[c] / x[best];
    }
  }
  auto pa = a.node().get();
  return make_result(a.shape(), std::move(out), {a},
                     [pa, M, rows, argmax = std::move(argmax), divisor = std::move(divisor)](Node& self) {
                       if (!pa->requires_grad) return;
                       auto& ga = pa->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double m = divisor[r];
                         const double* g = self.grad.data() + r * M;
                         if (m == 1.0) {
                           for (std::size_t c = 0; c < M; ++c) ga[r * M + c] += g[c];
                           continue;
                         }
                         double dot = 0.0;
                         for (std::size_t c = 0; c < M; ++c) {
                           ga[r * M + c] += g[c] / m;
                           dot += g[c] * pa->value[r * M + c];
                         }
                         ga[r * M + argmax[r]] -= dot / (m * m);
                       }
                     });
}

}  // namespace adlgnn::nn
