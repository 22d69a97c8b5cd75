#pragma once

// Dense tensors with tape-free reverse-mode differentiation.
//
// Every Tensor is a handle to a node in a dynamically built computation
// graph. Operations on tensors that require gradients record a backward
// closure on the result; `backward(loss)` walks the graph in reverse
// topological order. Leaf tensors accumulate gradients across calls until
// `zero_grad()`; interior gradients are recomputed on every call.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace adlgnn::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into the parents' gradients.
  std::function<void(Node& self)> backward;

  bool is_leaf() const { return !backward; }
  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor.
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Mutable view of the values. Only meaningful on leaves (parameters,
  /// inputs); mutating an interior node does not re-run its producers.
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  /// Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  void zero_grad();

  /// Value copy that is cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Reverse-mode accumulation from a scalar loss. Throws ShapeError if the
/// loss is not a single element.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Core op set. Binary elementwise ops accept `b` with the same shape as `a`
// or with a shape equal to a trailing suffix of `a`'s shape (broadcast over
// leading axes).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_squares(const Tensor& a);

/// a: [..., M, K]; b: [K, P] (shared) or [..., K, P] with matching batch axes.
Tensor matmul(const Tensor& a, const Tensor& b);
/// factor * a b^T over the last two axes. a: [..., M, K]; b: [..., P, K].
Tensor matmul_nt(const Tensor& a, const Tensor& b, double factor = 1.0);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& a, std::size_t axis0, std::size_t axis1);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);

Tensor softmax(const Tensor& a, std::size_t axis);

/// Support pattern over the last two axes of a tensor.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;  // row-major, rows * cols

  static Mask ones(std::size_t rows, std::size_t cols);
  bool operator()(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

/// Softmax along the last axis restricted to the mask support. Entries off
/// the support are exactly 0; a row with an empty support is all zeros.
Tensor masked_softmax(const Tensor& a, const Mask& mask);

/// Inverted dropout. Identity when `training` is false or `rate` is 0.
Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng, bool training = true);

/// Single-channel causal dilated convolution along the last axis:
/// out(t) = sum_s filter(s) * in(t - dilation * s), zero for negative index.
Tensor causal_dilated_conv1d(const Tensor& input, const Tensor& filter, std::size_t dilation);

/// Channel-mixing causal dilated convolution over time.
/// x: [B, Cin, N, L]; weight: [Cout, Cin, K]; bias: [Cout] or undefined.
/// Output [B, Cout, N, L] (left zero padding keeps the length).
Tensor conv_time(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t dilation);

/// Node aggregation. adj: [N, N] or per-step [B, L, N, N]; h: [B, C, N, L].
/// out[b, c, i, l] = sum_j adj[(b, l,) i, j] * h[b, c, j, l].
Tensor graph_propagate(const Tensor& adj, const Tensor& h);

/// Row-normalised adjacency with self loops, D^-1 (A + I), over the last two
/// axes. With `transpose_first`, A is transposed before the self loop.
Tensor normalize_adjacency(const Tensor& adj, bool transpose_first);

/// Divides each row (last axis) by its maximum when that maximum exceeds 1.
Tensor row_max_rescale(const Tensor& a);

// ---------------------------------------------------------------------------

/// Maximum over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = 1e-5);

struct Parameter {
  std::string name;
  Tensor tensor;
  bool is_bias = false;
};

/// Writes {format, version, parameters: [{name, shape, bias, values}]} as JSON.
void save_parameters(const std::filesystem::path& path, std::span<const Parameter> params);
/// Loads values into existing parameters; names and shapes must match.
void load_parameters(const std::filesystem::path& path, std::span<Parameter> params);

inline constexpr int kCheckpointVersion = 1;

}  // namespace adlgnn::nn
