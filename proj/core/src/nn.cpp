#include "adlgnn/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "adlgnn/error.hpp"

namespace adlgnn::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(shape_numel(shape), 0.0);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                     shape_string(shape));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " +
                     shape_string(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_string(shape()) + " is not scalar");
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("at: index rank mismatch for " + shape_string(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw ShapeError("at: index out of range for " + shape_string(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }

std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  auto* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (!node->is_leaf()) std::vector<double>().swap(node->grad);
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    // Interior gradients are allocated on first contribution and released
    // once propagated; a node nothing flowed into is skipped.
    if ((*it)->is_leaf() || (*it)->grad.empty()) continue;
    (*it)->backward(**it);
    if (*it != root) std::vector<double>().swap((*it)->grad);
  }
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor probe(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
  Tensor out = f(probe);
  backward(out);
  std::vector<double> analytic(probe.numel(), 0.0);
  if (!probe.grad().empty()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

  double worst = 0.0;
  NoGradGuard no_grad;
  auto values = probe.mutable_values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const double up = f(probe).item();
    values[i] = saved - eps;
    const double down = f(probe).item();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

void save_parameters(const std::filesystem::path& path, std::span<const Parameter> params) {
  nlohmann::json doc;
  doc["format"] = "adlgnn-params";
  doc["version"] = kCheckpointVersion;
  auto& list = doc["parameters"] = nlohmann::json::array();
  for (const auto& p : params) {
    list.push_back({{"name", p.name},
                    {"shape", p.tensor.shape()},
                    {"bias", p.is_bias},
                    {"values", std::vector<double>(p.tensor.values().begin(), p.tensor.values().end())}});
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write parameter file " + path.string());
  out << doc.dump();
}

void load_parameters(const std::filesystem::path& path, std::span<Parameter> params) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read parameter file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
  if (doc.value("format", "") != "adlgnn-params") throw ParseError(path.string() + ": not a parameter file", 0);
  if (doc.value("version", 0) != kCheckpointVersion) {
    throw ParseError(path.string() + ": unsupported parameter file version", 0);
  }
  std::unordered_map<std::string, const nlohmann::json*> by_name;
  for (const auto& entry : doc.at("parameters")) by_name[entry.at("name").get<std::string>()] = &entry;
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ParseError(path.string() + ": missing parameter " + p.name, 0);
    const auto shape = it->second->at("shape").get<Shape>();
    if (shape != p.tensor.shape()) {
      throw DimensionError("parameter " + p.name + ": stored shape " + shape_string(shape) +
                           " differs from model shape " + shape_string(p.tensor.shape()));
    }
    const auto values = it->second->at("values").get<std::vector<double>>();
    std::copy(values.begin(), values.end(), p.tensor.mutable_values().begin());
  }
}

}  // namespace adlgnn::nn
