#include "adlgnn/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "adlgnn/error.hpp"

namespace adlgnn::model {

using nn::Tensor;

std::string_view graph_mode_name(GraphMode mode) {
  switch (mode) {
    case GraphMode::Dynamic: return "dynamic";
    case GraphMode::Static: return "static";
    case GraphMode::StaticCorr: return "static-corr";
  }
  return "?";
}

GraphMode parse_graph_mode(std::string_view name) {
  if (name == "dynamic") return GraphMode::Dynamic;
  if (name == "static") return GraphMode::Static;
  if (name == "static-corr") return GraphMode::StaticCorr;
  throw ConfigError("unknown graph mode '" + std::string(name) + "' (dynamic, static, static-corr)");
}

void ModelConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("model: beta must lie in [0, 1]");
  if (mixhop_depth < 1) throw ConfigError("model: mix-hop depth must be >= 1");
  if (st_blocks < 1) throw ConfigError("model: need at least one spatio-temporal block");
  if (attention_kernel < 1 || dilation_base < 1) throw ConfigError("model: kernels and dilation must be >= 1");
  if (temporal_kernels.empty()) throw ConfigError("model: no temporal kernels");
  for (auto k : temporal_kernels)
    if (k < 1) throw ConfigError("model: temporal kernels must be >= 1");
  if (channels == 0 || channels % temporal_kernels.size() != 0) {
    throw ConfigError("model: channels must be a positive multiple of the number of temporal kernels");
  }
  if (skip_channels == 0 || end_channels == 0) throw ConfigError("model: channel counts must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
  if (attention_kernel > window) throw ConfigError("model: attention kernel longer than the window");
  const std::size_t widest = *std::max_element(temporal_kernels.begin(), temporal_kernels.end());
  for (std::size_t b = 0; b < st_blocks; ++b) {
    if ((widest - 1) * dilation(b) + 1 > window) {
      throw ConfigError("model: block " + std::to_string(b) + " receptive extent " +
                        std::to_string((widest - 1) * dilation(b) + 1) + " exceeds window " +
                        std::to_string(window));
    }
  }
}

std::size_t ModelConfig::dilation(std::size_t block) const {
  std::size_t d = 1;
  for (std::size_t i = 0; i < block; ++i) d *= dilation_base;
  return d;
}

// --- building blocks -----------------------------------------------------------

Tensor attention_weights(const Tensor& q, const Tensor& k, const nn::Mask* mask) {
  const std::size_t D = q.shape().back();
  Tensor scores = nn::matmul_nt(q, k, 1.0 / std::sqrt(static_cast<double>(D)));
  return mask ? nn::masked_softmax(scores, *mask) : nn::softmax(scores, scores.rank() - 1);
}

Tensor conv_attention_weights(const Tensor& x, const AttentionParams& p, const nn::Mask* mask) {
  Tensor q = nn::conv_time(x, p.query.weight, p.query.bias, 1);
  Tensor k = nn::conv_time(x, p.key.weight, p.key.bias, 1);
  // [B, D, N, L] -> [B, L, N, D]
  q = nn::permute(q, {0, 3, 2, 1});
  k = nn::permute(k, {0, 3, 2, 1});
  return attention_weights(q, k, mask);
}

namespace {

nn::Mask to_nn_mask(const structure::BinaryMask& m) {
  nn::Mask out{m.size(), m.size(), {}};
  out.allowed.resize(m.size() * m.size());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) out.allowed[i * m.size() + j] = m(i, j) ? 1 : 0;
  return out;
}

}  // namespace

Tensor masked_conv_attention(const Tensor& x, const structure::BinaryMask& mask, const AttentionParams& p) {
  if (mask.size() != x.dim(2)) {
    throw DimensionError("masked_conv_attention: mask is " + std::to_string(mask.size()) + " nodes, input has " +
                         std::to_string(x.dim(2)));
  }
  const auto m = to_nn_mask(mask);
  return conv_attention_weights(x, p, &m);
}

Tensor dynamic_adjacency(const Tensor& weights, const Tensor& static_adj) {
  return nn::row_max_rescale(nn::add(weights, static_adj));
}

nn::Mask causal_token_mask(std::size_t nodes, std::size_t steps) {
  const std::size_t M = nodes * steps;
  nn::Mask m{M, M, std::vector<std::uint8_t>(M * M, 0)};
  for (std::size_t a = 0; a < M; ++a)
    for (std::size_t b = 0; b < M; ++b) m.allowed[a * M + b] = (b % steps) <= (a % steps);
  return m;
}

Tensor joint_conv_attention(const Tensor& x, const AttentionParams& p, const nn::Mask* mask) {
  const std::size_t B = x.dim(0), N = x.dim(2), L = x.dim(3);
  auto tokens = [&](const ConvParams& c) {
    Tensor t = nn::conv_time(x, c.weight, c.bias, 1);  // [B, D, N, L]
    const std::size_t D = t.dim(1);
    return nn::reshape(nn::permute(t, {0, 2, 3, 1}), {B, N * L, D});
  };
  Tensor q = tokens(p.query);
  Tensor k = tokens(p.key);
  Tensor v = tokens(p.value);
  const std::size_t Dv = v.dim(2);
  Tensor out = nn::matmul(attention_weights(q, k, mask), v);  // [B, NL, Dv]
  return nn::permute(nn::reshape(out, {B, N, L, Dv}), {0, 3, 1, 2});
}

Tensor st_conv_attention(const Tensor& x, const AttentionParams& p) {
  const auto mask = causal_token_mask(x.dim(2), x.dim(3));
  return joint_conv_attention(x, p, &mask);
}

std::vector<Tensor> mix_hop_propagate(const Tensor& h, const Tensor& norm_adj, double beta, std::size_t depth) {
  // beta H + (1 - beta) A H' written as H + (1 - beta)(A H' - H): identical in
  // exact arithmetic, and it returns H bit for bit when beta = 1 or A H' = H.
  std::vector<Tensor> out;
  Tensor prev = h;
  for (std::size_t k = 0; k < depth; ++k) {
    prev = nn::add(h, nn::scale(nn::sub(nn::graph_propagate(norm_adj, prev), h), 1.0 - beta));
    out.push_back(prev);
  }
  return out;
}

Tensor info_select(const std::vector<Tensor>& hs, const MixHopParams& p) {
  return nn::conv_time(hs.size() == 1 ? hs.front() : nn::concat(hs, 1), p.weight, p.bias, 1);
}

namespace {

Tensor mix_hop(const Tensor& h, const Tensor& norm_adj, double beta, std::size_t depth, const MixHopParams& p) {
  std::vector<Tensor> hs{h};
  for (auto& t : mix_hop_propagate(h, norm_adj, beta, depth)) hs.push_back(std::move(t));
  return info_select(hs, p);
}

}  // namespace

Tensor graph_conv_module(const Tensor& h, const Tensor& norm_fwd, const Tensor& norm_bwd, double beta,
                         std::size_t depth, const MixHopParams& fwd, const MixHopParams& bwd) {
  return nn::add(mix_hop(h, norm_fwd, beta, depth, fwd), mix_hop(h, norm_bwd, beta, depth, bwd));
}

Tensor inception(const Tensor& x, const std::vector<ConvParams>& branches, std::size_t dilation) {
  std::vector<Tensor> outs;
  outs.reserve(branches.size());
  for (const auto& b : branches) outs.push_back(nn::conv_time(x, b.weight, b.bias, dilation));
  return outs.size() == 1 ? outs.front() : nn::concat(outs, 1);
}

Tensor temporal_conv_module(const Tensor& x, const TemporalParams& p, std::size_t dilation) {
  return nn::mul(nn::tanh(inception(x, p.filter, dilation)), nn::sigmoid(inception(x, p.gate, dilation)));
}

Tensor window_projection(const Tensor& x, const ProjectionParams& p) {
  const std::size_t B = x.dim(0), C = x.dim(1), N = x.dim(2), L = x.dim(3);
  Tensor flat = nn::reshape(nn::permute(x, {0, 2, 1, 3}), {B, N, C * L});
  return nn::add(nn::matmul(flat, p.weight), p.bias);
}

Tensor output_module(const Tensor& h, const ProjectionParams& first, const ProjectionParams& second) {
  Tensor hidden = nn::relu(nn::add(nn::matmul(nn::relu(h), first.weight), first.bias));
  Tensor out = nn::add(nn::matmul(hidden, second.weight), second.bias);  // [B, N, 1]
  return nn::reshape(out, {h.dim(0), h.dim(1)});
}

// --- ForecastModel ---------------------------------------------------------------

ForecastModel::ForecastModel(ModelConfig config, std::size_t nodes, structure::Matrix static_adjacency,
                             std::uint64_t seed)
    : config_(std::move(config)), nodes_(nodes), static_adj_(std::move(static_adjacency)) {
  config_.validate();
  if (nodes_ < 2) throw DimensionError("model: need at least 2 nodes");
  if (static_cast<std::size_t>(static_adj_.rows()) != nodes_ || static_cast<std::size_t>(static_adj_.cols()) != nodes_) {
    throw DimensionError("model: static adjacency is " + std::to_string(static_adj_.rows()) + "x" +
                         std::to_string(static_adj_.cols()) + ", expected " + std::to_string(nodes_) + "x" +
                         std::to_string(nodes_));
  }
  if (!static_adj_.allFinite() || (static_adj_.array() < 0.0).any() || (static_adj_.array() > 1.0).any()) {
    throw ConfigError("model: static adjacency entries must lie in [0, 1]");
  }
  mask_ = structure::binarize(structure::AdjacencyMatrix{static_adj_});
  std::vector<double> flat(nodes_ * nodes_);
  for (std::size_t i = 0; i < nodes_; ++i)
    for (std::size_t j = 0; j < nodes_; ++j) flat[i * nodes_ + j] = static_adj_(i, j);
  static_tensor_ = Tensor({nodes_, nodes_}, std::move(flat));
  step_mask_ = to_nn_mask(mask_);
  token_mask_ = causal_token_mask(nodes_, config_.window);
  build(seed);
}

void ForecastModel::build(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto C = config_.channels;
  const auto L = config_.window;
  const auto S = config_.skip_channels;

  auto weight = [&](const std::string& name, nn::Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(nn::shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    Tensor t(std::move(shape), std::move(v), true);
    params_.push_back({name, t, false});
    return t;
  };
  auto bias = [&](const std::string& name, std::size_t n) {
    Tensor t({n}, true);
    params_.push_back({name, t, true});
    return t;
  };
  auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t k) {
    return ConvParams{weight(name + ".weight", {cout, cin, k}, cin * k), bias(name + ".bias", cout)};
  };
  auto projection = [&](const std::string& name, std::size_t in, std::size_t out) {
    return ProjectionParams{weight(name + ".weight", {in, out}, in), bias(name + ".bias", out)};
  };
  auto attention = [&](const std::string& name, std::size_t cin) {
    const auto k = config_.attention_kernel;
    return AttentionParams{conv(name + ".query", C, cin, k), conv(name + ".key", C, cin, k),
                           conv(name + ".value", C, cin, k)};
  };

  start_ = conv("start", C, 1, 1);
  if (config_.graph_mode == GraphMode::Dynamic) {
    const auto k = config_.attention_kernel;
    graph_attention_.query = conv("graph_attention.query", C, 1, k);
    graph_attention_.key = conv("graph_attention.key", C, 1, k);
  }
  skip_input_ = projection("skip.input", L, S);
  const std::size_t branch = C / config_.temporal_kernels.size();
  const std::size_t depth = config_.mixhop_depth;
  for (std::size_t b = 0; b < config_.st_blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b);
    TemporalParams tp;
    for (auto k : config_.temporal_kernels) {
      tp.filter.push_back(conv(prefix + ".filter.k" + std::to_string(k), branch, C, k));
      tp.gate.push_back(conv(prefix + ".gate.k" + std::to_string(k), branch, C, k));
    }
    temporal_.push_back(std::move(tp));
    skip_.push_back(projection(prefix + ".skip", C * L, S));
    mix_fwd_.push_back({weight(prefix + ".mixhop_in.weight", {C, (depth + 1) * C, 1}, (depth + 1) * C),
                        bias(prefix + ".mixhop_in.bias", C)});
    mix_bwd_.push_back({weight(prefix + ".mixhop_out.weight", {C, (depth + 1) * C, 1}, (depth + 1) * C),
                        bias(prefix + ".mixhop_out.bias", C)});
  }
  if (config_.st_attention) {
    st_attention_ = attention("st_attention", C);
    skip_attention_ = projection("skip.attention", C * L, S);
  }
  end1_ = projection("end1", S, config_.end_channels);
  end2_ = projection("end2", config_.end_channels, 1);
}

const nn::Parameter& ForecastModel::parameter(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw Error("model has no parameter named '" + std::string(name) + "'");
}

Tensor ForecastModel::adjacency(const Tensor& input) const {
  if (config_.graph_mode != GraphMode::Dynamic) return static_tensor_;
  Tensor weights = conv_attention_weights(input, graph_attention_, &step_mask_);
  return dynamic_adjacency(weights, static_tensor_);
}

Tensor ForecastModel::forward(const Tensor& input, bool training, std::mt19937_64* rng) const {
  if (input.rank() != 4 || input.dim(1) != 1 || input.dim(3) != config_.window) {
    throw DimensionError("forward: input must be [B, 1, N, " + std::to_string(config_.window) + "], got " +
                         nn::shape_string(input.shape()));
  }
  if (input.dim(2) != nodes_) {
    throw DimensionError("forward: model built for " + std::to_string(nodes_) + " series, input has " +
                         std::to_string(input.dim(2)));
  }
  if (training && config_.dropout > 0.0 && !rng) throw Error("forward: training mode needs a random generator");
  std::mt19937_64 unused;
  std::mt19937_64& gen = rng ? *rng : unused;

  const Tensor adj = adjacency(input);
  const Tensor norm_fwd = nn::normalize_adjacency(adj, false);
  const Tensor norm_bwd = nn::normalize_adjacency(adj, true);

  Tensor x = nn::conv_time(input, start_.weight, start_.bias, 1);
  Tensor skip = window_projection(input, skip_input_);
  for (std::size_t b = 0; b < config_.st_blocks; ++b) {
    const Tensor residual = x;
    x = temporal_conv_module(x, temporal_[b], config_.dilation(b));
    x = nn::dropout(x, config_.dropout, gen, training);
    skip = nn::add(skip, window_projection(x, skip_[b]));
    x = graph_conv_module(x, norm_fwd, norm_bwd, config_.beta, config_.mixhop_depth, mix_fwd_[b], mix_bwd_[b]);
    x = nn::dropout(x, config_.dropout, gen, training);
    x = nn::add(x, residual);
  }
  if (config_.st_attention) {
    Tensor attended = joint_conv_attention(x, st_attention_, &token_mask_);
    skip = nn::add(skip, window_projection(attended, skip_attention_));
  }
  return output_module(skip, end1_, end2_);
}

Eigen::MatrixXd ForecastModel::predict(const std::vector<double>& inputs, std::size_t batch) const {
  nn::NoGradGuard no_grad;
  Tensor x({batch, 1, nodes_, config_.window}, inputs);
  Tensor y = forward(x, false);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(nodes_));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t n = 0; n < nodes_; ++n) out(b, n) = y.values()[b * nodes_ + n];
  return out;
}

std::string config_json(const ModelConfig& cfg) {
  nlohmann::json j{{"window", cfg.window},
                   {"st_blocks", cfg.st_blocks},
                   {"mixhop_depth", cfg.mixhop_depth},
                   {"beta", cfg.beta},
                   {"attention_kernel", cfg.attention_kernel},
                   {"temporal_kernels", cfg.temporal_kernels},
                   {"dilation_base", cfg.dilation_base},
                   {"channels", cfg.channels},
                   {"skip_channels", cfg.skip_channels},
                   {"end_channels", cfg.end_channels},
                   {"dropout", cfg.dropout},
                   {"graph_mode", std::string(graph_mode_name(cfg.graph_mode))},
                   {"st_attention", cfg.st_attention}};
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ModelConfig c;
  c.window = j.at("window");
  c.st_blocks = j.at("st_blocks");
  c.mixhop_depth = j.at("mixhop_depth");
  c.beta = j.at("beta");
  c.attention_kernel = j.at("attention_kernel");
  c.temporal_kernels = j.at("temporal_kernels").get<std::vector<std::size_t>>();
  c.dilation_base = j.at("dilation_base");
  c.channels = j.at("channels");
  c.skip_channels = j.at("skip_channels");
  c.end_channels = j.at("end_channels");
  c.dropout = j.at("dropout");
  c.graph_mode = parse_graph_mode(j.at("graph_mode").get<std::string>());
  c.st_attention = j.at("st_attention");
  return c;
}

void ForecastModel::save(const std::filesystem::path& prefix, const std::string& metadata_json) const {
  const auto params_path = std::filesystem::path(prefix.string() + ".params.json");
  nn::save_parameters(params_path, params_);
  std::vector<std::vector<double>> adj(nodes_, std::vector<double>(nodes_));
  std::vector<std::vector<int>> mask(nodes_, std::vector<int>(nodes_));
  for (std::size_t i = 0; i < nodes_; ++i)
    for (std::size_t j = 0; j < nodes_; ++j) {
      adj[i][j] = static_adj_(i, j);
      mask[i][j] = mask_(i, j) ? 1 : 0;
    }
  nlohmann::json doc{{"format", "adlgnn-model"},
                     {"version", nn::kCheckpointVersion},
                     {"nodes", nodes_},
                     {"config", nlohmann::json::parse(config_json(config_))},
                     {"parameters", params_path.filename().string()},
                     {"static_adjacency", adj},
                     {"mask", mask},
                     {"metadata", nlohmann::json::parse(metadata_json)}};
  std::ofstream out(prefix.string() + ".json");
  if (!out) throw Error("cannot write model sidecar " + prefix.string() + ".json");
  out << doc.dump(2);
}

ForecastModel ForecastModel::load(const std::filesystem::path& prefix, std::string* metadata_json) {
  std::ifstream in(prefix.string() + ".json");
  if (!in) throw Error("cannot read model sidecar " + prefix.string() + ".json");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(prefix.string() + ".json: " + e.what(), 0);
  }
  if (doc.value("format", "") != "adlgnn-model" || doc.value("version", 0) != nn::kCheckpointVersion) {
    throw ParseError(prefix.string() + ".json: not a supported model sidecar", 0);
  }
  const std::size_t nodes = doc.at("nodes");
  const auto adj = doc.at("static_adjacency").get<std::vector<std::vector<double>>>();
  structure::Matrix a(static_cast<Eigen::Index>(nodes), static_cast<Eigen::Index>(nodes));
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t j = 0; j < nodes; ++j) a(i, j) = adj.at(i).at(j);
  ForecastModel model(config_from_json(doc.at("config").dump()), nodes, std::move(a), 0);
  const auto params_path = prefix.parent_path() / doc.at("parameters").get<std::string>();
  nn::load_parameters(params_path, model.params_);
  if (metadata_json) *metadata_json = doc.at("metadata").dump();
  return model;
}

}  // namespace adlgnn::model
