#pragma once

// Spatio-temporal forecasting network over a learned dependency graph.
//
// Tensor layout inside the network is [B, C, N, L]: batch, channels, nodes,
// time steps (oldest first). All temporal convolutions are causal with left
// zero padding, so every intermediate keeps length L and position l only
// sees inputs at positions <= l.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "adlgnn/nn.hpp"
#include "adlgnn/structure.hpp"

namespace adlgnn::model {

enum class GraphMode {
  Dynamic,     // static graph plus masked attention weights per step
  Static,      // fused static graph at every step
  StaticCorr,  // static graph built from correlation only
};

std::string_view graph_mode_name(GraphMode mode);
GraphMode parse_graph_mode(std::string_view name);

struct ModelConfig {
  std::size_t window = 168;
  std::size_t st_blocks = 5;
  std::size_t mixhop_depth = 2;
  double beta = 0.05;
  std::size_t attention_kernel = 6;
  std::vector<std::size_t> temporal_kernels{2, 3, 6, 7};
  std::size_t dilation_base = 2;
  std::size_t channels = 16;
  std::size_t skip_channels = 32;
  std::size_t end_channels = 64;
  double dropout = 0.3;
  GraphMode graph_mode = GraphMode::Dynamic;
  /// Spatio-temporal attention branch feeding the skip sum.
  bool st_attention = true;

  void validate() const;
  std::size_t dilation(std::size_t block) const;
};

struct ConvParams {
  nn::Tensor weight;  // [Cout, Cin, K]
  nn::Tensor bias;    // [Cout]
};

struct AttentionParams {
  ConvParams query;
  ConvParams key;
  ConvParams value;  // unused by the per-step graph attention
};

struct MixHopParams {
  nn::Tensor weight;  // [Cout, (depth + 1) * Cin, 1]
  nn::Tensor bias;    // [Cout]
};

struct TemporalParams {
  std::vector<ConvParams> filter;  // one branch per kernel width
  std::vector<ConvParams> gate;
};

struct ProjectionParams {
  nn::Tensor weight;  // [C * L, Cout]
  nn::Tensor bias;    // [Cout]
};

// --- building blocks ---------------------------------------------------------

/// Scaled dot-product weights softmax(q k^T / sqrt(D)). q, k: [G, M, D].
/// With a mask the softmax runs over the mask support only.
nn::Tensor attention_weights(const nn::Tensor& q, const nn::Tensor& k, const nn::Mask* mask);

/// Per-step convolutional attention between nodes. x: [B, C, N, L].
/// Queries and keys come from causal convolutions over time. Returns [B, L, N, N].
nn::Tensor conv_attention_weights(const nn::Tensor& x, const AttentionParams& p, const nn::Mask* mask);

nn::Tensor masked_conv_attention(const nn::Tensor& x, const structure::BinaryMask& mask, const AttentionParams& p);

/// rescale(A_static + W(t)): rows whose maximum exceeds 1 are divided by it.
/// weights: [B, L, N, N]; static_adj: [N, N].
nn::Tensor dynamic_adjacency(const nn::Tensor& weights, const nn::Tensor& static_adj);

/// Causal self-attention over all (node, step) tokens. Token (n, l) attends
/// to (m, l') for every m and l' <= l. x: [B, C, N, L] -> [B, Dv, N, L].
nn::Tensor st_conv_attention(const nn::Tensor& x, const AttentionParams& p);

/// Same as st_conv_attention with an explicit token mask (NL x NL, token
/// index n * L + l), or none for unrestricted attention.
nn::Tensor joint_conv_attention(const nn::Tensor& x, const AttentionParams& p, const nn::Mask* mask);

nn::Mask causal_token_mask(std::size_t nodes, std::size_t steps);

/// H_k = beta H_in + (1 - beta) A_hat H_{k-1}, H_0 = H_in. Returns H_1..H_depth.
/// norm_adj is an already normalised [N, N] or [B, L, N, N] matrix.
std::vector<nn::Tensor> mix_hop_propagate(const nn::Tensor& h, const nn::Tensor& norm_adj, double beta,
                                          std::size_t depth);

/// sum_j H_j W_j + bias, with W_j the j-th input block of the weight.
nn::Tensor info_select(const std::vector<nn::Tensor>& hs, const MixHopParams& p);

/// Two mix-hop passes: over D^-1 (A + I) and over D^-1 (A^T + I).
nn::Tensor graph_conv_module(const nn::Tensor& h, const nn::Tensor& norm_fwd, const nn::Tensor& norm_bwd,
                             double beta, std::size_t depth, const MixHopParams& fwd, const MixHopParams& bwd);

/// Parallel causal dilated convolutions concatenated over channels.
nn::Tensor inception(const nn::Tensor& x, const std::vector<ConvParams>& branches, std::size_t dilation);

/// tanh(inception_filter(x)) * sigmoid(inception_gate(x)).
nn::Tensor temporal_conv_module(const nn::Tensor& x, const TemporalParams& p, std::size_t dilation);

/// [B, C, N, L] -> [B, N, Cout] by a convolution spanning the whole window.
nn::Tensor window_projection(const nn::Tensor& x, const ProjectionParams& p);

/// Two 1x1 convolutions with ReLU between. h: [B, N, S] -> [B, N].
nn::Tensor output_module(const nn::Tensor& h, const ProjectionParams& first, const ProjectionParams& second);

// --- full network --------------------------------------------------------------

class ForecastModel {
 public:
  /// `static_adjacency` is the sparsified N x N graph; its support becomes
  /// the attention mask.
  ForecastModel(ModelConfig config, std::size_t nodes, structure::Matrix static_adjacency, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t nodes() const { return nodes_; }
  const structure::Matrix& static_adjacency() const { return static_adj_; }
  const structure::BinaryMask& mask() const { return mask_; }

  std::vector<nn::Parameter>& parameters() { return params_; }
  const std::vector<nn::Parameter>& parameters() const { return params_; }
  const nn::Parameter& parameter(std::string_view name) const;

  /// input: [B, 1, N, window]. Returns [B, N]. `rng` drives dropout and is
  /// required when training is true.
  nn::Tensor forward(const nn::Tensor& input, bool training = false, std::mt19937_64* rng = nullptr) const;

  /// Per-step adjacency used by graph convolution, [B, L, N, N] in dynamic
  /// mode and [N, N] otherwise.
  nn::Tensor adjacency(const nn::Tensor& input) const;

  /// Eval-mode prediction for a row-major [B, 1, N, window] buffer, no graph.
  Eigen::MatrixXd predict(const std::vector<double>& inputs, std::size_t batch) const;

  /// Writes <prefix>.params.json and <prefix>.json (config, graph, mask and
  /// the caller's metadata object).
  void save(const std::filesystem::path& prefix, const std::string& metadata_json = "{}") const;
  static ForecastModel load(const std::filesystem::path& prefix, std::string* metadata_json = nullptr);

 private:
  void build(std::uint64_t seed);

  ModelConfig config_;
  std::size_t nodes_;
  structure::Matrix static_adj_;
  structure::BinaryMask mask_;
  nn::Tensor static_tensor_;
  nn::Mask step_mask_;
  nn::Mask token_mask_;

  std::vector<nn::Parameter> params_;
  ConvParams start_;
  AttentionParams graph_attention_;
  AttentionParams st_attention_;
  ProjectionParams skip_input_;
  ProjectionParams skip_attention_;
  std::vector<TemporalParams> temporal_;
  std::vector<MixHopParams> mix_fwd_;
  std::vector<MixHopParams> mix_bwd_;
  std::vector<ProjectionParams> skip_;
  ProjectionParams end1_;
  ProjectionParams end2_;
};

std::string config_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& json);

}  // namespace adlgnn::model
