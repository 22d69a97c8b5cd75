#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace adlgnn::data {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// T x N panel of observations, one row per time step. Immutable once built.
class TimeSeriesDataset {
 public:
  /// Throws DimensionError when T < 2 or N < 2, and Error on non-finite values.
  explicit TimeSeriesDataset(Matrix values, std::vector<std::string> series_names = {},
                             std::chrono::seconds sample_period = std::chrono::seconds{0});

  const Matrix& values() const { return values_; }
  std::size_t length() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t series() const { return static_cast<std::size_t>(values_.cols()); }
  const std::vector<std::string>& series_names() const { return names_; }
  std::chrono::seconds sample_period() const { return period_; }

  /// Contiguous row range [begin, end) with the same metadata.
  TimeSeriesDataset rows(std::size_t begin, std::size_t end) const;

 private:
  Matrix values_;
  std::vector<std::string> names_;
  std::chrono::seconds period_;
};

struct LoadOptions {
  /// Replace missing values (nan fields) with the previous observation of the
  /// same series. Off by default: missing values are rejected.
  bool forward_fill = false;
};

/// Reads the "txt-matrix" format: one time step per line, N comma-separated
/// decimals. Files ending in ".gz" are decompressed transparently.
TimeSeriesDataset load_dataset(const std::filesystem::path& path, const std::string& format = "txt-matrix",
                               const LoadOptions& options = {});

/// Writes `values` in txt-matrix form (max precision, round-trips exactly).
void save_matrix(const std::filesystem::path& path, const Matrix& values);

struct SplitSpec {
  double train_fraction = 0.6;
  double valid_fraction = 0.2;
  double test_fraction = 0.2;

  void validate() const;
};

struct Splits {
  TimeSeriesDataset train;
  TimeSeriesDataset valid;
  TimeSeriesDataset test;
};

/// Sequential split: train = floor(f_train * T), valid = floor(f_valid * T),
/// remainder to test. Throws ConfigError if any part is shorter than
/// `min_length`.
Splits split(const TimeSeriesDataset& ds, const SplitSpec& spec, std::size_t min_length = 2);

/// Per-series max-abs scaling.
class Scaler {
 public:
  Scaler() = default;
  explicit Scaler(Vector per_series_scale);

  static Scaler fit(const TimeSeriesDataset& train);

  const Vector& scale() const { return scale_; }
  Matrix apply(const Matrix& values) const;
  Matrix invert(const Matrix& values) const;
  TimeSeriesDataset apply(const TimeSeriesDataset& ds) const;

 private:
  Vector scale_;
};

struct WindowSample {
  Matrix input;   // N x window, column k is time t - window + 1 + k
  Vector target;  // N values at time t + horizon
  std::size_t t = 0;
  std::size_t horizon = 0;
};

/// Lazy view of all single-step samples of a dataset. Sample j reads rows
/// j .. j + window - 1 and targets row j + window - 1 + horizon.
class WindowSet {
 public:
  WindowSet(const TimeSeriesDataset& ds, std::size_t window, std::size_t horizon);

  std::size_t size() const { return count_; }
  std::size_t window() const { return window_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t series() const { return static_cast<std::size_t>(values_.cols()); }
  WindowSample operator[](std::size_t j) const;

  /// Fills a [B, 1, N, window] input buffer and a [B, N] target buffer
  /// (row-major) for the given sample indices.
  void gather(const std::vector<std::size_t>& indices, std::vector<double>& inputs,
              std::vector<double>& targets) const;

 private:
  Matrix values_;
  std::size_t window_;
  std::size_t horizon_;
  std::size_t count_;
};

/// Materialised windows; prefer WindowSet for large data.
std::vector<WindowSample> make_windows(const TimeSeriesDataset& ds, std::size_t window, std::size_t horizon);

}  // namespace adlgnn::data
