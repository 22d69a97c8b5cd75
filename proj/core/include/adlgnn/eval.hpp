#pragma once

// Forecast accuracy metrics and evaluation harness.
//
// Metric inputs are laid out like the datasets: one row per evaluated time
// point, one column per series.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "adlgnn/data.hpp"

namespace adlgnn::model {
class ForecastModel;
}

namespace adlgnn::eval {

using Matrix = Eigen::MatrixXd;

/// Root relative squared error against the grand mean of Y.
/// Throws Error when Y is constant (zero denominator).
double rse(const Matrix& Y, const Matrix& Yhat);

/// Mean over series (columns) of the Pearson correlation between truth and
/// prediction. A series where either side is constant contributes 0.
double corr(const Matrix& Y, const Matrix& Yhat);

struct Reference {
  double rse;
  double corr;
};

struct ReferenceRow {
  std::string_view method;
  std::string_view dataset;
  std::size_t horizon;
  Reference value;
};

/// Published benchmark numbers (solar, electricity, traffic; h = 3, 6, 12, 24).
std::span<const ReferenceRow> reference_table();
std::optional<Reference> reference(std::string_view method, std::string_view dataset, std::size_t horizon);

struct EvalResult {
  std::string method;
  std::string dataset;
  std::size_t horizon = 0;
  double rse = 0.0;
  double corr = 0.0;
  std::size_t n_points = 0;
  double runtime_seconds = 0.0;
  std::optional<Reference> reference;
};

/// Unscaled truth and predictions, rows aligned with the windows.
struct Predictions {
  Matrix truth;
  Matrix forecast;
};

/// Runs `model` over every window of `scaled` (data already divided by the
/// scaler) and maps predictions and targets back to the original units.
Predictions predict_windows(const model::ForecastModel& model, const data::WindowSet& scaled,
                            const data::Scaler& scaler, std::size_t batch = 64);

/// y_hat(t + h) = y(t): the last value of each input window. `windows` is
/// built on unscaled data.
Predictions persistence_forecast(const data::WindowSet& windows);

/// Per-series direct autoregression: y(t + h) regressed on y(t - p + 1 .. t)
/// and an intercept, fit by least squares on `train`.
class ArBaseline {
 public:
  ArBaseline(const data::TimeSeriesDataset& train, std::size_t order, std::size_t horizon, double ridge = 1e-6);
  std::size_t order() const { return order_; }
  Predictions forecast(const data::WindowSet& windows) const;

 private:
  std::size_t order_;
  std::size_t horizon_;
  Matrix coef_;  // (order + 1) x N, intercept last
};

EvalResult score(const Predictions& p, std::string method, std::string dataset, std::size_t horizon);

/// Evaluates one trained model (one horizon) on a test split.
EvalResult evaluate(const model::ForecastModel& model, const data::TimeSeriesDataset& test,
                    const data::Scaler& scaler, std::size_t horizon, std::string method = "ADLGNN",
                    std::string dataset = "");

/// One model per horizon; throws ConfigError when a horizon has no model.
std::vector<EvalResult> evaluate(std::span<const model::ForecastModel* const> models,
                                 std::span<const std::size_t> horizons, const data::TimeSeriesDataset& test,
                                 const data::Scaler& scaler, std::string method = "ADLGNN", std::string dataset = "");

/// {dataset, horizon, rse, corr, n_points, reference: {rse, corr} | null, ...}.
std::string result_json(const EvalResult& r, const std::string& config_echo = "");
void write_results_json(const std::filesystem::path& path, std::span<const EvalResult> results,
                        const std::string& config_echo = "");
/// Method, metric and one column per horizon, like the published table.
void write_results_csv(const std::filesystem::path& path, std::span<const EvalResult> results);

}  // namespace adlgnn::eval
