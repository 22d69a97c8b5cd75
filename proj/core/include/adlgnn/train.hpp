#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adlgnn/data.hpp"
#include "adlgnn/model.hpp"
#include "adlgnn/nn.hpp"

namespace adlgnn::train {

enum class LossKind { Absolute, Squared };

std::string_view loss_kind_name(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

struct TrainConfig {
  double lr_init = 0.003;
  double l2_penalty = 1e-4;
  std::size_t batch_init = 4;
  std::size_t batch_max = 32;
  std::size_t plateau_patience = 3;
  double lr_factor = 0.75;
  std::size_t early_stop_patience = 10;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;
  LossKind loss_kind = LossKind::Absolute;
  /// A validation loss counts as an improvement when it is below
  /// best * (1 - threshold).
  double improvement_threshold = 1e-6;
  /// Caps the mini-batches per epoch (0 = full pass); the samples used are
  /// still drawn from a fresh shuffle every epoch.
  std::size_t max_batches_per_epoch = 0;
  /// Gradient-norm clipping; 0 disables it.
  double grad_clip = 0.0;

  void validate() const;
};

enum class TrackerMode { Batch, Lr, Stop };

/// Tracks the best validation metric and how many epochs have passed since.
///
/// Batch and Lr trackers report a plateau once `patience` consecutive epochs
/// have failed to beat the best, counting the epoch that set it (so with
/// patience 3, losses 1.0, 0.99, 0.99, 0.99 plateau at the fourth epoch).
/// The Stop tracker waits for `patience` epochs after the best.
struct PlateauTracker {
  TrackerMode mode = TrackerMode::Batch;
  std::size_t patience = 3;
  double threshold = 1e-6;
  double best_metric = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improvement = 0;
  bool has_best = false;

  /// Records one epoch; returns true when it improved on the best.
  bool observe(double metric);
  bool plateau() const;
  /// Starts a new plateau window; the best value is kept.
  void reset_counter() { epochs_since_improvement = 0; }
};

/// Records `val_loss` and doubles the batch (capped at batch_max) on a
/// plateau. Inactive once current_batch >= batch_max.
std::size_t step_batch_schedule(PlateauTracker& tracker, double val_loss, std::size_t current_batch,
                                std::size_t batch_max);

/// Records `val_loss` and multiplies lr by `factor` on a plateau. Inactive
/// (returns lr untouched, records nothing) while current_batch < batch_max.
double step_lr_schedule(PlateauTracker& tracker, double val_loss, double lr, double factor,
                        std::size_t current_batch, std::size_t batch_max);

/// Records `val_metric`; true once the tracker's patience is exhausted.
bool early_stop(PlateauTracker& tracker, double val_metric);

/// The three schedules advanced together once per epoch, as fit() does.
struct ScheduleState {
  explicit ScheduleState(const TrainConfig& cfg);

  PlateauTracker batch_tracker;
  PlateauTracker lr_tracker;
  PlateauTracker stop_tracker;
  std::size_t batch;
  double lr;
  bool stop = false;

  /// Feeds one validation loss. Returns human-readable transition events.
  std::vector<std::string> step(double val_loss);

 private:
  std::size_t batch_max_;
  double lr_factor_;
};

/// mean |pred - target| (or squared) + l2 * sum of squared non-bias parameters.
nn::Tensor loss(const nn::Tensor& pred, const nn::Tensor& target, std::span<const nn::Parameter> params,
                double l2_penalty, LossKind kind = LossKind::Absolute);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_rse = 0.0;
  double val_corr = 0.0;
  std::size_t batch_size = 0;
  double lr = 0.0;
  double seconds = 0.0;
  std::vector<std::string> events;
};

/// One JSON object per epoch record (no trailing newline).
std::string history_line(const EpochRecord& r);

struct FitResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
  bool diverged = false;
};

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
 public:
  explicit Adam(std::span<nn::Parameter> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(double lr);

 private:
  std::span<nn::Parameter> params_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains `model` on windows of already scaled data. Validation loss is the
/// base loss in scaled units; RSE and CORR are measured after inverting the
/// scaler. The parameters of the best validation epoch are restored before
/// returning. A non-finite training loss stops the run with `diverged` set.
FitResult fit(model::ForecastModel& model, const data::WindowSet& train, const data::WindowSet& valid,
              const data::Scaler& scaler, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace adlgnn::train
