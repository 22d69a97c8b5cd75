#include "adlgnn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "adlgnn/error.hpp"
#include "adlgnn/eval.hpp"

namespace adlgnn::train {

namespace {

// Training allocates and frees many multi-megabyte buffers per step. Keeping
// them on the heap instead of fresh mmap regions avoids repeated page faults.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace

std::string_view loss_kind_name(LossKind kind) { return kind == LossKind::Absolute ? "absolute" : "squared"; }

LossKind parse_loss_kind(std::string_view name) {
  if (name == "absolute" || name == "mae") return LossKind::Absolute;
  if (name == "squared" || name == "mse") return LossKind::Squared;
  throw ConfigError("unknown loss kind '" + std::string(name) + "' (absolute, squared)");
}

void TrainConfig::validate() const {
  if (!(lr_init > 0.0)) throw ConfigError("train: lr must be positive");
  if (!(l2_penalty >= 0.0)) throw ConfigError("train: l2 penalty must be >= 0");
  if (batch_init == 0 || batch_init > batch_max) throw ConfigError("train: need 1 <= batch_init <= batch_max");
  if (plateau_patience < 1 || early_stop_patience < 1) throw ConfigError("train: patiences must be >= 1");
  if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw ConfigError("train: lr factor must lie in (0, 1)");
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (!(improvement_threshold >= 0.0)) throw ConfigError("train: improvement threshold must be >= 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("train: grad clip must be >= 0");
}

// --- schedules -------------------------------------------------------------------

bool PlateauTracker::observe(double metric) {
  const bool improved = !has_best || metric < best_metric - threshold * std::abs(best_metric);
  if (improved) {
    best_metric = metric;
    has_best = true;
    epochs_since_improvement = 0;
  } else {
    ++epochs_since_improvement;
  }
  return improved;
}

bool PlateauTracker::plateau() const {
  if (!has_best) return false;
  if (mode == TrackerMode::Stop) return epochs_since_improvement >= patience;
  return epochs_since_improvement + 1 >= patience;
}

std::size_t step_batch_schedule(PlateauTracker& tracker, double val_loss, std::size_t current_batch,
                                std::size_t batch_max) {
  if (current_batch >= batch_max) return current_batch;
  tracker.observe(val_loss);
  if (!tracker.plateau()) return current_batch;
  tracker.reset_counter();
  return std::min(2 * current_batch, batch_max);
}

double step_lr_schedule(PlateauTracker& tracker, double val_loss, double lr, double factor,
                        std::size_t current_batch, std::size_t batch_max) {
  if (current_batch < batch_max) return lr;
  tracker.observe(val_loss);
  if (!tracker.plateau()) return lr;
  tracker.reset_counter();
  return lr * factor;
}

bool early_stop(PlateauTracker& tracker, double val_metric) {
  tracker.observe(val_metric);
  return tracker.plateau();
}

ScheduleState::ScheduleState(const TrainConfig& cfg)
    : batch_tracker{TrackerMode::Batch, cfg.plateau_patience, cfg.improvement_threshold},
      lr_tracker{TrackerMode::Lr, cfg.plateau_patience, cfg.improvement_threshold},
      stop_tracker{TrackerMode::Stop, cfg.early_stop_patience, cfg.improvement_threshold},
      batch(cfg.batch_init),
      lr(cfg.lr_init),
      batch_max_(cfg.batch_max),
      lr_factor_(cfg.lr_factor) {}

std::vector<std::string> ScheduleState::step(double val_loss) {
  std::vector<std::string> events;
  if (batch < batch_max_) {
    const auto next = step_batch_schedule(batch_tracker, val_loss, batch, batch_max_);
    if (next != batch) events.push_back("batch " + std::to_string(batch) + " -> " + std::to_string(next));
    batch = next;
  } else {
    const double next = step_lr_schedule(lr_tracker, val_loss, lr, lr_factor_, batch, batch_max_);
    if (next != lr) {
      nlohmann::json j = {lr, next};
      events.push_back("lr " + j[0].dump() + " -> " + j[1].dump());
    }
    lr = next;
  }
  if (early_stop(stop_tracker, val_loss)) {
    stop = true;
    events.push_back("early stop");
  }
  return events;
}

// --- loss ------------------------------------------------------------------------

namespace {

nn::Tensor penalty(std::span<const nn::Parameter> params, double l2_penalty) {
  nn::Tensor total = nn::Tensor::scalar(0.0);
  for (const auto& p : params)
    if (!p.is_bias) total = nn::add(total, nn::sum_squares(p.tensor));
  return nn::scale(total, l2_penalty);
}

}  // namespace

nn::Tensor loss(const nn::Tensor& pred, const nn::Tensor& target, std::span<const nn::Parameter> params,
                double l2_penalty, LossKind kind) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("loss: prediction " + nn::shape_string(pred.shape()) + " vs target " +
                     nn::shape_string(target.shape()));
  }
  const nn::Tensor diff = nn::sub(pred, target);
  const nn::Tensor base = nn::mean(kind == LossKind::Absolute ? nn::abs(diff) : nn::square(diff));
  return l2_penalty > 0.0 ? nn::add(base, penalty(params, l2_penalty)) : base;
}

std::string history_line(const EpochRecord& r) {
  nlohmann::json j{{"epoch", r.epoch},       {"train_loss", r.train_loss}, {"val_loss", r.val_loss},
                   {"val_rse", r.val_rse},   {"val_corr", r.val_corr},     {"batch_size", r.batch_size},
                   {"lr", r.lr},             {"seconds", r.seconds},       {"events", r.events}};
  return j.dump();
}

// --- optimiser -------------------------------------------------------------------

Adam::Adam(std::span<nn::Parameter> params, double beta1, double beta2, double eps)
    : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto g = params_[k].tensor.grad();
    if (g.empty()) continue;
    auto w = params_[k].tensor.mutable_values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

// --- fit -------------------------------------------------------------------------

namespace {

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(std::span<const nn::Parameter> params) {
  Snapshot s;
  for (const auto& p : params) s.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return s;
}

void restore(std::span<nn::Parameter> params, const Snapshot& s) {
  for (std::size_t k = 0; k < params.size(); ++k) std::copy(s[k].begin(), s[k].end(), params[k].tensor.mutable_values().begin());
}

void clip_gradients(std::span<nn::Parameter> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double f = max_norm / norm;
  for (auto& p : params) {
    // grad() is read-only; rescaling goes through the node directly.
    auto& grad = p.tensor.node()->grad;
    for (double& g : grad) g *= f;
  }
}

struct Validation {
  double loss;
  double rse;
  double corr;
};

Validation validate(const model::ForecastModel& model, const data::WindowSet& valid, const data::Scaler& scaler,
                    LossKind kind) {
  const auto p = eval::predict_windows(model, valid, scaler);
  // Loss in scaled units, matching the training objective.
  const data::Matrix diff = scaler.apply(p.forecast) - scaler.apply(p.truth);
  const double l = kind == LossKind::Absolute ? diff.cwiseAbs().mean() : diff.array().square().mean();
  return {l, eval::rse(p.truth, p.forecast), eval::corr(p.truth, p.forecast)};
}

}  // namespace

FitResult fit(model::ForecastModel& model, const data::WindowSet& train, const data::WindowSet& valid,
              const data::Scaler& scaler, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  tune_allocator();
  if (train.series() != model.nodes() || valid.series() != model.nodes()) {
    throw DimensionError("fit: data series count differs from the model's");
  }
  if (train.window() != model.config().window || valid.window() != model.config().window) {
    throw ConfigError("fit: windows do not match the model's input length");
  }
  if (train.size() == 0 || valid.size() == 0) throw ConfigError("fit: empty training or validation set");

  auto& params = model.parameters();
  Adam adam(params);
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  ScheduleState sched(cfg);

  FitResult result;
  Snapshot best = snapshot(params);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> idx;
  std::vector<double> inputs, targets;
  const std::size_t N = model.nodes(), L = model.config().window;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.batch_size = sched.batch;
    rec.lr = sched.lr;

    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const std::size_t B = sched.batch;
    std::size_t batches = (order.size() + B - 1) / B;
    if (cfg.max_batches_per_epoch > 0) batches = std::min(batches, cfg.max_batches_per_epoch);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t k = 0; k < batches; ++k) {
      const std::size_t begin = k * B, end = std::min(order.size(), begin + B);
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end));
      train.gather(idx, inputs, targets);
      const nn::Tensor x({idx.size(), 1, N, L}, inputs);
      const nn::Tensor y({idx.size(), N}, targets);
      for (auto& p : params) p.tensor.zero_grad();
      const nn::Tensor pred = model.forward(x, true, &dropout_rng);
      const nn::Tensor base = loss(pred, y, {}, 0.0, cfg.loss_kind);
      const nn::Tensor objective = cfg.l2_penalty > 0.0 ? nn::add(base, penalty(params, cfg.l2_penalty)) : base;
      if (!std::isfinite(objective.item())) {
        result.diverged = true;
        break;
      }
      nn::backward(objective);
      if (cfg.grad_clip > 0.0) clip_gradients(params, cfg.grad_clip);
      adam.step(sched.lr);
      loss_sum += base.item() * static_cast<double>(idx.size());
      seen += idx.size();
    }
    if (result.diverged) {
      rec.events.push_back("diverged: non-finite loss, restoring the best checkpoint");
      rec.train_loss = std::numeric_limits<double>::quiet_NaN();
      rec.val_loss = rec.val_rse = rec.val_corr = std::numeric_limits<double>::quiet_NaN();
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.history.push_back(rec);
      if (on_epoch) on_epoch(rec);
      break;
    }
    rec.train_loss = loss_sum / static_cast<double>(seen);

    const auto v = validate(model, valid, scaler, cfg.loss_kind);
    rec.val_loss = v.loss;
    rec.val_rse = v.rse;
    rec.val_corr = v.corr;
    if (!std::isfinite(v.loss)) {
      result.diverged = true;
      rec.events.push_back("diverged: non-finite validation loss, restoring the best checkpoint");
    } else if (v.loss < result.best_val_loss) {
      result.best_val_loss = v.loss;
      result.best_epoch = epoch;
      best = snapshot(params);
      rec.events.push_back("best checkpoint");
    }
    if (!result.diverged) {
      for (auto& e : sched.step(v.loss)) rec.events.push_back(std::move(e));
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (result.diverged) break;
    if (sched.stop) {
      result.stopped_early = true;
      break;
    }
  }
  restore(params, best);
  return result;
}

}  // namespace adlgnn::train
