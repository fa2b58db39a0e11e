#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>

#include "ccnn/layers.hpp"

namespace ccnn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Coupled L2: added to the gradient before the moment updates.
  double weight_decay = 1e-4;

  void validate() const {
    if (!(lr > 0.0)) fail(ErrorKind::Config, "adam: lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      fail(ErrorKind::Config, "adam: betas must lie in [0, 1)");
    if (!(eps > 0.0) || !(weight_decay >= 0.0)) fail(ErrorKind::Config, "adam: eps must be positive, weight_decay >= 0");
  }
};

/// Adam with coupled weight decay. Moment buffers live on each Param; the
/// optimizer itself only owns the hyperparameters and the step counter.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) { config_.validate(); }

  const AdamConfig& config() const { return config_; }
  std::uint64_t step_count() const { return t_; }
  void set_step_count(std::uint64_t t) { t_ = t; }
  double lr() const { return config_.lr; }
  void set_lr(double lr) {
    if (!(lr > 0.0)) fail(ErrorKind::Config, "adam: lr must be positive");
    config_.lr = lr;
  }

  template <typename Scalar>
  void step(std::span<Param<Scalar>* const> params) {
    for (const Param<Scalar>* p : params)
      if (!p->grad.all_finite()) fail(ErrorKind::NumericFault, "adam: non-finite gradient in " + p->name);
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, double(t_));
    const double c2 = 1.0 - std::pow(b2, double(t_));
    for (Param<Scalar>* p : params) {
      Scalar* value = p->value.data();
      const Scalar* grad = p->grad.data();
      Scalar* m = p->adam_m.data();
      Scalar* v = p->adam_v.data();
      for (std::size_t i = 0, n = p->value.size(); i < n; ++i) {
        const double g = double(grad[i]) + config_.weight_decay * double(value[i]);
        const double mi = b1 * m[i] + (1.0 - b1) * g;
        const double vi = b2 * v[i] + (1.0 - b2) * g * g;
        m[i] = Scalar(mi);
        v[i] = Scalar(vi);
        value[i] = Scalar(value[i] - config_.lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps));
      }
    }
  }

  template <typename Scalar>
  void step(const std::vector<Param<Scalar>*>& params) {
    step(std::span<Param<Scalar>* const>(params));
  }

 private:
  AdamConfig config_;
  std::uint64_t t_ = 0;
};

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without a strict decrease in validation loss, never below min_lr.
/// The bad-epoch counter restarts after each reduction.
class PlateauScheduler {
 public:
  struct Config {
    double factor = 0.5;
    int patience = 5;
    double min_lr = 1e-6;
  };

  PlateauScheduler(double initial_lr, Config config);
  explicit PlateauScheduler(double initial_lr) : PlateauScheduler(initial_lr, Config{}) {}

  double observe(double val_loss);

  double current_lr() const { return lr_; }
  double best_loss() const { return best_; }
  int bad_epochs() const { return bad_epochs_; }
  const Config& config() const { return config_; }

 private:
  Config config_;
  double lr_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
};

enum class StopDecision { Continue, Stop };

/// Stops once `patience` consecutive epochs have failed to reach
/// best - min_delta. Reaching exactly best - min_delta counts as improvement.
class EarlyStopper {
 public:
  struct Config {
    double min_delta = 1e-3;
    int patience = 10;
  };

  explicit EarlyStopper(Config config);
  EarlyStopper() : EarlyStopper(Config{}) {}

  StopDecision observe(double val_loss);

  double best_loss() const { return best_; }
  int epochs_since_improve() const { return since_improve_; }
  const Config& config() const { return config_; }

 private:
  Config config_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_improve_ = 0;
};

}  // namespace ccnn
