#include "ccnn/optim.hpp"

#include <algorithm>
#include <string>

namespace ccnn {

PlateauScheduler::PlateauScheduler(double initial_lr, Config config) : config_(config), lr_(initial_lr) {
  if (!(config.factor > 0.0 && config.factor < 1.0)) fail(ErrorKind::Config, "scheduler factor must lie in (0, 1)");
  if (config.patience < 1) fail(ErrorKind::Config, "scheduler patience must be at least 1");
  if (!(config.min_lr >= 0.0)) fail(ErrorKind::Config, "scheduler min_lr must be non-negative");
  if (!(initial_lr > 0.0)) fail(ErrorKind::Config, "scheduler initial lr must be positive");
  lr_ = std::max(initial_lr, config.min_lr);
}

double PlateauScheduler::observe(double val_loss) {
  if (std::isnan(val_loss)) fail(ErrorKind::NumericFault, "scheduler observed a NaN validation loss");
  if (val_loss < best_) {
    best_ = val_loss;
    bad_epochs_ = 0;
    return lr_;
  }
  if (++bad_epochs_ >= config_.patience) {
    lr_ = std::max(lr_ * config_.factor, config_.min_lr);
    bad_epochs_ = 0;
  }
  return lr_;
}

EarlyStopper::EarlyStopper(Config config) : config_(config) {
  if (!(config.min_delta >= 0.0)) fail(ErrorKind::Config, "early-stop min_delta must be non-negative");
  if (config.patience < 1) fail(ErrorKind::Config, "early-stop patience must be at least 1");
}

StopDecision EarlyStopper::observe(double val_loss) {
  if (std::isnan(val_loss)) fail(ErrorKind::NumericFault, "early stopper observed a NaN validation loss");
  if (val_loss <= best_ - config_.min_delta) {
    best_ = val_loss;
    since_improve_ = 0;
    return StopDecision::Continue;
  }
  return ++since_improve_ >= config_.patience ? StopDecision::Stop : StopDecision::Continue;
}

}  // namespace ccnn
