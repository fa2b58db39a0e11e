#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ccnn/custom_cnn.hpp"
#include "ccnn/data.hpp"
#include "ccnn/metrics.hpp"

namespace ccnn {

struct TrainConfig {
  fs::path dataset_root;
  fs::path output_dir = "run";
  std::uint64_t seed = 42;
  std::size_t batch_size = 32;
  int max_epochs = 100;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double dropout = 0.5;
  bool use_class_weights = true;
  bool augment = true;
  double augment_hflip_prob = 0.5;
  double augment_rotation_deg = 10.0;
  double augment_jitter = 0.2;
  double scheduler_factor = 0.5;
  int scheduler_patience = 5;
  double scheduler_min_lr = 1e-6;
  double early_stop_min_delta = 1e-3;
  int early_stop_patience = 10;
  std::size_t image_size = 224;
  std::size_t num_threads = 1;
  /// Evaluate the last-epoch weights on the test split instead of the
  /// best-validation-loss weights.
  bool evaluate_final = false;
  /// When false the epoch_time_sec column is written as 0 so logs of
  /// identical runs compare byte for byte.
  bool log_timing = true;

  void validate() const;
};

/// Reads a flat JSON object whose keys are TrainConfig field names. Unknown
/// keys are rejected.
TrainConfig load_train_config(const fs::path& path);
TrainConfig train_config_from_json_text(const std::string& text);
/// Applies `key=value`, parsing the value with the field's type.
void apply_override(TrainConfig& config, std::string_view assignment);
/// Flat JSON of every field except output_dir (a location, not a setting).
std::string config_snapshot(const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
  double epoch_time_sec = 0.0;
};

inline constexpr std::string_view kEpochLogHeader = "epoch,train_loss,train_acc,val_loss,val_acc,lr,epoch_time_sec";
std::string format_epoch_row(const EpochRecord& r);
/// Parses every complete row; a torn final line is ignored.
std::vector<EpochRecord> read_epoch_log(const fs::path& path);

/// Test seams for the epoch loop.
struct TrainHooks {
  /// Called with "train", "validate", "scheduler", "early_stop" per epoch and
  /// "test" once at the end.
  std::function<void(std::string_view event, int epoch)> trace;
  /// Replaces the measured validation loss fed to checkpoint selection, the
  /// scheduler and the early stopper.
  std::function<double(int epoch, double measured)> val_loss_override;
};

struct RunArtifacts {
  fs::path final_checkpoint;
  fs::path best_checkpoint;
  fs::path epoch_log;
  fs::path split_manifest;
  fs::path test_report;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
  /// "best" or "final": which weights produced test_metrics.
  std::string evaluated_model;
  MetricsReport test_metrics;
  std::vector<std::string> warnings;
};

/// Scan, split, build, then per epoch: train, validate, scheduler update,
/// early-stop check. Finishes with a test-split evaluation. Writes
/// epoch_log.csv, split_manifest.json, checkpoint_best.ccnn,
/// checkpoint_final.ccnn and test_report.json into output_dir.
RunArtifacts run_train(const TrainConfig& config, const TrainHooks& hooks = {});

/// Eval-mode pass of a checkpoint over one split of a manifest.
MetricsReport run_eval(const fs::path& checkpoint_path, const fs::path& dataset_root, SplitName split,
                       const fs::path& manifest_path, std::size_t num_threads = 1);

}  // namespace ccnn
