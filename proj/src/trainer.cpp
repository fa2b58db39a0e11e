#include "ccnn/trainer.hpp"

#include <chrono>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "ccnn/checkpoint.hpp"
#include "ccnn/log.hpp"
#include "ccnn/optim.hpp"

namespace ccnn {

namespace {

constexpr std::uint64_t kModelStream = 0x30DE1;
constexpr std::uint64_t kDropoutStream = 0xD60;

struct PassResult {
  double loss = 0.0;  // weighted mean over the whole pass
  double accuracy = 0.0;
  ConfusionMatrix confusion;
};

std::vector<int> argmax_rows(const Tensor<float>& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.data() + i * c;
    out[i] = int(std::max_element(row, row + c) - row);
  }
  return out;
}

/// Eval-mode pass in fixed order, no augmentation.
PassResult evaluate(CustomCnn<float>& model, const BatchLoader& loader, std::span<const double> weights,
                    std::size_t batch_size) {
  model.set_mode(LayerMode::Eval);
  PassResult r{0.0, 0.0, ConfusionMatrix(model.num_classes())};
  double weighted = 0.0, weight_sum = 0.0;
  std::size_t correct = 0;
  for (const auto& plan : make_batches(loader.size(), batch_size, false, 0, 0)) {
    const Batch batch = loader.load(plan, 0);
    const Tensor<float> logits = model.forward(batch.images);
    const auto loss = softmax_cross_entropy(logits, std::span<const int>(batch.targets), weights);
    weighted += loss.loss * loss.weight_sum;
    weight_sum += loss.weight_sum;
    const auto pred = argmax_rows(logits);
    r.confusion.update(batch.targets, pred);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.targets[i];
  }
  if (loader.size() > 0) {
    r.loss = weighted / weight_sum;
    r.accuracy = double(correct) / double(loader.size());
  }
  return r;
}

void write_text_file(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(text.data(), std::streamsize(text.size()));
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      fail(ErrorKind::Io, "cannot write " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot move " + path.string() + " into place");
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  out << line << '\n';
  out.flush();
  if (!out) fail(ErrorKind::Io, "cannot append to " + path.string());
}

/// A trailing single-sample batch is folded into the one before it; Train
/// mode BatchNorm cannot normalize a batch of one.
void fold_singleton_tail(std::vector<BatchPlan>& plans) {
  if (plans.size() >= 2 && plans.back().indices.size() == 1) {
    plans[plans.size() - 2].indices.push_back(plans.back().indices.front());
    plans.pop_back();
  }
}

}  // namespace

RunArtifacts run_train(const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  const auto trace = [&](std::string_view event, int epoch) {
    if (hooks.trace) hooks.trace(event, epoch);
  };

  const DatasetIndex index = scan_dataset(config.dataset_root);
  const SplitAssignment split = stratified_split(index, config.seed);
  if (split.val.empty()) fail(ErrorKind::Stratification, "validation split is empty; at least one class needs 7 or more samples");

  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create output directory " + config.output_dir.string() + ": " + ec.message());

  RunArtifacts art;
  art.warnings = split.warnings;
  for (const auto& w : split.warnings) log_line(LogLevel::Info, "warning: ", w);
  if (!index.skipped.empty()) log_line(LogLevel::Info, "skipped ", index.skipped.size(), " unsupported file(s)");
  art.split_manifest = config.output_dir / "split_manifest.json";
  art.epoch_log = config.output_dir / "epoch_log.csv";
  art.best_checkpoint = config.output_dir / "checkpoint_best.ccnn";
  art.final_checkpoint = config.output_dir / "checkpoint_final.ccnn";
  art.test_report = config.output_dir / "test_report.json";
  write_manifest(split, art.split_manifest);
  write_text_file(art.epoch_log, std::string(kEpochLogHeader) + "\n");

  std::vector<double> weights;
  if (config.use_class_weights) {
    const auto counts = split.class_counts(SplitName::Train);
    weights = compute_class_weights(counts).weights;
  }

  CustomCnnConfig model_cfg;
  model_cfg.num_classes = index.num_classes();
  model_cfg.dropout_rate = config.dropout;
  auto model = CustomCnn<float>::build(model_cfg, derive_seed(config.seed, {kModelStream}));
  Adam adam(AdamConfig{.lr = config.lr, .weight_decay = config.weight_decay});
  PlateauScheduler scheduler(config.lr, {config.scheduler_factor, config.scheduler_patience, config.scheduler_min_lr});
  EarlyStopper stopper({config.early_stop_min_delta, config.early_stop_patience});
  const auto params = model.parameters();
  const std::string snapshot = config_snapshot(config);
  log_line(LogLevel::Info, "model: ", model.param_count(), " params, ", index.num_classes(), " classes, ", split.train.size(),
      "/", split.val.size(), "/", split.test.size(), " train/val/test samples");

  LoaderOptions train_opts{config.image_size, config.augment,
                           AugmentConfig{true, config.augment_hflip_prob, config.augment_rotation_deg,
                                         config.augment_jitter, config.augment_jitter, config.augment_jitter},
                           config.seed, config.num_threads};
  LoaderOptions eval_opts{config.image_size, false, {}, config.seed, config.num_threads};
  const BatchLoader train_loader(split.train, train_opts);
  const BatchLoader val_loader(split.val, eval_opts);
  const BatchLoader test_loader(split.test, eval_opts);

  double best_val = std::numeric_limits<double>::infinity();
  std::uint64_t global_step = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = adam.lr();

    trace("train", epoch);
    model.set_mode(LayerMode::Train);
    auto plans = make_batches(train_loader.size(), config.batch_size, true, config.seed, epoch);
    fold_singleton_tail(plans);
    double weighted = 0.0, weight_sum = 0.0;
    std::size_t correct = 0;
    try {
      for (const auto& plan : plans) {
        const Batch batch = train_loader.load(plan, epoch);
        model.reseed_dropout(derive_seed(config.seed, {kDropoutStream, global_step++}));
        model.zero_grads();
        const Tensor<float> logits = model.forward(batch.images);
        const auto loss = softmax_cross_entropy(logits, std::span<const int>(batch.targets), weights);
        model.backward(loss.grad_logits);
        adam.step(params);
        weighted += loss.loss * loss.weight_sum;
        weight_sum += loss.weight_sum;
        const auto pred = argmax_rows(logits);
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.targets[i];
      }
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NumericFault)
        fail(ErrorKind::NumericFault, "epoch " + std::to_string(epoch) + ": " + e.what());
      throw;
    }
    rec.train_loss = weight_sum > 0.0 ? weighted / weight_sum : 0.0;
    rec.train_acc = train_loader.size() ? double(correct) / double(train_loader.size()) : 0.0;

    trace("validate", epoch);
    const PassResult val = evaluate(model, val_loader, weights, config.batch_size);
    rec.val_acc = val.accuracy;
    rec.val_loss = hooks.val_loss_override ? hooks.val_loss_override(epoch, val.loss) : val.loss;

    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      art.best_epoch = epoch;
      save_checkpoint(model, nullptr, index.classes, snapshot, best_val, art.best_checkpoint);
    }

    trace("scheduler", epoch);
    adam.set_lr(scheduler.observe(rec.val_loss));

    trace("early_stop", epoch);
    const StopDecision decision = stopper.observe(rec.val_loss);

    rec.epoch_time_sec =
        config.log_timing ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() : 0.0;
    append_line(art.epoch_log, format_epoch_row(rec));
    art.epochs.push_back(rec);
    log_line(LogLevel::Info, "epoch ", epoch, " train_loss ", rec.train_loss, " train_acc ", rec.train_acc, " val_loss ",
        rec.val_loss, " val_acc ", rec.val_acc, " lr ", rec.lr);

    if (decision == StopDecision::Stop) {
      art.stopped_early = true;
      log_line(LogLevel::Info, "early stop after epoch ", epoch);
      break;
    }
  }
  art.best_val_loss = best_val;
  save_checkpoint(model, &adam, index.classes, snapshot, best_val, art.final_checkpoint);

  trace("test", 0);
  art.evaluated_model = config.evaluate_final ? "final" : "best";
  LoadedModel eval_model = load_checkpoint(config.evaluate_final ? art.final_checkpoint : art.best_checkpoint);
  const PassResult test = evaluate(eval_model.model, test_loader, weights, config.batch_size);
  art.test_metrics = compute_metrics(test.confusion);
  write_text_file(art.test_report, metrics_json(art.test_metrics, index.classes, art.evaluated_model));
  log_line(LogLevel::Info, "test accuracy ", art.test_metrics.accuracy, " macro F1 ", art.test_metrics.macro_f1, " (",
      art.evaluated_model, " model)");
  return art;
}

MetricsReport run_eval(const fs::path& checkpoint_path, const fs::path& dataset_root, SplitName split,
                       const fs::path& manifest_path, std::size_t num_threads) {
  std::string missing;
  for (const auto& p : {checkpoint_path, manifest_path})
    if (!fs::exists(p)) missing += "\n  missing: " + p.string();
  if (!missing.empty()) fail(ErrorKind::Io, "required files not found:" + missing);

  LoadedModel loaded = load_checkpoint(checkpoint_path);
  const SplitAssignment manifest = read_manifest(manifest_path, dataset_root);
  if (manifest.classes != loaded.checkpoint.class_names)
    fail(ErrorKind::Compatibility, "manifest lists " + std::to_string(manifest.classes.size()) +
                                       " classes but the checkpoint was trained on " +
                                       std::to_string(loaded.checkpoint.class_names.size()) + " (or names differ)");
  const auto& samples = manifest.get(split);
  for (const auto& s : samples)
    if (!fs::exists(s.path)) missing += "\n  missing: " + s.path.string();
  if (!missing.empty()) fail(ErrorKind::Io, "dataset files listed in the manifest are missing:" + missing);
  if (samples.empty()) fail(ErrorKind::Evaluation, "split '" + std::string(to_string(split)) + "' is empty");

  std::size_t image_size = 224;
  if (!loaded.checkpoint.config_snapshot.empty()) {
    const auto j = nlohmann::json::parse(loaded.checkpoint.config_snapshot, nullptr, false);
    if (j.is_object() && j.contains("image_size")) image_size = j["image_size"].get<std::size_t>();
  }
  const BatchLoader loader(samples, LoaderOptions{image_size, false, {}, 0, num_threads});
  const PassResult r = evaluate(loaded.model, loader, {}, 32);
  return compute_metrics(r.confusion);
}

}  // namespace ccnn
