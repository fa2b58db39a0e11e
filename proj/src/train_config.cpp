#include <cstdio>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "ccnn/trainer.hpp"

namespace ccnn {

namespace {

using nlohmann::ordered_json;

ordered_json to_json(const TrainConfig& c) {
  ordered_json j;
  j["dataset_root"] = c.dataset_root.string();
  j["output_dir"] = c.output_dir.string();
  j["seed"] = c.seed;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["dropout"] = c.dropout;
  j["use_class_weights"] = c.use_class_weights;
  j["augment"] = c.augment;
  j["augment_hflip_prob"] = c.augment_hflip_prob;
  j["augment_rotation_deg"] = c.augment_rotation_deg;
  j["augment_jitter"] = c.augment_jitter;
  j["scheduler_factor"] = c.scheduler_factor;
  j["scheduler_patience"] = c.scheduler_patience;
  j["scheduler_min_lr"] = c.scheduler_min_lr;
  j["early_stop_min_delta"] = c.early_stop_min_delta;
  j["early_stop_patience"] = c.early_stop_patience;
  j["image_size"] = c.image_size;
  j["num_threads"] = c.num_threads;
  j["evaluate_final"] = c.evaluate_final;
  j["log_timing"] = c.log_timing;
  return j;
}

template <typename T>
void read_field(const ordered_json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::Config, std::string("config key '") + key + "' has the wrong type");
  }
}

TrainConfig from_json(const ordered_json& j) {
  if (!j.is_object()) fail(ErrorKind::Config, "train config must be a JSON object");
  const ordered_json known = to_json(TrainConfig{});
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) fail(ErrorKind::Config, "unknown config key '" + key + "'");

  TrainConfig c;
  std::string root = c.dataset_root.string(), out = c.output_dir.string();
  read_field(j, "dataset_root", root);
  read_field(j, "output_dir", out);
  c.dataset_root = root;
  c.output_dir = out;
  read_field(j, "seed", c.seed);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "max_epochs", c.max_epochs);
  read_field(j, "lr", c.lr);
  read_field(j, "weight_decay", c.weight_decay);
  read_field(j, "dropout", c.dropout);
  read_field(j, "use_class_weights", c.use_class_weights);
  read_field(j, "augment", c.augment);
  read_field(j, "augment_hflip_prob", c.augment_hflip_prob);
  read_field(j, "augment_rotation_deg", c.augment_rotation_deg);
  read_field(j, "augment_jitter", c.augment_jitter);
  read_field(j, "scheduler_factor", c.scheduler_factor);
  read_field(j, "scheduler_patience", c.scheduler_patience);
  read_field(j, "scheduler_min_lr", c.scheduler_min_lr);
  read_field(j, "early_stop_min_delta", c.early_stop_min_delta);
  read_field(j, "early_stop_patience", c.early_stop_patience);
  read_field(j, "image_size", c.image_size);
  read_field(j, "num_threads", c.num_threads);
  read_field(j, "evaluate_final", c.evaluate_final);
  read_field(j, "log_timing", c.log_timing);
  return c;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) fail(ErrorKind::Config, "batch_size must be at least 1");
  if (max_epochs < 1) fail(ErrorKind::Config, "max_epochs must be at least 1");
  if (!(lr > 0.0)) fail(ErrorKind::Config, "lr must be positive");
  if (!(weight_decay >= 0.0)) fail(ErrorKind::Config, "weight_decay must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorKind::Config, "dropout must lie in [0, 1)");
  if (image_size == 0 || image_size % 8 != 0) fail(ErrorKind::Config, "image_size must be a positive multiple of 8");
  if (num_threads == 0) fail(ErrorKind::Config, "num_threads must be at least 1");
}

TrainConfig train_config_from_json_text(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("train config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open config " + path.string());
  return train_config_from_json_text(std::string(std::istreambuf_iterator<char>(in), {}));
}

void apply_override(TrainConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    fail(ErrorKind::Usage, "override '" + std::string(assignment) + "' is not of the form key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string value(assignment.substr(eq + 1));

  ordered_json j = to_json(config);
  if (!j.contains(key)) fail(ErrorKind::Config, "unknown config key '" + key + "'");
  ordered_json& field = j[key];
  try {
    if (field.is_string()) {
      field = value;
    } else if (field.is_boolean()) {
      if (value == "true" || value == "1")
        field = true;
      else if (value == "false" || value == "0")
        field = false;
      else
        fail(ErrorKind::Config, "config key '" + key + "' expects true or false");
    } else {
      // Numbers: reuse the JSON number grammar, then let from_json type-check.
      field = ordered_json::parse(value);
      if (!field.is_number()) fail(ErrorKind::Config, "config key '" + key + "' expects a number");
    }
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::Config, "config key '" + key + "' cannot take value '" + value + "'");
  }
  config = from_json(j);
}

std::string config_snapshot(const TrainConfig& config) {
  ordered_json j = to_json(config);
  j.erase("output_dir");
  return j.dump();
}

std::string format_epoch_row(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", r.epoch, r.train_loss, r.train_acc, r.val_loss,
                r.val_acc, r.lr, r.epoch_time_sec);
  return buf;
}

std::vector<EpochRecord> read_epoch_log(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open epoch log " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<EpochRecord> rows;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // torn last line
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (header) {
      if (line != kEpochLogHeader) fail(ErrorKind::Io, "epoch log " + path.string() + " has an unexpected header");
      header = false;
      continue;
    }
    EpochRecord r;
    int consumed = 0;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf%n", &r.epoch, &r.train_loss, &r.train_acc, &r.val_loss,
                    &r.val_acc, &r.lr, &r.epoch_time_sec, &consumed) != 7 ||
        std::size_t(consumed) != line.size())
      fail(ErrorKind::Io, "epoch log " + path.string() + " has a malformed row: " + line);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace ccnn
