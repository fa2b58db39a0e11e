#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ccnn/custom_cnn.hpp"
#include "ccnn/optim.hpp"

namespace ccnn {

// Binary layout, all integers and floats little-endian:
//
//   "CCNN"                     magic
//   u32                        format version (1)
//   u32 count, {u32 len, bytes}  class names
//   u32 len, bytes             config snapshot (JSON text)
//   f64                        best validation loss
//   tensor table               parameters
//   tensor table               buffers
//   u8                         optimizer present
//     u64 step, f64 lr, beta1, beta2, eps, weight_decay
//     tensor table             first moments
//     tensor table             second moments
//   u32                        CRC-32 of every preceding byte
//
// tensor table: u32 count, then per tensor
//   u32 name length, name bytes, u32 rank, u64 dims[rank], f32 values[numel]

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

struct OptimizerState {
  std::uint64_t step = 0;
  AdamConfig config;
  std::vector<NamedTensor> first_moments;
  std::vector<NamedTensor> second_moments;
};

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  std::vector<std::string> class_names;
  std::string config_snapshot;
  double best_val_loss = 0.0;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> buffers;
  std::optional<OptimizerState> optimizer;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

/// Writes through a temporary file and renames it into place, so a failed
/// write never leaves a partial checkpoint behind.
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies the model registry (and optionally the Adam state) into a checkpoint.
Checkpoint capture_checkpoint(CustomCnn<float>& model, const Adam* optimizer, std::vector<std::string> class_names,
                              std::string config_snapshot, double best_val_loss);

/// Loads tensors into an already built model of the same architecture. The
/// checkpoint name set must match the registry exactly.
void restore_model(const Checkpoint& ckpt, CustomCnn<float>& model);
/// Restores moments into the model's Params and returns the optimizer.
Adam restore_optimizer(const Checkpoint& ckpt, CustomCnn<float>& model);

/// Architecture recorded in a checkpoint (class count plus snapshot fields).
CustomCnnConfig model_config_from(const Checkpoint& ckpt);

struct LoadedModel {
  Checkpoint checkpoint;
  CustomCnn<float> model;
  std::optional<Adam> optimizer;
};

LoadedModel load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(CustomCnn<float>& model, const Adam* optimizer, const std::vector<std::string>& class_names,
                     const std::string& config_snapshot, double best_val_loss, const std::filesystem::path& path);

}  // namespace ccnn
