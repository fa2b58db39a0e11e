#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ccnn/rng.hpp"
#include "ccnn/tensor.hpp"

namespace ccnn {

namespace fs = std::filesystem;

struct SampleRef {
  fs::path path;
  /// Path relative to the dataset root, '/'-separated.
  std::string relative_path;
  int class_index = 0;
  std::string class_name;
};

struct DatasetIndex {
  fs::path root;
  /// Lexicographic (byte order); position is the class index.
  std::vector<std::string> classes;
  /// Ordered by class, then by relative path.
  std::vector<SampleRef> samples;
  std::vector<std::size_t> counts;
  /// Files under class folders that were not indexed (unsupported extension).
  std::vector<std::string> skipped;

  std::size_t num_classes() const { return classes.size(); }
};

/// True for .jpg, .jpeg, .png and .ppm, case-insensitive.
bool is_supported_image(const fs::path& path);

/// Indexes root/<class>/**/<image>. Needs at least two class folders, each
/// holding at least one supported image.
DatasetIndex scan_dataset(const fs::path& root);

enum class SplitName { Train, Val, Test };

SplitName parse_split_name(std::string_view name);
std::string_view to_string(SplitName split);

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct SplitAssignment {
  std::uint64_t seed = 0;
  SplitRatios ratios;
  std::vector<std::string> classes;
  /// Each split is kept in dataset-index order.
  std::vector<SampleRef> train;
  std::vector<SampleRef> val;
  std::vector<SampleRef> test;
  /// Human-readable notes, e.g. classes whose validation slice is empty.
  std::vector<std::string> warnings;

  const std::vector<SampleRef>& get(SplitName split) const;
  std::vector<std::size_t> class_counts(SplitName split) const;
};

/// Per-class seeded shuffle, then n_train = floor(0.70 n), n_val =
/// floor(0.15 n), test takes the rest. Every class needs n >= 3.
SplitAssignment stratified_split(const DatasetIndex& index, std::uint64_t seed);

/// Manifest I/O. The manifest is JSON listing seed, ratios, class names and
/// the relative paths of every split.
std::string manifest_text(const SplitAssignment& split);
void write_manifest(const SplitAssignment& split, const fs::path& path);
SplitAssignment read_manifest(const fs::path& path, const fs::path& dataset_root);
/// CRC-32 of the manifest text, as 8 hex digits.
std::string manifest_digest(const SplitAssignment& split);

struct ClassWeights {
  std::vector<double> weights;
};

/// w_c = N / (C * n_c), so a balanced training set gets unit weights.
ClassWeights compute_class_weights(std::span<const std::size_t> train_counts);

// ---------------------------------------------------------------- images

inline constexpr float kImagenetMean[3] = {0.485f, 0.456f, 0.406f};
inline constexpr float kImagenetStd[3] = {0.229f, 0.224f, 0.225f};

/// Decodes to RGB [3,H,W] with values in [0,1].
Tensor<float> decode_image(const fs::path& path);

/// Bilinear resize with half-pixel centers. Same-size input is copied as is.
Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t out_h, std::size_t out_w);

void normalize_imagenet(Tensor<float>& image);
void denormalize_imagenet(Tensor<float>& image);

/// decode -> resize to target x target -> ImageNet normalization.
Tensor<float> load_and_preprocess(const fs::path& path, std::size_t target_size = 224);

struct AugmentConfig {
  bool enabled = true;
  double hflip_prob = 0.5;
  double rotation_deg = 10.0;
  double jitter_brightness = 0.2;
  double jitter_contrast = 0.2;
  double jitter_saturation = 0.2;

  void validate() const;
};

/// One concrete draw of the random augmentation.
struct AugmentParams {
  bool flip = false;
  double angle_deg = 0.0;
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
};

AugmentParams sample_augment(const AugmentConfig& config, Rng& rng);

Tensor<float> hflip(const Tensor<float>& image);
/// Rotation about the image center by inverse mapping with bilinear
/// sampling; pixels that map outside the source are 0.
Tensor<float> rotate(const Tensor<float>& image, double angle_deg);

/// Applies flip, rotation, brightness, contrast and saturation in that order,
/// then clamps to [0,1]. Input is pre-normalization RGB in [0,1].
Tensor<float> apply_augment(const Tensor<float>& image, const AugmentParams& params);
Tensor<float> augment(const Tensor<float>& image, const AugmentConfig& config, Rng& rng);

// ---------------------------------------------------------------- batches

/// Positions into a split's sample list.
struct BatchPlan {
  std::vector<std::size_t> indices;
};

/// Splits [0, count) into batches; the last one may be short. With shuffle
/// the order is a permutation seeded by (seed, epoch).
std::vector<BatchPlan> make_batches(std::size_t count, std::size_t batch_size, bool shuffle, std::uint64_t seed,
                                    int epoch);

struct Batch {
  Tensor<float> images;  // [N,3,S,S], normalized
  std::vector<int> targets;
};

struct LoaderOptions {
  std::size_t image_size = 224;
  bool augment = false;
  AugmentConfig augment_config;
  std::uint64_t seed = 0;
  std::size_t num_threads = 1;
};

/// Materializes batches for one split. With num_threads > 1 samples are
/// decoded by workers that each fill pre-assigned slots, so the result does
/// not depend on scheduling. Augmentation draws come from a stream keyed by
/// (seed, epoch, sample position).
class BatchLoader {
 public:
  BatchLoader(std::vector<SampleRef> samples, LoaderOptions options);

  std::size_t size() const { return samples_.size(); }
  const std::vector<SampleRef>& samples() const { return samples_; }
  Batch load(const BatchPlan& plan, int epoch) const;

 private:
  Tensor<float> load_one(std::size_t position, int epoch) const;

  std::vector<SampleRef> samples_;
  LoaderOptions options_;
};

}  // namespace ccnn
