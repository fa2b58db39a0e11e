#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <thread>

#include "ccnn/data.hpp"

namespace ccnn {

Tensor<float> decode_image(const fs::path& path) {
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    fail(ErrorKind::Decode, "cannot decode " + path.string() + ": " + e.what());
  }
  if (bgr.empty()) fail(ErrorKind::Decode, "cannot decode " + path.string());
  if (bgr.rows <= 0 || bgr.cols <= 0) fail(ErrorKind::Decode, "zero-size image " + path.string());
  if (bgr.depth() != CV_8U) bgr.convertTo(bgr, CV_8U);

  const std::size_t h = std::size_t(bgr.rows), w = std::size_t(bgr.cols);
  Tensor<float> img(Shape{3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(int(y));
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img[(c * h + y) * w + x] = float(row[x][2 - c]) / 255.0f;
  }
  return img;
}

Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t out_h, std::size_t out_w) {
  require_rank(image.shape(), 3, "resize input");
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == out_h && w == out_w) return image;
  Tensor<float> out(Shape{ch, out_h, out_w});
  const double sy = double(h) / double(out_h), sx = double(w) / double(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(h - 1));
    const std::size_t y0 = std::size_t(fy), y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - double(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(w - 1));
      const std::size_t x0 = std::size_t(fx), x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - double(x0);
      for (std::size_t c = 0; c < ch; ++c) {
        const float* p = image.data() + c * h * w;
        const double top = p[y0 * w + x0] * (1 - wx) + p[y0 * w + x1] * wx;
        const double bot = p[y1 * w + x0] * (1 - wx) + p[y1 * w + x1] * wx;
        out[(c * out_h + y) * out_w + x] = float(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

void normalize_imagenet(Tensor<float>& image) {
  require_rank(image.shape(), 3, "normalize input");
  const std::size_t area = image.dim(1) * image.dim(2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < area; ++i) image[c * area + i] = (image[c * area + i] - kImagenetMean[c]) / kImagenetStd[c];
}

void denormalize_imagenet(Tensor<float>& image) {
  require_rank(image.shape(), 3, "denormalize input");
  const std::size_t area = image.dim(1) * image.dim(2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < area; ++i) image[c * area + i] = image[c * area + i] * kImagenetStd[c] + kImagenetMean[c];
}

Tensor<float> load_and_preprocess(const fs::path& path, std::size_t target_size) {
  Tensor<float> img = resize_bilinear(decode_image(path), target_size, target_size);
  normalize_imagenet(img);
  return img;
}

void AugmentConfig::validate() const {
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) fail(ErrorKind::Config, "hflip_prob must lie in [0, 1]");
  if (!(rotation_deg >= 0.0) || !(jitter_brightness >= 0.0) || !(jitter_contrast >= 0.0) ||
      !(jitter_saturation >= 0.0))
    fail(ErrorKind::Config, "augmentation magnitudes must be non-negative");
}

AugmentParams sample_augment(const AugmentConfig& config, Rng& rng) {
  AugmentParams p;
  p.flip = rng.bernoulli(config.hflip_prob);
  p.angle_deg = rng.uniform(-config.rotation_deg, config.rotation_deg);
  p.brightness = rng.uniform(1.0 - config.jitter_brightness, 1.0 + config.jitter_brightness);
  p.contrast = rng.uniform(1.0 - config.jitter_contrast, 1.0 + config.jitter_contrast);
  p.saturation = rng.uniform(1.0 - config.jitter_saturation, 1.0 + config.jitter_saturation);
  return p;
}

Tensor<float> hflip(const Tensor<float>& image) {
  require_rank(image.shape(), 3, "hflip input");
  Tensor<float> out(image.shape());
  const std::size_t rows = image.dim(0) * image.dim(1), w = image.dim(2);
  for (std::size_t r = 0; r < rows; ++r)
    std::reverse_copy(image.data() + r * w, image.data() + (r + 1) * w, out.data() + r * w);
  return out;
}

Tensor<float> rotate(const Tensor<float>& image, double angle_deg) {
  require_rank(image.shape(), 3, "rotate input");
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(a), sn = std::sin(a);
  const double cx = (double(w) - 1.0) / 2.0, cy = (double(h) - 1.0) / 2.0;
  Tensor<float> out(image.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = double(x) - cx, dy = double(y) - cy;
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const double wx = sx - fx0, wy = sy - fy0;
      const std::ptrdiff_t x0 = std::ptrdiff_t(fx0), y0 = std::ptrdiff_t(fy0);
      const std::ptrdiff_t xs[2] = {x0, x0 + 1}, ys[2] = {y0, y0 + 1};
      const double wxs[2] = {1.0 - wx, wx}, wys[2] = {1.0 - wy, wy};
      for (std::size_t c = 0; c < ch; ++c) {
        const float* p = image.data() + c * h * w;
        double acc = 0.0;
        for (int j = 0; j < 2; ++j) {
          if (wys[j] == 0.0 || ys[j] < 0 || ys[j] >= std::ptrdiff_t(h)) continue;
          for (int i = 0; i < 2; ++i) {
            if (wxs[i] == 0.0 || xs[i] < 0 || xs[i] >= std::ptrdiff_t(w)) continue;
            acc += wys[j] * wxs[i] * p[ys[j] * std::ptrdiff_t(w) + xs[i]];
          }
        }
        out[(c * h + y) * w + x] = float(acc);
      }
    }
  return out;
}

Tensor<float> apply_augment(const Tensor<float>& image, const AugmentParams& params) {
  require_rank(image.shape(), 3, "augment input");
  if (image.dim(0) != 3) fail(ErrorKind::Dimension, "augment expects an RGB image, got " + image.shape().str());
  Tensor<float> img = params.flip ? hflip(image) : image;
  if (params.angle_deg != 0.0) img = rotate(img, params.angle_deg);

  const std::size_t area = img.dim(1) * img.dim(2);
  float* r = img.data();
  float* g = r + area;
  float* b = g + area;
  for (float& v : img.values()) v = float(v * params.brightness);

  double gray_sum = 0.0;
  for (std::size_t i = 0; i < area; ++i) gray_sum += 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  const double mean = gray_sum / double(area);
  for (float& v : img.values()) v = float((v - mean) * params.contrast + mean);

  for (std::size_t i = 0; i < area; ++i) {
    const double gray = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
    r[i] = float(gray + (r[i] - gray) * params.saturation);
    g[i] = float(gray + (g[i] - gray) * params.saturation);
    b[i] = float(gray + (b[i] - gray) * params.saturation);
  }
  for (float& v : img.values()) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

Tensor<float> augment(const Tensor<float>& image, const AugmentConfig& config, Rng& rng) {
  if (!config.enabled) return image;
  return apply_augment(image, sample_augment(config, rng));
}

BatchLoader::BatchLoader(std::vector<SampleRef> samples, LoaderOptions options)
    : samples_(std::move(samples)), options_(std::move(options)) {
  if (options_.image_size == 0) fail(ErrorKind::Config, "image_size must be positive");
  if (options_.num_threads == 0) options_.num_threads = 1;
  options_.augment_config.validate();
}

Tensor<float> BatchLoader::load_one(std::size_t position, int epoch) const {
  const SampleRef& s = samples_.at(position);
  Tensor<float> img = resize_bilinear(decode_image(s.path), options_.image_size, options_.image_size);
  if (options_.augment && options_.augment_config.enabled) {
    Rng rng(derive_seed(options_.seed, {0xA06u, std::uint64_t(epoch), position}));
    img = augment(img, options_.augment_config, rng);
  }
  normalize_imagenet(img);
  return img;
}

Batch BatchLoader::load(const BatchPlan& plan, int epoch) const {
  const std::size_t n = plan.indices.size(), s = options_.image_size;
  Batch batch{Tensor<float>(), std::vector<int>(n)};
  if (n == 0) return batch;
  batch.images = Tensor<float>(Shape{n, 3, s, s});
  const std::size_t stride = 3 * s * s;

  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t worker, std::size_t workers) {
    for (std::size_t k = worker; k < n; k += workers) {
      try {
        const Tensor<float> img = load_one(plan.indices[k], epoch);
        std::copy(img.data(), img.data() + stride, batch.images.data() + k * stride);
        batch.targets[k] = samples_.at(plan.indices[k]).class_index;
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(options_.num_threads, n);
  if (workers <= 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work, t, workers);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return batch;
}

}  // namespace ccnn
