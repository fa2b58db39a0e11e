#include "ccnn/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace ccnn {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return s;
}

}  // namespace

bool is_supported_image(const fs::path& path) {
  const std::string ext = lower(path.extension().string());
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png" || ext == ".ppm";
}

DatasetIndex scan_dataset(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec))
    fail(ErrorKind::DatasetStructure, "dataset root is not a directory: " + root.string());

  DatasetIndex index;
  index.root = root;
  try {
    for (const auto& entry : fs::directory_iterator(root))
      if (entry.is_directory()) index.classes.push_back(entry.path().filename().string());
  } catch (const fs::filesystem_error& e) {
    fail(ErrorKind::Io, "cannot read " + root.string() + ": " + e.what());
  }
  std::sort(index.classes.begin(), index.classes.end());
  if (index.classes.size() < 2)
    fail(ErrorKind::DatasetStructure, "dataset at " + root.string() + " has " + std::to_string(index.classes.size()) +
                                          " class folder(s); at least 2 are required");

  for (std::size_t c = 0; c < index.classes.size(); ++c) {
    const fs::path class_dir = root / index.classes[c];
    std::vector<std::string> files;
    try {
      for (const auto& entry : fs::recursive_directory_iterator(class_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = entry.path().lexically_relative(root).generic_string();
        if (is_supported_image(entry.path()))
          files.push_back(rel);
        else
          index.skipped.push_back(rel);
      }
    } catch (const fs::filesystem_error& e) {
      fail(ErrorKind::Io, "cannot read " + class_dir.string() + ": " + e.what());
    }
    if (files.empty())
      fail(ErrorKind::DatasetStructure, "class folder '" + index.classes[c] + "' contains no supported images");
    std::sort(files.begin(), files.end());
    for (auto& rel : files)
      index.samples.push_back(SampleRef{root / fs::path(rel), rel, int(c), index.classes[c]});
    index.counts.push_back(files.size());
  }
  std::sort(index.skipped.begin(), index.skipped.end());
  return index;
}

SplitName parse_split_name(std::string_view name) {
  if (name == "train") return SplitName::Train;
  if (name == "val") return SplitName::Val;
  if (name == "test") return SplitName::Test;
  fail(ErrorKind::Usage, "unknown split '" + std::string(name) + "' (expected train, val or test)");
}

std::string_view to_string(SplitName split) {
  switch (split) {
    case SplitName::Train: return "train";
    case SplitName::Val: return "val";
    case SplitName::Test: return "test";
  }
  return "?";
}

const std::vector<SampleRef>& SplitAssignment::get(SplitName split) const {
  switch (split) {
    case SplitName::Train: return train;
    case SplitName::Val: return val;
    case SplitName::Test: return test;
  }
  return test;
}

std::vector<std::size_t> SplitAssignment::class_counts(SplitName split) const {
  std::vector<std::size_t> counts(classes.size(), 0);
  for (const auto& s : get(split)) ++counts.at(std::size_t(s.class_index));
  return counts;
}

SplitAssignment stratified_split(const DatasetIndex& index, std::uint64_t seed) {
  SplitAssignment out;
  out.seed = seed;
  out.classes = index.classes;

  std::vector<std::vector<std::size_t>> members(index.num_classes());
  for (std::size_t i = 0; i < index.samples.size(); ++i)
    members.at(std::size_t(index.samples[i].class_index)).push_back(i);

  // 0 = train, 1 = val, 2 = test, per sample.
  std::vector<int> slot(index.samples.size(), 2);
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto& ids = members[c];
    const std::size_t n = ids.size();
    if (n < 3)
      fail(ErrorKind::Stratification, "class '" + index.classes[c] + "' has " + std::to_string(n) +
                                          " sample(s); stratified splitting needs at least 3");
    Rng rng(derive_seed(seed, {c}));
    rng.shuffle(std::span<std::size_t>(ids));
    // Integer floor of 0.70 n and 0.15 n, avoiding float rounding at exact multiples.
    const std::size_t n_train = n * 70 / 100;
    const std::size_t n_val = n * 15 / 100;
    for (std::size_t k = 0; k < n; ++k) slot[ids[k]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
    if (n_val == 0)
      out.warnings.push_back("class '" + index.classes[c] + "' (" + std::to_string(n) +
                             " samples) has an empty validation slice");
  }
  for (std::size_t i = 0; i < index.samples.size(); ++i) {
    auto& dst = slot[i] == 0 ? out.train : (slot[i] == 1 ? out.val : out.test);
    dst.push_back(index.samples[i]);
  }
  return out;
}

std::string manifest_text(const SplitAssignment& split) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["format"] = "ccnn-split-manifest";
  j["version"] = 1;
  j["seed"] = split.seed;
  j["ratios"] = {split.ratios.train, split.ratios.val, split.ratios.test};
  j["classes"] = split.classes;
  ordered_json splits = ordered_json::object();
  for (SplitName name : {SplitName::Train, SplitName::Val, SplitName::Test}) {
    ordered_json list = ordered_json::array();
    for (const auto& s : split.get(name)) list.push_back({{"path", s.relative_path}, {"class", s.class_index}});
    splits[std::string(to_string(name))] = std::move(list);
  }
  j["splits"] = std::move(splits);
  return j.dump(1) + "\n";
}

void write_manifest(const SplitAssignment& split, const fs::path& path) {
  const std::string text = manifest_text(split);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(text.data(), std::streamsize(text.size()));
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      fail(ErrorKind::Io, "cannot write manifest " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot move manifest into place at " + path.string() + ": " + ec.message());
}

SplitAssignment read_manifest(const fs::path& path, const fs::path& dataset_root) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, "manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  SplitAssignment out;
  try {
    if (j.at("format").get<std::string>() != "ccnn-split-manifest" || j.at("version").get<int>() != 1)
      fail(ErrorKind::Config, "manifest " + path.string() + " has an unknown format or version");
    out.seed = j.at("seed").get<std::uint64_t>();
    const auto ratios = j.at("ratios").get<std::vector<double>>();
    if (ratios.size() != 3) fail(ErrorKind::Config, "manifest ratios must have three entries");
    out.ratios = {ratios[0], ratios[1], ratios[2]};
    out.classes = j.at("classes").get<std::vector<std::string>>();
    for (SplitName name : {SplitName::Train, SplitName::Val, SplitName::Test}) {
      auto& dst = name == SplitName::Train ? out.train : (name == SplitName::Val ? out.val : out.test);
      for (const auto& e : j.at("splits").at(std::string(to_string(name)))) {
        SampleRef s;
        s.relative_path = e.at("path").get<std::string>();
        s.class_index = e.at("class").get<int>();
        if (s.class_index < 0 || std::size_t(s.class_index) >= out.classes.size())
          fail(ErrorKind::Label, "manifest entry " + s.relative_path + " has class index out of range");
        s.class_name = out.classes[std::size_t(s.class_index)];
        s.path = dataset_root / fs::path(s.relative_path);
        dst.push_back(std::move(s));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, "manifest " + path.string() + " is malformed: " + e.what());
  }
  return out;
}

std::string manifest_digest(const SplitAssignment& split) {
  const std::string text = manifest_text(split);
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(text.data()), uInt(text.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

ClassWeights compute_class_weights(std::span<const std::size_t> train_counts) {
  if (train_counts.empty()) fail(ErrorKind::Precondition, "class weights need at least one class");
  const double total = double(std::accumulate(train_counts.begin(), train_counts.end(), std::size_t(0)));
  const double classes = double(train_counts.size());
  ClassWeights w;
  for (std::size_t c = 0; c < train_counts.size(); ++c) {
    if (train_counts[c] == 0)
      fail(ErrorKind::Precondition, "class " + std::to_string(c) + " has no training samples; cannot weight it");
    w.weights.push_back(total / (classes * double(train_counts[c])));
  }
  return w;
}

std::vector<BatchPlan> make_batches(std::size_t count, std::size_t batch_size, bool shuffle, std::uint64_t seed,
                                    int epoch) {
  if (batch_size == 0) fail(ErrorKind::Config, "batch_size must be at least 1");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t(0));
  if (shuffle) {
    Rng rng(derive_seed(seed, {0xBA7Cu, std::uint64_t(epoch)}));
    rng.shuffle(std::span<std::size_t>(order));
  }
  std::vector<BatchPlan> plans;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    plans.push_back(BatchPlan{std::vector<std::size_t>(order.begin() + std::ptrdiff_t(start),
                                                       order.begin() + std::ptrdiff_t(end))});
  }
  return plans;
}

}  // namespace ccnn
