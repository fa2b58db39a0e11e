#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "ccnn/data.hpp"
#include "test_support.hpp"

namespace testing {

using ccnn::DatasetIndex;
using ccnn::Rng;
using ccnn::SampleRef;

/// Learning rate after each observation, derived from the positions of
/// prefix-minimum records: k non-record epochs after a record produce a
/// halving at every 5th of them.
inline std::vector<double> scheduler_oracle(const std::vector<double>& losses, double lr0, double min_lr, int patience) {
  std::vector<double> lrs;
  double best = std::numeric_limits<double>::infinity();
  int halvings = 0;
  std::size_t last_record = 0;
  for (std::size_t t = 0; t < losses.size(); ++t) {
    if (losses[t] < best) {
      best = losses[t];
      last_record = t;
    } else if ((t - last_record) % std::size_t(patience) == 0) {
      ++halvings;
    }
    lrs.push_back(std::max(lr0 * std::ldexp(1.0, -halvings), min_lr));
  }
  return lrs;
}

/// Stop decision at every epoch, re-deriving the reference best from scratch
/// for each prefix and testing the last `patience` epochs against it.
inline std::vector<bool> stopper_oracle(const std::vector<double>& losses, double delta, int patience) {
  std::vector<bool> out;
  for (std::size_t t = 0; t < losses.size(); ++t) {
    std::vector<bool> improved(t + 1);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s <= t; ++s) {
      improved[s] = losses[s] <= best - delta;
      if (improved[s]) best = losses[s];
    }
    bool stop = t + 1 >= std::size_t(patience);
    for (std::size_t s = t + 1 - std::min(t + 1, std::size_t(patience)); stop && s <= t; ++s) stop = !improved[s];
    out.push_back(stop);
  }
  return out;
}

/// Plateau-heavy loss traces on a 0.0005 grid so ties and exact-delta steps occur.
inline std::vector<double> random_trace(Rng& rng, std::size_t len) {
  std::vector<double> t;
  double level = 2.0;
  for (std::size_t i = 0; i < len; ++i) {
    const double u = rng.uniform();
    if (u < 0.3) level -= 0.0005 * double(rng.uniform_index(6));
    else if (u < 0.45) level += 0.0005 * double(rng.uniform_index(4));
    t.push_back(level);
  }
  return t;
}

struct OracleReport {
  double accuracy, macro_p, macro_r, macro_f1;
  std::vector<double> p, r, f1;
};

/// Expands the matrix into (truth, prediction) samples and counts TP/FP/FN
/// per class by scanning them. F1 uses 2TP / (2TP + FP + FN).
inline OracleReport metrics_oracle(const std::vector<std::vector<std::uint64_t>>& m) {
  const std::size_t n = m.size();
  std::vector<std::pair<std::size_t, std::size_t>> samples;
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t p = 0; p < n; ++p)
      for (std::uint64_t k = 0; k < m[t][p]; ++k) samples.emplace_back(t, p);
  OracleReport o{};
  std::size_t correct = 0;
  for (const auto& [t, p] : samples) correct += t == p;
  o.accuracy = double(correct) / double(samples.size());
  for (std::size_t c = 0; c < n; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (const auto& [t, p] : samples) {
      tp += t == c && p == c;
      fp += t != c && p == c;
      fn += t == c && p != c;
    }
    o.p.push_back(tp + fp > 0 ? tp / (tp + fp) : 0.0);
    o.r.push_back(tp + fn > 0 ? tp / (tp + fn) : 0.0);
    o.f1.push_back(tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0);
  }
  const auto avg = [n](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(n); };
  o.macro_p = avg(o.p);
  o.macro_r = avg(o.r);
  o.macro_f1 = avg(o.f1);
  return o;
}

/// An index with the given per-class counts; paths are never touched.
inline DatasetIndex synthetic_index(const std::vector<std::size_t>& counts) {
  DatasetIndex idx;
  idx.root = "/nonexistent";
  for (std::size_t c = 0; c < counts.size(); ++c) {
    char name[16];
    std::snprintf(name, sizeof name, "class_%02zu", c);
    idx.classes.push_back(name);
    idx.counts.push_back(counts[c]);
    for (std::size_t i = 0; i < counts[c]; ++i) {
      char file[32];
      std::snprintf(file, sizeof file, "/img_%04zu.jpg", i);
      SampleRef s;
      s.relative_path = std::string(name) + file;
      s.path = idx.root / s.relative_path;
      s.class_index = int(c);
      s.class_name = name;
      idx.samples.push_back(s);
    }
  }
  return idx;
}

}  // namespace testing
