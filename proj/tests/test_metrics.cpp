#include <doctest.h>

#include <algorithm>
#include <numeric>

#include <json.hpp>

#include "ccnn/error.hpp"
#include "ccnn/metrics.hpp"
#include "ccnn/rng.hpp"
#include "oracles.hpp"

using namespace ccnn;

namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t p = 0; p < rows.size(); ++p) cm.add(t, p, rows[t][p]);
  return cm;
}

}  // namespace

TEST_CASE("confusion update examples") {
  ConfusionMatrix cm(2);
  const int t1[] = {0, 1}, p1[] = {0, 1};
  cm.update(t1, p1);
  CHECK(cm(0, 0) == 1);
  CHECK(cm(1, 1) == 1);
  CHECK(cm(0, 1) == 0);

  ConfusionMatrix off(2);
  const int t2[] = {0}, p2[] = {1};
  off.update(t2, p2);
  CHECK(off(0, 1) == 1);
  CHECK(off.total() == 1);

  ConfusionMatrix split(3), joint(3);
  const int ta[] = {0, 2, 1}, pa[] = {2, 2, 0}, tb[] = {1, 1}, pb[] = {1, 0};
  const int tab[] = {0, 2, 1, 1, 1}, pab[] = {2, 2, 0, 1, 0};
  split.update(ta, pa);
  split.update(tb, pb);
  joint.update(tab, pab);
  CHECK(split == joint);

  ConfusionMatrix merged(3);
  merged += split;
  CHECK(merged == joint);

  const int bad[] = {3};
  try {
    split.update(bad, t2);
    FAIL("expected label error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Label);
  }
}

TEST_CASE("compute: hand cases") {
  const auto perfect = compute_metrics(from_rows({{5, 0}, {0, 5}}));
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.macro_f1 == 1.0);

  const auto r = compute_metrics(from_rows({{2, 1}, {0, 3}}));
  CHECK(r.accuracy == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(r.accuracy == doctest::Approx(0.8333).epsilon(1e-4));
  CHECK(r.f1[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(r.f1[1] == doctest::Approx(6.0 / 7.0).epsilon(1e-12));
  CHECK(r.f1[1] == doctest::Approx(0.8571).epsilon(1e-4));
  CHECK(r.macro_f1 == doctest::Approx(0.8286).epsilon(1e-4));

  const auto reported = compute_metrics(from_rows({{30, 2}, {2, 34}}));
  CHECK(reported.support[0] + reported.support[1] == 68);
  CHECK(std::round(reported.accuracy * 1e4) / 1e4 == 0.9412);
  CHECK(std::round(reported.accuracy * 1e3) / 1e3 == 0.941);

  const auto absent = compute_metrics(from_rows({{3, 0, 0}, {1, 2, 0}, {0, 0, 0}}));
  CHECK(absent.precision[2] == 0.0);
  CHECK(absent.recall[2] == 0.0);
  CHECK(absent.f1[2] == 0.0);
  CHECK(absent.macro_recall == doctest::Approx((1.0 + 2.0 / 3.0 + 0.0) / 3.0));

  CHECK_THROWS_AS(compute_metrics(ConfusionMatrix(2)), Error);
}

TEST_CASE("compute matches the from-definition oracle on 200 random matrices") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(6);
    std::vector<std::vector<std::uint64_t>> m(n, std::vector<std::uint64_t>(n));
    for (auto& row : m)
      for (auto& v : row) v = rng.uniform() < 0.2 ? 0 : rng.uniform_index(51);
    if (std::all_of(m.begin(), m.end(), [](const auto& row) { return std::accumulate(row.begin(), row.end(), 0ull) == 0; }))
      m[0][0] = 1;
    const auto got = compute_metrics(from_rows(m));
    const auto want = testing::metrics_oracle(m);
    CHECK(std::abs(got.accuracy - want.accuracy) <= 1e-12);
    CHECK(std::abs(got.macro_precision - want.macro_p) <= 1e-12);
    CHECK(std::abs(got.macro_recall - want.macro_r) <= 1e-12);
    CHECK(std::abs(got.macro_f1 - want.macro_f1) <= 1e-12);
    for (std::size_t c = 0; c < n; ++c) {
      CHECK(std::abs(got.precision[c] - want.p[c]) <= 1e-12);
      CHECK(std::abs(got.recall[c] - want.r[c]) <= 1e-12);
      CHECK(std::abs(got.f1[c] - want.f1[c]) <= 1e-12);
    }

    // Bounds and identities.
    for (double v : {got.accuracy, got.macro_precision, got.macro_recall, got.macro_f1}) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(got.macro_f1 <= *std::max_element(got.f1.begin(), got.f1.end()) + 1e-15);
    CHECK(got.macro_f1 >= *std::min_element(got.f1.begin(), got.f1.end()) - 1e-15);
    double total = 0.0, weighted_recall = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      total += double(got.support[c]);
      weighted_recall += double(got.support[c]) * got.recall[c];
    }
    CHECK(std::abs(weighted_recall / total - got.accuracy) <= 1e-12);

    // Relabeling by a permutation permutes per-class values only.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));
    std::vector<std::vector<std::uint64_t>> pm(n, std::vector<std::uint64_t>(n));
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t p = 0; p < n; ++p) pm[perm[t]][perm[p]] = m[t][p];
    const auto permuted = compute_metrics(from_rows(pm));
    CHECK(permuted.accuracy == doctest::Approx(got.accuracy).epsilon(1e-15));
    CHECK(permuted.macro_f1 == doctest::Approx(got.macro_f1).epsilon(1e-12));
    CHECK(permuted.macro_precision == doctest::Approx(got.macro_precision).epsilon(1e-12));
    for (std::size_t c = 0; c < n; ++c) CHECK(permuted.f1[perm[c]] == got.f1[c]);
  }
}

TEST_CASE("metrics_json rounds to four decimals") {
  const auto r = compute_metrics(from_rows({{2, 1}, {0, 3}}));
  const auto j = nlohmann::json::parse(metrics_json(r, {"a", "b"}, "best"));
  CHECK(j["model"] == "best");
  CHECK(j["accuracy"].get<double>() == 0.8333);
  CHECK(j["macro_f1"].get<double>() == 0.8286);
  CHECK(j["f1"][1].get<double>() == 0.8571);
  CHECK(j["classes"][1] == "b");
  CHECK(j["support"][0] == 3);
}
