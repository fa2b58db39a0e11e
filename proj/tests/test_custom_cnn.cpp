#include <doctest.h>

#include <cstdio>
#include <set>

#include "ccnn/optim.hpp"
#include "model_fd.hpp"

using namespace ccnn;
using testing::random_tensor;

namespace {

/// Layer-by-layer count written out independently of the model code.
std::size_t expected_params(std::size_t c) {
  const auto conv = [](std::size_t in, std::size_t out) { return out * in * 9 + out; };
  const auto bn = [](std::size_t ch) { return 2 * ch; };
  std::size_t n = 0;
  n += conv(3, 64) + bn(64) + conv(64, 64) + bn(64);
  n += conv(64, 128) + bn(128) + conv(128, 128) + bn(128);
  n += conv(128, 256) + bn(256) + 2 * (conv(256, 256) + bn(256));
  n += 256 * 512 + 512 + bn(512) + 512 * c + c;
  return n;
}

std::string two_decimals(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

CustomCnnConfig with_classes(std::size_t c) {
  CustomCnnConfig cfg;
  cfg.num_classes = c;
  return cfg;
}

}  // namespace

TEST_CASE("parameter accounting matches published counts") {
  CHECK(CustomCnn<float>::build(with_classes(2), 1).param_count() == 1871426);
  CHECK(CustomCnn<float>::build(with_classes(15), 1).param_count() == 1878095);
  CHECK(CustomCnn<float>::build(with_classes(35), 1).param_count() == 1888355);
}

TEST_CASE("parameter accounting: closed form and registry sum for C in [2, 100]") {
  for (std::size_t c = 2; c <= 100; ++c) {
    auto m = CustomCnn<float>::allocate(with_classes(c));
    CHECK(m.param_count() == 1870400 + 513 * c);
    CHECK(m.param_count() == expected_params(c));
    std::size_t registry = 0;
    for (auto* p : m.parameters()) registry += p->value.size();
    CHECK(registry == m.param_count());
    CHECK(m.buffer_count() == 3328);
  }
}

TEST_CASE("buffer count and model size") {
  auto m2 = CustomCnn<float>::build(with_classes(2), 1);
  CHECK(m2.buffer_count() == 2 * (64 + 64 + 128 + 128 + 256 + 256 + 256) + 2 * 512);
  std::size_t registry = 0;
  for (const auto& b : m2.buffers()) registry += b.tensor->size();
  CHECK(registry == 3328);
  CHECK(two_decimals(m2.model_size_mb()) == "7.15");
  CHECK(two_decimals(CustomCnn<float>::build(with_classes(15), 1).model_size_mb()) == "7.18");
  CHECK(two_decimals(CustomCnn<float>::build(with_classes(35), 1).model_size_mb()) == "7.22");
  CHECK(m2.model_size_mb() == doctest::Approx(4.0 * (1871426 + 3328) / 1048576.0));
  // Parameters alone would give 7.14, which is why the buffers count.
  CHECK(two_decimals(4.0 * 1871426 / 1048576.0) == "7.14");
}

TEST_CASE("build: config errors, determinism, registry names") {
  CHECK_THROWS_AS(CustomCnn<float>::build(with_classes(1), 1), Error);
  auto a = CustomCnn<float>::build(with_classes(3), 11), b = CustomCnn<float>::build(with_classes(3), 11);
  const auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  std::set<std::string> names;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->value == pb[i]->value);
    names.insert(pa[i]->name);
  }
  CHECK(names.size() == pa.size());
  CHECK(pa.front()->name == "block1.0.conv.weight");
  CHECK(pa.back()->name == "head.fc2.bias");
  CHECK(a.buffers().front().name == "block1.0.bn.running_mean");
  CHECK(a.mode() == LayerMode::Train);
  CHECK(a.config().is_reference());

  auto c = CustomCnn<float>::build(with_classes(3), 12);
  CHECK_FALSE(c.parameters()[0]->value == pa[0]->value);

  auto z = CustomCnn<float>::allocate(with_classes(3));
  const auto pz = z.parameters();
  REQUIRE(pz.size() == pa.size());
  for (std::size_t i = 0; i < pz.size(); ++i) {
    CHECK(pz[i]->name == pa[i]->name);
    CHECK(pz[i]->value.shape() == pa[i]->value.shape());
  }
  CHECK(pz[0]->value.vector().cwiseAbs().maxCoeff() == 0.0f);
  CHECK(z.buffers()[1].name == "block1.0.bn.running_var");
  CHECK(z.buffers()[1].tensor->vector().minCoeff() == 1.0f);
}

TEST_CASE("forward shapes") {
  auto m = CustomCnn<float>::build(with_classes(5), 2);
  Rng rng(1);
  const auto big = m.forward(random_tensor<float>(Shape{4, 3, 224, 224}, rng));
  CHECK(big.shape() == Shape{4, 5});
  CHECK(m.final_feature_shape() == Shape{4, 256, 28, 28});

  const auto small = m.forward(random_tensor<float>(Shape{2, 3, 32, 32}, rng));
  CHECK(small.shape() == Shape{2, 5});
  m.set_mode(LayerMode::Eval);
  CHECK(m.forward(random_tensor<float>(Shape{1, 3, 32, 32}, rng)).shape() == Shape{1, 5});
  CHECK(m.forward(random_tensor<float>(Shape{1, 3, 8, 8}, rng)).shape() == Shape{1, 5});
  CHECK(m.forward(random_tensor<float>(Shape{1, 3, 16, 40}, rng)).shape() == Shape{1, 5});

  try {
    m.forward(Tensor<float>(Shape{1, 3, 20, 20}));
    FAIL("expected precondition error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Precondition);
  }
  CHECK_THROWS_AS(m.forward(Tensor<float>(Shape{1, 1, 16, 16})), Error);
}

TEST_CASE("Eval forward is bit-identical across calls; predict_proba rows sum to one") {
  auto m = CustomCnn<float>::build(with_classes(3), 4);
  Rng rng(2);
  m.forward(random_tensor<float>(Shape{4, 3, 16, 16}, rng));  // move running stats off their init
  m.set_mode(LayerMode::Eval);
  const auto x = random_tensor<float>(Shape{3, 3, 16, 16}, rng);
  CHECK(m.forward(x) == m.forward(x));
  const auto p = m.predict_proba(x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p[i * 3] + p[i * 3 + 1] + p[i * 3 + 2] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("backward: state errors, zero upstream, accumulation") {
  auto m = CustomCnn<double>::build(with_classes(2), 5);
  CHECK_THROWS_AS(m.backward(Tensor<double>(Shape{2, 2})), Error);
  Rng rng(3);
  const auto x = random_tensor(Shape{2, 3, 16, 16}, rng);

  m.set_mode(LayerMode::Eval);
  m.forward(x);
  try {
    m.backward(Tensor<double>(Shape{2, 2}));
    FAIL("expected state error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::State);
  }

  m.set_mode(LayerMode::Train);
  m.zero_grads();
  m.reseed_dropout(9);
  m.forward(x);
  m.backward(Tensor<double>(Shape{2, 2}));
  for (auto* p : m.parameters()) CHECK(p->grad.vector().cwiseAbs().maxCoeff() == 0.0);

  const auto up = random_tensor(Shape{2, 2}, rng);
  m.zero_grads();
  m.reseed_dropout(9);
  m.forward(x);
  m.backward(up);
  std::vector<Tensor<double>> once;
  for (auto* p : m.parameters()) once.push_back(p->grad);
  m.backward(up);
  const auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double err = (params[i]->grad.vector() - 2.0 * once[i].vector()).cwiseAbs().maxCoeff();
    CHECK(err <= 1e-12 * std::max(1.0, once[i].vector().cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("end-to-end gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto r = testing::model_fd_check(seed, 2);
    CHECK(r.tensors == 34);
    CHECK(r.coords == 68);
    CHECK(r.slots == 68);
    CHECK(r.max_rel_err <= 1e-5);
  }
}

TEST_CASE("train-on-noise: Adam lowers the loss on a fixed batch") {
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto m = CustomCnn<float>::build(with_classes(3), seed);
    Rng rng(derive_seed(seed, {7}));
    const auto x = random_tensor<float>(Shape{4, 3, 8, 8}, rng);
    std::vector<int> t(4);
    for (int& v : t) v = int(rng.uniform_index(3));
    Adam adam;
    const auto params = m.parameters();
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 200; ++step) {
      m.zero_grads();
      const auto r = softmax_cross_entropy(m.forward(x), std::span<const int>(t));
      if (step == 0) first = r.loss;
      last = r.loss;
      m.backward(r.grad_logits);
      adam.step(params);
    }
    decreased += last < first;
  }
  CHECK(decreased >= 10);  // at least 95% of 10 seeds
}
