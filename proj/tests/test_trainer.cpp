#include <doctest.h>

#include <fstream>
#include <limits>

#include "ccnn/checkpoint.hpp"
#include "ccnn/trainer.hpp"
#include "test_support.hpp"

using namespace ccnn;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Internal;
}

/// Small fast run over a two-class colour dataset.
TrainConfig small_config(const testing::ScratchDir& dir, int max_epochs) {
  TrainConfig c;
  c.dataset_root = dir / "data";
  c.output_dir = dir / "run";
  c.image_size = 16;
  c.batch_size = 8;
  c.max_epochs = max_epochs;
  c.log_timing = false;
  return c;
}

struct Fixture {
  testing::ScratchDir dir{"trainer"};
  Fixture() { testing::make_color_dataset(dir / "data", 10, 16); }
};

/// Learning rate in effect during each epoch, from the gaps between
/// strict-record epochs of the validation trace.
std::vector<double> expected_lrs(const std::vector<double>& val, double lr0) {
  std::vector<double> out;
  double best = std::numeric_limits<double>::infinity(), lr = lr0;
  std::size_t last_record = 0;
  for (std::size_t t = 0; t < val.size(); ++t) {
    out.push_back(lr);
    if (val[t] < best) {
      best = val[t];
      last_record = t;
    } else if ((t - last_record) % 5 == 0) {
      lr = std::max(lr * 0.5, 1e-6);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("epoch phases run in order and the test pass comes last") {
  Fixture f;
  std::vector<std::string> events;
  TrainHooks hooks;
  hooks.trace = [&](std::string_view e, int epoch) { events.push_back(std::string(e) + std::to_string(epoch)); };
  const auto art = run_train(small_config(f.dir, 3), hooks);
  const std::vector<std::string> expect{"train1", "validate1", "scheduler1", "early_stop1", "train2", "validate2",
                                        "scheduler2", "early_stop2", "train3", "validate3", "scheduler3",
                                        "early_stop3", "test0"};
  CHECK(events == expect);
  CHECK(art.epochs.size() == 3);
  for (const auto& p : {art.epoch_log, art.split_manifest, art.best_checkpoint, art.final_checkpoint, art.test_report})
    CHECK(fs::exists(p));
  CHECK(art.evaluated_model == "best");
  CHECK(art.test_metrics.support[0] + art.test_metrics.support[1] == 4);
}

TEST_CASE("constant validation loss stops after exactly patience epochs past the best") {
  Fixture f;
  TrainHooks hooks;
  hooks.val_loss_override = [](int, double) { return 1.0; };
  const auto art = run_train(small_config(f.dir, 100), hooks);
  CHECK(art.stopped_early);
  CHECK(art.best_epoch == 1);
  REQUIRE(art.epochs.size() == 11);
  CHECK(art.epochs.back().epoch == 11);
  // Halvings after the 5th and 10th non-improving observations.
  for (const auto& r : art.epochs) CHECK(r.lr == (r.epoch <= 6 ? 1e-3 : r.epoch <= 11 ? 5e-4 : 2.5e-4));
}

TEST_CASE("learning-rate column, best checkpoint and epoch log follow the validation trace") {
  Fixture f;
  Rng rng(8);
  std::vector<double> trace{1.0};
  for (int i = 1; i < 40; ++i) trace.push_back(trace.back() + (rng.uniform() < 0.25 ? -0.01 : 0.0));
  TrainHooks hooks;
  hooks.val_loss_override = [&](int epoch, double) { return trace[std::size_t(epoch - 1)]; };
  auto cfg = small_config(f.dir, 40);
  cfg.early_stop_patience = 1000;
  const auto art = run_train(cfg, hooks);
  REQUIRE(art.epochs.size() == 40);
  const auto lrs = expected_lrs(trace, 1e-3);
  for (std::size_t i = 0; i < 40; ++i) CHECK(art.epochs[i].lr == lrs[i]);

  const auto best = std::min_element(trace.begin(), trace.end());
  CHECK(art.best_epoch == int(best - trace.begin()) + 1);
  CHECK(art.best_val_loss == *best);
  CHECK(read_checkpoint(art.best_checkpoint).best_val_loss == *best);

  const auto rows = read_epoch_log(art.epoch_log);
  REQUIRE(rows.size() == 40);
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK(rows[i].epoch == int(i) + 1);
    CHECK(rows[i].val_loss == doctest::Approx(trace[i]).epsilon(1e-6));
    CHECK(rows[i].lr == doctest::Approx(lrs[i]).epsilon(1e-6));
    CHECK(rows[i].epoch_time_sec == 0.0);
    CHECK(rows[i].train_loss == doctest::Approx(art.epochs[i].train_loss).epsilon(1e-5));
  }
}

TEST_CASE("single-epoch run and torn epoch logs") {
  Fixture f;
  const auto art = run_train(small_config(f.dir, 1));
  CHECK(art.epochs.size() == 1);
  CHECK(art.best_epoch == 1);
  CHECK_FALSE(art.stopped_early);
  CHECK(load_checkpoint(art.final_checkpoint).optimizer.has_value());
  CHECK_FALSE(load_checkpoint(art.best_checkpoint).optimizer.has_value());

  {
    std::ofstream out(art.epoch_log, std::ios::app);
    out << "2,0.5,0.5";  // crash mid-write
  }
  CHECK(read_epoch_log(art.epoch_log).size() == 1);
  {
    std::ofstream out(art.epoch_log, std::ios::app);
    out << "\n";
  }
  CHECK(kind_of([&] { read_epoch_log(art.epoch_log); }) == ErrorKind::Io);
  CHECK(format_epoch_row({3, 0.25, 0.5, 0.125, 1.0, 1e-3, 0.0}) == "3,0.250000,0.500000,0.125000,1.000000,0.001000,0.000000");
}

TEST_CASE("eval of the best checkpoint reproduces the reported test metrics") {
  Fixture f;
  auto cfg = small_config(f.dir, 4);
  const auto art = run_train(cfg);
  const auto rep = run_eval(art.best_checkpoint, cfg.dataset_root, SplitName::Test, art.split_manifest);
  CHECK(rep.accuracy == art.test_metrics.accuracy);
  CHECK(rep.macro_f1 == art.test_metrics.macro_f1);
  CHECK(rep.support == art.test_metrics.support);
  const auto again = run_eval(art.best_checkpoint, cfg.dataset_root, SplitName::Test, art.split_manifest);
  CHECK(metrics_json(again, {"blue", "red"}) == metrics_json(rep, {"blue", "red"}));

  CHECK(kind_of([&] { run_eval(f.dir / "run" / "nope.ccnn", cfg.dataset_root, SplitName::Test, art.split_manifest); }) ==
        ErrorKind::Io);

  testing::ScratchDir other("trainer3");
  testing::make_color_dataset(other / "data", 10, 16);
  testing::write_solid_ppm(other / "data" / "zgreen" / "a.ppm", 16, 0, 255, 0);
  for (int i = 0; i < 9; ++i)
    testing::write_solid_ppm(other / "data" / "zgreen" / ("g" + std::to_string(i) + ".ppm"), 16, 0, 200, 0);
  const auto three = stratified_split(scan_dataset(other / "data"), 1);
  write_manifest(three, other / "m.json");
  CHECK(kind_of([&] { run_eval(art.best_checkpoint, other / "data", SplitName::Test, other / "m.json"); }) ==
        ErrorKind::Compatibility);
}

TEST_CASE("a dataset too small for a validation split is rejected before training") {
  testing::ScratchDir dir("trainer_small");
  testing::make_color_dataset(dir / "data", 3, 16);
  auto cfg = small_config(dir, 5);
  CHECK(kind_of([&] { run_train(cfg); }) == ErrorKind::Stratification);
  CHECK_FALSE(fs::exists(cfg.output_dir / "checkpoint_final.ccnn"));
}

TEST_CASE("config: JSON keys, overrides and validation") {
  const auto c = train_config_from_json_text(R"({"lr": 0.01, "max_epochs": 7, "augment": false, "dataset_root": "d"})");
  CHECK(c.lr == 0.01);
  CHECK(c.max_epochs == 7);
  CHECK_FALSE(c.augment);
  CHECK(c.dataset_root == fs::path("d"));
  CHECK(c.batch_size == 32);
  CHECK(c.early_stop_patience == 10);
  CHECK(c.scheduler_patience == 5);

  CHECK(kind_of([] { train_config_from_json_text(R"({"learning_rate": 0.1})"); }) == ErrorKind::Config);
  CHECK(kind_of([] { train_config_from_json_text(R"({"lr": "fast"})"); }) == ErrorKind::Config);
  CHECK(kind_of([] { train_config_from_json_text("[1, 2]"); }) == ErrorKind::Config);
  CHECK(kind_of([] { train_config_from_json_text("{"); }) == ErrorKind::Config);

  TrainConfig o;
  apply_override(o, "lr=0.005");
  apply_override(o, "use_class_weights=false");
  apply_override(o, "output_dir=out/x");
  apply_override(o, "batch_size=4");
  CHECK(o.lr == 0.005);
  CHECK_FALSE(o.use_class_weights);
  CHECK(o.output_dir == fs::path("out/x"));
  CHECK(o.batch_size == 4);
  CHECK(kind_of([&] { apply_override(o, "lr"); }) == ErrorKind::Usage);
  CHECK(kind_of([&] { apply_override(o, "nope=1"); }) == ErrorKind::Config);
  CHECK(kind_of([&] { apply_override(o, "lr=abc"); }) == ErrorKind::Config);
  CHECK(kind_of([&] { apply_override(o, "augment=maybe"); }) == ErrorKind::Config);
  CHECK(o.lr == 0.005);

  const auto round = train_config_from_json_text(config_snapshot(o));
  CHECK(round.lr == o.lr);
  CHECK(round.batch_size == 4);
  CHECK(config_snapshot(o).find("output_dir") == std::string::npos);

  for (const char* bad : {"batch_size=0", "max_epochs=0", "lr=0", "dropout=1", "image_size=20", "num_threads=0"}) {
    TrainConfig v;
    apply_override(v, bad);
    CHECK(kind_of([&] { v.validate(); }) == ErrorKind::Config);
  }
  TrainConfig{}.validate();
}
