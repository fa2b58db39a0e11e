// Command-line front end: train, eval, split, inspect.
//
// Failures print a single line "error[<category>]: <message>" to stderr.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "ccnn/checkpoint.hpp"
#include "ccnn/data.hpp"
#include "ccnn/metrics.hpp"
#include "ccnn/trainer.hpp"

namespace {

std::string with_commas(std::size_t n) {
  std::string s = std::to_string(n);
  for (int i = int(s.size()) - 3; i > 0; i -= 3) s.insert(std::size_t(i), ",");
  return s;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n') c = ' ';
  return s;
}

int report(std::string_view category, const std::string& message, int code) {
  std::cerr << "error[" << category << "]: " << one_line(message) << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CustomCNN training and evaluation harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed_override = 0;
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "train a model end to end");
  train->add_option("--config", config_path, "flat JSON config file");
  auto* seed_opt = train->add_option("--seed", seed_override, "override the config seed");
  train->add_option("--set", overrides, "key=value override (repeatable)")->take_all();

  std::string ckpt_path, data_root, manifest_path, split_name = "test", out_path;
  std::size_t threads = 1;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  eval->add_option("--checkpoint", ckpt_path)->required();
  eval->add_option("--data", data_root)->required();
  eval->add_option("--manifest", manifest_path)->required();
  eval->add_option("--split", split_name)->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", out_path, "also write the report here");
  eval->add_option("--threads", threads);

  std::uint64_t split_seed = 42;
  auto* split = app.add_subcommand("split", "write a stratified split manifest");
  split->add_option("--data", data_root)->required();
  split->add_option("--seed", split_seed)->required();
  split->add_option("--out", out_path)->required();

  auto* inspect = app.add_subcommand("inspect", "print model accounting for a checkpoint");
  inspect->add_option("--checkpoint", ckpt_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", e.what(), 2);
  }

  try {
    if (*train) {
      ccnn::TrainConfig cfg = config_path.empty() ? ccnn::TrainConfig{} : ccnn::load_train_config(config_path);
      if (*seed_opt) cfg.seed = seed_override;
      for (const auto& o : overrides) ccnn::apply_override(cfg, o);
      const auto art = ccnn::run_train(cfg);
      std::cout << "epochs " << art.epochs.size() << (art.stopped_early ? " (early stop)" : "") << "\n"
                << "best_epoch " << art.best_epoch << "\n"
                << "test_accuracy " << art.test_metrics.accuracy << "\n"
                << "test_macro_f1 " << art.test_metrics.macro_f1 << "\n"
                << "artifacts " << cfg.output_dir.string() << "\n";
    } else if (*eval) {
      const auto rep = ccnn::run_eval(ckpt_path, data_root, ccnn::parse_split_name(split_name), manifest_path, threads);
      const auto ckpt = ccnn::read_checkpoint(ckpt_path);
      const std::string doc = ccnn::metrics_json(rep, ckpt.class_names);
      std::cout << doc;
      if (!out_path.empty()) {
        std::FILE* f = std::fopen(out_path.c_str(), "wb");
        if (!f || std::fwrite(doc.data(), 1, doc.size(), f) != doc.size()) {
          if (f) std::fclose(f);
          return report("io", "cannot write " + out_path, 1);
        }
        std::fclose(f);
      }
    } else if (*split) {
      const auto index = ccnn::scan_dataset(data_root);
      const auto assignment = ccnn::stratified_split(index, split_seed);
      for (const auto& w : assignment.warnings) std::cerr << "warning: " << w << "\n";
      ccnn::write_manifest(assignment, out_path);
      std::cout << "train " << assignment.train.size() << " val " << assignment.val.size() << " test "
                << assignment.test.size() << " digest " << ccnn::manifest_digest(assignment) << "\n";
    } else if (*inspect) {
      const auto loaded = ccnn::load_checkpoint(ckpt_path);
      char size[32];
      std::snprintf(size, sizeof size, "%.2f", loaded.model.model_size_mb());
      std::cout << "params " << with_commas(loaded.model.param_count()) << "\n"
                << "buffers " << with_commas(loaded.model.buffer_count()) << "\n"
                << "size_mb " << size << "\n"
                << "classes " << loaded.checkpoint.class_names.size() << ":";
      for (const auto& c : loaded.checkpoint.class_names) std::cout << " " << c;
      std::cout << "\n";
    }
  } catch (const ccnn::Error& e) {
    return report(e.category(), e.what(), e.kind() == ccnn::ErrorKind::Usage ? 2 : 1);
  } catch (const std::exception& e) {
    return report("internal", e.what(), 1);
  }
  return 0;
}
