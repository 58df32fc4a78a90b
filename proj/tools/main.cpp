#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <omp.h>

#include <CLI11.hpp>

#include "seqsort/commands.hpp"
#include "seqsort/config.hpp"
#include "seqsort/error.hpp"
#include "seqsort/nn/kernels.hpp"

namespace fs = std::filesystem;
using namespace seqsort;

int main(int argc, char** argv) {
  CLI::App app{"Cardiac MR series classifier and sorter"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "INI configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Override every seed in the configuration");

  std::string input, out, checkpoint, manifest, split, series, head = "sequence", cls, format;

  auto* ingest = app.add_subcommand("ingest", "Group and label a DICOM tree, write a series manifest");
  ingest->add_option("input", input, "Directory to scan")->required();
  ingest->add_option("--out", out, "Manifest path")->required();

  auto* train = app.add_subcommand("train", "Partition, train and checkpoint");
  train->add_option("--data", manifest, "Series or phantom manifest (overrides data.source)");
  train->add_option("--out", out, "Checkpoint directory (overrides train.checkpoint_dir)");

  auto* resume = app.add_subcommand("resume", "Continue training from last.ckpt");
  resume->add_option("--data", manifest, "Series or phantom manifest (overrides data.source)");
  resume->add_option("--out", out, "Checkpoint directory (overrides train.checkpoint_dir)");

  auto* eval = app.add_subcommand("eval", "Accuracy report and confusion matrices");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--manifest", manifest)->required();
  eval->add_option("--split", split, "split_manifest.json; restricts to test studies");
  eval->add_option("--out", out)->required();

  auto* sort = app.add_subcommand("sort", "Classify a DICOM tree and file series into labelled folders");
  sort->add_option("input", input)->required();
  sort->add_option("--checkpoint", checkpoint)->required();
  sort->add_option("--out", out)->required();

  auto* gradcam = app.add_subcommand("gradcam", "Grad-CAM heat map for one series");
  gradcam->add_option("--checkpoint", checkpoint)->required();
  gradcam->add_option("--manifest", manifest)->required();
  gradcam->add_option("--series", series, "Series key")->required();
  gradcam->add_option("--head", head)->check(CLI::IsMember({"sequence", "plane"}));
  gradcam->add_option("--class", cls, "Class index or name")->required();
  gradcam->add_option("--out", out)->required();

  auto* phantom = app.add_subcommand("phantom", "Generate the synthetic dataset");
  phantom->add_option("--out", out)->required();
  phantom->add_option("--format", format)->check(CLI::IsMember({"dicom_fixture", "pgm_triplet"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? commands::kExitOk : commands::kExitUsage;
  }

  omp_set_num_threads(nn::kernel_threads());
  try {
    config::GlobalConfig cfg = config_path.empty() ? config::GlobalConfig{} : config::load(config_path);
    if (seed) cfg.override_seed(*seed);
    if (!manifest.empty() && (*train || *resume)) cfg.data_source = manifest;
    if (!out.empty() && (*train || *resume)) cfg.train.checkpoint_dir = out;
    if (!format.empty()) cfg.phantom.write_format = phantom::write_format_from_string(format);

    if (*ingest) return commands::cmd_ingest(input, cfg, out);
    if (*train) return commands::cmd_train(cfg);
    if (*resume) return commands::cmd_resume(cfg);
    if (*eval) return commands::cmd_eval(cfg, checkpoint, manifest, out, split);
    if (*sort) return commands::cmd_sort(cfg, input, checkpoint, out);
    if (*gradcam) return commands::cmd_gradcam(cfg, checkpoint, manifest, series, head, cls, out);
    if (*phantom) return commands::cmd_phantom(cfg, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return commands::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return commands::kExitUsage;
  }
  return commands::kExitUsage;
}
