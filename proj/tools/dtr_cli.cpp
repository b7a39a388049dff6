// Command-line driver for the risk-based rating pipeline.
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "dtr/config.hpp"
#include "dtr/error.hpp"
#include "dtr/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kMissing = 3, kInvalidData = 4 };

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  bool quiet = false;
};

dtr::StageContext make_context(const Overrides& o) {
  dtr::Config cfg = o.config_path.empty() ? dtr::Config{} : dtr::load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out_dir) cfg.out_dir = *o.out_dir;
  cfg.validate();
  dtr::StageContext ctx{cfg, dtr::Paths{cfg.out_dir}};
  if (!o.quiet) ctx.log = [](std::string_view msg) { fmt::print(stderr, "{}\n", msg); };
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Day-ahead risk-based thermal rating for distribution transformers"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("-c,--config", o.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "override the config seed");
  app.add_option("-o,--out", o.out_dir, "override the output directory");
  app.add_flag("-q,--quiet", o.quiet, "suppress progress messages");

  dtr::TrainOptions train_opt;
  dtr::PredictOptions predict_opt;
  auto* synth = app.add_subcommand("synth", "generate the synthetic fleet");
  auto* label = app.add_subcommand("label", "compute optimal scale factors");
  auto* cluster = app.add_subcommand("cluster", "build features and cluster the fleet under all pipelines");
  auto* train = app.add_subcommand("train", "prune features, select a pipeline and train models");
  train->add_flag("--multistage", train_opt.multistage, "also train the load-based multi-stage models");
  train->add_flag("--multi-temp", train_opt.multi_temp, "also train multi-temperature models");
  auto* predict = app.add_subcommand("predict", "replay the holdout with daily retraining");
  predict->add_flag("--noisy-temp", predict_opt.noisy_temp, "also predict with forecast temperatures");
  auto* evaluate = app.add_subcommand("evaluate", "write reports");
  auto* reproduce = app.add_subcommand("reproduce", "run every stage end to end");
  for (auto* sub : {synth, label, cluster, train, predict, evaluate, reproduce}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    const auto ctx = make_context(o);
    if (*synth) dtr::stage_synth(ctx);
    if (*label) dtr::stage_label(ctx);
    if (*cluster) dtr::stage_cluster(ctx);
    if (*train) dtr::stage_train(ctx, train_opt);
    if (*predict) dtr::stage_predict(ctx, predict_opt);
    if (*evaluate) dtr::stage_evaluate(ctx);
    if (*reproduce) dtr::stage_reproduce(ctx);
  } catch (const dtr::ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kConfig;
  } catch (const dtr::MissingArtifactError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kMissing;
  } catch (const dtr::DataValidationError& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return kInvalidData;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kOther;
  }
  return kOk;
}
