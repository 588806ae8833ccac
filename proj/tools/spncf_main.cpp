#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "spncf/pipeline.hpp"

namespace {

const char* stage_help(const std::string& name) {
  if (name == "gen-data") return "generate the synthetic dataset and splits";
  if (name == "train-vae") return "train the VAE and classifier head";
  if (name == "export-latents") return "export latent codes per split as CSV";
  if (name == "learn-spn") return "learn the SPN over training latents";
  if (name == "eval-clf") return "evaluate SPN and MLP classifiers on the test split";
  if (name == "gen-cf") return "optimize counterfactuals over the configured grid";
  if (name == "eval-cf") return "compute counterfactual metrics and the report";
  return "render difference maps and localization summary";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SPN-guided counterfactual generation pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  for (const char* name : spncf::pipeline::kStageNames) {
    auto* sub = app.add_subcommand(name, stage_help(name));
    sub->add_option("-c,--config", config_path, "experiment config (JSON)")
        ->required();
    sub->add_option("--set", overrides,
                    "override a config entry, key.path=value (repeatable)");
  }

  CLI11_PARSE(app, argc, argv);

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = spncf::pipeline::load_config(config_path, overrides);
    spncf::pipeline::run_stage(stage, cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error [%s]: %s\n", stage.c_str(), e.what());
    return 1;
  }
  return 0;
}
