// Command-line entry point: `lite <subcommand> [--config PATH] [--set key=value]... --out DIR`.

#include <CLI11.hpp>
#include <iostream>

#include "lite/errors.hpp"
#include "lite/runner.hpp"

namespace {

std::string one_line(std::string msg) {
  for (char& c : msg)
    if (c == '\n' || c == '\r') c = ' ';
  return msg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal spatial-temporal prediction pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  lite::RunOptions options;
  std::string region;
  std::int64_t day = 0;
  bool quiet = false;

  for (const auto& name : lite::subcommands()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "key=value configuration file");
    sub->add_option("--set", overrides, "override one configuration key (key=value)");
    sub->add_option("--out", options.out_dir, "output directory")->capture_default_str();
    sub->add_option("--region", region, "region id (render-text, render-image)");
    sub->add_option("--day", day, "day index (render-text, render-image)");
    sub->add_flag("--quiet", quiet, "suppress progress output");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    const CLI::App* sub = app.get_subcommands().front();
    lite::RunConfig config = config_path.empty() ? lite::RunConfig() : lite::RunConfig::from_file(config_path);
    config.apply(overrides);
    if (sub->count("--region")) options.region = region;
    if (sub->count("--day")) options.day = day;
    options.verbose = !quiet;
    lite::run_subcommand(name, config, options);
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
