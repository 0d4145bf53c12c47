#pragma once
// Subcommand implementations behind the `lite` command-line tool. Every
// subcommand writes only below the output directory, starting with a
// manifest of the resolved configuration and the input content hash.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lite/config.hpp"

namespace lite {

struct RunOptions {
  std::string out_dir = "out";
  std::optional<std::string> region;
  std::optional<std::int64_t> day;
  bool verbose = true;  // progress lines on stderr
};

const std::vector<std::string>& subcommands();

/// Runs one subcommand; throws lite::Error on validated failures.
void run_subcommand(const std::string& name, const RunConfig& config, const RunOptions& options);

}  // namespace lite
