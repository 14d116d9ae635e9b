#pragma once

// Subcommand dispatch for the mrl binary. Exposed as a library entry point so
// the pipeline can be exercised in-process by tests.

#include <string>
#include <vector>

#include "mrl/config.hpp"
#include "mrl/motiondata.hpp"

namespace mrl {

// Runs one subcommand (args exclude the program name). Returns the process
// exit status; prints a single-line diagnostic to stderr on failure.
int run_cli(const std::vector<std::string>& args);

// Train/held-out window sets with a per-class deterministic sequence split.
struct DatasetWindows {
  std::vector<SampleWindow> train;
  std::vector<SampleWindow> test;
};
DatasetWindows build_windows(const RunConfig& cfg);

}  // namespace mrl
