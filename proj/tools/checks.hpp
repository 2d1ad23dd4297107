#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace mfh::checks {

struct Outcome {
  int id = 0;
  std::string title;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

struct Options {
  long rl_paths = 10000;  // L̄ for the sampled RL run
  long particles = 10000;
  unsigned long long seed = 1;
};

/// Runs every acceptance criterion in order, printing one line per criterion
/// to `out` as soon as it finishes. Exceptions inside a criterion become FAIL
/// lines with the message in the detail column.
std::vector<Outcome> run_all(const Options& opt, std::ostream& out);

}  // namespace mfh::checks
