#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pgs {

struct GradcheckEntry {
  std::string name;
  int configs = 0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 1e-6;
  bool pass = false;
};

// Central finite differences (h = 1e-6) against the backward pass, 100 seeded
// random configurations per operation plus the end-to-end network with
// spot-checked parameter entries. Inputs are kept clear of non-smooth loci
// (relu kinks, max ties) by at least 1e-4. `sabotage` perturbs the relu
// backward rule so a broken gradient demonstrably fails the suite.
GradcheckReport run_gradcheck(std::uint64_t seed, bool sabotage = false);

}  // namespace pgs
