#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace qnn {

struct SelfcheckOptions {
  std::uint64_t seed = 20190415;
  // Test hook: flips the sign of the x1·y2 term of the k component in the
  // product under test, to show the oracle suites detect it.
  bool inject_hamilton_sign_flip = false;
};

struct SuiteResult {
  std::string name;
  std::size_t passed = 0;
  std::size_t failed = 0;
  std::string first_failure;
};

struct SelfcheckReport {
  std::vector<SuiteResult> suites;

  bool ok() const;
  // "<suite>: <case>" of the first failing case, or empty.
  std::string first_failure() const;
};

/// Algebra identities, matrix-oracle agreement, layer equivalence and
/// finite-difference gradient checks, run end to end.
SelfcheckReport run_selfcheck(const SelfcheckOptions& options = {});

void print_selfcheck(const SelfcheckReport& report, std::ostream& out);

}  // namespace qnn
