// Runs every acceptance criterion and prints one pass/fail line per
// criterion. Exit status is nonzero if any criterion fails.

#include <dudesim/verify.hpp>

#include <cstdio>
#include <exception>

int main() {
  int failures = 0;
  try {
    for (const auto& r : dudesim::verify::run_all()) {
      std::printf("criterion %2d (%s): %s -- %s\n", r.criterion, r.name.c_str(),
                  r.pass ? "PASS" : "FAIL", r.detail.c_str());
      std::fflush(stdout);
      if (!r.pass) ++failures;
    }
  } catch (const std::exception& e) {
    std::printf("acceptance run aborted: %s\n", e.what());
    return 2;
  }
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures ? 1 : 0;
}
