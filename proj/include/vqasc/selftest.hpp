#pragma once

// Invariant suite behind `vqasc selftest`: gradient checks, probability and
// sampling properties, channel statistics, protocol roundtrips and replay
// determinism, sized to finish in seconds.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace vqasc {

struct SelfTestResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

std::vector<SelfTestResult> run_selftest(std::uint64_t seed);

/// Prints one PASS/FAIL line per check; returns true iff all passed.
bool report_selftest(std::ostream& os, const std::vector<SelfTestResult>& results);

}  // namespace vqasc
