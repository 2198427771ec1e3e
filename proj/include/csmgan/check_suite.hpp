#pragma once

// Named finite-difference checks shared by the CLI and the test suites.

#include <cstdint>
#include <string>
#include <vector>

#include "csmgan/config.hpp"
#include "csmgan/dataset.hpp"
#include "csmgan/gradcheck.hpp"

namespace csmgan {

/// Every name accepted by run_gradcheck, primitives first, "model" last.
const std::vector<std::string>& gradcheck_names();

/// Builds random inputs for the named op (seeded) and checks every input and
/// parameter coordinate. Throws ContractError for an unknown name.
GradCheckResult run_gradcheck(const std::string& name, std::uint64_t seed, double eps = 1e-4);

/// Tiny full-model geometry: N_v = 4 frames, N_q = 3 words, d = 8, L = 2.
Config toy_config();
Sample toy_sample(const Config& cfg, std::uint64_t seed);

}  // namespace csmgan
