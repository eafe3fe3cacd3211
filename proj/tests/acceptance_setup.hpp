#pragma once

// Configuration shared by the acceptance harness and the tests that run on
// its cached fixture.

#include <filesystem>

#include "w2p/config.hpp"

namespace w2p::acceptance {

inline std::filesystem::path default_dir() { return W2P_ACCEPTANCE_DIR; }

inline cfg::ExperimentConfig config(const std::filesystem::path& dir, std::uint64_t seed = 1) {
  auto c = cfg::default_config();
  c.seed = seed;
  c.fixture_dir = (dir / "fixtures").string();
  c.out_dir = (dir / ("seed-" + std::to_string(seed))).string();
  return c;
}

}  // namespace w2p::acceptance
