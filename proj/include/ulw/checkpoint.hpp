#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ulw/network.hpp"

namespace ulw::network {

/// Adam moments aligned with parameter_views().
struct OptimizerState {
  std::uint64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

struct Checkpoint {
  static constexpr const char* kFormatVersion = "ulw-checkpoint/1";

  ModelParams params;
  std::uint64_t step = 0;
  OptimizerState optimizer;
  std::string config_hash;
  std::string config_json;  // experiment config snapshot, opaque here
};

/// Layout documented in docs/checkpoint_format.md.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);

/// Throws CheckpointError on a missing, truncated, corrupt or
/// version-mismatched file.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

/// load_checkpoint() that also refuses a file whose config hash differs.
Checkpoint load_checkpoint_for_resume(const std::filesystem::path& path, const std::string& expected_config_hash);

}  // namespace ulw::network
