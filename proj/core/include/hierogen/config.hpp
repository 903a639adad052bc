#pragma once

#include <filesystem>

#include "hierogen/bsb.hpp"
#include "hierogen/corpus.hpp"
#include "hierogen/fsutil.hpp"
#include "hierogen/grpo.hpp"
#include "hierogen/reward.hpp"
#include "hierogen/rollouts.hpp"

namespace hierogen::config {

struct SftConfig {
  double base_lr = 2e-5;    // reference value at full scale
  double lr_scale = 100.0;  // toy-parameter-count scaling
  int batch = 4;
  double grad_clip = 1.0;
  int steps = 2000;

  double lr() const { return base_lr * lr_scale; }
};

/// One schema holding every module default, overridable per field from JSON.
/// Unknown keys are rejected; every run writes its resolved copy next to its
/// outputs.
struct RunConfig {
  uint64_t seed = 7;
  int workers = 0;  // 0 = auto (HIEROGEN_WORKERS overrides)
  int ddim_steps = 10;
  bsb::PhaseCounts phase_counts;
  reward::PFCConfig pfc;
  reward::RewardWeights reward_weights;
  double ridge_lambda = 1e-3;
  grpo::GRPOConfig grpo;
  rollouts::RolloutConfig rollout;
  SftConfig sft;
  corpus::GenDataConfig gen_data;

  fs::json to_json() const;
  static RunConfig from_json(const fs::json& j);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string hash() const;  // stable content hash for idempotency manifests
};

}  // namespace hierogen::config
