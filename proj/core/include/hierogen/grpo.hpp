#pragma once

#include <vector>

#include "hierogen/generator.hpp"
#include "hierogen/reward.hpp"

namespace hierogen::grpo {

struct GRPOConfig {
  int group_size = 8;
  double clip = 0.2;
  double kl_coef = 0.01;
  double base_lr = 5e-5;    // reference value at full scale
  double lr_scale = 100.0;  // toy-parameter-count scaling
  int iterations = 200;
  int sample_steps = 6;     // stochastic rollout sub-schedule for training
  double grad_clip = 1.0;

  double lr() const { return base_lr * lr_scale; }
  void check() const {
    require(group_size >= 2, ErrorKind::InvalidArgument, "group size must be >= 2");
    require(clip > 0.0 && clip < 1.0, ErrorKind::InvalidArgument, "clip must be in (0,1)");
    require(kl_coef >= 0.0, ErrorKind::InvalidArgument, "kl_coef must be >= 0");
  }
};

/// Group-standardized advantages with population std; all zeros when the
/// group's rewards are (numerically) constant.
std::vector<double> advantages(const std::vector<double>& rewards);

struct GroupSample {
  generator::StochasticRollout rollout;
  double reward = 0.0;
  double advantage = 0.0;
  double logp_theta = 0.0;
  double logp_ref = 0.0;
  double delta = 0.0;  // logp_theta - logp_ref
  bool masked = false;
  bool clipped = false;
};

struct GroupBatch {
  std::vector<GroupSample> samples;
};

struct TrainMetrics {
  double mean_reward = 0.0;
  double approx_kl = 0.0;       // mean over draws of logp_ref - logp_theta
  double clip_fraction = 0.0;   // unmasked samples whose clipped branch is active
  double mask_fraction = 0.0;   // |delta logp| > 30
  bool degenerate_group = false;
};

struct ObjectiveResult {
  double j = 0.0;
  TrainMetrics metrics;
};

/// Clipped importance-weighted surrogate with the nonnegative exp(d)-d-1 KL
/// estimator against the frozen reference log-densities. Gradients flow
/// through logp_theta only; with accumulate_grads the gradient of -J (ready
/// for a descent optimizer) is added to the denoiser parameters, scaled so an
/// optimizer step ascends J.
ObjectiveResult grpo_objective(generator::Denoiser& den, const generator::NoiseSchedule& sched,
                               GroupBatch& batch, const GRPOConfig& cfg, bool accumulate_grads);

struct StepContext {
  const generator::NoiseSchedule* sched;
  const generator::LatentCodec* codec;
  const generator::LatentStats* stats;
  const reward::WorldModel* world_model;
  reward::PFCConfig pfc;
  reward::RewardWeights weights;
};

struct PlanCase {
  world::Scene scene;
  bsb::BSB plan;
};

/// One GRPO iteration: sample G stochastic rollouts for a drawn plan, score
/// composite rewards, normalize into advantages, take one ascent step on J.
TrainMetrics grpo_step(generator::Denoiser& den, const generator::Denoiser& ref,
                       const StepContext& ctx, const std::vector<PlanCase>& plans,
                       const GRPOConfig& cfg, nn::Adam& opt, uint64_t seed, int iter);

}  // namespace hierogen::grpo
