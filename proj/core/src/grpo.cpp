#include "hierogen/grpo.hpp"

#include <algorithm>
#include <cmath>

#include "hierogen/numerics.hpp"

namespace hierogen::grpo {

std::vector<double> advantages(const std::vector<double>& rewards) {
  const size_t g = rewards.size();
  require(g >= 2, ErrorKind::InvalidArgument, "advantages need a group of >= 2");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(g);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(g);  // population variance
  const double sd = std::sqrt(var);
  std::vector<double> out(g, 0.0);
  if (sd < 1e-8) return out;  // degenerate guard
  for (size_t i = 0; i < g; ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

namespace {

constexpr double kMaskThreshold = 30.0;  // |delta logp| beyond this is masked out

// Recomputed log-density of one sample's draws under `den`, on tape, with
// gradients flowing through the predicted transition means.
nn::Var taped_logprob(nn::GradTape& tape, const generator::Denoiser& den,
                      const generator::NoiseSchedule& sched,
                      const generator::StochasticRollout& r) {
  nn::Var g{};
  if (!r.guidance.all_zero()) g = den.guidance_tokens(tape, r.guidance);
  nn::Var acc = tape.leaf_scalar(0.0);
  for (size_t k = 0; k < r.draws.size(); ++k) {
    const int t = r.step_ts[k];
    const double ab = sched.alpha_bars[static_cast<size_t>(t)];
    const double ab_prev = sched.alpha_bars[static_cast<size_t>(r.next_ts[k])];
    const double sigma = r.sigmas[k];
    const double c0 = 1.0 / std::sqrt(ab);
    const double c1 = std::sqrt(1.0 - ab);
    const double a0 = std::sqrt(ab_prev);
    const double a1 = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));

    Tensor x_tokens = generator::chw_to_tokens(r.states[k]);
    Tensor x_scaled = x_tokens;
    const float xs = static_cast<float>(a0 * c0);
    for (int64_t i = 0; i < x_scaled.numel(); ++i) x_scaled[i] *= xs;

    nn::Var eps = den.forward_tokens(tape, tape.leaf(std::move(x_tokens)), r.frames, t, g);
    nn::Var mean = tape.add(tape.leaf(std::move(x_scaled)), tape.scale(eps, a1 - a0 * c0 * c1));
    nn::Var ssum = tape.sq_error_sum(mean, generator::chw_to_tokens(r.draws[k]));
    const int64_t n = r.draws[k].numel();
    const double log_norm = -0.5 * static_cast<double>(n) * std::log(2.0 * M_PI * sigma * sigma);
    nn::Var logp = tape.saddc(tape.sscale(ssum, -0.5 / (sigma * sigma)), log_norm);
    acc = tape.sadd(acc, logp);
  }
  return acc;
}

}  // namespace

ObjectiveResult grpo_objective(generator::Denoiser& den, const generator::NoiseSchedule& sched,
                               GroupBatch& batch, const GRPOConfig& cfg, bool accumulate_grads) {
  cfg.check();
  const size_t g = batch.samples.size();
  require(g >= 2, ErrorKind::InvalidArgument, "objective needs a group of >= 2");

  // Pass 1: deltas and masking. logp_theta is recomputed unless the caller
  // already filled it (on-policy step reuses the recorded sampling density).
  for (auto& s : batch.samples) {
    if (s.logp_theta == 0.0 && !s.rollout.draws.empty())
      s.logp_theta = generator::rollout_logprob(den, sched, s.rollout);
    s.delta = s.logp_theta - s.logp_ref;
    s.masked = !(std::abs(s.delta) <= kMaskThreshold) || !std::isfinite(s.delta);
  }
  int n_unmasked = 0;
  for (const auto& s : batch.samples)
    if (!s.masked) ++n_unmasked;

  ObjectiveResult res;
  double mean_reward = 0.0, approx_kl = 0.0;
  int clipped_count = 0, masked_count = 0;
  for (const auto& s : batch.samples) {
    mean_reward += s.reward;
    const int draws = std::max<size_t>(1, s.rollout.draws.size());
    approx_kl += (s.logp_ref - s.logp_theta) / static_cast<double>(draws);
    if (s.masked) ++masked_count;
  }
  mean_reward /= static_cast<double>(g);
  approx_kl /= static_cast<double>(g);

  double j_total = 0.0;
  if (n_unmasked > 0) {
    const double inv_n = 1.0 / static_cast<double>(n_unmasked);
    for (auto& s : batch.samples) {
      if (s.masked) continue;
      const double r = std::exp(s.delta);
      const double r_clip = std::clamp(r, 1.0 - cfg.clip, 1.0 + cfg.clip);
      const double unclipped = r * s.advantage;
      const double clipped_v = r_clip * s.advantage;
      s.clipped = clipped_v < unclipped;
      const double surr = std::min(unclipped, clipped_v);
      const double kl_hat = std::exp(s.delta) - s.delta - 1.0;
      j_total += inv_n * (surr - cfg.kl_coef * kl_hat);
      if (s.clipped) ++clipped_count;

      if (accumulate_grads) {
        nn::GradTape tape(&den.params());
        nn::Var logp = taped_logprob(tape, den, sched, s.rollout);
        nn::Var delta = tape.saddc(logp, -s.logp_ref);
        nn::Var contrib;
        if (!s.clipped) {
          nn::Var surr_v = tape.sscale(tape.sexp(delta), s.advantage);
          contrib = tape.sscale(surr_v, inv_n);
        } else {
          contrib = tape.leaf_scalar(inv_n * clipped_v);  // constant: no gradient
        }
        nn::Var klv = tape.ssub(tape.sexp(delta), tape.saddc(delta, 1.0));
        contrib = tape.sadd(contrib, tape.sscale(klv, -cfg.kl_coef * inv_n));
        tape.backward(contrib, -1.0);  // gradient of -J for a descent optimizer
      }
    }
  }

  res.j = j_total;
  res.metrics.mean_reward = mean_reward;
  res.metrics.approx_kl = approx_kl;
  res.metrics.clip_fraction = static_cast<double>(clipped_count) / static_cast<double>(g);
  res.metrics.mask_fraction = static_cast<double>(masked_count) / static_cast<double>(g);
  return res;
}

TrainMetrics grpo_step(generator::Denoiser& den, const generator::Denoiser& ref,
                       const StepContext& ctx, const std::vector<PlanCase>& plans,
                       const GRPOConfig& cfg, nn::Adam& opt, uint64_t seed, int iter) {
  cfg.check();
  require(!plans.empty(), ErrorKind::InvalidArgument, "grpo_step needs at least one plan");
  const size_t plan_idx =
      static_cast<size_t>(derive_seed(seed, "plan", static_cast<uint64_t>(iter)) % plans.size());
  const PlanCase& pc = plans[plan_idx];

  GroupBatch batch;
  batch.samples.resize(static_cast<size_t>(cfg.group_size));
  parallel_for(cfg.group_size, [&](int64_t i) {
    GroupSample& s = batch.samples[static_cast<size_t>(i)];
    const uint64_t rseed = derive_seed(seed, "rollout",
                                       static_cast<uint64_t>(iter) * 1000 + static_cast<uint64_t>(i));
    s.rollout = generator::sample_stochastic(den, *ctx.sched, *ctx.codec, *ctx.stats, pc.plan,
                                             pc.scene, cfg.sample_steps, rseed);
    s.reward = reward::composite_reward(s.rollout.video, *ctx.world_model, ctx.pfc, ctx.weights);
    s.logp_theta = s.rollout.logprob_sum;  // on-policy: sampling params == current params
    s.logp_ref = generator::rollout_logprob(ref, *ctx.sched, s.rollout);
  });

  std::vector<double> rewards;
  rewards.reserve(batch.samples.size());
  for (const auto& s : batch.samples) rewards.push_back(s.reward);
  const std::vector<double> adv = advantages(rewards);
  bool degenerate = true;
  for (double a : adv)
    if (a != 0.0) degenerate = false;
  for (size_t i = 0; i < batch.samples.size(); ++i) batch.samples[i].advantage = adv[i];

  den.params().zero_grad();
  // degenerate group (all rewards equal): zero-gradient step, flagged
  ObjectiveResult obj = grpo_objective(den, *ctx.sched, batch, cfg, !degenerate);
  if (!degenerate) opt.step();

  obj.metrics.degenerate_group = degenerate;
  return obj.metrics;
}

}  // namespace hierogen::grpo
