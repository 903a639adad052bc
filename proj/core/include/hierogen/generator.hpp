#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "hierogen/bsb.hpp"
#include "hierogen/latent_codec.hpp"
#include "hierogen/tape.hpp"
#include "hierogen/world.hpp"

namespace hierogen::generator {

inline constexpr int kTimesteps = 50;
inline constexpr int kHidden = 32;
inline constexpr int kBlocks = 4;
inline constexpr int kTokens = kLatentH * kLatentW;
inline constexpr int kFusionGroups = 4;
inline constexpr int kDdimSteps = 10;

/// 50 betas, linear 1e-4 -> 0.02, with derived alphas and alpha-bars.
struct NoiseSchedule {
  std::array<double, kTimesteps> betas{};
  std::array<double, kTimesteps> alphas{};
  std::array<double, kTimesteps> alpha_bars{};

  NoiseSchedule();
  /// Descending sub-schedule of `steps` timesteps ending near 0.
  static std::vector<int> subschedule(int steps);
};

/// Per-channel standardization of codec latents (the truncated schedule keeps
/// ~60% signal at the deepest noise level, so diffusion runs on standardized
/// latents whose marginal matches the N(0,I) sampling init).
struct LatentStats {
  std::array<float, kLatentChannels> mean{};
  std::array<float, kLatentChannels> std{};

  static LatentStats identity();
  static LatentStats fit(const std::vector<Tensor>& latents);
  Tensor standardize(const Tensor& z) const;
  Tensor destandardize(const Tensor& z) const;
};

/// Token-grid denoiser: 16->32 token projection, timestep embedding table,
/// guidance embedding convs (bias-free), 4 residual token-mixing blocks with
/// additive guidance fusion h + GN(G)*G in the even blocks, 32->16 head.
class Denoiser {
 public:
  explicit Denoiser(uint64_t seed);

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  int64_t param_count() const { return params_.param_count(); }

  /// Guidance feature tokens [T*S, D] from a guidance tensor [T,16,h,w].
  nn::Var guidance_tokens(nn::GradTape& tape, const Tensor& guidance) const;

  /// eps-prediction in token layout [T*S, 16]. x_tokens must be standardized
  /// latent tokens; g_tokens is an invalid Var for the unconditioned pass.
  nn::Var forward_tokens(nn::GradTape& tape, nn::Var x_tokens, int frames, int t,
                         nn::Var g_tokens) const;

  /// Convenience non-tape forward: z_t [T,16,h,w] (standardized), optional
  /// guidance [T,16,h,w]. An all-zero guidance tensor short-circuits to the
  /// unconditioned pass (the fusion term is exactly zero).
  Tensor denoise(const Tensor& z_t, int t, const Tensor* guidance) const;

  /// Guidance feature tokens as a plain tensor (empty for zero guidance).
  /// They do not depend on the timestep, so samplers compute them once.
  Tensor guidance_tokens_value(const Tensor& guidance) const;
  /// denoise() with precomputed guidance tokens (empty tensor: unconditioned).
  Tensor denoise_tokens(const Tensor& z_t, int t, const Tensor& g_tokens) const;

 private:
  nn::ParamStore params_;
};

Tensor chw_to_tokens(const Tensor& x);                 // [T,C,H,W] -> [T*H*W,C]
Tensor tokens_to_chw(const Tensor& x, int frames, int h, int w);

struct SftExample {
  Tensor latent_tokens;  // standardized, [T*S, 16]
  Tensor guidance;       // [T, 16, h, w]
  int frames = 0;
};

/// One SFT objective evaluation: per sample draws t ~ U[0,50) and eps ~ N(0,I),
/// noises the latent, and measures mean squared eps-prediction error. With
/// accumulate_grads the mean-over-batch gradient lands in the denoiser params.
double sft_loss(Denoiser& den, const NoiseSchedule& sched,
                const std::vector<const SftExample*>& batch, Rng& rng, bool accumulate_grads);

/// Deterministic DDIM (eta = 0) over a sub-schedule; returns decoded pixels.
world::Video sample_ddim(const Denoiser& den, const NoiseSchedule& sched, const LatentCodec& codec,
                         const LatentStats& stats, const bsb::BSB& plan, const world::Scene& scene,
                         int steps, uint64_t seed);

/// Ancestral sampler (eta = 1): records every state, mean and draw so the
/// trajectory log-density can be recomputed under any parameter set.
struct StochasticRollout {
  world::Video video;
  Tensor guidance;              // [T,16,h,w]
  std::vector<int> step_ts;     // timestep fed to the denoiser per transition
  std::vector<int> next_ts;     // destination timestep of each transition
  std::vector<Tensor> states;   // x_k before each stochastic transition (std latents, CHW)
  std::vector<Tensor> means;    // transition means
  std::vector<Tensor> draws;    // sampled next states
  std::vector<double> sigmas;   // per-transition stddev
  double logprob_sum = 0.0;
  int frames = 0;
};

StochasticRollout sample_stochastic(const Denoiser& den, const NoiseSchedule& sched,
                                    const LatentCodec& codec, const LatentStats& stats,
                                    const bsb::BSB& plan, const world::Scene& scene, int steps,
                                    uint64_t seed, double eta = 1.0);

/// Joint log-density of the recorded draws under `den` (f64 accumulation).
double rollout_logprob(const Denoiser& den, const NoiseSchedule& sched,
                       const StochasticRollout& rollout);

struct Checkpoint {
  Denoiser denoiser{0};
  LatentStats stats;
  fs::json lineage;  // master seed + derivation path of every stream involved

  void save(const std::filesystem::path& dir) const;
  static Checkpoint load(const std::filesystem::path& dir);
};

}  // namespace hierogen::generator
