#pragma once

#include <filesystem>
#include <vector>

#include "hierogen/tensor.hpp"
#include "hierogen/world.hpp"

namespace hierogen::reward {

inline constexpr int kFeatDim = 64;  // 8x8 grayscale block means per frame

struct PFCConfig {
  int context_len = 4;
  int target_len = 2;
  int stride = 2;
  double temperature = 0.5;

  int window_count(int frames) const {
    return (frames - context_len - target_len) / stride + 1;
  }
};

/// Pluggable world model: block-mean grayscale encoder plus a ridge linear
/// predictor from stacked context features to stacked target features.
struct WorldModel {
  int context_len = 4;
  int target_len = 2;
  double lambda = 1e-3;
  double train_residual = 0.0;
  Tensor weights;  // [context_len*64 + 1, target_len*64]; last row is the bias

  std::vector<float> predict(const std::vector<float>& context_features) const;
};

/// Per-frame encoder features (luma block means).
std::vector<float> frame_features(const world::Video& video, int frame);

/// Closed-form ridge fit over all sliding windows of the corpus (>= 50 videos).
WorldModel fit_world_model(const std::vector<const world::Video*>& corpus, double lambda,
                           const PFCConfig& cfg);

struct PFCResult {
  std::vector<double> scores;      // s_i per window, in [-1,1]
  std::vector<double> weights;     // softmax((1-s)/tau), sums to 1
  std::vector<bool> degenerate;    // window had a zero feature vector
  double r_physics = 0.0;
};

/// s_i = cos(P(E(context_i)), E(target_i)); error-weighted softmax aggregation.
PFCResult pfc_score(const world::Video& video, const WorldModel& model, const PFCConfig& cfg);

/// The aggregation step alone: weights = softmax((1-s)/tau), r = sum w_i s_i.
std::pair<std::vector<double>, double> aggregate_pfc(const std::vector<double>& scores,
                                                     double temperature);

/// Rule-based tiered score in 1..5: one point per passed gate on top of a
/// base of 1 — sane pixel range, low background flicker, no saturated frame,
/// stable object-color pixel counts.
int aesthetic_score(const world::Video& video);

struct RewardWeights {
  double physics = 0.7;
  double aesthetic = 0.3;
};

/// Weighted sum with the aesthetic score mapped onto [0,1] via (score-1)/4.
double composite_reward(const world::Video& video, const WorldModel& model, const PFCConfig& cfg,
                        const RewardWeights& weights);
double composite_from_parts(double physics, int aesthetic_1to5, const RewardWeights& weights);

void save_world_model(const std::filesystem::path& dir, const WorldModel& model);
WorldModel load_world_model(const std::filesystem::path& dir);

}  // namespace hierogen::reward
