#include "hierogen/reward.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "hierogen/fsutil.hpp"
#include "hierogen/numerics.hpp"

namespace hierogen::reward {

std::vector<float> frame_features(const world::Video& video, int frame) {
  const int h = video.h(), w = video.w();
  const int bh = h / 8, bw = w / 8;
  const int64_t plane = static_cast<int64_t>(h) * w;
  const float* fr = video.frame(frame);
  std::vector<float> feat(static_cast<size_t>(kFeatDim), 0.0f);
  for (int by = 0; by < 8; ++by)
    for (int bx = 0; bx < 8; ++bx) {
      double acc = 0.0;
      for (int y = 0; y < bh; ++y)
        for (int x = 0; x < bw; ++x) {
          const int64_t p = static_cast<int64_t>(by * bh + y) * w + bx * bw + x;
          // inverse-video intensity: dark content is signal, so the bright
          // tabletop background does not dominate the cosine normalization
          acc += 1.0 - (0.299 * fr[p] + 0.587 * fr[plane + p] + 0.114 * fr[2 * plane + p]);
        }
      feat[static_cast<size_t>(by * 8 + bx)] = static_cast<float>(acc / (bh * bw));
    }
  return feat;
}

namespace {

std::vector<float> window_context(const world::Video& v, int start, int context_len) {
  std::vector<float> ctx;
  ctx.reserve(static_cast<size_t>(context_len) * kFeatDim);
  for (int f = 0; f < context_len; ++f) {
    const auto feat = frame_features(v, start + f);
    ctx.insert(ctx.end(), feat.begin(), feat.end());
  }
  return ctx;
}

std::vector<float> window_target(const world::Video& v, int start, int context_len, int target_len) {
  std::vector<float> tgt;
  tgt.reserve(static_cast<size_t>(target_len) * kFeatDim);
  for (int f = 0; f < target_len; ++f) {
    const auto feat = frame_features(v, start + context_len + f);
    tgt.insert(tgt.end(), feat.begin(), feat.end());
  }
  return tgt;
}

}  // namespace

std::vector<float> WorldModel::predict(const std::vector<float>& context_features) const {
  const int in_dim = context_len * kFeatDim;
  const int out_dim = target_len * kFeatDim;
  require(static_cast<int>(context_features.size()) == in_dim, ErrorKind::InvalidArgument,
          "world model context size mismatch");
  std::vector<float> out(static_cast<size_t>(out_dim), 0.0f);
  std::vector<double> acc(static_cast<size_t>(out_dim), 0.0);
  for (int i = 0; i < in_dim; ++i) {
    const double xi = context_features[static_cast<size_t>(i)];
    if (xi == 0.0) continue;
    const float* wrow = weights.data() + static_cast<int64_t>(i) * out_dim;
    for (int j = 0; j < out_dim; ++j) acc[static_cast<size_t>(j)] += xi * wrow[j];
  }
  const float* bias = weights.data() + static_cast<int64_t>(in_dim) * out_dim;
  for (int j = 0; j < out_dim; ++j)
    out[static_cast<size_t>(j)] = static_cast<float>(acc[static_cast<size_t>(j)] + bias[j]);
  return out;
}

WorldModel fit_world_model(const std::vector<const world::Video*>& corpus, double lambda,
                           const PFCConfig& cfg) {
  require(corpus.size() >= 50, ErrorKind::InsufficientData,
          "world model fit needs >= 50 videos, got " + std::to_string(corpus.size()));
  const int in_dim = cfg.context_len * kFeatDim;
  const int out_dim = cfg.target_len * kFeatDim;
  const int n = in_dim + 1;  // bias column

  std::vector<double> xtx(static_cast<size_t>(n) * n, 0.0);
  std::vector<double> xty(static_cast<size_t>(n) * out_dim, 0.0);
  int64_t rows = 0;
  for (const world::Video* v : corpus) {
    const int nw = cfg.window_count(v->t());
    require(nw >= 1, ErrorKind::InvalidArgument, "video too short for PFC windows");
    for (int wi = 0; wi < nw; ++wi) {
      const int start = wi * cfg.stride;
      std::vector<float> x = window_context(*v, start, cfg.context_len);
      x.push_back(1.0f);
      const std::vector<float> y = window_target(*v, start, cfg.context_len, cfg.target_len);
      for (int i = 0; i < n; ++i) {
        const double xi = x[static_cast<size_t>(i)];
        if (xi == 0.0) continue;
        for (int j = i; j < n; ++j)
          xtx[static_cast<size_t>(i) * n + j] += xi * x[static_cast<size_t>(j)];
        for (int j = 0; j < out_dim; ++j)
          xty[static_cast<size_t>(i) * out_dim + j] += xi * y[static_cast<size_t>(j)];
      }
      ++rows;
    }
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j)
      xtx[static_cast<size_t>(i) * n + j] = xtx[static_cast<size_t>(j) * n + i];
  // ridge on the weight rows only; the bias stays unregularized
  for (int i = 0; i < in_dim; ++i) xtx[static_cast<size_t>(i) * n + i] += lambda;
  xtx[static_cast<size_t>(n - 1) * n + (n - 1)] += 1e-12;

  std::vector<double> sol;
  numerics::solve_spd(xtx, n, xty, out_dim, 0.0, sol);

  WorldModel wm;
  wm.context_len = cfg.context_len;
  wm.target_len = cfg.target_len;
  wm.lambda = lambda;
  wm.weights = Tensor({n, out_dim});
  for (int64_t i = 0; i < wm.weights.numel(); ++i)
    wm.weights[i] = static_cast<float>(sol[static_cast<size_t>(i)]);

  // training residual (mean squared error over the fit windows)
  double resid = 0.0;
  int64_t count = 0;
  for (const world::Video* v : corpus) {
    const int nw = cfg.window_count(v->t());
    for (int wi = 0; wi < nw; ++wi) {
      const int start = wi * cfg.stride;
      const auto pred = wm.predict(window_context(*v, start, cfg.context_len));
      const auto y = window_target(*v, start, cfg.context_len, cfg.target_len);
      for (int j = 0; j < out_dim; ++j) {
        const double d = static_cast<double>(pred[static_cast<size_t>(j)]) - y[static_cast<size_t>(j)];
        resid += d * d;
        ++count;
      }
    }
  }
  wm.train_residual = resid / static_cast<double>(count);
  return wm;
}

PFCResult pfc_score(const world::Video& video, const WorldModel& model, const PFCConfig& cfg) {
  require(video.t() >= cfg.context_len + cfg.target_len, ErrorKind::InvalidArgument,
          "video too short for PFC windows");
  const int nw = cfg.window_count(video.t());
  PFCResult res;
  res.scores.resize(static_cast<size_t>(nw));
  res.degenerate.resize(static_cast<size_t>(nw), false);
  for (int wi = 0; wi < nw; ++wi) {
    const int start = wi * cfg.stride;
    const auto ctx = window_context(video, start, cfg.context_len);
    const auto tgt = window_target(video, start, cfg.context_len, cfg.target_len);
    const auto pred = model.predict(ctx);
    double np = 0.0, nt = 0.0;
    for (float v : pred) np += static_cast<double>(v) * v;
    for (float v : tgt) nt += static_cast<double>(v) * v;
    if (np < 1e-24 || nt < 1e-24) {
      res.scores[static_cast<size_t>(wi)] = 0.0;
      res.degenerate[static_cast<size_t>(wi)] = true;
      continue;
    }
    res.scores[static_cast<size_t>(wi)] = numerics::cosine_sim(
        std::span<const float>(pred.data(), pred.size()),
        std::span<const float>(tgt.data(), tgt.size()));
  }
  auto [weights, r] = aggregate_pfc(res.scores, cfg.temperature);
  res.weights = std::move(weights);
  res.r_physics = r;
  return res;
}

namespace {

// pairwise tree sum: exact for equal terms over power-of-two window counts,
// which keeps the equal-scores symmetry r == s bit-exact
double pairwise_sum(const double* v, size_t n) {
  if (n == 1) return v[0];
  const size_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

}  // namespace

std::pair<std::vector<double>, double> aggregate_pfc(const std::vector<double>& scores,
                                                     double temperature) {
  std::vector<double> errs(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) errs[i] = 1.0 - scores[i];
  std::vector<double> weights = numerics::softmax(errs, temperature);
  std::vector<double> terms(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) terms[i] = weights[i] * scores[i];
  return {std::move(weights), pairwise_sum(terms.data(), terms.size())};
}

namespace {

struct BinKey {
  uint16_t r, g, b;
  bool operator<(const BinKey& o) const {
    return std::tie(r, g, b) < std::tie(o.r, o.g, o.b);
  }
};

BinKey quantize5(const float* fr, int64_t plane, int64_t p) {
  auto q = [](float v) {
    return static_cast<uint16_t>(std::clamp(static_cast<int>(v * 31.999f), 0, 31));
  };
  return {q(fr[p]), q(fr[plane + p]), q(fr[2 * plane + p])};
}

bool channel_clipped(float v) { return v <= 0.002f || v >= 0.998f; }

}  // namespace

int aesthetic_score(const world::Video& video) {
  const int t = video.t();
  const int64_t plane = static_cast<int64_t>(video.h()) * video.w();
  int score = 1;

  // (a) sane pixel range: at most 1% of pixels clipped across the video
  {
    int64_t clipped = 0;
    for (int f = 0; f < t; ++f) {
      const float* fr = video.frame(f);
      for (int64_t p = 0; p < plane; ++p)
        if (channel_clipped(fr[p]) || channel_clipped(fr[plane + p]) ||
            channel_clipped(fr[2 * plane + p]))
          ++clipped;
    }
    if (static_cast<double>(clipped) <= 0.01 * static_cast<double>(plane) * t) ++score;
  }

  // background reference: modal 5-bit color of frame 0
  const float* f0 = video.frame(0);
  BinKey bg_bin{};
  {
    std::map<BinKey, int64_t> hist;
    for (int64_t p = 0; p < plane; ++p) ++hist[quantize5(f0, plane, p)];
    int64_t best = -1;
    for (const auto& [k, c] : hist)
      if (c > best) {
        best = c;
        bg_bin = k;
      }
  }
  const float bg_rgb[3] = {(bg_bin.r + 0.5f) / 32.0f, (bg_bin.g + 0.5f) / 32.0f,
                           (bg_bin.b + 0.5f) / 32.0f};

  // (b) background flicker: mean inter-frame difference over frame-0
  // background pixels (all pixels when background cannot be identified)
  {
    std::vector<uint8_t> bg_mask(static_cast<size_t>(plane), 0);
    int64_t nbg = 0;
    for (int64_t p = 0; p < plane; ++p) {
      float d = 0.0f;
      for (int c = 0; c < 3; ++c)
        d = std::max(d, std::abs(f0[c * plane + p] - bg_rgb[c]));
      if (d <= 0.05f) {
        bg_mask[static_cast<size_t>(p)] = 1;
        ++nbg;
      }
    }
    const bool use_all = nbg < plane / 100;
    double diff = 0.0;
    int64_t count = 0;
    for (int f = 1; f < t; ++f) {
      const float* a = video.frame(f - 1);
      const float* b = video.frame(f);
      for (int64_t p = 0; p < plane; ++p) {
        if (!use_all && !bg_mask[static_cast<size_t>(p)]) continue;
        for (int c = 0; c < 3; ++c) diff += std::abs(a[c * plane + p] - b[c * plane + p]);
        ++count;
      }
    }
    const double mean_flicker = count == 0 ? 0.0 : diff / (3.0 * static_cast<double>(count));
    if (t == 1 || mean_flicker < 0.02) ++score;
  }

  // (c) no frame with more than 30% saturated pixels
  {
    bool ok = true;
    for (int f = 0; f < t && ok; ++f) {
      const float* fr = video.frame(f);
      int64_t sat = 0;
      for (int64_t p = 0; p < plane; ++p)
        if (channel_clipped(fr[p]) || channel_clipped(fr[plane + p]) ||
            channel_clipped(fr[2 * plane + p]))
          ++sat;
      if (static_cast<double>(sat) > 0.30 * static_cast<double>(plane)) ok = false;
    }
    if (ok) ++score;
  }

  // (d) object-color pixel counts stay within 25% of their frame-0 value
  {
    std::map<BinKey, int64_t> hist;
    for (int64_t p = 0; p < plane; ++p) {
      const BinKey k = quantize5(f0, plane, p);
      const float rgb[3] = {(k.r + 0.5f) / 32.0f, (k.g + 0.5f) / 32.0f, (k.b + 0.5f) / 32.0f};
      float dbg = 0.0f;
      for (int c = 0; c < 3; ++c) dbg = std::max(dbg, std::abs(rgb[c] - bg_rgb[c]));
      const float maxch = std::max({rgb[0], rgb[1], rgb[2]});
      if (dbg <= 0.10f || maxch < 0.25f) continue;  // background- or arm-colored
      ++hist[k];
    }
    std::vector<std::pair<int64_t, BinKey>> bins;
    for (const auto& [k, c] : hist) bins.push_back({c, k});
    std::sort(bins.begin(), bins.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    if (bins.size() > 8) bins.resize(8);
    bool ok = true;
    for (const auto& [c0, key] : bins) {
      int64_t lo = c0, hi = c0;
      for (int f = 1; f < t; ++f) {
        const float* fr = video.frame(f);
        int64_t c = 0;
        for (int64_t p = 0; p < plane; ++p) {
          const BinKey k = quantize5(fr, plane, p);
          if (k.r == key.r && k.g == key.g && k.b == key.b) ++c;
        }
        lo = std::min(lo, c);
        hi = std::max(hi, c);
      }
      const double allowed = std::max(1.0, 0.25 * static_cast<double>(c0));
      if (static_cast<double>(hi - lo) > allowed) {
        ok = false;
        break;
      }
    }
    if (ok) ++score;
  }

  return score;
}

double composite_from_parts(double physics, int aesthetic_1to5, const RewardWeights& weights) {
  const double aes = (aesthetic_1to5 - 1) / 4.0;
  return weights.physics * physics + weights.aesthetic * aes;
}

double composite_reward(const world::Video& video, const WorldModel& model, const PFCConfig& cfg,
                        const RewardWeights& weights) {
  return composite_from_parts(pfc_score(video, model, cfg).r_physics, aesthetic_score(video),
                              weights);
}

void save_world_model(const std::filesystem::path& dir, const WorldModel& model) {
  fs::ensure_dir(dir);
  fs::write_json_atomic(dir / "manifest.json",
                        {{"context_len", model.context_len},
                         {"target_len", model.target_len},
                         {"lambda", model.lambda},
                         {"train_residual", model.train_residual},
                         {"feat_dim", kFeatDim}});
  save_hgt1(dir / "weights.hgt", model.weights);
}

WorldModel load_world_model(const std::filesystem::path& dir) {
  const fs::json j = fs::read_json(dir / "manifest.json");
  WorldModel wm;
  try {
    wm.context_len = j.at("context_len").get<int>();
    wm.target_len = j.at("target_len").get<int>();
    wm.lambda = j.at("lambda").get<double>();
    wm.train_residual = j.at("train_residual").get<double>();
  } catch (const fs::json::exception& e) {
    fail(ErrorKind::Parse, dir.string() + "/manifest.json: " + e.what());
  }
  wm.weights = load_hgt1(dir / "weights.hgt");
  require(wm.weights.rank() == 2 &&
              wm.weights.dim(0) == wm.context_len * kFeatDim + 1 &&
              wm.weights.dim(1) == wm.target_len * kFeatDim,
          ErrorKind::Parse, "world model weight shape mismatch");
  return wm;
}

}  // namespace hierogen::reward
