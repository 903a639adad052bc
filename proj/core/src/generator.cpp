#include "hierogen/generator.hpp"

#include <cmath>

#include "hierogen/fsutil.hpp"
#include "hierogen/numerics.hpp"

namespace hierogen::generator {

NoiseSchedule::NoiseSchedule() {
  const double b0 = 1e-4, b1 = 0.02;
  double ab = 1.0;
  for (int t = 0; t < kTimesteps; ++t) {
    betas[static_cast<size_t>(t)] = b0 + (b1 - b0) * static_cast<double>(t) / (kTimesteps - 1);
    alphas[static_cast<size_t>(t)] = 1.0 - betas[static_cast<size_t>(t)];
    ab *= alphas[static_cast<size_t>(t)];
    alpha_bars[static_cast<size_t>(t)] = ab;
  }
}

std::vector<int> NoiseSchedule::subschedule(int steps) {
  require(steps >= 1 && steps <= kTimesteps, ErrorKind::InvalidArgument, "bad sampler step count");
  std::vector<int> ts(static_cast<size_t>(steps));
  for (int k = 0; k < steps; ++k)
    ts[static_cast<size_t>(k)] = (steps - k) * kTimesteps / steps - 1;
  return ts;
}

LatentStats LatentStats::identity() {
  LatentStats s;
  s.mean.fill(0.0f);
  s.std.fill(1.0f);
  return s;
}

LatentStats LatentStats::fit(const std::vector<Tensor>& latents) {
  require(!latents.empty(), ErrorKind::InvalidArgument, "no latents to fit stats");
  std::array<double, kLatentChannels> sum{}, sq{};
  int64_t count = 0;
  for (const Tensor& z : latents) {
    const int t = z.dim(0), cells = z.dim(2) * z.dim(3);
    for (int f = 0; f < t; ++f)
      for (int c = 0; c < kLatentChannels; ++c) {
        const float* p = z.data() + ((static_cast<int64_t>(f) * kLatentChannels + c) * cells);
        for (int i = 0; i < cells; ++i) {
          sum[static_cast<size_t>(c)] += p[i];
          sq[static_cast<size_t>(c)] += static_cast<double>(p[i]) * p[i];
        }
      }
    count += static_cast<int64_t>(z.dim(0)) * cells;
  }
  LatentStats s;
  for (int c = 0; c < kLatentChannels; ++c) {
    const double m = sum[static_cast<size_t>(c)] / static_cast<double>(count);
    double v = sq[static_cast<size_t>(c)] / static_cast<double>(count) - m * m;
    if (v < 1e-8) v = 1e-8;
    s.mean[static_cast<size_t>(c)] = static_cast<float>(m);
    s.std[static_cast<size_t>(c)] = static_cast<float>(std::sqrt(v));
  }
  return s;
}

Tensor LatentStats::standardize(const Tensor& z) const {
  Tensor out = z;
  const int t = z.dim(0), cells = z.dim(2) * z.dim(3);
  for (int f = 0; f < t; ++f)
    for (int c = 0; c < kLatentChannels; ++c) {
      float* p = out.data() + ((static_cast<int64_t>(f) * kLatentChannels + c) * cells);
      const float m = mean[static_cast<size_t>(c)], s = std[static_cast<size_t>(c)];
      for (int i = 0; i < cells; ++i) p[i] = (p[i] - m) / s;
    }
  return out;
}

Tensor LatentStats::destandardize(const Tensor& z) const {
  Tensor out = z;
  const int t = z.dim(0), cells = z.dim(2) * z.dim(3);
  for (int f = 0; f < t; ++f)
    for (int c = 0; c < kLatentChannels; ++c) {
      float* p = out.data() + ((static_cast<int64_t>(f) * kLatentChannels + c) * cells);
      const float m = mean[static_cast<size_t>(c)], s = std[static_cast<size_t>(c)];
      for (int i = 0; i < cells; ++i) p[i] = p[i] * s + m;
    }
  return out;
}

namespace {

Tensor uniform_init(std::vector<int> shape, Rng& rng, double scale) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.uniform(-scale, scale));
  return t;
}

}  // namespace

Denoiser::Denoiser(uint64_t seed) {
  Rng rng(seed);
  params_.add("embed.w", uniform_init({kLatentChannels, kHidden}, rng, 1.0 / std::sqrt(16.0)));
  params_.add("embed.b", Tensor::zeros({kHidden}));
  params_.add("t_table", Tensor::randn({kTimesteps, kHidden}, rng, 0.02f));
  params_.add("gconv.spatial",
              uniform_init({kHidden, kLatentChannels, 3, 3}, rng, 0.5 / std::sqrt(16.0 * 9.0)));
  params_.add("gconv.temporal",
              uniform_init({kHidden, kHidden, 3}, rng, 0.5 / std::sqrt(32.0 * 3.0)));
  for (int b = 0; b < kBlocks; ++b) {
    const std::string p = "block" + std::to_string(b);
    params_.add(p + ".mix.w", uniform_init({kTokens, kTokens}, rng, 1.0 / std::sqrt(64.0)));
    params_.add(p + ".mix.b", Tensor::zeros({kTokens}));
    params_.add(p + ".mlp.w1", uniform_init({kHidden, 2 * kHidden}, rng, 1.0 / std::sqrt(32.0)));
    params_.add(p + ".mlp.b1", Tensor::zeros({2 * kHidden}));
    params_.add(p + ".mlp.w2", uniform_init({2 * kHidden, kHidden}, rng, 1.0 / std::sqrt(64.0)));
    params_.add(p + ".mlp.b2", Tensor::zeros({kHidden}));
  }
  params_.add("head.w", uniform_init({kHidden, kLatentChannels}, rng, 1.0 / std::sqrt(32.0)));
  params_.add("head.b", Tensor::zeros({kLatentChannels}));
}

nn::Var Denoiser::guidance_tokens(nn::GradTape& tape, const Tensor& guidance) const {
  nn::Var g = tape.leaf(guidance);
  nn::Var sc = tape.conv2d3(g, tape.param(params_.find("gconv.spatial")));
  sc = tape.silu(sc);
  nn::Var tc = tape.conv1d_temporal(sc, tape.param(params_.find("gconv.temporal")));
  return tape.tokens_from_chw(tc);
}

nn::Var Denoiser::forward_tokens(nn::GradTape& tape, nn::Var x_tokens, int frames, int t,
                                 nn::Var g_tokens) const {
  require(t >= 0 && t < kTimesteps, ErrorKind::InvalidArgument, "timestep out of range");
  auto P = [&](const char* name) { return tape.param(params_.find(name)); };
  nn::Var h = tape.matmul(x_tokens, P("embed.w"));
  h = tape.add_row_vec(h, P("embed.b"));
  h = tape.add_row_vec(h, tape.gather_row(P("t_table"), t));

  for (int b = 0; b < kBlocks; ++b) {
    const std::string p = "block" + std::to_string(b);
    if (b % 2 == 0 && g_tokens.valid()) {
      nn::Var gn = tape.group_norm_tokens(g_tokens, frames, kFusionGroups, 1e-5f);
      h = tape.add(h, tape.mul(gn, g_tokens));
    }
    nn::Var mix = tape.mixer(h, tape.param(params_.find((p + ".mix.w").c_str())), frames);
    mix = tape.add_token_bias(mix, tape.param(params_.find((p + ".mix.b").c_str())), frames);
    h = tape.add(h, mix);
    nn::Var m1 = tape.matmul(h, tape.param(params_.find((p + ".mlp.w1").c_str())));
    m1 = tape.add_row_vec(m1, tape.param(params_.find((p + ".mlp.b1").c_str())));
    m1 = tape.silu(m1);
    nn::Var m2 = tape.matmul(m1, tape.param(params_.find((p + ".mlp.w2").c_str())));
    m2 = tape.add_row_vec(m2, tape.param(params_.find((p + ".mlp.b2").c_str())));
    h = tape.add(h, m2);
  }
  nn::Var out = tape.matmul(h, P("head.w"));
  return tape.add_row_vec(out, P("head.b"));
}

Tensor Denoiser::denoise(const Tensor& z_t, int t, const Tensor* guidance) const {
  require(z_t.rank() == 4 && z_t.dim(1) == kLatentChannels, ErrorKind::InvalidArgument,
          "denoise expects [T,16,h,w]");
  if (guidance) {
    require(guidance->shape() == z_t.shape(), ErrorKind::InvalidArgument,
            "guidance/latent grid mismatch");
  }
  Tensor g_tokens;
  if (guidance) g_tokens = guidance_tokens_value(*guidance);
  return denoise_tokens(z_t, t, g_tokens);
}

Tensor Denoiser::guidance_tokens_value(const Tensor& guidance) const {
  if (guidance.all_zero()) return Tensor();  // unconditioned: fusion adds exactly zero
  nn::ParamStore* store = const_cast<nn::ParamStore*>(&params_);
  nn::GradTape tape(store);
  return tape.value(guidance_tokens(tape, guidance));
}

Tensor Denoiser::denoise_tokens(const Tensor& z_t, int t, const Tensor& g_tokens) const {
  const int frames = z_t.dim(0);
  nn::ParamStore* store = const_cast<nn::ParamStore*>(&params_);
  nn::GradTape tape(store);
  nn::Var x = tape.tokens_from_chw(tape.leaf(z_t));
  nn::Var g{};  // invalid: unconditioned
  if (!g_tokens.empty()) g = tape.leaf(g_tokens);
  nn::Var out = forward_tokens(tape, x, frames, t, g);
  return tokens_to_chw(tape.value(out), frames, z_t.dim(2), z_t.dim(3));
}

Tensor chw_to_tokens(const Tensor& x) {
  const int t = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({t * hw, c});
  for (int f = 0; f < t; ++f)
    for (int ch = 0; ch < c; ++ch) {
      const float* ip = x.data() + (static_cast<int64_t>(f) * c + ch) * hw;
      float* op = out.data() + static_cast<int64_t>(f) * hw * c + ch;
      for (int p = 0; p < hw; ++p) op[static_cast<int64_t>(p) * c] = ip[p];
    }
  return out;
}

Tensor tokens_to_chw(const Tensor& x, int frames, int h, int w) {
  const int c = x.dim(1), hw = h * w;
  require(x.dim(0) == frames * hw, ErrorKind::InvalidArgument, "tokens_to_chw shape mismatch");
  Tensor out({frames, c, h, w});
  for (int f = 0; f < frames; ++f)
    for (int ch = 0; ch < c; ++ch) {
      float* op = out.data() + (static_cast<int64_t>(f) * c + ch) * hw;
      const float* ip = x.data() + static_cast<int64_t>(f) * hw * c + ch;
      for (int p = 0; p < hw; ++p) op[p] = ip[static_cast<int64_t>(p) * c];
    }
  return out;
}

double sft_loss(Denoiser& den, const NoiseSchedule& sched,
                const std::vector<const SftExample*>& batch, Rng& rng, bool accumulate_grads) {
  require(!batch.empty(), ErrorKind::InvalidArgument, "sft batch must be >= 1");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const SftExample* ex : batch) {
    const int t = static_cast<int>(rng.uniform_int(0, kTimesteps - 1));
    const double ab = sched.alpha_bars[static_cast<size_t>(t)];
    const float sa = static_cast<float>(std::sqrt(ab));
    const float sn = static_cast<float>(std::sqrt(1.0 - ab));
    Tensor eps(ex->latent_tokens.shape());
    for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = static_cast<float>(rng.normal());
    Tensor x_t(ex->latent_tokens.shape());
    for (int64_t i = 0; i < x_t.numel(); ++i)
      x_t[i] = sa * ex->latent_tokens[i] + sn * eps[i];

    nn::GradTape tape(&den.params());
    nn::Var g{};
    if (!ex->guidance.all_zero()) g = den.guidance_tokens(tape, ex->guidance);
    nn::Var pred = den.forward_tokens(tape, tape.leaf(std::move(x_t)), ex->frames, t, g);
    nn::Var diff = tape.sub(pred, tape.leaf(std::move(eps)));
    nn::Var loss = tape.mean(tape.mul(diff, diff));
    total += tape.scalar(loss) * inv_b;
    if (accumulate_grads) tape.backward(loss, inv_b);
  }
  return total;
}

namespace {

Tensor initial_noise(const std::vector<int>& shape, uint64_t seed) {
  Rng rng(derive_seed(seed, "x_init"));
  Tensor x(shape);
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
  return x;
}

}  // namespace

world::Video sample_ddim(const Denoiser& den, const NoiseSchedule& sched, const LatentCodec& codec,
                         const LatentStats& stats, const bsb::BSB& plan, const world::Scene& scene,
                         int steps, uint64_t seed) {
  const bsb::GuidanceTensor g = bsb::build_guidance(plan, scene, codec);
  const int frames = plan.phase_counts.total();
  const Tensor g_tokens = den.guidance_tokens_value(g.data);
  Tensor x = initial_noise({frames, kLatentChannels, kLatentH, kLatentW}, seed);
  const std::vector<int> ts = NoiseSchedule::subschedule(steps);
  for (size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    const double ab = sched.alpha_bars[static_cast<size_t>(t)];
    const double ab_prev = (k + 1 < ts.size()) ? sched.alpha_bars[static_cast<size_t>(ts[k + 1])] : 1.0;
    const Tensor eps = den.denoise_tokens(x, t, g_tokens);
    const float c0 = static_cast<float>(1.0 / std::sqrt(ab));
    const float c1 = static_cast<float>(std::sqrt(1.0 - ab));
    const float a0 = static_cast<float>(std::sqrt(ab_prev));
    const float a1 = static_cast<float>(std::sqrt(1.0 - ab_prev));
    for (int64_t i = 0; i < x.numel(); ++i) {
      const float x0 = c0 * (x[i] - c1 * eps[i]);
      x[i] = a0 * x0 + a1 * eps[i];
    }
  }
  return codec.decode(stats.destandardize(x));
}

StochasticRollout sample_stochastic(const Denoiser& den, const NoiseSchedule& sched,
                                    const LatentCodec& codec, const LatentStats& stats,
                                    const bsb::BSB& plan, const world::Scene& scene, int steps,
                                    uint64_t seed, double eta) {
  StochasticRollout r;
  r.frames = plan.phase_counts.total();
  r.guidance = bsb::build_guidance(plan, scene, codec).data;
  const Tensor g_tokens = den.guidance_tokens_value(r.guidance);
  Tensor x = initial_noise({r.frames, kLatentChannels, kLatentH, kLatentW}, seed);
  Rng rng(derive_seed(seed, "transitions"));
  const std::vector<int> ts = NoiseSchedule::subschedule(steps);
  for (size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    const double ab = sched.alpha_bars[static_cast<size_t>(t)];
    const double ab_prev = (k + 1 < ts.size()) ? sched.alpha_bars[static_cast<size_t>(ts[k + 1])] : 1.0;
    const Tensor eps = den.denoise_tokens(x, t, g_tokens);
    double sigma2 = 0.0;
    if (k + 1 < ts.size() && eta > 0.0) {
      const double s = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) *
                       std::sqrt(1.0 - ab / ab_prev);
      sigma2 = s * s;
    }
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma2));
    const double c0 = 1.0 / std::sqrt(ab);
    const double c1 = std::sqrt(1.0 - ab);
    const double a0 = std::sqrt(ab_prev);
    // fused coefficients, matching the taped objective expression exactly
    const float xs = static_cast<float>(a0 * c0);
    const float es = static_cast<float>(dir - a0 * c0 * c1);
    Tensor mean(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) mean[i] = xs * x[i] + es * eps[i];
    if (sigma2 > 0.0) {
      const float s = static_cast<float>(std::sqrt(sigma2));
      Tensor draw(mean.shape());
      for (int64_t i = 0; i < draw.numel(); ++i)
        draw[i] = mean[i] + s * static_cast<float>(rng.normal());
      r.step_ts.push_back(t);
      r.next_ts.push_back(ts[k + 1]);
      r.states.push_back(x);
      r.means.push_back(mean);
      r.draws.push_back(draw);
      r.sigmas.push_back(std::sqrt(sigma2));
      r.logprob_sum += numerics::gaussian_logpdf(
          std::span<const float>(draw.data(), static_cast<size_t>(draw.numel())),
          std::span<const float>(mean.data(), static_cast<size_t>(mean.numel())), sigma2);
      x = std::move(draw);
    } else {
      x = std::move(mean);
    }
  }
  r.video = codec.decode(stats.destandardize(x));
  return r;
}

double rollout_logprob(const Denoiser& den, const NoiseSchedule& sched,
                       const StochasticRollout& rollout) {
  double total = 0.0;
  const Tensor g_tokens = den.guidance_tokens_value(rollout.guidance);
  for (size_t k = 0; k < rollout.draws.size(); ++k) {
    const int t = rollout.step_ts[k];
    const double ab = sched.alpha_bars[static_cast<size_t>(t)];
    const Tensor eps = den.denoise_tokens(rollout.states[k], t, g_tokens);
    // reconstruct the mean under these params (fused coefficients as above)
    const double sigma = rollout.sigmas[k];
    const double ab_prev = sched.alpha_bars[static_cast<size_t>(rollout.next_ts[k])];
    const double c0 = 1.0 / std::sqrt(ab);
    const double c1 = std::sqrt(1.0 - ab);
    const double a0 = std::sqrt(ab_prev);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    const float xs = static_cast<float>(a0 * c0);
    const float es = static_cast<float>(dir - a0 * c0 * c1);
    Tensor mean(eps.shape());
    const Tensor& x = rollout.states[k];
    for (int64_t i = 0; i < mean.numel(); ++i) mean[i] = xs * x[i] + es * eps[i];
    total += numerics::gaussian_logpdf(
        std::span<const float>(rollout.draws[k].data(), static_cast<size_t>(rollout.draws[k].numel())),
        std::span<const float>(mean.data(), static_cast<size_t>(mean.numel())), sigma * sigma);
  }
  return total;
}

namespace {

fs::json stats_to_json(const LatentStats& s) {
  fs::json j;
  j["mean"] = std::vector<float>(s.mean.begin(), s.mean.end());
  j["std"] = std::vector<float>(s.std.begin(), s.std.end());
  return j;
}

LatentStats stats_from_json(const fs::json& j) {
  LatentStats s;
  for (int c = 0; c < kLatentChannels; ++c) {
    s.mean[static_cast<size_t>(c)] = j.at("mean").at(static_cast<size_t>(c)).get<float>();
    s.std[static_cast<size_t>(c)] = j.at("std").at(static_cast<size_t>(c)).get<float>();
  }
  return s;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& dir) const {
  fs::ensure_dir(dir / "params");
  fs::json manifest;
  manifest["schedule"] = {{"timesteps", kTimesteps}, {"beta_start", 1e-4}, {"beta_end", 0.02},
                          {"kind", "linear"}};
  manifest["hidden"] = kHidden;
  manifest["blocks"] = kBlocks;
  manifest["codec_seed"] = kCodecSeed;
  manifest["latent_stats"] = stats_to_json(stats);
  manifest["lineage"] = lineage;
  fs::json tensors = fs::json::array();
  for (const auto& e : denoiser.params().entries) {
    tensors.push_back({{"name", e.name}, {"shape", e.value.shape()}});
    save_hgt1(dir / "params" / (e.name + ".hgt"), e.value);
  }
  manifest["tensors"] = tensors;
  fs::write_json_atomic(dir / "manifest.json", manifest);
}

Checkpoint Checkpoint::load(const std::filesystem::path& dir) {
  const fs::json manifest = fs::read_json(dir / "manifest.json");
  Checkpoint ck;
  ck.denoiser = Denoiser(0);
  try {
    ck.stats = stats_from_json(manifest.at("latent_stats"));
    if (manifest.contains("lineage")) ck.lineage = manifest.at("lineage");
    for (auto& e : ck.denoiser.params().entries) {
      Tensor loaded = load_hgt1(dir / "params" / (e.name + ".hgt"));
      require(loaded.shape() == e.value.shape(), ErrorKind::Parse,
              "checkpoint tensor shape mismatch: " + e.name);
      e.value = std::move(loaded);
    }
  } catch (const fs::json::exception& ex) {
    fail(ErrorKind::Parse, dir.string() + "/manifest.json: " + ex.what());
  }
  return ck;
}

}  // namespace hierogen::generator
