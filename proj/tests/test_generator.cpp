#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "hierogen/generator.hpp"
#include "hierogen/numerics.hpp"
#include "hierogen/planner.hpp"
#include "test_util.hpp"

using namespace hierogen;
using namespace hierogen::generator;

namespace {

bsb::BSB plan_basic(const world::Scene& s) {
  bsb::SubTask st;
  st.object = "red_circle";
  st.dest_zone = "bin";
  return planner::plan_trajectory(s, st, planner::fit_phase_counts(s, st, {}));
}

Tensor random_latent(int frames, uint64_t seed) {
  Rng rng(seed);
  return Tensor::randn({frames, kLatentChannels, kLatentH, kLatentW}, rng);
}

}  // namespace

TEST_CASE("codec: constant-color video round-trips within 1e-5") {
  world::Video v;
  v.frames = Tensor({3, 3, 64, 64});
  const float rgb[3] = {0.2f, 0.6f, 0.9f};
  const int64_t plane = 64 * 64;
  for (int f = 0; f < 3; ++f)
    for (int c = 0; c < 3; ++c)
      for (int64_t p = 0; p < plane; ++p) v.frame(f)[c * plane + p] = rgb[c];
  const LatentCodec codec;
  const world::Video back = codec.decode(codec.encode(v));
  for (int64_t i = 0; i < v.frames.numel(); ++i)
    CHECK(testutil::near(back.frames[i], v.frames[i], 1e-5));
}

TEST_CASE("codec: zero video encodes to the zero latent") {
  world::Video v;
  v.frames = Tensor({2, 3, 64, 64});
  const LatentCodec codec;
  CHECK(codec.encode(v).all_zero());
}

TEST_CASE("codec: orthonormal lift preserves block-mean energy") {
  const world::Scene s = testutil::basic_scene();
  world::Video v;
  v.frames = Tensor({1, 3, 64, 64});
  const Tensor f = world::render(s);
  std::copy(f.data(), f.data() + f.numel(), v.frames.data());
  const LatentCodec codec;
  const Tensor z = codec.encode(v);
  // brute-force block means
  double block_energy = 0.0;
  const int64_t plane = 64 * 64;
  for (int c = 0; c < 3; ++c)
    for (int by = 0; by < 8; ++by)
      for (int bx = 0; bx < 8; ++bx) {
        double m = 0.0;
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            m += v.frames[c * plane + (by * 8 + y) * 64 + bx * 8 + x];
        m /= 64.0;
        block_energy += m * m;
      }
  double z_energy = 0.0;
  for (int64_t i = 0; i < z.numel(); ++i) z_energy += static_cast<double>(z[i]) * z[i];
  CHECK(testutil::near(z_energy, block_energy, 1e-4));
}

TEST_CASE("codec: decode reproduces block means exactly (up to f32 lift)") {
  const world::Scene s = testutil::basic_scene();
  world::Video v;
  v.frames = Tensor({1, 3, 64, 64});
  const Tensor f = world::render(s);
  std::copy(f.data(), f.data() + f.numel(), v.frames.data());
  const LatentCodec codec;
  const world::Video dec = codec.decode(codec.encode(v));
  const int64_t plane = 64 * 64;
  for (int c = 0; c < 3; ++c)
    for (int by = 0; by < 8; ++by)
      for (int bx = 0; bx < 8; ++bx) {
        double m = 0.0;
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            m += v.frames[c * plane + (by * 8 + y) * 64 + bx * 8 + x];
        m /= 64.0;
        CHECK(testutil::near(dec.frames[c * plane + (by * 8) * 64 + bx * 8], m, 1e-5));
      }
}

TEST_CASE("noise schedule: monotone betas, decreasing alpha-bars, subschedules") {
  const NoiseSchedule sched;
  CHECK(sched.betas.front() == doctest::Approx(1e-4));
  CHECK(sched.betas.back() == doctest::Approx(0.02));
  for (int t = 1; t < kTimesteps; ++t) {
    CHECK(sched.betas[static_cast<size_t>(t)] > sched.betas[static_cast<size_t>(t - 1)]);
    CHECK(sched.alpha_bars[static_cast<size_t>(t)] < sched.alpha_bars[static_cast<size_t>(t - 1)]);
  }
  CHECK(NoiseSchedule::subschedule(1) == std::vector<int>{49});
  const auto ts10 = NoiseSchedule::subschedule(10);
  CHECK(ts10.front() == 49);
  CHECK(ts10.back() == 4);
}

TEST_CASE("denoiser: parameter budget") {
  const Denoiser den(1234);
  CHECK(den.param_count() < 200000);
  CHECK(den.params().all_finite());
}

TEST_CASE("denoiser: zero guidance equals the unconditioned pass bit-for-bit") {
  const Denoiser den(42);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor z = random_latent(5, 100 + static_cast<uint64_t>(rep));
    const Tensor zero_g = Tensor::zeros(z.shape());
    const Tensor a = den.denoise(z, rep % kTimesteps, &zero_g);
    const Tensor b = den.denoise(z, rep % kTimesteps, nullptr);
    CHECK(a.same_bytes(b));
  }
}

TEST_CASE("denoiser: explicit zero-G fusion algebra is exact") {
  // run the fusion path with an explicit all-zero guidance feature: GN(0)*0
  // adds exactly zero, so the output must equal the unconditioned pass
  const Denoiser den(43);
  const int frames = 3;
  const Tensor z = random_latent(frames, 7);
  nn::ParamStore* store = const_cast<nn::ParamStore*>(&den.params());
  nn::GradTape tape(store);
  nn::Var x = tape.tokens_from_chw(tape.leaf(z));
  nn::Var zero_g = tape.leaf(Tensor::zeros({frames * kTokens, kHidden}));
  nn::Var guided = den.forward_tokens(tape, x, frames, 11, zero_g);
  nn::Var plain = den.forward_tokens(tape, x, frames, 11, nn::Var{});
  const Tensor& a = tape.value(guided);
  const Tensor& b = tape.value(plain);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("denoiser: purity (same inputs, identical outputs)") {
  const Denoiser den(44);
  const world::Scene s = testutil::basic_scene();
  const bsb::BSB plan = plan_basic(s);
  const LatentCodec codec;
  const Tensor g = bsb::build_guidance(plan, s, codec).data;
  const Tensor z = random_latent(world::kFrames, 9);
  CHECK(den.denoise(z, 17, &g).same_bytes(den.denoise(z, 17, &g)));
}

TEST_CASE("denoiser: guidance receptive field is local") {
  const Denoiser den(45);
  const int frames = 9;
  const Tensor z = random_latent(frames, 21);
  Tensor g = Tensor::zeros({frames, kLatentChannels, kLatentH, kLatentW});
  g.at(4, 3, 4, 4) = 1.0f;  // single lit cell in frame 4
  Tensor g2 = g;
  g2.at(4, 3, 4, 4) = 1.5f;  // perturb it

  // temporal locality of the full eps-prediction: one k=3 temporal conv means
  // frames beyond +-1 of the perturbed frame are bit-identical
  const Tensor a = den.denoise(z, 13, &g);
  const Tensor b = den.denoise(z, 13, &g2);
  const int64_t per = static_cast<int64_t>(kLatentChannels) * kTokens;
  for (int f = 0; f < frames; ++f) {
    bool same = true;
    for (int64_t i = 0; i < per; ++i)
      if (a[f * per + i] != b[f * per + i]) same = false;
    if (f < 3 || f > 5)
      CHECK(same);
    else if (f == 4)
      CHECK_FALSE(same);
  }

  // spatial locality of the guidance feature path itself: 3x3 conv -> one
  // cell of slack around the lit cell, everything else identical
  nn::ParamStore* store = const_cast<nn::ParamStore*>(&den.params());
  nn::GradTape t1(store), t2(store);
  const Tensor f1 = t1.value(den.guidance_tokens(t1, g));
  const Tensor f2 = t2.value(den.guidance_tokens(t2, g2));
  for (int f = 0; f < frames; ++f)
    for (int cy = 0; cy < kLatentH; ++cy)
      for (int cx = 0; cx < kLatentW; ++cx) {
        bool same = true;
        for (int c = 0; c < kHidden; ++c) {
          const int64_t row = static_cast<int64_t>(f) * kTokens + cy * kLatentW + cx;
          if (f1[row * kHidden + c] != f2[row * kHidden + c]) same = false;
        }
        const bool near_cell = std::abs(cy - 4) <= 1 && std::abs(cx - 4) <= 1 &&
                               std::abs(f - 4) <= 1;
        if (!near_cell) CHECK(same);
      }
}

TEST_CASE("sft_loss: identity-wired head drives the loss to zero") {
  Denoiser den(50);
  auto& ps = den.params();
  for (auto& e : ps.entries) e.value.fill(0.0f);
  // embed: 16 -> first 16 hidden channels
  {
    Tensor& w = ps.entries[static_cast<size_t>(ps.find("embed.w"))].value;
    for (int i = 0; i < kLatentChannels; ++i) w.at(i, i) = 1.0f;
  }
  // predict the drawn timestep of the seeded batch rng
  Rng probe(777);
  const int t = static_cast<int>(probe.uniform_int(0, kTimesteps - 1));
  const NoiseSchedule sched;
  const float c = static_cast<float>(1.0 / std::sqrt(1.0 - sched.alpha_bars[static_cast<size_t>(t)]));
  {
    Tensor& w = ps.entries[static_cast<size_t>(ps.find("head.w"))].value;
    for (int i = 0; i < kLatentChannels; ++i) w.at(i, i) = c;
  }

  SftExample ex;
  ex.frames = 4;
  ex.latent_tokens = Tensor::zeros({4 * kTokens, kLatentChannels});  // x0 = 0
  ex.guidance = Tensor::zeros({4, kLatentChannels, kLatentH, kLatentW});
  Rng rng(777);
  const double loss = sft_loss(den, sched, {&ex}, rng, false);
  CHECK(loss < 1e-10);
}

TEST_CASE("sft_loss: nonnegative and finite on random batches") {
  Denoiser den(51);
  const NoiseSchedule sched;
  Rng rng(5);
  SftExample ex;
  ex.frames = 3;
  ex.latent_tokens = Tensor::randn({3 * kTokens, kLatentChannels}, rng);
  ex.guidance = Tensor::zeros({3, kLatentChannels, kLatentH, kLatentW});
  for (int rep = 0; rep < 5; ++rep) {
    const double loss = sft_loss(den, sched, {&ex}, rng, false);
    CHECK(loss >= 0.0);
    CHECK(std::isfinite(loss));
  }
}

TEST_CASE("sft_loss: analytic gradients match central differences") {
  Denoiser den(52);
  const NoiseSchedule sched;
  Rng data_rng(6);
  SftExample ex;
  ex.frames = 2;
  ex.latent_tokens = Tensor::randn({2 * kTokens, kLatentChannels}, data_rng);
  ex.guidance = Tensor::zeros({2, kLatentChannels, kLatentH, kLatentW});
  ex.guidance.at(0, 2, 3, 3) = 0.8f;
  ex.guidance.at(1, 2, 3, 4) = 0.8f;

  auto loss = [&] {
    Rng rng(99);
    return sft_loss(den, sched, {&ex}, rng, false);
  };
  auto grads = [&] {
    den.params().zero_grad();
    Rng rng(99);
    sft_loss(den, sched, {&ex}, rng, true);
  };
  const auto rep = nn::grad_check(den.params(), loss, grads, 0.0009765625, 24);
  INFO("worst ", rep.worst_param, " err ", rep.max_rel_err);
  CHECK(rep.max_rel_err < 1e-3);
  CHECK_FALSE(rep.nonfinite);
}

TEST_CASE("sample_ddim: deterministic under a fixed seed") {
  const Denoiser den(53);
  const NoiseSchedule sched;
  const LatentCodec codec;
  const LatentStats stats = LatentStats::identity();
  const world::Scene s = testutil::basic_scene();
  const bsb::BSB plan = plan_basic(s);
  const world::Video a = sample_ddim(den, sched, codec, stats, plan, s, 10, 4242);
  const world::Video b = sample_ddim(den, sched, codec, stats, plan, s, 10, 4242);
  CHECK(a.frames.same_bytes(b.frames));
  CHECK(a.t() == world::kFrames);
  for (int64_t i = 0; i < a.frames.numel(); ++i) {
    CHECK(a.frames[i] >= 0.0f);
    CHECK(a.frames[i] <= 1.0f);
  }
}

TEST_CASE("sample_stochastic: recorded log-density is self-consistent") {
  const Denoiser den(54);
  const NoiseSchedule sched;
  const LatentCodec codec;
  const LatentStats stats = LatentStats::identity();
  const world::Scene s = testutil::basic_scene();
  const bsb::BSB plan = plan_basic(s);
  const StochasticRollout r = sample_stochastic(den, sched, codec, stats, plan, s, 6, 77);
  CHECK(r.draws.size() == 5);  // last hop is deterministic
  const double recomputed = rollout_logprob(den, sched, r);
  CHECK(testutil::near(recomputed, r.logprob_sum, 1e-4));
}

TEST_CASE("sample_stochastic: eta -> 0 reduces to the DDIM output") {
  const Denoiser den(55);
  const NoiseSchedule sched;
  const LatentCodec codec;
  const LatentStats stats = LatentStats::identity();
  const world::Scene s = testutil::basic_scene();
  const bsb::BSB plan = plan_basic(s);
  const StochasticRollout r = sample_stochastic(den, sched, codec, stats, plan, s, 10, 31, 0.0);
  const world::Video d = sample_ddim(den, sched, codec, stats, plan, s, 10, 31);
  CHECK(r.draws.empty());
  for (int64_t i = 0; i < d.frames.numel(); ++i)
    CHECK(testutil::near(r.video.frames[i], d.frames[i], 1e-5));
}

TEST_CASE("sample_stochastic: perturbed-params ratio matches the per-step product") {
  const Denoiser den(56);
  Denoiser other(57);
  const NoiseSchedule sched;
  const LatentCodec codec;
  const LatentStats stats = LatentStats::identity();
  const world::Scene s = testutil::basic_scene();
  const bsb::BSB plan = plan_basic(s);
  const StochasticRollout r = sample_stochastic(den, sched, codec, stats, plan, s, 3, 99);
  REQUIRE(r.draws.size() == 2);

  // brute-force per-step density product under both parameter sets
  auto step_logp = [&](const Denoiser& d, size_t k) {
    const int t = r.step_ts[k];
    const double ab = sched.alpha_bars[static_cast<size_t>(t)];
    const double ab_prev = sched.alpha_bars[static_cast<size_t>(r.next_ts[k])];
    const double sigma = r.sigmas[k];
    const double c0 = 1.0 / std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    const double a0 = std::sqrt(ab_prev);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    const Tensor eps = d.denoise(r.states[k], t, &r.guidance);
    Tensor mean(eps.shape());
    for (int64_t i = 0; i < mean.numel(); ++i)
      mean[i] = static_cast<float>(a0 * c0) * r.states[k][i] +
                static_cast<float>(dir - a0 * c0 * c1) * eps[i];
    return numerics::gaussian_logpdf(
        std::span<const float>(r.draws[k].data(), static_cast<size_t>(r.draws[k].numel())),
        std::span<const float>(mean.data(), static_cast<size_t>(mean.numel())), sigma * sigma);
  };
  double manual_theta = 0.0, manual_other = 0.0;
  for (size_t k = 0; k < r.draws.size(); ++k) {
    manual_theta += step_logp(den, k);
    manual_other += step_logp(other, k);
  }
  const double lp_theta = rollout_logprob(den, sched, r);
  const double lp_other = rollout_logprob(other, sched, r);
  CHECK(lp_other != lp_theta);
  CHECK(testutil::near(lp_theta, manual_theta, 1e-6));
  CHECK(testutil::near(lp_other, manual_other, 1e-6));
  // ratio consistency: exp(delta) vs the product of per-step densities
  const double log_ratio = lp_other - lp_theta;
  const double manual_log_ratio = manual_other - manual_theta;
  CHECK(testutil::near(std::exp(log_ratio - manual_log_ratio), 1.0, 1e-4));
}

TEST_CASE("checkpoint: save/load round-trips parameters and stats") {
  testutil::TmpDir tmp("ckpt");
  Checkpoint ck;
  ck.denoiser = Denoiser(123);
  ck.stats = LatentStats::identity();
  ck.stats.mean[0] = 0.25f;
  ck.stats.std[3] = 2.5f;
  ck.lineage = {{"master_seed", 7}, {"path", "test"}};
  ck.save(tmp.path);
  const Checkpoint back = Checkpoint::load(tmp.path);
  REQUIRE(back.denoiser.params().entries.size() == ck.denoiser.params().entries.size());
  for (size_t i = 0; i < back.denoiser.params().entries.size(); ++i)
    CHECK(back.denoiser.params().entries[i].value.same_bytes(
        ck.denoiser.params().entries[i].value));
  CHECK(back.stats.mean[0] == 0.25f);
  CHECK(back.stats.std[3] == 2.5f);
}
