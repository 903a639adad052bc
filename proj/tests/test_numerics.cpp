#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "hierogen/numerics.hpp"
#include "hierogen/tape.hpp"
#include "test_util.hpp"

using namespace hierogen;
using namespace hierogen::numerics;

TEST_CASE("softmax: equal inputs give uniform weights") {
  std::vector<double> v(16, 0.37);
  const auto w = softmax(v, 0.5);
  for (double x : w) CHECK(x == doctest::Approx(1.0 / 16).epsilon(1e-12));
  double sum = 0.0;
  for (double x : w) sum += x;
  CHECK(testutil::near(sum, 1.0, 1e-6));
}

TEST_CASE("softmax: hand oracle e/(1+e)") {
  std::vector<double> v{0.0, 1.0};
  const auto w = softmax(v, 1.0);
  CHECK(w[0] == doctest::Approx(0.26894).epsilon(1e-4));
  CHECK(w[1] == doctest::Approx(0.73106).epsilon(1e-4));
}

TEST_CASE("softmax: temperature to zero concentrates on the argmax") {
  std::vector<double> v{0.3, 0.4, 0.2};
  const auto w = softmax(v, 1e-3);
  CHECK(w[1] > 0.999);
}

TEST_CASE("softmax: sums to one across temperatures and random inputs") {
  Rng rng(11);
  for (double tau : {1e-3, 0.1, 1.0, 1e3}) {
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> v(1 + static_cast<size_t>(rng.uniform_int(0, 30)));
      for (double& x : v) x = rng.uniform(-50.0, 50.0);
      const auto w = softmax(v, tau);
      double sum = 0.0;
      for (double x : w) {
        CHECK(x >= 0.0);
        sum += x;
      }
      CHECK(testutil::near(sum, 1.0, 1e-6));
    }
  }
}

TEST_CASE("softmax: rejects non-positive temperature") {
  std::vector<double> v{1.0};
  CHECK_THROWS_AS(softmax(v, 0.0), Error);
  CHECK_THROWS_AS(softmax(v, -1.0), Error);
}

TEST_CASE("cosine_sim: identity, orthogonality, hand oracle") {
  std::vector<float> a{1.0f, 2.0f, -3.0f};
  CHECK(cosine_sim(a, a) == doctest::Approx(1.0).epsilon(1e-6));
  std::vector<float> e1{1.0f, 0.0f}, e2{0.0f, 1.0f};
  CHECK(cosine_sim(e1, e2) == doctest::Approx(0.0));
  std::vector<float> b{1.0f, 1.0f};
  CHECK(cosine_sim(e1, b) == doctest::Approx(0.70711).epsilon(1e-4));
}

TEST_CASE("cosine_sim: scale invariance and degenerate norm") {
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<float> a(8), b(8);
    for (auto& x : a) x = static_cast<float>(rng.normal());
    for (auto& x : b) x = static_cast<float>(rng.normal());
    const double c = cosine_sim(a, b);
    CHECK(std::abs(c) <= 1.0 + 1e-6);
    std::vector<float> a2 = a;
    for (auto& x : a2) x *= 7.25f;
    CHECK(cosine_sim(a2, b) == doctest::Approx(c).epsilon(1e-5));
    CHECK(cosine_sim(b, a) == doctest::Approx(c).epsilon(1e-12));
  }
  std::vector<float> z(4, 0.0f), y{1.0f, 0.0f, 0.0f, 0.0f};
  CHECK(cosine_sim(z, y) == 0.0);
}

TEST_CASE("gaussian_logpdf: closed-form values and additivity") {
  std::vector<float> x{0.0f}, m{0.0f};
  CHECK(gaussian_logpdf(x, m, 1.0) == doctest::Approx(-0.91894).epsilon(1e-4));
  std::vector<float> x2{0.0f, 0.0f}, m2{0.0f, 0.0f};
  CHECK(gaussian_logpdf(x2, m2, 1.0) ==
        doctest::Approx(2.0 * gaussian_logpdf(x, m, 1.0)).epsilon(1e-12));
  std::vector<float> x3{1.0f}, m3{0.0f};
  CHECK(gaussian_logpdf(x3, m3, 1.0) == doctest::Approx(-1.41894).epsilon(1e-4));
  CHECK_THROWS_AS(gaussian_logpdf(x3, m3, 0.0), Error);
}

TEST_CASE("group_norm: zeros, statistics, two-point closed form") {
  Tensor zeros({4, 2, 2});
  const Tensor z = group_norm(zeros, 2);
  CHECK(z.all_zero());

  Rng rng(5);
  Tensor x({8, 4, 4});
  for (int64_t i = 0; i < x.numel(); ++i)
    x[i] = static_cast<float>(3.0 + 2.0 * rng.normal());
  const Tensor y = group_norm(x, 2);
  // per-group mean ~0 and variance ~1
  for (int g = 0; g < 2; ++g) {
    double sum = 0.0, sq = 0.0;
    for (int c = g * 4; c < (g + 1) * 4; ++c)
      for (int p = 0; p < 16; ++p) {
        const float v = y[c * 16 + p];
        sum += v;
        sq += static_cast<double>(v) * v;
      }
    const double mean = sum / 64.0;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(testutil::near(sq / 64.0 - mean * mean, 1.0, 1e-4));
  }

  Tensor two({1, 1, 2});
  two[0] = 10.0f;
  two[1] = -10.0f;
  const Tensor t2 = group_norm(two, 1);
  CHECK(t2[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(t2[1] == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("group_norm: invariant to a per-group constant shift") {
  Rng rng(17);
  Tensor x({4, 3, 3});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
  Tensor shifted = x;
  for (int c = 0; c < 2; ++c)
    for (int p = 0; p < 9; ++p) shifted[c * 9 + p] += 5.0f;
  for (int c = 2; c < 4; ++c)
    for (int p = 0; p < 9; ++p) shifted[c * 9 + p] -= 3.0f;
  const Tensor a = group_norm(x, 2);
  const Tensor b = group_norm(shifted, 2);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(testutil::near(a[i], b[i], 1e-5));
}

TEST_CASE("group_norm: rejects indivisible groups") {
  Tensor x({3, 2, 2});
  CHECK_THROWS_AS(group_norm(x, 2), Error);
}

TEST_CASE("HGT1 round-trip is bit exact") {
  testutil::TmpDir tmp("hgt1");
  Rng rng(23);
  Tensor t = Tensor::randn({3, 5, 2}, rng);
  save_hgt1(tmp.path / "t.hgt", t);
  const Tensor back = load_hgt1(tmp.path / "t.hgt");
  CHECK(back.same_bytes(t));
}

TEST_CASE("HGT1 rejects bad magic") {
  testutil::TmpDir tmp("hgt1bad");
  std::ofstream(tmp.path / "x.hgt") << "NOPE";
  CHECK_THROWS_AS(load_hgt1(tmp.path / "x.hgt"), Error);
}

TEST_CASE("solve_spd solves a known ridge system") {
  // A = [[2,1],[1,3]], B = identity: X = (A+I)^-1
  std::vector<double> a{2, 1, 1, 3};
  std::vector<double> b{1, 0, 0, 1};
  std::vector<double> x;
  solve_spd(a, 2, b, 2, 1.0, x);
  // (A+I) = [[3,1],[1,4]], inverse = 1/11 [[4,-1],[-1,3]]
  CHECK(x[0] == doctest::Approx(4.0 / 11).epsilon(1e-12));
  CHECK(x[1] == doctest::Approx(-1.0 / 11).epsilon(1e-12));
  CHECK(x[2] == doctest::Approx(-1.0 / 11).epsilon(1e-12));
  CHECK(x[3] == doctest::Approx(3.0 / 11).epsilon(1e-12));
}

// --- tape: every primitive validated against central differences ---

namespace {

double quadratic_loss(nn::ParamStore& ps) {
  nn::GradTape tape(&ps);
  nn::Var w = tape.param(0);
  return tape.scalar(tape.sum(tape.mul(w, w)));
}

}  // namespace

TEST_CASE("grad_check: quadratic and linear exactness") {
  nn::ParamStore ps;
  ps.add("w", Tensor({1}, {3.0f}));
  auto loss = [&] { return quadratic_loss(ps); };
  auto grads = [&] {
    ps.zero_grad();
    nn::GradTape tape(&ps);
    nn::Var w = tape.param(0);
    nn::Var l = tape.sum(tape.mul(w, w));
    tape.backward(l);
  };
  const auto rep = grad_check(ps, loss, grads, 0.0009765625);  // 2^-10: exact in f32
  CHECK(ps.entries[0].grad[0] == doctest::Approx(6.0).epsilon(1e-6));
  CHECK(rep.max_rel_err < 1e-6);

  nn::ParamStore lin;
  lin.add("w", Tensor({4}, {1.0f, -2.0f, 0.5f, 3.0f}));
  auto lloss = [&] {
    nn::GradTape tape(&lin);
    return tape.scalar(tape.sum(tape.scale(tape.param(0), 2.5)));
  };
  auto lgrads = [&] {
    lin.zero_grad();
    nn::GradTape tape(&lin);
    nn::Var l = tape.sum(tape.scale(tape.param(0), 2.5));
    tape.backward(l);
  };
  const auto lrep = grad_check(lin, lloss, lgrads, 0.0009765625);
  CHECK(lrep.max_rel_err < 1e-6);
}

TEST_CASE("tape: composite net over every primitive passes grad check") {
  // small shapes: frames=2, tokens=4 (2x2), channels=6, groups=2
  const int frames = 2, h = 2, w = 2, s = h * w, cin = 3, ch = 6;
  Rng rng(31);
  nn::ParamStore ps;
  ps.add("embed", Tensor::randn({cin, ch}, rng, 0.4f));
  ps.add("bias", Tensor::randn({ch}, rng, 0.2f));
  ps.add("table", Tensor::randn({5, ch}, rng, 0.3f));
  ps.add("gs", Tensor::randn({ch, cin, 3, 3}, rng, 0.3f));
  ps.add("gt", Tensor::randn({ch, ch, 3}, rng, 0.3f));
  ps.add("mix", Tensor::randn({s, s}, rng, 0.3f));
  ps.add("mixb", Tensor::randn({s}, rng, 0.2f));
  ps.add("w1", Tensor::randn({ch, 2 * ch}, rng, 0.3f));
  ps.add("w2", Tensor::randn({2 * ch, ch}, rng, 0.3f));
  ps.add("head", Tensor::randn({ch, cin}, rng, 0.3f));

  Tensor x({frames * s, cin});
  Tensor g({frames, cin, h, w});
  Tensor target({frames * s, cin});
  Rng drng(57);
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(drng.normal());
  for (int64_t i = 0; i < g.numel(); ++i) g[i] = static_cast<float>(drng.normal());
  for (int64_t i = 0; i < target.numel(); ++i) target[i] = static_cast<float>(drng.normal());

  auto forward = [&](bool want_grads) {
    nn::GradTape tape(&ps);
    nn::Var gs = tape.conv2d3(tape.leaf(g), tape.param(3));
    gs = tape.silu(gs);
    nn::Var gt = tape.conv1d_temporal(gs, tape.param(4));
    nn::Var gtok = tape.tokens_from_chw(gt);

    nn::Var hvar = tape.matmul(tape.leaf(x), tape.param(0));
    hvar = tape.add_row_vec(hvar, tape.param(1));
    hvar = tape.add_row_vec(hvar, tape.gather_row(tape.param(2), 3));
    nn::Var gn = tape.group_norm_tokens(gtok, frames, 2, 1e-5f);
    hvar = tape.add(hvar, tape.mul(gn, gtok));
    nn::Var mix = tape.mixer(hvar, tape.param(5), frames);
    mix = tape.add_token_bias(mix, tape.param(6), frames);
    hvar = tape.add(hvar, mix);
    nn::Var m1 = tape.silu(tape.matmul(hvar, tape.param(7)));
    hvar = tape.add(hvar, tape.matmul(m1, tape.param(8)));
    nn::Var out = tape.matmul(hvar, tape.param(9));
    nn::Var diff = tape.sub(out, tape.leaf(target));
    nn::Var loss = tape.saddc(tape.sscale(tape.sexp(tape.sscale(tape.mean(tape.mul(diff, diff)), 0.1)), 2.0), -1.0);
    if (want_grads) tape.backward(loss);
    return tape.scalar(loss);
  };
  auto loss = [&] { return forward(false); };
  auto grads = [&] {
    ps.zero_grad();
    forward(true);
  };
  const auto rep = grad_check(ps, loss, grads, 1e-3);
  INFO("worst: ", rep.worst_param, " err ", rep.max_rel_err);
  CHECK(rep.max_rel_err < 1e-3);
  CHECK_FALSE(rep.nonfinite);
}

TEST_CASE("tape: backward visits each op once (gradient accumulation is exact)") {
  // y = sum(w + w): dy/dw = 2 exactly
  nn::ParamStore ps;
  ps.add("w", Tensor({3}, {1.0f, 2.0f, 3.0f}));
  nn::GradTape tape(&ps);
  nn::Var w = tape.param(0);
  nn::Var l = tape.sum(tape.add(w, w));
  tape.backward(l);
  for (int i = 0; i < 3; ++i) CHECK(ps.entries[0].grad[i] == doctest::Approx(2.0));
}

TEST_CASE("adam: zero gradient leaves parameters exactly unchanged") {
  nn::ParamStore ps;
  ps.add("w", Tensor({4}, {1.0f, -1.0f, 0.5f, 2.0f}));
  const Tensor before = ps.entries[0].value;
  nn::Adam opt(&ps, 1e-2);
  ps.zero_grad();
  opt.step();
  CHECK(ps.entries[0].value.same_bytes(before));
}

TEST_CASE("adam: descends a quadratic") {
  nn::ParamStore ps;
  ps.add("w", Tensor({1}, {3.0f}));
  nn::Adam opt(&ps, 0.05);
  for (int it = 0; it < 400; ++it) {
    ps.zero_grad();
    nn::GradTape tape(&ps);
    nn::Var l = tape.sum(tape.mul(tape.param(0), tape.param(0)));
    tape.backward(l);
    opt.step();
  }
  CHECK(std::abs(ps.entries[0].value[0]) < 1e-2);
}
