#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "hierogen/annotator.hpp"
#include "hierogen/planner.hpp"
#include "test_util.hpp"

using namespace hierogen;
using namespace hierogen::annotator;

namespace {

world::Video repeat_frame(const world::Scene& s, int t) {
  world::Video v;
  const Tensor f = world::render(s);
  v.frames = Tensor({t, 3, s.height, s.width});
  for (int i = 0; i < t; ++i)
    std::copy(f.data(), f.data() + f.numel(), v.frames.data() + static_cast<int64_t>(i) * f.numel());
  return v;
}

world::Video oracle_pickplace(const world::Scene& s, bsb::BSB* plan_out, world::Scene* final_out) {
  bsb::SubTask st;
  st.object = "red_circle";
  st.dest_zone = "bin";
  const auto pc = planner::fit_phase_counts(s, st, {});
  bsb::BSB plan = planner::plan_trajectory(s, st, pc);
  world::Scene fin;
  world::Video v = world::execute_plan(s, plan, &fin);
  if (plan_out) *plan_out = std::move(plan);
  if (final_out) *final_out = fin;
  return v;
}

}  // namespace

TEST_CASE("track: static object centroid is constant within 0.5 px") {
  const world::Scene s = testutil::basic_scene();
  const world::Video v = repeat_frame(s, 12);
  const Track tr = track(v, s.objects[0].color);
  for (int f = 0; f < tr.length(); ++f) {
    CHECK(tr.visible[static_cast<size_t>(f)]);
    CHECK(tr.centroids[static_cast<size_t>(f)].dist(tr.centroids[0]) <= 0.5f);
  }
}

TEST_CASE("track: pick-place endpoint lands within 1 px of the oracle state") {
  const world::Scene s = testutil::basic_scene();
  bsb::BSB plan;
  world::Scene fin;
  const world::Video v = oracle_pickplace(s, &plan, &fin);
  const Track tr = track(v, s.objects[0].color);
  CHECK(tr.centroids.back().dist(fin.objects[0].pos) <= 1.0f);
}

TEST_CASE("track: absent color raises not-found") {
  const world::Scene s = testutil::basic_scene();
  const world::Video v = repeat_frame(s, 5);
  CHECK_THROWS_AS(track(v, world::palette_lookup("green")->rgb), Error);
}

TEST_CASE("segment_phases: onset/offset hand walk") {
  // 37 centroids: 9 zero displacements, 10 steps of 2 px, 17 zeros
  Track tr;
  float x = 10.0f;
  for (int f = 0; f < 37; ++f) {
    if (f >= 10 && f <= 19) x += 2.0f;
    tr.centroids.push_back({x, 20.0f});
    tr.visible.push_back(true);
  }
  const auto [pre, interact, post] = segment_phases(tr, 0.5f);
  CHECK(pre == 10);
  CHECK(interact == 10);
  CHECK(post == 17);
}

TEST_CASE("segment_phases: fully static track degenerates to (T-2,1,1)") {
  Track tr;
  for (int f = 0; f < 37; ++f) {
    tr.centroids.push_back({11.0f, 5.0f});
    tr.visible.push_back(true);
  }
  const auto [pre, interact, post] = segment_phases(tr, 0.5f);
  CHECK(pre == 35);
  CHECK(interact == 1);
  CHECK(post == 1);
}

TEST_CASE("segment_phases: motion through the last frame clamps each phase to >= 1") {
  Track tr;
  float x = 2.0f;
  for (int f = 0; f < 37; ++f) {
    tr.centroids.push_back({x, 8.0f});
    x += 1.5f;
    tr.visible.push_back(true);
  }
  const auto [pre, interact, post] = segment_phases(tr, 0.5f);
  CHECK(pre == 1);
  CHECK(interact == 35);
  CHECK(post == 1);
}

TEST_CASE("annotate: plan -> oracle execute -> annotate round-trip") {
  const world::Scene s = testutil::basic_scene();
  bsb::BSB plan;
  const world::Video v = oracle_pickplace(s, &plan, nullptr);
  const bsb::BSB rec = annotate(v, "put red_circle to bin", s);

  CHECK(std::abs(rec.phase_counts.pre - plan.phase_counts.pre) <= 1);
  CHECK(std::abs(rec.phase_counts.interact - plan.phase_counts.interact) <= 1);
  CHECK(std::abs(rec.phase_counts.post - plan.phase_counts.post) <= 1);
  CHECK(rec.traj_interact.back().dist(plan.traj_interact.back()) <= 1.5f);
  CHECK(rec.phase_counts.total() == world::kFrames);

  // deterministic: same video bytes, same annotation bytes
  const bsb::BSB rec2 = annotate(v, "put red_circle to bin", s);
  CHECK(bsb::serialize(rec2) == bsb::serialize(rec));
}

TEST_CASE("annotate: static video degenerates but stays total") {
  const world::Scene s = testutil::basic_scene();
  const world::Video v = repeat_frame(s, world::kFrames);
  const bsb::BSB rec = annotate(v, "put red_circle to bin", s);
  CHECK(rec.phase_counts.pre == 35);
  CHECK(rec.phase_counts.interact == 1);
  CHECK(rec.phase_counts.post == 1);
  for (size_t i = 1; i < rec.traj_pre.size(); ++i)
    CHECK(rec.traj_pre[i].dist(rec.traj_pre[0]) <= 0.5f);
}

TEST_CASE("annotate: instruction object missing from the video fails") {
  world::Scene with_ghost = testutil::basic_scene();
  world::ObjectSpec ghost;
  ghost.id = "green_circle";
  ghost.shape = world::Shape::Circle;
  ghost.size = 4.0f;
  ghost.color = world::palette_lookup("green")->rgb;
  ghost.pos = {54.0f, 10.0f};
  with_ghost.objects.push_back(ghost);
  with_ghost.validate();

  const world::Scene plain = testutil::basic_scene();
  const world::Video v = repeat_frame(plain, world::kFrames);  // no green pixels
  try {
    annotate(v, "put green_circle to bin", with_ghost);
    FAIL("expected annotation failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::AnnotationFailed);
  }
}

TEST_CASE("track_similarity: agrees with the strict tracker on oracle videos") {
  const world::Scene s = testutil::basic_scene();
  bsb::BSB plan;
  const world::Video v = oracle_pickplace(s, &plan, nullptr);
  const Track strict = track(v, s.objects[0].color);
  const Track soft = track_similarity(v, s.objects[0].color, {s.objects[1].color});
  for (int f = 0; f < v.t(); ++f) {
    CHECK(soft.visible[static_cast<size_t>(f)]);
    CHECK(soft.centroids[static_cast<size_t>(f)].dist(strict.centroids[static_cast<size_t>(f)]) <=
          0.75f);
  }
}

TEST_CASE("track_similarity: survives block-mean decoding of an oracle video") {
  const world::Scene s = testutil::basic_scene();
  bsb::BSB plan;
  world::Scene fin;
  const world::Video v = oracle_pickplace(s, &plan, &fin);
  const generator::LatentCodec codec;
  const world::Video lossy = codec.decode(codec.encode(v));
  const Track soft = track_similarity(lossy, s.objects[0].color, {s.objects[1].color});
  bool any = false;
  for (bool vis : soft.visible) any = any || vis;
  REQUIRE(any);
  Vec2 last{};
  for (int f = 0; f < soft.length(); ++f)
    if (soft.visible[static_cast<size_t>(f)]) last = soft.centroids[static_cast<size_t>(f)];
  CHECK(last.dist(fin.objects[0].pos) <= 5.0f);  // block-quantized position
}
