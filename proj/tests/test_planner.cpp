#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "hierogen/planner.hpp"
#include "test_util.hpp"

using namespace hierogen;
using namespace hierogen::planner;

TEST_CASE("parse: single put command") {
  const world::Scene s = testutil::basic_scene();
  const auto tasks = parse("put red_circle to bin", s);
  REQUIRE(tasks.size() == 1);
  CHECK(tasks[0].action == bsb::SubTask::Action::PickPlace);
  CHECK(tasks[0].object == "red_circle");
  CHECK(tasks[0].dest_zone == "bin");
}

TEST_CASE("parse: two commands in textual order") {
  const world::Scene s = testutil::basic_scene();
  const auto tasks = parse("put red_circle to bin ; push blue_square to tray", s);
  REQUIRE(tasks.size() == 2);
  CHECK(tasks[0].object == "red_circle");
  CHECK(tasks[1].object == "blue_square");
  CHECK(tasks[1].action == bsb::SubTask::Action::Push);
}

TEST_CASE("parse: clear-the-table macro expands per object ordered by id") {
  const world::Scene s = testutil::basic_scene();
  const auto tasks = parse("clear the table", s);
  REQUIRE(tasks.size() == s.objects.size());
  CHECK(tasks[0].object == "blue_square");  // lexicographic id order
  CHECK(tasks[1].object == "red_circle");
  for (const auto& t : tasks) {
    CHECK(t.dest_zone == "bin");
    CHECK(t.action == bsb::SubTask::Action::PickPlace);
  }
}

TEST_CASE("parse: errors name the offending token") {
  const world::Scene s = testutil::basic_scene();
  auto expect_token = [&](const std::string& text, const std::string& token) {
    try {
      parse(text, s);
      FAIL("expected parse error for: " << text);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Parse);
      CHECK(std::string(e.what()).find(token) != std::string::npos);
    }
  };
  expect_token("grab red_circle to bin", "grab");
  expect_token("put green_circle to bin", "green_circle");
  expect_token("put red_circle to shelf", "shelf");
}

TEST_CASE("parse: canonical printer round-trips") {
  const world::Scene s = testutil::basic_scene();
  const auto tasks = parse("put red_circle to bin ; push blue_square to 20,40", s);
  const auto again = parse(to_text(tasks), s);
  REQUIRE(again.size() == tasks.size());
  for (size_t i = 0; i < tasks.size(); ++i) {
    CHECK(again[i].action == tasks[i].action);
    CHECK(again[i].object == tasks[i].object);
    CHECK(again[i].dest_zone == tasks[i].dest_zone);
    if (tasks[i].dest_point) {
      REQUIRE(again[i].dest_point.has_value());
      CHECK(again[i].dest_point->x == tasks[i].dest_point->x);
      CHECK(again[i].dest_point->y == tasks[i].dest_point->y);
    }
  }
}

TEST_CASE("affordance: registered object returns pos + offset exactly") {
  world::Scene s = testutil::basic_scene();
  s.objects[0].interaction_offset = {2.0f, -1.0f};
  s.validate();
  const auto a = affordance(s, "red_circle");
  CHECK(a.interaction_point.x == s.objects[0].pos.x + 2.0f);
  CHECK(a.interaction_point.y == s.objects[0].pos.y - 1.0f);
  CHECK(a.mask.count() == testutil::brute_force_pixel_count(s.objects[0], 64, 64));
}

TEST_CASE("affordance: zero offset puts the interaction point at the centroid") {
  const world::Scene s = testutil::basic_scene();
  const auto a = affordance(s, "red_circle");
  const Vec2 centroid = a.mask.centroid();
  CHECK(a.interaction_point.dist(centroid) < 0.5f);
}

TEST_CASE("affordance: misspelled id falls back to the color-match centroid") {
  const world::Scene s = testutil::basic_scene();
  const auto a = affordance(s, "red_circl");
  // brute-force centroid of color-keyed pixels
  const world::BitMask m = world::object_mask(s, "red_circle");
  CHECK(a.interaction_point.dist(m.centroid()) < 1.0f);
  CHECK_THROWS_AS(affordance(s, "mauve_blob"), Error);
}

TEST_CASE("bezier: collinear control points stay on the segment") {
  const Vec2 p0{4, 4}, p3{40, 22};
  const Vec2 p1 = p0 + (p3 - p0) * (1.0f / 3.0f);
  const Vec2 p2 = p0 + (p3 - p0) * (2.0f / 3.0f);
  const auto pts = bezier_points(p0, p1, p2, p3, 17);
  for (const Vec2 p : pts) {
    // distance to the line through p0,p3
    const Vec2 d = p3 - p0;
    const float cross = (p.x - p0.x) * d.y - (p.y - p0.y) * d.x;
    CHECK(std::abs(cross) / d.norm() < 1e-4f);
  }
}

TEST_CASE("bezier: endpoints are exact at t=0 and t=1") {
  const Vec2 p0{1.25f, 2.5f}, p1{10, 0}, p2{20, 40}, p3{33.75f, 17.5f};
  const auto pts = bezier_points(p0, p1, p2, p3, 9);
  CHECK(pts.front().x == p0.x);
  CHECK(pts.front().y == p0.y);
  CHECK(pts.back().x == p3.x);
  CHECK(pts.back().y == p3.y);
}

TEST_CASE("plan_trajectory: output satisfies all invariants and the sweep oracle") {
  Rng rng(101);
  int planned = 0;
  for (int rep = 0; rep < 30; ++rep) {
    world::Scene s = testutil::basic_scene();
    s.objects[1].pos = {static_cast<float>(rng.uniform(12, 52)),
                        static_cast<float>(rng.uniform(12, 30))};
    try {
      s.validate();
    } catch (const Error&) {
      continue;
    }
    bsb::SubTask st;
    st.object = "red_circle";
    st.dest_zone = "bin";
    bsb::BSB plan;
    try {
      plan = plan_trajectory(s, st, fit_phase_counts(s, st, {}));
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::PlanInfeasible);
      continue;
    }
    ++planned;
    CHECK(bsb::validate(plan, s).empty());
    CHECK_FALSE(testutil::sweep_collides_masks(s, plan));
    // determinism: same inputs, identical bytes
    const bsb::BSB again = plan_trajectory(s, st, fit_phase_counts(s, st, {}));
    CHECK(bsb::serialize(again) == bsb::serialize(plan));
  }
  CHECK(planned >= 12);
}

TEST_CASE("plan_trajectory: destination inside another object's footprint is infeasible") {
  world::Scene s = testutil::basic_scene();
  // blue square sits exactly on the bin center
  s.objects[1].pos = s.find_zone("bin")->center();
  s.validate();
  bsb::SubTask st;
  st.object = "red_circle";
  st.dest_zone = "bin";
  CHECK_THROWS_AS(plan_trajectory(s, st, {}), Error);
}

TEST_CASE("refine: already collision-free attempts come back unchanged") {
  const world::Scene s = testutil::basic_scene();
  PlanAttempt a;
  a.p0 = s.objects[0].interaction_point();
  a.p3 = s.find_zone("bin")->center();
  a.p1 = a.p0 + (a.p3 - a.p0) * (1.0f / 3.0f);
  a.p2 = a.p0 + (a.p3 - a.p0) * (2.0f / 3.0f);
  a.collision_free = true;
  a.iterations_used = 0;
  const PlanAttempt r = refine(s, s.objects[0], a, 17);
  CHECK(r.collision_free);
  CHECK(r.iterations_used == 0);
  CHECK(r.p1.x == a.p1.x);
  CHECK(r.p2.y == a.p2.y);
}

TEST_CASE("refine: single obstacle on the chord is cleared at d=6 or 12") {
  world::Scene s = testutil::basic_scene();
  // obstacle square on the chord midpoint, modest size: 6 px of clearance works
  const Vec2 ip = s.objects[0].interaction_point();
  const Vec2 dest = s.find_zone("bin")->center();
  s.objects[1].shape = world::Shape::Square;
  s.objects[1].size = 2.0f;
  s.objects[1].pos = {(ip.x + dest.x) / 2, (ip.y + dest.y) / 2};
  s.validate();
  PlanAttempt a;
  a.p0 = ip;
  a.p3 = dest;
  a.p1 = a.p0 + (a.p3 - a.p0) * (1.0f / 3.0f);
  a.p2 = a.p0 + (a.p3 - a.p0) * (2.0f / 3.0f);
  const PlanAttempt r = refine(s, s.objects[0], a, 17);
  CHECK(r.collision_free);
  CHECK(r.iterations_used <= 4);  // +-6 then +-12
  // verify against the brute-force sweep oracle
  bsb::BSB plan;
  plan.meta = bsb::SubTask{bsb::SubTask::Action::PickPlace, "red_circle", "bin", std::nullopt};
  plan.traj_interact = bezier_points(r.p0, r.p1, r.p2, r.p3, 17);
  CHECK_FALSE(testutil::sweep_collides_masks(s, plan));
}

TEST_CASE("refine: fully blocked corridor exhausts exactly the iteration budget") {
  world::Scene s;
  // wall of squares across the whole arena between start and goal
  const auto& pal = world::palette();
  world::ObjectSpec carried;
  carried.id = "red_circle";
  carried.shape = world::Shape::Circle;
  carried.size = 4.0f;
  carried.color = pal[0].rgb;
  carried.pos = {32.0f, 6.0f};
  s.objects.push_back(carried);
  for (int i = 0; i < 5; ++i) {
    world::ObjectSpec wall;
    wall.id = "wall" + std::to_string(i);
    wall.shape = world::Shape::Square;
    wall.size = 6.0f;
    wall.color = pal[static_cast<size_t>(i + 1)].rgb;
    wall.pos = {6.0f + 12.9f * static_cast<float>(i), 32.0f};
    s.objects.push_back(wall);
  }
  s.validate();
  PlanAttempt a;
  a.p0 = {32.0f, 6.0f};
  a.p3 = {32.0f, 58.0f};
  a.p1 = a.p0 + (a.p3 - a.p0) * (1.0f / 3.0f);
  a.p2 = a.p0 + (a.p3 - a.p0) * (2.0f / 3.0f);
  const PlanAttempt r = refine(s, s.objects[0], a, 17);
  CHECK_FALSE(r.collision_free);
  CHECK(r.iterations_used == kMaxRefineIters);
}
