#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "hierogen/corpus.hpp"
#include "hierogen/rollouts.hpp"
#include "test_util.hpp"

using namespace hierogen;
using namespace hierogen::rollouts;

namespace {

reward::WorldModel fitted_wm(uint64_t seed) {
  std::vector<world::Video> vids;
  corpus::GenDataConfig cfg;
  for (int i = 0; i < 50; ++i)
    vids.push_back(
        corpus::generate_item(derive_seed(seed, "wm", static_cast<uint64_t>(i)), cfg, {}).videos.front());
  std::vector<const world::Video*> ptrs;
  for (const auto& v : vids) ptrs.push_back(&v);
  return reward::fit_world_model(ptrs, 1e-3, reward::PFCConfig{});
}

bsb::SubTask task_red_to_bin() {
  bsb::SubTask st;
  st.object = "red_circle";
  st.dest_zone = "bin";
  return st;
}

GenerateFn oracle_generator() {
  return [](const bsb::BSB& plan, const world::Scene& scene, uint64_t) {
    return world::execute_plan(scene, plan);
  };
}

}  // namespace

TEST_CASE("propose: K=3 candidates are strategically diverse") {
  const world::Scene s = testutil::basic_scene();
  const auto st = task_red_to_bin();
  const auto pc = planner::fit_phase_counts(s, st, {});
  const auto plans = propose(s, st, 3, std::nullopt, pc);
  REQUIRE(plans.size() == 3);
  for (size_t a = 0; a < plans.size(); ++a)
    for (size_t b = a + 1; b < plans.size(); ++b) {
      float max_dev = 0.0f;
      for (size_t i = 0; i < plans[a].traj_interact.size(); ++i)
        max_dev = std::max(max_dev, plans[a].traj_interact[i].dist(plans[b].traj_interact[i]));
      CHECK(max_dev >= 4.0f);
    }
  // all candidates aim exactly at the destination center
  const Vec2 dest = st.resolve_destination(s);
  for (const auto& p : plans) {
    CHECK(p.traj_interact.back().x == dest.x);
    CHECK(p.traj_interact.back().y == dest.y);
  }
}

TEST_CASE("propose: K=1 degenerates to the single chord plan") {
  const world::Scene s = testutil::basic_scene();
  const auto st = task_red_to_bin();
  const auto pc = planner::fit_phase_counts(s, st, {});
  const auto plans = propose(s, st, 1, std::nullopt, pc);
  REQUIRE(plans.size() == 1);
  const Vec2 a = plans[0].traj_interact.front();
  const Vec2 b = plans[0].traj_interact.back();
  for (const Vec2 p : plans[0].traj_interact) {
    const Vec2 d = b - a;
    const float cross = (p.x - a.x) * d.y - (p.y - a.y) * d.x;
    CHECK(std::abs(cross) / d.norm() < 1e-3f);
  }
}

TEST_CASE("propose: end-position feedback re-aims at the destination center") {
  const world::Scene s = testutil::basic_scene();
  const auto st = task_red_to_bin();
  const auto pc = planner::fit_phase_counts(s, st, {});
  Feedback fb{FeedbackCode::EndPositionError, 6.0, 36};
  const auto plans = propose(s, st, 3, fb, pc);
  const Vec2 dest = st.resolve_destination(s);
  CHECK(plans[0].traj_interact.back().x == dest.x);
  CHECK(plans[0].traj_interact.back().y == dest.y);
}

TEST_CASE("verify: oracle execution of a correct plan scores success") {
  const world::Scene s = testutil::basic_scene();
  const reward::WorldModel wm = fitted_wm(555);
  const auto st = task_red_to_bin();
  const auto pc = planner::fit_phase_counts(s, st, {});
  const bsb::BSB plan = planner::plan_trajectory(s, st, pc);
  const world::Video v = world::execute_plan(s, plan);
  const CandidateScore score = verify(v, st, s, wm, reward::PFCConfig{}, RolloutConfig{});
  CHECK(score.success == 1);
  CHECK(score.composite >= 0.85);
  CHECK(score.feedback.empty());
}

TEST_CASE("verify: object never moves -> object_not_grasped") {
  const world::Scene s = testutil::basic_scene();
  const reward::WorldModel wm = fitted_wm(556);
  world::Video v;
  v.frames = Tensor({world::kFrames, 3, 64, 64});
  const Tensor f = world::render(s);
  for (int i = 0; i < world::kFrames; ++i)
    std::copy(f.data(), f.data() + f.numel(), v.frames.data() + static_cast<int64_t>(i) * f.numel());
  const CandidateScore score = verify(v, task_red_to_bin(), s, wm, reward::PFCConfig{}, RolloutConfig{});
  CHECK(score.success == 0);
  REQUIRE_FALSE(score.feedback.empty());
  CHECK(score.feedback.front().code == FeedbackCode::ObjectNotGrasped);
}

TEST_CASE("verify: correct motion to the wrong endpoint -> end_position_error with distance") {
  world::Scene s = testutil::basic_scene();
  const reward::WorldModel wm = fitted_wm(557);
  // oracle-execute a plan aimed 10 px outside the bin zone
  bsb::SubTask wrong = task_red_to_bin();
  wrong.dest_zone.clear();
  wrong.dest_point = Vec2{42.0f, 32.0f};  // bin is x:[8,32) y:[36,60)
  const auto pc = planner::fit_phase_counts(s, wrong, {});
  const bsb::BSB plan = planner::plan_trajectory(s, wrong, pc);
  const world::Video v = world::execute_plan(s, plan);
  const CandidateScore score = verify(v, task_red_to_bin(), s, wm, reward::PFCConfig{}, RolloutConfig{});
  CHECK(score.success == 0);
  REQUIRE_FALSE(score.feedback.empty());
  CHECK(score.feedback.front().code == FeedbackCode::EndPositionError);
  CHECK(score.feedback.front().distance > 4.0);
}

TEST_CASE("run_stage: oracle generator selects the argmax candidate in round 0") {
  const world::Scene s = testutil::basic_scene();
  const reward::WorldModel wm = fitted_wm(558);
  RolloutConfig cfg;
  const auto st = task_red_to_bin();
  const auto pc = planner::fit_phase_counts(s, st, {});
  const auto outcome =
      run_stage_with(oracle_generator(), s, st, wm, reward::PFCConfig{}, cfg, pc, 777);
  REQUIRE(outcome.result.has_value());
  CHECK(outcome.report.rounds == 1);
  CHECK(outcome.report.generation_calls == cfg.k);
  CHECK(outcome.report.selected_round == 0);
  double best = -1.0;
  for (const auto& c : outcome.report.candidates) best = std::max(best, c.score.composite);
  const auto& sel = outcome.report.candidates[static_cast<size_t>(outcome.report.selected_index)];
  CHECK(sel.score.composite == doctest::Approx(best));
  CHECK(sel.score.success == 1);
}

TEST_CASE("run_stage: unreachable threshold exhausts the replan budget") {
  const world::Scene s = testutil::basic_scene();
  const reward::WorldModel wm = fitted_wm(559);
  RolloutConfig cfg;
  cfg.k = 2;
  // static generator: candidates never succeed
  GenerateFn still = [](const bsb::BSB& plan, const world::Scene& scene, uint64_t) {
    world::Video v;
    const Tensor f = world::render(scene);
    const int t = plan.phase_counts.total();
    v.frames = Tensor({t, 3, scene.height, scene.width});
    for (int i = 0; i < t; ++i)
      std::copy(f.data(), f.data() + f.numel(), v.frames.data() + static_cast<int64_t>(i) * f.numel());
    return v;
  };
  const auto st = task_red_to_bin();
  const auto pc = planner::fit_phase_counts(s, st, {});
  const auto outcome = run_stage_with(still, s, st, wm, reward::PFCConfig{}, cfg, pc, 778);
  CHECK_FALSE(outcome.result.has_value());
  CHECK(outcome.report.rounds == cfg.max_replans + 1);
  CHECK(outcome.report.generation_calls == cfg.k * (cfg.max_replans + 1));
  CHECK_FALSE(outcome.report.success);
}

TEST_CASE("run_long_horizon: one sub-task matches run_stage; three stitch to 111 frames") {
  const world::Scene s = testutil::basic_scene();
  const reward::WorldModel wm = fitted_wm(560);
  RolloutConfig cfg;

  const auto one = run_long_horizon_with(oracle_generator(), s, "put red_circle to bin", wm,
                                         reward::PFCConfig{}, cfg, {}, 900);
  CHECK(one.completed == 1);
  CHECK(one.stitched.t() == world::kFrames);

  // three-object scene for a three-stage chain
  Rng rng(4242);
  world::Scene s3 = corpus::random_scene(rng, 3);
  std::string instruction;
  {
    std::vector<bsb::SubTask> tasks;
    for (const auto& o : s3.objects) {
      bsb::SubTask st;
      st.object = o.id;
      st.dest_zone = s3.zones[0].center().dist(o.pos) >= s3.zones[1].center().dist(o.pos)
                         ? s3.zones[0].name
                         : s3.zones[1].name;
      tasks.push_back(st);
    }
    instruction = planner::to_text(tasks);
  }
  const auto three = run_long_horizon_with(oracle_generator(), s3, instruction, wm,
                                           reward::PFCConfig{}, cfg, {}, 901);
  CHECK(three.attempted == 3);
  if (three.completed == 3) {
    CHECK(three.stitched.t() == 111);
    CHECK(three.stage_peak_bytes.size() == 3);
  }
}

TEST_CASE("advance_scene: tracked object positions land near the oracle state") {
  const world::Scene s = testutil::basic_scene();
  const auto st = task_red_to_bin();
  const auto pc = planner::fit_phase_counts(s, st, {});
  const bsb::BSB plan = planner::plan_trajectory(s, st, pc);
  world::Scene oracle_final;
  const world::Video v = world::execute_plan(s, plan, &oracle_final);
  const world::Scene advanced = advance_scene(s, v, plan);
  CHECK(advanced.find_object("red_circle")->pos.dist(oracle_final.objects[0].pos) <= 1.5f);
  CHECK(advanced.find_object("blue_square")->pos.dist(s.objects[1].pos) <= 1.0f);
  CHECK(advanced.gripper.holding.empty());
}
