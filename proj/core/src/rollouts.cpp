#include "hierogen/rollouts.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "hierogen/annotator.hpp"

namespace hierogen::rollouts {

const char* to_string(FeedbackCode code) {
  switch (code) {
    case FeedbackCode::EndPositionError: return "end_position_error";
    case FeedbackCode::ObjectNotGrasped: return "object_not_grasped";
    case FeedbackCode::CollisionDetected: return "collision_detected";
    case FeedbackCode::PlanInfeasible: return "plan_infeasible";
  }
  return "unknown";
}

std::vector<bsb::BSB> propose(const world::Scene& scene, const bsb::SubTask& subtask, int k,
                              const std::optional<Feedback>& attempt_feedback,
                              const bsb::PhaseCounts& phase_counts) {
  require(k >= 1, ErrorKind::InvalidArgument, "K must be >= 1");
  int min_refine = 6;
  if (attempt_feedback && attempt_feedback->code == FeedbackCode::CollisionDetected)
    min_refine = 12;  // skip the smallest ladder step after a detected collision
  // end_position_error / object_not_grasped corrections re-aim the interact
  // endpoint / pre-phase target, which the deterministic planner already does
  // exactly; the corrective value is in the fresh diverse bundle.

  std::vector<bsb::BSB> out;
  std::string last_error;
  for (int j = 0; j < k; ++j) {
    // candidate bows: 0, +10, -10, +20, -20, ...
    const float bow = j == 0 ? 0.0f
                             : (j % 2 == 1 ? 1.0f : -1.0f) * 10.0f * static_cast<float>((j + 1) / 2);
    try {
      out.push_back(planner::plan_trajectory(scene, subtask, phase_counts, bow, min_refine));
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  require(!out.empty(), ErrorKind::PlanInfeasible,
          "all " + std::to_string(k) + " candidates unplannable: " + last_error);
  return out;
}

CandidateScore verify(const world::Video& video, const bsb::SubTask& subtask,
                      const world::Scene& scene, const reward::WorldModel& world_model,
                      const reward::PFCConfig& pfc_cfg, const RolloutConfig& cfg) {
  CandidateScore score;
  const world::ObjectSpec* obj = scene.find_object(subtask.object);
  require(obj != nullptr, ErrorKind::NotFound, "verify: unknown object " + subtask.object);

  std::vector<std::array<float, 3>> distractors;
  for (const auto& o : scene.objects)
    if (o.id != obj->id) distractors.push_back(o.color);

  const annotator::Track tr = annotator::track_similarity(video, obj->color, distractors);
  bool tracked = false;
  for (bool v : tr.visible) tracked = tracked || v;

  const Vec2 dest = subtask.resolve_destination(scene);
  if (!tracked) {
    score.feedback.push_back({FeedbackCode::ObjectNotGrasped, 0.0, 0});
  } else {
    const Vec2 start = tr.centroids.front();
    const Vec2 end = tr.centroids.back();
    if (start.dist(end) < 2.0f) {
      score.feedback.push_back({FeedbackCode::ObjectNotGrasped, start.dist(end), video.t() - 1});
    } else {
      bool ok = false;
      if (!subtask.dest_zone.empty()) {
        const world::Zone* z = scene.find_zone(subtask.dest_zone);
        require(z != nullptr, ErrorKind::NotFound, "verify: unknown zone " + subtask.dest_zone);
        ok = z->contains(end);
      } else {
        ok = end.dist(dest) <= 4.0f;
      }
      if (ok)
        score.success = 1;
      else
        score.feedback.push_back(
            {FeedbackCode::EndPositionError, end.dist(dest), video.t() - 1});
    }
  }

  const reward::PFCResult pfc = reward::pfc_score(video, world_model, pfc_cfg);
  score.pfc = pfc.r_physics;
  score.aesthetic_norm = (reward::aesthetic_score(video) - 1) / 4.0;
  if (score.pfc < 0.2) {
    int worst = 0;
    for (size_t i = 1; i < pfc.scores.size(); ++i)
      if (pfc.scores[i] < pfc.scores[static_cast<size_t>(worst)]) worst = static_cast<int>(i);
    score.feedback.push_back({FeedbackCode::CollisionDetected, 0.0, worst * pfc_cfg.stride});
  }
  score.composite = std::clamp(cfg.w_success * score.success + cfg.w_pfc * score.pfc +
                                   cfg.w_aesthetic * score.aesthetic_norm,
                               0.0, 1.0);
  return score;
}

world::Scene advance_scene(const world::Scene& scene, const world::Video& video,
                           const bsb::BSB& plan) {
  world::Scene next = scene;
  std::vector<std::array<float, 3>> all_colors;
  for (const auto& o : scene.objects) all_colors.push_back(o.color);
  for (auto& o : next.objects) {
    std::vector<std::array<float, 3>> distractors;
    for (const auto& c : all_colors)
      if (c != o.color) distractors.push_back(c);
    const annotator::Track tr = annotator::track_similarity(video, o.color, distractors);
    bool seen = false;
    Vec2 last{};
    for (int f = 0; f < tr.length(); ++f)
      if (tr.visible[static_cast<size_t>(f)]) {
        seen = true;
        last = tr.centroids[static_cast<size_t>(f)];
      }
    if (seen) {
      o.pos = {std::clamp(last.x, o.size, static_cast<float>(scene.width) - o.size),
               std::clamp(last.y, o.size, static_cast<float>(scene.height) - o.size)};
    }
  }
  next.gripper.holding.clear();
  if (!plan.traj_post.empty()) next.gripper.pos = plan.traj_post.back();
  return next;
}

StageOutcome run_stage(const world::Scene& scene, const bsb::SubTask& subtask,
                       const GenContext& gen, const reward::WorldModel& world_model,
                       const reward::PFCConfig& pfc_cfg, const RolloutConfig& cfg,
                       const bsb::PhaseCounts& phase_counts, uint64_t seed) {
  GenerateFn generate = [&gen, &cfg](const bsb::BSB& plan, const world::Scene& sc, uint64_t s) {
    return generator::sample_ddim(*gen.denoiser, *gen.sched, *gen.codec, *gen.stats, plan, sc,
                                  cfg.ddim_steps, s);
  };
  return run_stage_with(generate, scene, subtask, world_model, pfc_cfg, cfg, phase_counts, seed);
}

StageOutcome run_stage_with(const GenerateFn& generate, const world::Scene& scene,
                            const bsb::SubTask& subtask, const reward::WorldModel& world_model,
                            const reward::PFCConfig& pfc_cfg, const RolloutConfig& cfg,
                            const bsb::PhaseCounts& phase_counts, uint64_t seed) {
  cfg.check();
  StageOutcome outcome;
  std::optional<Feedback> feedback;

  for (int round = 0; round <= cfg.max_replans; ++round) {
    outcome.report.rounds = round + 1;
    std::vector<bsb::BSB> plans;
    try {
      plans = propose(scene, subtask, cfg.k, feedback, phase_counts);
    } catch (const Error&) {
      CandidateReport rep;
      rep.round = round;
      rep.plan_ok = false;
      rep.score.feedback.push_back({FeedbackCode::PlanInfeasible, 0.0, -1});
      outcome.report.candidates.push_back(rep);
      outcome.candidate_videos.emplace_back();
      feedback = Feedback{FeedbackCode::PlanInfeasible, 0.0, -1};
      continue;
    }

    std::vector<world::Video> videos(plans.size());
    std::vector<uint8_t> gen_ok(plans.size(), 1);
    parallel_for(static_cast<int64_t>(plans.size()), [&](int64_t j) {
      const uint64_t s = derive_seed(seed, "gen",
                                     static_cast<uint64_t>(round) * 100 + static_cast<uint64_t>(j));
      try {
        videos[static_cast<size_t>(j)] = generate(plans[static_cast<size_t>(j)], scene, s);
      } catch (const Error&) {
        gen_ok[static_cast<size_t>(j)] = 0;  // candidate failed, not the stage
      }
    });
    outcome.report.generation_calls += static_cast<int>(plans.size());

    int best = -1;
    for (size_t j = 0; j < plans.size(); ++j) {
      CandidateReport rep;
      rep.round = round;
      rep.index = static_cast<int>(j);
      if (!gen_ok[j]) {
        rep.plan_ok = false;
        rep.score.feedback.push_back({FeedbackCode::PlanInfeasible, 0.0, -1});
      } else {
        rep.score = verify(videos[j], subtask, scene, world_model, pfc_cfg, cfg);
      }
      outcome.report.candidates.push_back(rep);
      outcome.candidate_videos.push_back(videos[j]);
      if (best < 0 || rep.score.composite >
                          outcome.report.candidates[static_cast<size_t>(best)].score.composite)
        best = static_cast<int>(outcome.report.candidates.size()) - 1;
    }

    const CandidateReport& best_rep = outcome.report.candidates[static_cast<size_t>(best)];
    if (best_rep.score.composite >= cfg.success_threshold) {
      outcome.report.selected_round = best_rep.round;
      outcome.report.selected_index = best_rep.index;
      outcome.report.success = true;
      StageResult result;
      result.video = videos[static_cast<size_t>(best_rep.index)];
      result.plan = std::move(plans[static_cast<size_t>(best_rep.index)]);
      result.report = outcome.report;
      result.advanced_scene = advance_scene(scene, result.video, result.plan);
      outcome.result = std::move(result);
      return outcome;
    }
    feedback = best_rep.score.feedback.empty() ? std::nullopt
                                               : std::optional<Feedback>(best_rep.score.feedback.front());
  }
  return outcome;  // staged failure: full report, no result
}

LongHorizonResult run_long_horizon(const world::Scene& scene, const std::string& instruction,
                                   const GenContext& gen, const reward::WorldModel& world_model,
                                   const reward::PFCConfig& pfc_cfg, const RolloutConfig& cfg,
                                   const bsb::PhaseCounts& phase_counts, uint64_t seed,
                                   const StageSink& stage_sink) {
  GenerateFn generate = [&gen, &cfg](const bsb::BSB& plan, const world::Scene& sc, uint64_t s) {
    return generator::sample_ddim(*gen.denoiser, *gen.sched, *gen.codec, *gen.stats, plan, sc,
                                  cfg.ddim_steps, s);
  };
  return run_long_horizon_with(generate, scene, instruction, world_model, pfc_cfg, cfg,
                               phase_counts, seed, stage_sink);
}

LongHorizonResult run_long_horizon_with(const GenerateFn& generate, const world::Scene& scene,
                                        const std::string& instruction,
                                        const reward::WorldModel& world_model,
                                        const reward::PFCConfig& pfc_cfg, const RolloutConfig& cfg,
                                        const bsb::PhaseCounts& phase_counts, uint64_t seed,
                                        const StageSink& stage_sink) {
  const auto tasks = planner::parse(instruction, scene);
  LongHorizonResult res;
  res.attempted = static_cast<int>(tasks.size());

  world::Scene cur = scene;
  std::vector<world::Video> stage_videos;
  for (size_t si = 0; si < tasks.size(); ++si) {
    const auto t0 = std::chrono::steady_clock::now();
    TensorMemoryStats::reset_peak();
    const int64_t base_bytes = TensorMemoryStats::live_bytes();

    bsb::PhaseCounts pc = phase_counts;
    StageOutcome outcome;
    try {
      pc = planner::fit_phase_counts(cur, tasks[si], phase_counts);
      outcome = run_stage_with(generate, cur, tasks[si], world_model, pfc_cfg, cfg, pc,
                               derive_seed(seed, "stage", si));
    } catch (const Error&) {
      outcome = StageOutcome{};
    }

    res.stage_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    res.stage_peak_bytes.push_back(TensorMemoryStats::peak_bytes() - base_bytes);
    const bool ok = outcome.result.has_value();
    if (stage_sink) stage_sink(static_cast<int>(si), outcome);
    outcome.candidate_videos.clear();  // stage buffers released
    if (ok) {
      stage_videos.push_back(outcome.result->video);
      res.plans.push_back(outcome.result->plan);
      cur = outcome.result->advanced_scene;
      res.completed += 1;
    }
    res.stages.push_back(std::move(outcome));
    if (!ok) break;  // partial result with the completed prefix
  }

  if (!stage_videos.empty()) {
    const int h = stage_videos[0].h(), w = stage_videos[0].w();
    int total = 0;
    for (const auto& v : stage_videos) total += v.t();
    res.stitched.fps = stage_videos[0].fps;
    res.stitched.frames = Tensor({total, 3, h, w});
    int off = 0;
    for (const auto& v : stage_videos) {
      std::copy(v.frames.data(), v.frames.data() + v.frames.numel(),
                res.stitched.frames.data() + static_cast<int64_t>(off) * 3 * h * w);
      off += v.t();
    }
  }
  return res;
}

}  // namespace hierogen::rollouts
