#pragma once

#include <optional>
#include <vector>

#include "hierogen/generator.hpp"
#include "hierogen/planner.hpp"
#include "hierogen/reward.hpp"

namespace hierogen::rollouts {

struct RolloutConfig {
  int k = 3;
  double success_threshold = 0.75;
  int max_replans = 2;
  double w_success = 0.5;
  double w_pfc = 0.3;
  double w_aesthetic = 0.2;
  int ddim_steps = generator::kDdimSteps;

  void check() const {
    require(k >= 1, ErrorKind::InvalidArgument, "K must be >= 1");
    require(success_threshold > 0.0 && success_threshold <= 1.0, ErrorKind::InvalidArgument,
            "success threshold must be in (0,1]");
  }
};

enum class FeedbackCode {
  EndPositionError,
  ObjectNotGrasped,
  CollisionDetected,
  PlanInfeasible,
};

const char* to_string(FeedbackCode code);

struct Feedback {
  FeedbackCode code;
  double distance = 0.0;  // px detail for end-position errors
  int frame = -1;         // frame detail for collision-style codes
};

struct CandidateScore {
  int success = 0;           // tracked endpoint test
  double pfc = 0.0;          // [-1, 1]
  double aesthetic_norm = 0.0;
  double composite = 0.0;    // clamped weighted sum
  std::vector<Feedback> feedback;
};

struct GenContext {
  const generator::Denoiser* denoiser;
  const generator::NoiseSchedule* sched;
  const generator::LatentCodec* codec;
  const generator::LatentStats* stats;
};

/// K strategically diverse candidate plans: straight chord, +10 px bow,
/// -10 px bow (wider bows beyond K=3). Feedback from a failed round maps to a
/// corrective proposal bias. Candidates that are individually unplannable are
/// dropped; an empty bundle raises plan-infeasible.
std::vector<bsb::BSB> propose(const world::Scene& scene, const bsb::SubTask& subtask, int k,
                              const std::optional<Feedback>& attempt_feedback,
                              const bsb::PhaseCounts& phase_counts);

/// Rule-based verification of one candidate video against the sub-task:
/// tracked endpoint success, physics score, aesthetic tier, weighted
/// composite, structured failure feedback.
CandidateScore verify(const world::Video& video, const bsb::SubTask& subtask,
                      const world::Scene& scene, const reward::WorldModel& world_model,
                      const reward::PFCConfig& pfc_cfg, const RolloutConfig& cfg);

struct CandidateReport {
  int round = 0;
  int index = 0;
  CandidateScore score;
  bool plan_ok = true;
};

struct StageReport {
  std::vector<CandidateReport> candidates;
  int rounds = 0;
  int generation_calls = 0;
  int selected_round = -1;
  int selected_index = -1;
  bool success = false;
};

struct StageResult {
  world::Video video;
  bsb::BSB plan;
  StageReport report;
  world::Scene advanced_scene;  // tracked from the generated final frame
};

/// propose -> generate -> verify, replanning on failure up to max_replans
/// rounds. Returns the argmax-composite candidate once one clears the
/// threshold; otherwise a report-only outcome (staged failure).
struct StageOutcome {
  std::optional<StageResult> result;
  StageReport report;
  std::vector<world::Video> candidate_videos;  // indexed like report.candidates
};

StageOutcome run_stage(const world::Scene& scene, const bsb::SubTask& subtask,
                       const GenContext& gen, const reward::WorldModel& world_model,
                       const reward::PFCConfig& pfc_cfg, const RolloutConfig& cfg,
                       const bsb::PhaseCounts& phase_counts, uint64_t seed);

/// run_stage with a pluggable candidate-video source (tests drive it with the
/// oracle executor).
using GenerateFn =
    std::function<world::Video(const bsb::BSB& plan, const world::Scene& scene, uint64_t seed)>;
StageOutcome run_stage_with(const GenerateFn& generate, const world::Scene& scene,
                            const bsb::SubTask& subtask, const reward::WorldModel& world_model,
                            const reward::PFCConfig& pfc_cfg, const RolloutConfig& cfg,
                            const bsb::PhaseCounts& phase_counts, uint64_t seed);

struct LongHorizonResult {
  std::vector<StageOutcome> stages;
  std::vector<bsb::BSB> plans;          // selected plan per completed stage
  world::Video stitched;                // completed stages concatenated
  std::vector<double> stage_seconds;    // wall time per attempted stage
  std::vector<int64_t> stage_peak_bytes;
  int completed = 0;
  int attempted = 0;
};

/// Autoregressive chaining: after each selected stage the scene is advanced by
/// re-tracking the generated final frame, and the next stage starts from it.
/// stage_sink (optional) receives each stage outcome with its candidate videos
/// before those buffers are released, keeping the peak footprint flat in the
/// number of stages.
using StageSink = std::function<void(int stage, const StageOutcome&)>;

LongHorizonResult run_long_horizon(const world::Scene& scene, const std::string& instruction,
                                   const GenContext& gen, const reward::WorldModel& world_model,
                                   const reward::PFCConfig& pfc_cfg, const RolloutConfig& cfg,
                                   const bsb::PhaseCounts& phase_counts, uint64_t seed,
                                   const StageSink& stage_sink = {});
LongHorizonResult run_long_horizon_with(const GenerateFn& generate, const world::Scene& scene,
                                        const std::string& instruction,
                                        const reward::WorldModel& world_model,
                                        const reward::PFCConfig& pfc_cfg, const RolloutConfig& cfg,
                                        const bsb::PhaseCounts& phase_counts, uint64_t seed,
                                        const StageSink& stage_sink = {});

/// Scene advancement used between stages: object positions from tracked
/// centroids of the final generated frame, gripper at the plan's retract point.
world::Scene advance_scene(const world::Scene& scene, const world::Video& video,
                           const bsb::BSB& plan);

}  // namespace hierogen::rollouts
