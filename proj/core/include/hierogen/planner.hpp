#pragma once

#include <string>
#include <vector>

#include "hierogen/bsb.hpp"
#include "hierogen/world.hpp"

namespace hierogen::planner {

inline constexpr int kMaxRefineIters = 8;

/// Grammar: cmd := verb OBJ "to" DEST {";" cmd}, verb in {put, push}; DEST is
/// a zone name or "x,y". The macro "clear the table" expands to one pick_place
/// per object into zone "bin", ordered by object id. Total and deterministic;
/// unknown verbs/objects/zones raise a parse error naming the token.
std::vector<bsb::SubTask> parse(const std::string& text, const world::Scene& scene);

/// Canonical printer; parse(to_text(tasks)) == tasks.
std::string to_text(const std::vector<bsb::SubTask>& tasks);

struct AffordanceResult {
  world::BitMask mask;
  Vec2 interaction_point;
};

/// Registry lookup of mask + interaction point. Unknown ids fall back to the
/// centroid of the best color-match region (color word embedded in the id);
/// no match at all raises not-found.
AffordanceResult affordance(const world::Scene& scene, const std::string& object_id);

/// One three-phase plan attempt: cubic Bezier control points for the interact
/// segment plus the refinement bookkeeping.
struct PlanAttempt {
  Vec2 p0, p1, p2, p3;
  int iterations_used = 0;
  bool collision_free = false;
};

/// Deterministic closed-loop refinement: offsets the interior control points
/// perpendicular to the chord by +-d, d in {6,12,18,24}, alternating sign;
/// first collision-free candidate wins. At most kMaxRefineIters candidates are
/// tried; an exhausted attempt comes back with collision_free == false.
PlanAttempt refine(const world::Scene& scene, const world::ObjectSpec& object,
                   PlanAttempt attempt, int frames);

/// refine() with the candidate ladder started at a minimum offset (feedback
/// mapped from a detected collision forces d >= 12).
PlanAttempt refine_from(const world::Scene& scene, const world::ObjectSpec& object,
                        PlanAttempt attempt, int frames, int min_offset);

/// Cubic Bezier discretized uniformly in parameter, endpoints exact.
std::vector<Vec2> bezier_points(Vec2 p0, Vec2 p1, Vec2 p2, Vec2 p3, int n);

/// Plans pre (gripper -> interaction point), interact (interaction point ->
/// destination center) and post (destination -> retract) phases, re-clamps
/// steps to kMaxSpeed, and refines the interact segment until collision-free.
/// interior_bow shifts the interact interior control points perpendicular to
/// the chord before refinement (used for candidate diversity).
bsb::BSB plan_trajectory(const world::Scene& scene, const bsb::SubTask& subtask,
                         const bsb::PhaseCounts& phase_counts, float interior_bow = 0.0f,
                         int min_refine_offset = 6);

/// Reallocates the default phase budget when the approach or carry distance
/// does not fit (phase counts stay >= 2 each and sum to the frame budget).
bsb::PhaseCounts fit_phase_counts(const world::Scene& scene, const bsb::SubTask& subtask,
                                  const bsb::PhaseCounts& defaults);

}  // namespace hierogen::planner
