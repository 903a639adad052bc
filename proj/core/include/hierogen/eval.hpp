#pragma once

#include <array>
#include <string>
#include <vector>

#include "hierogen/world.hpp"

namespace hierogen::eval {

/// 1 - mean absolute inter-frame difference over background pixels (pixels
/// matching the background color in frame 0), clamped to [0,1].
double flicker(const world::Video& video);

/// min over frames of (object-color pixel count / frame-0 count), clamped.
double subject_consistency(const world::Video& video, const std::array<float, 3>& color_key);

/// 1 - mean absolute difference of frame-0 background pixels against frame 0.
double background_consistency(const world::Video& video);

struct TaskEval {
  std::string name;
  std::vector<int> subtask_success;  // verifier bits in stage order
  double mean_pfc = 0.0;
  double flicker = 0.0;
  double subject_consistency = 0.0;
  double background_consistency = 0.0;
};

struct EvalReport {
  std::vector<TaskEval> tasks;
  double task_success_rate = 0.0;  // mean over all sub-tasks
  double mean_pfc = 0.0;
  double mean_flicker = 0.0;
  double mean_subject_consistency = 0.0;
  double mean_background_consistency = 0.0;
};

/// Aggregates per-task rows into the report (arithmetic means; the success
/// rate averages over every sub-task of every task).
EvalReport aggregate(std::vector<TaskEval> tasks);

std::string render_table(const EvalReport& report);

}  // namespace hierogen::eval
