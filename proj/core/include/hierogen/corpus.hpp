#pragma once

#include <string>
#include <vector>

#include "hierogen/bsb.hpp"
#include "hierogen/planner.hpp"
#include "hierogen/world.hpp"

namespace hierogen::corpus {

struct GenDataConfig {
  int count = 50;
  int min_subtasks = 1;
  int max_subtasks = 1;
  int min_objects = 2;
  int max_objects = 4;
};

/// One corpus item: a seeded scene, a grammar instruction, and per-sub-task
/// planned BSBs with their oracle executions (the scene evolves between
/// sub-tasks).
struct Item {
  world::Scene scene;
  std::string instruction;
  std::vector<bsb::SubTask> subtasks;
  std::vector<world::Scene> stage_scenes;  // scene before each sub-task
  std::vector<bsb::BSB> plans;
  std::vector<world::Video> videos;
};

/// Zones are 8-aligned with side lengths in {8,24} (centers on latent-cell
/// centers); objects sit outside zones with >= 18 px object-to-destination
/// separation; the gripper parks in the top band.
world::Scene random_scene(Rng& rng, int n_objects);

Item generate_item(uint64_t seed, const GenDataConfig& cfg, const bsb::PhaseCounts& defaults);

}  // namespace hierogen::corpus
