#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hierogen/latent_codec.hpp"
#include "hierogen/world.hpp"

namespace hierogen::bsb {

struct SubTask {
  enum class Action { PickPlace, Push };
  Action action = Action::PickPlace;
  std::string object;
  std::string dest_zone;            // zone name; empty when dest_point is used
  std::optional<Vec2> dest_point;

  Vec2 resolve_destination(const world::Scene& scene) const;
  std::string describe() const;
};

struct PhaseCounts {
  int pre = 10;
  int interact = 17;
  int post = 10;

  int total() const { return pre + interact + post; }
};

/// Behavioral semantic bridge: the structured plan exchanged between the
/// planner/annotator and the generator. Masks are frame-0 footprints; the
/// three trajectories are per-frame points of the active agent (arm for
/// pre/post, manipulated object for interact); phase_counts are durations
/// summing to the sub-task frame budget.
struct BSB {
  world::BitMask m_obj;
  world::BitMask m_rob;
  std::vector<Vec2> traj_pre;
  std::vector<Vec2> traj_interact;
  std::vector<Vec2> traj_post;
  PhaseCounts phase_counts;
  std::optional<SubTask> meta;

  std::vector<Vec2> full_trajectory() const;
};

struct Violation {
  std::string what;
  int frame = -1;
};

struct ValidateOptions {
  bool check_collisions = true;
  float speed_tolerance = 0.0f;  // extra slack over kMaxSpeed per step
};

/// Checks every structural invariant plus (optionally) collision freedom of
/// the swept object footprint along traj_interact. Returns violations rather
/// than throwing.
std::vector<Violation> validate(const BSB& plan, const world::Scene& scene,
                                const ValidateOptions& opts = {});

struct GuidanceTensor {
  Tensor data;  // [T, 16, latH, latW]; nonzero only at the active agent's cell
};

/// Embeds the active agent's appearance feature at the latent cell containing
/// its trajectory point, frame by frame: arm feature for pre/post phases,
/// object feature for interact frames.
GuidanceTensor build_guidance(const BSB& plan, const world::Scene& scene,
                              const generator::LatentCodec& codec);

std::string serialize(const BSB& plan);
BSB deserialize(const std::string& bytes);
void save(const std::filesystem::path& path, const BSB& plan);
BSB load(const std::filesystem::path& path);

}  // namespace hierogen::bsb
