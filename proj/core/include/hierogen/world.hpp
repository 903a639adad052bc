#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "hierogen/fsutil.hpp"
#include "hierogen/tensor.hpp"

namespace hierogen::bsb {
struct BSB;
}

namespace hierogen::world {

inline constexpr int kWidth = 64;
inline constexpr int kHeight = 64;
inline constexpr int kFrames = 37;     // frames per sub-task
inline constexpr float kMaxSpeed = 4.0f;    // px per frame
inline constexpr float kGraspRadius = 3.0f; // px
inline constexpr float kBackground = 0.85f;
inline constexpr float kZoneOutline = 0.30f;

struct BitMask {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> bits;  // one byte per pixel, row-major

  BitMask() = default;
  BitMask(int h_, int w_) : h(h_), w(w_), bits(static_cast<size_t>(h_) * w_, 0) {}

  uint8_t at(int x, int y) const { return bits[static_cast<size_t>(y) * w + x]; }
  void set(int x, int y, uint8_t v = 1) { bits[static_cast<size_t>(y) * w + x] = v; }
  int64_t count() const;
  bool empty_mask() const { return count() == 0; }
  bool intersects(const BitMask& o) const;
  Vec2 centroid() const;  // of set pixel centers
  std::pair<int, int> bbox_min() const;
};

enum class Shape { Circle, Square };

struct ObjectSpec {
  std::string id;
  Shape shape = Shape::Circle;
  float size = 4.0f;  // radius or half-side, px
  std::array<float, 3> color{1.0f, 0.0f, 0.0f};
  Vec2 pos;
  Vec2 interaction_offset;

  Vec2 interaction_point() const { return pos + interaction_offset; }
  bool contains_pixel(float cx, float cy) const;  // pixel-center predicate
};

struct Zone {
  std::string name;
  float x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  Vec2 center() const { return {(x0 + x1) * 0.5f, (y0 + y1) * 0.5f}; }
  bool contains(Vec2 p) const { return p.x >= x0 && p.x < x1 && p.y >= y0 && p.y < y1; }
};

struct GripperState {
  Vec2 pos{-10.0f, -10.0f};  // parked off-canvas by default (not drawn)
  std::string holding;       // object id, empty when free
};

struct Scene {
  int width = kWidth;
  int height = kHeight;
  std::vector<ObjectSpec> objects;
  std::vector<Zone> zones;
  GripperState gripper;

  const ObjectSpec* find_object(const std::string& id) const;
  ObjectSpec* find_object(const std::string& id);
  const Zone* find_zone(const std::string& name) const;
  void validate() const;
  bool in_bounds(Vec2 p) const {
    return p.x >= 0 && p.x <= static_cast<float>(width - 1) && p.y >= 0 &&
           p.y <= static_cast<float>(height - 1);
  }
};

struct Video {
  Tensor frames;  // [T, 3, H, W], values in [0,1]
  float fps = 8.0f;

  int t() const { return frames.dim(0); }
  int h() const { return frames.dim(2); }
  int w() const { return frames.dim(3); }
  const float* frame(int f) const {
    return frames.data() + static_cast<int64_t>(f) * 3 * h() * w();
  }
  float* frame(int f) { return frames.data() + static_cast<int64_t>(f) * 3 * h() * w(); }
};

struct Command {
  enum class Kind { MoveTo, Grasp, Release };
  Kind kind = Kind::MoveTo;
  Vec2 target;

  static Command move_to(Vec2 p) { return {Kind::MoveTo, p}; }
  static Command grasp() { return {Kind::Grasp, {}}; }
  static Command release() { return {Kind::Release, {}}; }
};

struct StepResult {
  Scene scene;
  bool grasp_failed = false;  // grasp with nothing in radius (no-op, logged)
  bool truncated = false;     // move stopped at first contact
};

/// One kinematic step: move_to translates the gripper at most kMaxSpeed px
/// toward the target (held object follows rigidly, motion truncated at first
/// object contact), grasp binds the nearest interaction point within
/// kGraspRadius (gripper snaps onto it), release drops in place.
StepResult step(const Scene& scene, const Command& cmd);

/// Deterministic rasterization: background, zone outlines, gripper cross,
/// objects on top. Returns [3,H,W].
Tensor render(const Scene& scene);

BitMask object_mask(const Scene& scene, const std::string& id);
BitMask gripper_mask(const Scene& scene);

/// Runs a three-phase plan through the oracle kinematics and rasterizes every
/// step. Throws ExecutionInfeasible (with the first offending frame index)
/// when the plan cannot be followed exactly.
Video execute_plan(const Scene& scene, const hierogen::bsb::BSB& plan,
                   Scene* final_scene = nullptr);

bool objects_overlap(const ObjectSpec& a, const ObjectSpec& b);

/// Fixed named palette used for object color keys (all channels inside
/// [0.05, 0.95], pairwise distinct, away from the background gray).
struct NamedColor {
  const char* name;
  std::array<float, 3> rgb;
};
const std::vector<NamedColor>& palette();
const NamedColor* palette_lookup(const std::string& name);

fs::json scene_to_json(const Scene& scene);
Scene scene_from_json(const fs::json& j);

}  // namespace hierogen::world
