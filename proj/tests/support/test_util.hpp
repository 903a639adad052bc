#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "hierogen/bsb.hpp"
#include "hierogen/world.hpp"

namespace testutil {

using namespace hierogen;

/// Unique scratch directory, removed on destruction.
struct TmpDir {
  std::filesystem::path path;

  explicit TmpDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("hierogen_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TmpDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

/// Two objects, two zones, gripper parked near the top: the workhorse scene.
inline world::Scene basic_scene() {
  world::Scene s;
  s.zones.push_back({"bin", 8, 36, 32, 60});
  s.zones.push_back({"tray", 40, 36, 48, 44});
  world::ObjectSpec red;
  red.id = "red_circle";
  red.shape = world::Shape::Circle;
  red.size = 5.0f;
  red.color = world::palette_lookup("red")->rgb;
  red.pos = {16.0f, 14.0f};
  s.objects.push_back(red);
  world::ObjectSpec blue;
  blue.id = "blue_square";
  blue.shape = world::Shape::Square;
  blue.size = 4.0f;
  blue.color = world::palette_lookup("blue")->rgb;
  blue.pos = {48.0f, 16.0f};
  s.objects.push_back(blue);
  s.gripper.pos = {20.0f, 6.0f};
  s.validate();
  return s;
}

/// Brute-force pixel predicate census of a rasterized object.
inline int64_t brute_force_pixel_count(const world::ObjectSpec& o, int h, int w) {
  int64_t n = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (o.contains_pixel(x + 0.5f, y + 0.5f)) ++n;
  return n;
}

/// Brute-force sweep oracle: rasterized mask intersection at every interact
/// frame (the implementation's geometric test must be at least as strict).
inline bool sweep_collides_masks(const world::Scene& scene, const bsb::BSB& plan) {
  const world::ObjectSpec* obj = scene.find_object(plan.meta->object);
  for (Vec2 p : plan.traj_interact) {
    world::Scene probe = scene;
    world::ObjectSpec* moved = probe.find_object(obj->id);
    moved->pos = p - obj->interaction_offset;
    const world::BitMask m = world::object_mask(probe, obj->id);
    for (const auto& other : probe.objects) {
      if (other.id == obj->id) continue;
      if (m.intersects(world::object_mask(probe, other.id))) return true;
    }
  }
  return false;
}

inline bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace testutil
