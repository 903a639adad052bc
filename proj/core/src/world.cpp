#include "hierogen/world.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "hierogen/bsb.hpp"

namespace hierogen::world {

int64_t BitMask::count() const {
  int64_t n = 0;
  for (uint8_t b : bits) n += b;
  return n;
}

bool BitMask::intersects(const BitMask& o) const {
  if (h != o.h || w != o.w) return false;
  for (size_t i = 0; i < bits.size(); ++i)
    if (bits[i] && o.bits[i]) return true;
  return false;
}

Vec2 BitMask::centroid() const {
  double sx = 0.0, sy = 0.0;
  int64_t n = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (at(x, y)) {
        sx += x + 0.5;
        sy += y + 0.5;
        ++n;
      }
  if (n == 0) return {0.0f, 0.0f};
  return {static_cast<float>(sx / n), static_cast<float>(sy / n)};
}

std::pair<int, int> BitMask::bbox_min() const {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (at(x, y)) return {x, y};
  return {-1, -1};
}

bool ObjectSpec::contains_pixel(float cx, float cy) const {
  // Raster positions snap to the integer grid so a moving object's footprint
  // translates rigidly (per-color pixel counts stay exactly constant).
  const float sx = std::round(pos.x), sy = std::round(pos.y);
  if (shape == Shape::Circle) {
    const float dx = cx - sx, dy = cy - sy;
    return dx * dx + dy * dy < size * size;
  }
  return std::abs(cx - sx) < size && std::abs(cy - sy) < size;
}

const ObjectSpec* Scene::find_object(const std::string& id) const {
  for (const auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

ObjectSpec* Scene::find_object(const std::string& id) {
  for (auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

const Zone* Scene::find_zone(const std::string& name) const {
  for (const auto& z : zones)
    if (z.name == name) return &z;
  return nullptr;
}

void Scene::validate() const {
  std::set<std::array<float, 3>> colors;
  for (const auto& o : objects) {
    require(in_bounds(o.pos), ErrorKind::InvalidArgument, "object center out of bounds: " + o.id);
    require(o.size >= 2.0f, ErrorKind::InvalidArgument, "object too small: " + o.id);
    require(colors.insert(o.color).second, ErrorKind::InvalidArgument,
            "duplicate object color key: " + o.id);
    const Vec2 off = o.interaction_offset;
    const float margin = o.size + 1.0f;
    const bool inside = (o.shape == Shape::Circle) ? off.norm() < margin
                                                   : std::abs(off.x) < margin && std::abs(off.y) < margin;
    require(inside, ErrorKind::InvalidArgument,
            "interaction point outside dilated footprint: " + o.id);
  }
  for (const auto& z : zones) {
    require(z.x0 >= 0 && z.y0 >= 0 && z.x1 <= static_cast<float>(width) &&
                z.y1 <= static_cast<float>(height) && z.x0 < z.x1 && z.y0 < z.y1,
            ErrorKind::InvalidArgument, "zone out of bounds: " + z.name);
  }
}

// Contact happens kContactPad before geometric touch: raster centers snap to
// the integer grid, so the pad keeps snapped masks disjoint whenever the
// dynamics say the objects are separated.
inline constexpr float kContactPad = 1.5f;

bool objects_overlap(const ObjectSpec& a, const ObjectSpec& b) {
  if (a.shape == Shape::Circle && b.shape == Shape::Circle)
    return a.pos.dist(b.pos) < a.size + b.size + kContactPad;
  if (a.shape == Shape::Square && b.shape == Shape::Square)
    return std::abs(a.pos.x - b.pos.x) < a.size + b.size + kContactPad &&
           std::abs(a.pos.y - b.pos.y) < a.size + b.size + kContactPad;
  const ObjectSpec& c = (a.shape == Shape::Circle) ? a : b;
  const ObjectSpec& s = (a.shape == Shape::Circle) ? b : a;
  const float px = std::clamp(c.pos.x, s.pos.x - s.size, s.pos.x + s.size);
  const float py = std::clamp(c.pos.y, s.pos.y - s.size, s.pos.y + s.size);
  return c.pos.dist({px, py}) < c.size + kContactPad;
}

namespace {

bool object_collides(const Scene& scene, const ObjectSpec& moved) {
  for (const auto& o : scene.objects) {
    if (o.id == moved.id) continue;
    if (objects_overlap(moved, o)) return true;
  }
  return false;
}

// Largest collision-free fraction of the held object's motion, by bisection.
float truncate_motion(const Scene& scene, const ObjectSpec& obj, Vec2 from, Vec2 to) {
  ObjectSpec probe = obj;
  probe.pos = to;
  if (!object_collides(scene, probe)) return 1.0f;
  float lo = 0.0f, hi = 1.0f;
  for (int it = 0; it < 24; ++it) {
    const float mid = 0.5f * (lo + hi);
    probe.pos = {from.x + (to.x - from.x) * mid, from.y + (to.y - from.y) * mid};
    if (object_collides(scene, probe))
      hi = mid;
    else
      lo = mid;
  }
  return lo;
}

}  // namespace

StepResult step(const Scene& scene, const Command& cmd) {
  StepResult res{scene, false, false};
  Scene& s = res.scene;
  switch (cmd.kind) {
    case Command::Kind::MoveTo: {
      require(scene.in_bounds(cmd.target), ErrorKind::InvalidArgument,
              "move_to target out of bounds");
      const Vec2 from = s.gripper.pos;
      Vec2 delta = cmd.target - from;
      const float dist = delta.norm();
      if (dist > kMaxSpeed) delta = delta * (kMaxSpeed / dist);
      Vec2 target = from + delta;
      if (!s.gripper.holding.empty()) {
        ObjectSpec* held = s.find_object(s.gripper.holding);
        const Vec2 obj_from = held->pos;
        const Vec2 obj_to = target - held->interaction_offset;
        const float frac = truncate_motion(s, *held, obj_from, obj_to);
        if (frac < 1.0f) {
          res.truncated = true;
          target = from + (target - from) * frac;
        }
        held->pos = {obj_from.x + (obj_to.x - obj_from.x) * frac,
                     obj_from.y + (obj_to.y - obj_from.y) * frac};
        s.gripper.pos = held->interaction_point();
      } else {
        s.gripper.pos = target;
      }
      break;
    }
    case Command::Kind::Grasp: {
      if (!s.gripper.holding.empty()) {
        res.grasp_failed = true;  // already holding
        break;
      }
      const ObjectSpec* best = nullptr;
      float best_d = kGraspRadius;
      for (const auto& o : s.objects) {
        const float d = s.gripper.pos.dist(o.interaction_point());
        if (d <= best_d) {
          best_d = d;
          best = &o;
        }
      }
      if (!best) {
        res.grasp_failed = true;
        break;
      }
      s.gripper.holding = best->id;
      s.gripper.pos = best->interaction_point();
      break;
    }
    case Command::Kind::Release:
      s.gripper.holding.clear();
      break;
  }
  return res;
}

namespace {

void draw_scene(const Scene& scene, float* out) {
  const int h = scene.height, w = scene.width;
  const int64_t plane = static_cast<int64_t>(h) * w;
  std::fill(out, out + 3 * plane, kBackground);

  for (const auto& z : scene.zones) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float cx = x + 0.5f, cy = y + 0.5f;
        const bool in = cx >= z.x0 && cx < z.x1 && cy >= z.y0 && cy < z.y1;
        const bool inner = cx >= z.x0 + 1 && cx < z.x1 - 1 && cy >= z.y0 + 1 && cy < z.y1 - 1;
        if (in && !inner)
          for (int c = 0; c < 3; ++c) out[c * plane + y * w + x] = kZoneOutline;
      }
  }

  const Vec2 g = scene.gripper.pos;
  if (scene.in_bounds(g)) {
    const float gx = std::round(g.x), gy = std::round(g.y);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float dx = std::abs(x + 0.5f - gx), dy = std::abs(y + 0.5f - gy);
        const bool on_cross = (dx < 1.0f && dy < 3.0f) || (dy < 1.0f && dx < 3.0f);
        if (on_cross)
          for (int c = 0; c < 3; ++c) out[c * plane + y * w + x] = 0.0f;
      }
  }

  for (const auto& o : scene.objects) {
    const int x0 = std::max(0, static_cast<int>(std::floor(o.pos.x - o.size - 1)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(o.pos.x + o.size + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(o.pos.y - o.size - 1)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(o.pos.y + o.size + 1)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (o.contains_pixel(x + 0.5f, y + 0.5f))
          for (int c = 0; c < 3; ++c) out[c * plane + y * w + x] = o.color[static_cast<size_t>(c)];
  }
}

}  // namespace

Tensor render(const Scene& scene) {
  Tensor out({3, scene.height, scene.width});
  draw_scene(scene, out.data());
  return out;
}

BitMask object_mask(const Scene& scene, const std::string& id) {
  const ObjectSpec* o = scene.find_object(id);
  require(o != nullptr, ErrorKind::NotFound, "unknown object id: " + id);
  BitMask m(scene.height, scene.width);
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x)
      if (o->contains_pixel(x + 0.5f, y + 0.5f)) m.set(x, y);
  return m;
}

BitMask gripper_mask(const Scene& scene) {
  BitMask m(scene.height, scene.width);
  const Vec2 g = scene.gripper.pos;
  if (!scene.in_bounds(g)) return m;
  const float gx = std::round(g.x), gy = std::round(g.y);
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x) {
      const float dx = std::abs(x + 0.5f - gx), dy = std::abs(y + 0.5f - gy);
      if ((dx < 1.0f && dy < 3.0f) || (dy < 1.0f && dx < 3.0f)) m.set(x, y);
    }
  return m;
}

Video execute_plan(const Scene& scene, const hierogen::bsb::BSB& plan, Scene* final_scene) {
  const auto& pc = plan.phase_counts;
  require(pc.pre >= 1 && pc.interact >= 1 && pc.post >= 1, ErrorKind::InvalidArgument,
          "phase counts must each be >= 1");
  require(static_cast<int>(plan.traj_pre.size()) == pc.pre &&
              static_cast<int>(plan.traj_interact.size()) == pc.interact &&
              static_cast<int>(plan.traj_post.size()) == pc.post,
          ErrorKind::InvalidArgument, "trajectory lengths disagree with phase counts");
  const int t_total = pc.total();
  for (const auto& traj : {plan.traj_pre, plan.traj_interact, plan.traj_post})
    for (Vec2 p : traj)
      require(scene.in_bounds(p), ErrorKind::InvalidArgument, "trajectory point out of bounds");

  Video video;
  video.frames = Tensor({t_total, 3, scene.height, scene.width});
  Scene cur = scene;
  int frame = 0;
  auto emit = [&](const Scene& s) {
    draw_scene(s, video.frames.data() + static_cast<int64_t>(frame) * 3 * s.height * s.width);
    ++frame;
  };
  auto follow = [&](Vec2 target) {
    StepResult r = step(cur, Command::move_to(target));
    cur = std::move(r.scene);
    if (cur.gripper.pos.dist(target) > 1e-3f)
      fail(ErrorKind::ExecutionInfeasible,
           "plan not followable at frame " + std::to_string(frame) +
               (r.truncated ? " (object contact)" : " (step too long)"));
  };

  for (int f = 0; f < pc.pre; ++f) {
    follow(plan.traj_pre[static_cast<size_t>(f)]);
    emit(cur);
  }
  {
    StepResult r = step(cur, Command::grasp());
    cur = std::move(r.scene);
    if (r.grasp_failed)
      fail(ErrorKind::ExecutionInfeasible,
           "grasp failed at frame " + std::to_string(frame));
  }
  for (int f = 0; f < pc.interact; ++f) {
    follow(plan.traj_interact[static_cast<size_t>(f)]);
    emit(cur);
  }
  cur = step(cur, Command::release()).scene;
  for (int f = 0; f < pc.post; ++f) {
    follow(plan.traj_post[static_cast<size_t>(f)]);
    emit(cur);
  }
  if (final_scene) *final_scene = cur;
  return video;
}

const std::vector<NamedColor>& palette() {
  static const std::vector<NamedColor> kPalette = {
      {"red", {0.70f, 0.08f, 0.08f}},    {"blue", {0.10f, 0.15f, 0.80f}},
      {"green", {0.06f, 0.50f, 0.12f}},  {"purple", {0.45f, 0.08f, 0.60f}},
      {"orange", {0.85f, 0.35f, 0.06f}}, {"cyan", {0.06f, 0.55f, 0.70f}},
      {"yellow", {0.80f, 0.70f, 0.10f}},
  };
  return kPalette;
}

const NamedColor* palette_lookup(const std::string& name) {
  for (const auto& c : palette())
    if (name == c.name) return &c;
  return nullptr;
}

fs::json scene_to_json(const Scene& scene) {
  fs::json j;
  j["width"] = scene.width;
  j["height"] = scene.height;
  j["zones"] = fs::json::array();
  for (const auto& z : scene.zones)
    j["zones"].push_back({{"name", z.name}, {"x0", z.x0}, {"y0", z.y0}, {"x1", z.x1}, {"y1", z.y1}});
  j["objects"] = fs::json::array();
  for (const auto& o : scene.objects) {
    j["objects"].push_back({{"id", o.id},
                            {"shape", o.shape == Shape::Circle ? "circle" : "square"},
                            {"size", o.size},
                            {"color", {o.color[0], o.color[1], o.color[2]}},
                            {"pos", {o.pos.x, o.pos.y}},
                            {"interaction_offset", {o.interaction_offset.x, o.interaction_offset.y}}});
  }
  j["gripper"] = {{"pos", {scene.gripper.pos.x, scene.gripper.pos.y}}};
  return j;
}

Scene scene_from_json(const fs::json& j) {
  Scene s;
  try {
    s.width = j.at("width").get<int>();
    s.height = j.at("height").get<int>();
    for (const auto& jz : j.at("zones")) {
      Zone z;
      z.name = jz.at("name").get<std::string>();
      z.x0 = jz.at("x0").get<float>();
      z.y0 = jz.at("y0").get<float>();
      z.x1 = jz.at("x1").get<float>();
      z.y1 = jz.at("y1").get<float>();
      s.zones.push_back(std::move(z));
    }
    for (const auto& jo : j.at("objects")) {
      ObjectSpec o;
      o.id = jo.at("id").get<std::string>();
      const std::string shape = jo.at("shape").get<std::string>();
      require(shape == "circle" || shape == "square", ErrorKind::Parse,
              "unknown shape: " + shape);
      o.shape = shape == "circle" ? Shape::Circle : Shape::Square;
      o.size = jo.at("size").get<float>();
      o.color = {jo.at("color").at(0).get<float>(), jo.at("color").at(1).get<float>(),
                 jo.at("color").at(2).get<float>()};
      o.pos = {jo.at("pos").at(0).get<float>(), jo.at("pos").at(1).get<float>()};
      o.interaction_offset = {jo.at("interaction_offset").at(0).get<float>(),
                              jo.at("interaction_offset").at(1).get<float>()};
      s.objects.push_back(std::move(o));
    }
    s.gripper.pos = {j.at("gripper").at("pos").at(0).get<float>(),
                     j.at("gripper").at("pos").at(1).get<float>()};
  } catch (const fs::json::exception& e) {
    fail(ErrorKind::Parse, std::string("scene json: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace hierogen::world
