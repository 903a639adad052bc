#include "hierogen/planner.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hierogen::planner {

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream ss(s);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\n\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\n\r");
  return s.substr(b, e - b + 1);
}

bool parse_point(const std::string& tok, Vec2* out) {
  const size_t comma = tok.find(',');
  if (comma == std::string::npos) return false;
  try {
    size_t used = 0;
    float x = std::stof(tok.substr(0, comma), &used);
    if (used != comma) return false;
    float y = std::stof(tok.substr(comma + 1), &used);
    if (used != tok.size() - comma - 1) return false;
    *out = {x, y};
    return true;
  } catch (...) {
    return false;
  }
}

}  // namespace

std::vector<bsb::SubTask> parse(const std::string& text, const world::Scene& scene) {
  std::vector<bsb::SubTask> tasks;
  std::string rest = text;
  std::vector<std::string> cmds;
  size_t pos = 0;
  while (true) {
    const size_t semi = rest.find(';', pos);
    if (semi == std::string::npos) {
      cmds.push_back(trim(rest.substr(pos)));
      break;
    }
    cmds.push_back(trim(rest.substr(pos, semi - pos)));
    pos = semi + 1;
  }

  for (const std::string& cmd : cmds) {
    if (cmd.empty()) fail(ErrorKind::Parse, "empty command");
    if (cmd == "clear the table") {
      require(scene.find_zone("bin") != nullptr, ErrorKind::Parse,
              "unknown token 'bin' (macro 'clear the table' needs a bin zone)");
      std::vector<std::string> ids;
      for (const auto& o : scene.objects) ids.push_back(o.id);
      std::sort(ids.begin(), ids.end());
      for (const std::string& id : ids) {
        bsb::SubTask st;
        st.action = bsb::SubTask::Action::PickPlace;
        st.object = id;
        st.dest_zone = "bin";
        tasks.push_back(std::move(st));
      }
      continue;
    }
    const auto toks = split_ws(cmd);
    require(toks.size() == 4, ErrorKind::Parse, "malformed command: '" + cmd + "'");
    bsb::SubTask st;
    if (toks[0] == "put")
      st.action = bsb::SubTask::Action::PickPlace;
    else if (toks[0] == "push")
      st.action = bsb::SubTask::Action::Push;
    else
      fail(ErrorKind::Parse, "unknown verb '" + toks[0] + "'");
    require(toks[2] == "to", ErrorKind::Parse, "expected 'to', got '" + toks[2] + "'");
    require(scene.find_object(toks[1]) != nullptr, ErrorKind::Parse,
            "unknown object '" + toks[1] + "'");
    st.object = toks[1];
    Vec2 pt;
    if (parse_point(toks[3], &pt)) {
      require(scene.in_bounds(pt), ErrorKind::Parse, "destination point out of bounds");
      st.dest_point = pt;
    } else {
      require(scene.find_zone(toks[3]) != nullptr, ErrorKind::Parse,
              "unknown zone '" + toks[3] + "'");
      st.dest_zone = toks[3];
    }
    tasks.push_back(std::move(st));
  }
  require(!tasks.empty(), ErrorKind::Parse, "instruction parses to no sub-tasks");
  return tasks;
}

std::string to_text(const std::vector<bsb::SubTask>& tasks) {
  std::string out;
  for (size_t i = 0; i < tasks.size(); ++i) {
    if (i) out += " ; ";
    const auto& st = tasks[i];
    out += st.action == bsb::SubTask::Action::PickPlace ? "put " : "push ";
    out += st.object + " to ";
    if (st.dest_point) {
      std::ostringstream ss;
      ss << st.dest_point->x << "," << st.dest_point->y;
      out += ss.str();
    } else {
      out += st.dest_zone;
    }
  }
  return out;
}

AffordanceResult affordance(const world::Scene& scene, const std::string& object_id) {
  if (const world::ObjectSpec* o = scene.find_object(object_id))
    return {world::object_mask(scene, object_id), o->interaction_point()};

  // Fallback: color word embedded in the id keys the best color-match region.
  const world::NamedColor* key = nullptr;
  for (const auto& c : world::palette())
    if (object_id.find(c.name) != std::string::npos) {
      key = &c;
      break;
    }
  require(key != nullptr, ErrorKind::NotFound, "unknown object id: " + object_id);

  const Tensor img = world::render(scene);
  const int h = scene.height, w = scene.width;
  const int64_t plane = static_cast<int64_t>(h) * w;
  world::BitMask mask(h, w);
  double sx = 0.0, sy = 0.0;
  int64_t n = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float d = 0.0f;
      for (int c = 0; c < 3; ++c)
        d = std::max(d, std::abs(img[c * plane + y * w + x] - key->rgb[static_cast<size_t>(c)]));
      if (d <= 0.05f) {
        mask.set(x, y);
        sx += x + 0.5;
        sy += y + 0.5;
        ++n;
      }
    }
  require(n > 0, ErrorKind::NotFound,
          "no color-match region for id: " + object_id + " (color " + key->name + ")");
  return {std::move(mask), Vec2{static_cast<float>(sx / n), static_cast<float>(sy / n)}};
}

std::vector<Vec2> bezier_points(Vec2 p0, Vec2 p1, Vec2 p2, Vec2 p3, int n) {
  require(n >= 1, ErrorKind::InvalidArgument, "bezier needs >= 1 point");
  std::vector<Vec2> pts(static_cast<size_t>(n));
  if (n == 1) {
    pts[0] = p3;
    return pts;
  }
  for (int i = 0; i < n; ++i) {
    const float t = static_cast<float>(i) / static_cast<float>(n - 1);
    const float u = 1.0f - t;
    const float b0 = u * u * u, b1 = 3 * u * u * t, b2 = 3 * u * t * t, b3 = t * t * t;
    pts[static_cast<size_t>(i)] = {b0 * p0.x + b1 * p1.x + b2 * p2.x + b3 * p3.x,
                                   b0 * p0.y + b1 * p1.y + b2 * p2.y + b3 * p3.y};
  }
  return pts;
}

namespace {

void clamp_speed(std::vector<Vec2>& pts) {
  for (size_t i = 1; i < pts.size(); ++i) {
    const Vec2 step = pts[i] - pts[i - 1];
    const float d = step.norm();
    if (d > world::kMaxSpeed) pts[i] = pts[i - 1] + step * (world::kMaxSpeed / d);
  }
}

Vec2 clamp_bounds(const world::Scene& scene, Vec2 p, float margin) {
  return {std::clamp(p.x, margin, static_cast<float>(scene.width - 1) - margin),
          std::clamp(p.y, margin, static_cast<float>(scene.height - 1) - margin)};
}

bool interact_collides(const world::Scene& scene, const world::ObjectSpec& obj,
                       const std::vector<Vec2>& interact_points) {
  for (Vec2 p : interact_points) {
    world::ObjectSpec moved = obj;
    moved.pos = p - obj.interaction_offset;
    for (const auto& other : scene.objects) {
      if (other.id == obj.id) continue;
      if (world::objects_overlap(moved, other)) return true;
    }
  }
  return false;
}

Vec2 chord_perp(Vec2 p0, Vec2 p3) {
  Vec2 chord = p3 - p0;
  const float n = chord.norm();
  if (n < 1e-6f) return {0.0f, -1.0f};
  return {-chord.y / n, chord.x / n};
}

std::vector<Vec2> attempt_points(const world::Scene& scene, const world::ObjectSpec& obj,
                                 const PlanAttempt& a, int frames) {
  const float margin = obj.size + 1.0f;
  PlanAttempt c = a;
  c.p1 = clamp_bounds(scene, c.p1, margin);
  c.p2 = clamp_bounds(scene, c.p2, margin);
  auto pts = bezier_points(c.p0, c.p1, c.p2, c.p3, frames);
  clamp_speed(pts);
  for (Vec2& p : pts) p = clamp_bounds(scene, p, 0.0f);
  return pts;
}

}  // namespace

PlanAttempt refine(const world::Scene& scene, const world::ObjectSpec& object, PlanAttempt attempt,
                   int frames) {
  return refine_from(scene, object, attempt, frames, 6);
}

PlanAttempt refine_from(const world::Scene& scene, const world::ObjectSpec& object,
                        PlanAttempt attempt, int frames, int min_offset) {
  if (attempt.collision_free) return attempt;
  const Vec2 perp = chord_perp(attempt.p0, attempt.p3);
  for (int d = 6; d <= 24; d += 6) {
    for (float sign : {1.0f, -1.0f}) {
      if (attempt.iterations_used >= kMaxRefineIters) return attempt;
      ++attempt.iterations_used;
      if (d < min_offset) continue;  // feedback can force a larger starting offset
      PlanAttempt cand = attempt;
      cand.p1 = attempt.p1 + perp * (sign * static_cast<float>(d));
      cand.p2 = attempt.p2 + perp * (sign * static_cast<float>(d));
      const auto pts = attempt_points(scene, object, cand, frames);
      if (!interact_collides(scene, object, pts)) {
        cand.collision_free = true;
        return cand;
      }
    }
  }
  return attempt;  // exhausted, collision_free == false
}

bsb::PhaseCounts fit_phase_counts(const world::Scene& scene, const bsb::SubTask& subtask,
                                  const bsb::PhaseCounts& defaults) {
  const world::ObjectSpec* obj = scene.find_object(subtask.object);
  if (!obj) return defaults;
  const Vec2 ip = obj->interaction_point();
  const Vec2 dest = subtask.resolve_destination(scene);
  const float pre_d = scene.gripper.pos.dist(ip);
  const float int_d = ip.dist(dest);
  auto frames_for = [](float dist) {
    return static_cast<int>(std::ceil(dist / world::kMaxSpeed)) + 2;
  };
  bsb::PhaseCounts pc = defaults;
  const int total = defaults.total();
  const int need_pre = std::max(2, frames_for(pre_d));
  const int need_int = std::max(2, frames_for(int_d));
  if (need_pre <= pc.pre && need_int <= pc.interact) return pc;
  pc.pre = std::max(pc.pre, need_pre);
  pc.interact = std::max(pc.interact, need_int);
  pc.post = total - pc.pre - pc.interact;
  if (pc.post < 2) {
    pc.post = 2;
    // shrink the slack phase back down, approach first
    int excess = pc.pre + pc.interact + pc.post - total;
    int pre_slack = pc.pre - need_pre;
    int take = std::min(excess, pre_slack);
    pc.pre -= take;
    excess -= take;
    pc.interact -= excess;
  }
  if (pc.pre < 2 || pc.interact < 2 || pc.pre + pc.interact + pc.post != total)
    fail(ErrorKind::PlanInfeasible, "sub-task distances exceed the frame budget");
  return pc;
}

bsb::BSB plan_trajectory(const world::Scene& scene, const bsb::SubTask& subtask,
                         const bsb::PhaseCounts& phase_counts, float interior_bow,
                         int min_refine_offset) {
  AffordanceResult aff = affordance(scene, subtask.object);
  const world::ObjectSpec* obj = scene.find_object(subtask.object);
  require(obj != nullptr, ErrorKind::NotFound, "planning needs a registered object: " + subtask.object);
  const Vec2 dest = subtask.resolve_destination(scene);

  // Destination center inside another object's footprint is unplannable.
  for (const auto& other : scene.objects) {
    if (other.id == subtask.object) continue;
    const bool inside = other.shape == world::Shape::Circle
                            ? dest.dist(other.pos) < other.size
                            : std::abs(dest.x - other.pos.x) < other.size &&
                                  std::abs(dest.y - other.pos.y) < other.size;
    if (inside)
      fail(ErrorKind::PlanInfeasible, "destination inside footprint of " + other.id);
  }
  {
    world::ObjectSpec placed = *obj;
    placed.pos = dest - obj->interaction_offset;
    for (const auto& other : scene.objects) {
      if (other.id == obj->id) continue;
      if (world::objects_overlap(placed, other))
        fail(ErrorKind::PlanInfeasible, "destination placement overlaps " + other.id);
    }
  }

  auto third_points = [](Vec2 a, Vec2 b) {
    return std::pair<Vec2, Vec2>{a + (b - a) * (1.0f / 3.0f), a + (b - a) * (2.0f / 3.0f)};
  };

  // Interact segment with optional candidate bow, refined until collision-free.
  PlanAttempt attempt;
  attempt.p0 = aff.interaction_point;
  attempt.p3 = dest;
  auto [i1, i2] = third_points(attempt.p0, attempt.p3);
  const Vec2 perp = chord_perp(attempt.p0, attempt.p3);
  attempt.p1 = i1 + perp * interior_bow;
  attempt.p2 = i2 + perp * interior_bow;
  {
    const auto pts = attempt_points(scene, *obj, attempt, phase_counts.interact);
    attempt.collision_free = !interact_collides(scene, *obj, pts);
  }
  if (!attempt.collision_free) {
    attempt = refine_from(scene, *obj, attempt, phase_counts.interact, min_refine_offset);
    if (!attempt.collision_free)
      fail(ErrorKind::PlanInfeasible,
           "no collision-free interact path after " + std::to_string(attempt.iterations_used) +
               " refinement candidates");
  }

  bsb::BSB plan;
  plan.phase_counts = phase_counts;
  plan.m_obj = std::move(aff.mask);
  plan.m_rob = world::gripper_mask(scene);
  plan.meta = subtask;

  const Vec2 g = scene.in_bounds(scene.gripper.pos) ? scene.gripper.pos : aff.interaction_point;
  auto [q1, q2] = third_points(g, aff.interaction_point);
  plan.traj_pre = bezier_points(g, q1, q2, aff.interaction_point, phase_counts.pre);
  clamp_speed(plan.traj_pre);

  plan.traj_interact = attempt_points(scene, *obj, attempt, phase_counts.interact);

  Vec2 retract = clamp_bounds(scene, dest + Vec2{0.0f, -10.0f}, 0.0f);
  auto [r1, r2] = third_points(dest, retract);
  plan.traj_post = bezier_points(dest, r1, r2, retract, phase_counts.post);
  clamp_speed(plan.traj_post);

  return plan;
}

}  // namespace hierogen::planner
