#include "hierogen/bsb.hpp"

#include <cmath>

#include "hierogen/fsutil.hpp"

namespace hierogen::bsb {

Vec2 SubTask::resolve_destination(const world::Scene& scene) const {
  if (dest_point) return *dest_point;
  const world::Zone* z = scene.find_zone(dest_zone);
  require(z != nullptr, ErrorKind::NotFound, "unknown destination zone: " + dest_zone);
  return z->center();
}

std::string SubTask::describe() const {
  std::string verb = action == Action::PickPlace ? "put" : "push";
  std::string dest = dest_point ? ("(" + std::to_string(dest_point->x) + "," +
                                   std::to_string(dest_point->y) + ")")
                                : dest_zone;
  return verb + " " + object + " to " + dest;
}

std::vector<Vec2> BSB::full_trajectory() const {
  std::vector<Vec2> all;
  all.reserve(traj_pre.size() + traj_interact.size() + traj_post.size());
  all.insert(all.end(), traj_pre.begin(), traj_pre.end());
  all.insert(all.end(), traj_interact.begin(), traj_interact.end());
  all.insert(all.end(), traj_post.begin(), traj_post.end());
  return all;
}

namespace {

const world::ObjectSpec* resolve_manipulated(const BSB& plan, const world::Scene& scene) {
  if (plan.meta) return scene.find_object(plan.meta->object);
  if (plan.traj_interact.empty()) return nullptr;
  const Vec2 start = plan.traj_interact.front();
  const world::ObjectSpec* best = nullptr;
  float best_d = world::kGraspRadius + 1.0f;
  for (const auto& o : scene.objects) {
    const float d = start.dist(o.interaction_point());
    if (d < best_d) {
      best_d = d;
      best = &o;
    }
  }
  return best;
}

}  // namespace

std::vector<Violation> validate(const BSB& plan, const world::Scene& scene,
                                const ValidateOptions& opts) {
  std::vector<Violation> out;
  const auto& pc = plan.phase_counts;

  if (pc.total() != world::kFrames)
    out.push_back({"phase sum != T (" + std::to_string(pc.total()) + " vs " +
                   std::to_string(world::kFrames) + ")"});
  if (pc.pre < 1 || pc.interact < 1 || pc.post < 1)
    out.push_back({"each phase count must be >= 1"});
  if (static_cast<int>(plan.traj_pre.size()) != pc.pre ||
      static_cast<int>(plan.traj_interact.size()) != pc.interact ||
      static_cast<int>(plan.traj_post.size()) != pc.post)
    out.push_back({"trajectory lengths disagree with phase counts"});

  const auto all = plan.full_trajectory();
  for (size_t i = 0; i < all.size(); ++i) {
    if (!scene.in_bounds(all[i]))
      out.push_back({"trajectory point out of bounds", static_cast<int>(i)});
    if (!std::isfinite(all[i].x) || !std::isfinite(all[i].y))
      out.push_back({"trajectory point not finite", static_cast<int>(i)});
  }
  // speed applies within each phase: the active agent changes at boundaries
  const float speed_cap = world::kMaxSpeed + opts.speed_tolerance + 1e-4f;
  int offset = 0;
  for (const auto* traj : {&plan.traj_pre, &plan.traj_interact, &plan.traj_post}) {
    for (size_t i = 1; i < traj->size(); ++i) {
      if ((*traj)[i].dist((*traj)[i - 1]) > speed_cap)
        out.push_back({"step exceeds max speed", offset + static_cast<int>(i)});
    }
    offset += static_cast<int>(traj->size());
  }
  if (plan.m_obj.h != scene.height || plan.m_obj.w != scene.width ||
      plan.m_rob.h != scene.height || plan.m_rob.w != scene.width)
    out.push_back({"mask dimensions disagree with scene"});

  if (opts.check_collisions && out.empty()) {
    const world::ObjectSpec* obj = resolve_manipulated(plan, scene);
    if (!obj) {
      out.push_back({"collision check: cannot resolve manipulated object"});
    } else {
      for (size_t k = 0; k < plan.traj_interact.size(); ++k) {
        world::ObjectSpec moved = *obj;
        moved.pos = plan.traj_interact[k] - obj->interaction_offset;
        for (const auto& other : scene.objects) {
          if (other.id == moved.id) continue;
          if (world::objects_overlap(moved, other)) {
            out.push_back({"interact path collides with " + other.id,
                           pc.pre + static_cast<int>(k)});
            break;
          }
        }
        if (!out.empty()) break;
      }
    }
  }
  return out;
}

GuidanceTensor build_guidance(const BSB& plan, const world::Scene& scene,
                              const generator::LatentCodec& codec) {
  const int t_total = plan.phase_counts.total();
  require(static_cast<int>(plan.full_trajectory().size()) == t_total, ErrorKind::InvalidArgument,
          "trajectory lengths disagree with phase counts");
  const Tensor frame0 = world::render(scene);
  const std::vector<float> feat_rob = codec.mask_feature(frame0, plan.m_rob);
  const std::vector<float> feat_obj = codec.mask_feature(frame0, plan.m_obj);

  GuidanceTensor g;
  g.data = Tensor({t_total, generator::kLatentChannels, generator::kLatentH, generator::kLatentW});
  const auto all = plan.full_trajectory();
  for (int f = 0; f < t_total; ++f) {
    const Vec2 p = all[static_cast<size_t>(f)];
    require(scene.in_bounds(p), ErrorKind::InvalidArgument,
            "guidance trajectory point out of bounds at frame " + std::to_string(f));
    const bool interact_phase =
        f >= plan.phase_counts.pre && f < plan.phase_counts.pre + plan.phase_counts.interact;
    const std::vector<float>& feat = interact_phase ? feat_obj : feat_rob;
    const int cx = std::min(generator::kLatentW - 1,
                            static_cast<int>(p.x) / generator::kSpatialFactor);
    const int cy = std::min(generator::kLatentH - 1,
                            static_cast<int>(p.y) / generator::kSpatialFactor);
    for (int i = 0; i < generator::kLatentChannels; ++i)
      g.data.at(f, i, cy, cx) = feat[static_cast<size_t>(i)];
  }
  return g;
}

namespace {

fs::json mask_to_rle(const world::BitMask& m) {
  fs::json j;
  j["h"] = m.h;
  j["w"] = m.w;
  fs::json runs = fs::json::array();
  uint8_t cur = 0;  // runs alternate starting with zeros
  int64_t len = 0;
  for (uint8_t b : m.bits) {
    const uint8_t v = b ? 1 : 0;
    if (v == cur) {
      ++len;
    } else {
      runs.push_back(len);
      cur = v;
      len = 1;
    }
  }
  runs.push_back(len);
  j["runs"] = runs;
  return j;
}

world::BitMask mask_from_rle(const fs::json& j) {
  const int h = j.at("h").get<int>();
  const int w = j.at("w").get<int>();
  require(h >= 0 && w >= 0 && h <= 4096 && w <= 4096, ErrorKind::Parse, "bad mask dims");
  world::BitMask m(h, w);
  int64_t pos = 0;
  uint8_t cur = 0;
  for (const auto& jr : j.at("runs")) {
    const int64_t len = jr.get<int64_t>();
    require(len >= 0 && pos + len <= static_cast<int64_t>(m.bits.size()), ErrorKind::Parse,
            "mask RLE overruns");
    if (cur)
      std::fill(m.bits.begin() + pos, m.bits.begin() + pos + len, uint8_t{1});
    pos += len;
    cur = cur ? 0 : 1;
  }
  require(pos == static_cast<int64_t>(m.bits.size()), ErrorKind::Parse, "mask RLE short");
  return m;
}

fs::json traj_to_json(const std::vector<Vec2>& t) {
  fs::json out = fs::json::array();
  for (Vec2 p : t) out.push_back({p.x, p.y});
  return out;
}

std::vector<Vec2> traj_from_json(const fs::json& j) {
  std::vector<Vec2> out;
  for (const auto& jp : j) out.push_back({jp.at(0).get<float>(), jp.at(1).get<float>()});
  return out;
}

}  // namespace

std::string serialize(const BSB& plan) {
  fs::json j;
  j["m_obj_rle"] = mask_to_rle(plan.m_obj);
  j["m_rob_rle"] = mask_to_rle(plan.m_rob);
  j["traj_pre"] = traj_to_json(plan.traj_pre);
  j["traj_interact"] = traj_to_json(plan.traj_interact);
  j["traj_post"] = traj_to_json(plan.traj_post);
  j["phase_counts"] = {plan.phase_counts.pre, plan.phase_counts.interact, plan.phase_counts.post};
  if (plan.meta) {
    fs::json m;
    m["action"] = plan.meta->action == SubTask::Action::PickPlace ? "pick_place" : "push";
    m["object"] = plan.meta->object;
    if (plan.meta->dest_point)
      m["dest_point"] = {plan.meta->dest_point->x, plan.meta->dest_point->y};
    else
      m["dest_zone"] = plan.meta->dest_zone;
    j["meta"] = {{"subtask", m}};
  }
  return j.dump(2) + "\n";
}

BSB deserialize(const std::string& bytes) {
  fs::json j;
  try {
    j = fs::json::parse(bytes);
  } catch (const fs::json::parse_error& e) {
    fail(ErrorKind::Parse,
         std::string("bsb: ") + e.what() + " (byte offset " + std::to_string(e.byte) + ")");
  }
  BSB plan;
  try {
    plan.m_obj = mask_from_rle(j.at("m_obj_rle"));
    plan.m_rob = mask_from_rle(j.at("m_rob_rle"));
    plan.traj_pre = traj_from_json(j.at("traj_pre"));
    plan.traj_interact = traj_from_json(j.at("traj_interact"));
    plan.traj_post = traj_from_json(j.at("traj_post"));
    plan.phase_counts.pre = j.at("phase_counts").at(0).get<int>();
    plan.phase_counts.interact = j.at("phase_counts").at(1).get<int>();
    plan.phase_counts.post = j.at("phase_counts").at(2).get<int>();
    if (j.contains("meta")) {
      SubTask st;
      const auto& m = j.at("meta").at("subtask");
      const std::string action = m.at("action").get<std::string>();
      require(action == "pick_place" || action == "push", ErrorKind::Parse,
              "unknown action: " + action);
      st.action = action == "pick_place" ? SubTask::Action::PickPlace : SubTask::Action::Push;
      st.object = m.at("object").get<std::string>();
      if (m.contains("dest_point"))
        st.dest_point = Vec2{m.at("dest_point").at(0).get<float>(),
                             m.at("dest_point").at(1).get<float>()};
      else
        st.dest_zone = m.at("dest_zone").get<std::string>();
      plan.meta = std::move(st);
    }
  } catch (const fs::json::exception& e) {
    fail(ErrorKind::Parse, std::string("bsb: ") + e.what());
  }
  return plan;
}

void save(const std::filesystem::path& path, const BSB& plan) {
  fs::write_text_atomic(path, serialize(plan));
}

BSB load(const std::filesystem::path& path) { return deserialize(fs::read_text(path)); }

}  // namespace hierogen::bsb
