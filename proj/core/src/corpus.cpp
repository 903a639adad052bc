#include "hierogen/corpus.hpp"

#include <algorithm>
#include <cmath>

namespace hierogen::corpus {

namespace {

bool rect_overlaps(float ax0, float ay0, float ax1, float ay1, float bx0, float by0, float bx1,
                   float by1) {
  return ax0 < bx1 && bx0 < ax1 && ay0 < by1 && by0 < ay1;
}

bool object_clear_of_zones(const world::ObjectSpec& o, const std::vector<world::Zone>& zones) {
  const float pad = 2.0f;
  for (const auto& z : zones) {
    if (rect_overlaps(o.pos.x - o.size - pad, o.pos.y - o.size - pad, o.pos.x + o.size + pad,
                      o.pos.y + o.size + pad, z.x0, z.y0, z.x1, z.y1))
      return false;
  }
  return true;
}

}  // namespace

world::Scene random_scene(Rng& rng, int n_objects) {
  world::Scene scene;

  // two destination zones, 8-aligned, 24 px square, in the lower band
  const char* zone_names[2] = {"bin", "tray"};
  for (int zi = 0; zi < 2; ++zi) {
    for (int attempt = 0;; ++attempt) {
      require(attempt < 200, ErrorKind::Internal, "zone placement failed");
      const float x0 = 8.0f * static_cast<float>(rng.uniform_int(0, 5));
      const float y0 = 8.0f * static_cast<float>(rng.uniform_int(4, 5));
      world::Zone z{zone_names[zi], x0, y0, x0 + 24.0f, y0 + 24.0f};
      bool clear = z.x1 <= 64.0f && z.y1 <= 64.0f;
      for (const auto& other : scene.zones)
        if (rect_overlaps(z.x0, z.y0, z.x1, z.y1, other.x0, other.y0, other.x1, other.y1))
          clear = false;
      if (clear) {
        scene.zones.push_back(z);
        break;
      }
    }
  }

  const auto& pal = world::palette();
  require(n_objects <= static_cast<int>(pal.size()), ErrorKind::InvalidArgument,
          "more objects than palette colors");
  for (int oi = 0; oi < n_objects; ++oi) {
    for (int attempt = 0;; ++attempt) {
      require(attempt < 500, ErrorKind::Internal, "object placement failed");
      world::ObjectSpec o;
      o.shape = rng.uniform() < 0.5 ? world::Shape::Circle : world::Shape::Square;
      o.size = static_cast<float>(rng.uniform(4.0, 6.0));
      o.color = pal[static_cast<size_t>(oi)].rgb;
      o.id = std::string(pal[static_cast<size_t>(oi)].name) +
             (o.shape == world::Shape::Circle ? "_circle" : "_square");
      const float margin = o.size + 2.0f;
      o.pos = {static_cast<float>(rng.uniform(margin, 64.0 - margin)),
               static_cast<float>(rng.uniform(margin, 30.0))};
      o.interaction_offset = {0.0f, 0.0f};
      bool ok = object_clear_of_zones(o, scene.zones);
      for (const auto& other : scene.objects) {
        world::ObjectSpec padded = o;
        padded.size += 2.0f;
        if (world::objects_overlap(padded, other)) ok = false;
      }
      if (ok) {
        scene.objects.push_back(std::move(o));
        break;
      }
    }
  }

  scene.gripper.pos = {static_cast<float>(rng.uniform(8.0, 56.0)),
                       static_cast<float>(rng.uniform(3.0, 8.0))};
  scene.validate();
  return scene;
}

Item generate_item(uint64_t seed, const GenDataConfig& cfg, const bsb::PhaseCounts& defaults) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    Rng rng(derive_seed(seed, "item", static_cast<uint64_t>(attempt)));
    try {
      Item item;
      const int n_objects =
          static_cast<int>(rng.uniform_int(cfg.min_objects, cfg.max_objects));
      item.scene = random_scene(rng, n_objects);
      const int n_sub = static_cast<int>(rng.uniform_int(cfg.min_subtasks, cfg.max_subtasks));
      require(n_sub <= n_objects, ErrorKind::Internal, "more sub-tasks than objects");

      // distinct objects, alternating destination zones, with a minimum
      // carry distance so motion stays above the annotation onset threshold
      std::vector<int> order(static_cast<size_t>(n_objects));
      for (int i = 0; i < n_objects; ++i) order[static_cast<size_t>(i)] = i;
      for (int i = n_objects - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)],
                  order[static_cast<size_t>(rng.uniform_int(0, i))]);

      world::Scene cur = item.scene;
      for (int si = 0; si < n_sub; ++si) {
        const world::ObjectSpec& obj =
            item.scene.objects[static_cast<size_t>(order[static_cast<size_t>(si)])];
        bsb::SubTask st;
        st.action = rng.uniform() < 0.7 ? bsb::SubTask::Action::PickPlace
                                        : bsb::SubTask::Action::Push;
        st.object = obj.id;
        const world::ObjectSpec* live = cur.find_object(obj.id);
        const std::string near = cur.zones[0].center().dist(live->pos) >=
                                         cur.zones[1].center().dist(live->pos)
                                     ? cur.zones[0].name
                                     : cur.zones[1].name;
        st.dest_zone = near;  // farther zone keeps the carry distance up
        require(st.resolve_destination(cur).dist(live->pos) >= 18.0f, ErrorKind::PlanInfeasible,
                "carry distance too short");
        const bsb::PhaseCounts pc = planner::fit_phase_counts(cur, st, defaults);
        bsb::BSB plan = planner::plan_trajectory(cur, st, pc);
        item.stage_scenes.push_back(cur);
        world::Scene next;
        item.videos.push_back(world::execute_plan(cur, plan, &next));
        item.plans.push_back(std::move(plan));
        item.subtasks.push_back(st);
        cur = std::move(next);
      }
      item.instruction = planner::to_text(item.subtasks);
      return item;
    } catch (const Error&) {
      continue;  // resample with the next derived seed
    }
  }
  fail(ErrorKind::Internal, "could not generate a feasible corpus item");
}

}  // namespace hierogen::corpus
