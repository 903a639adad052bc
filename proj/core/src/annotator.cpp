#include "hierogen/annotator.hpp"

#include <algorithm>
#include <cmath>

#include "hierogen/planner.hpp"

namespace hierogen::annotator {

namespace {

struct Component {
  int64_t size = 0;
  double weight = 0.0;
  double sx = 0.0, sy = 0.0;
};

// Largest 4-connected component over `mark` (weights used for the centroid).
Component largest_component(const std::vector<float>& mark, int h, int w) {
  std::vector<int> label(static_cast<size_t>(h) * w, -1);
  Component best;
  std::vector<int> stack;
  int next = 0;
  for (int start = 0; start < h * w; ++start) {
    if (mark[static_cast<size_t>(start)] <= 0.0f || label[static_cast<size_t>(start)] >= 0) continue;
    Component comp;
    stack.push_back(start);
    label[static_cast<size_t>(start)] = next;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int x = p % w, y = p / w;
      comp.size += 1;
      const double wt = mark[static_cast<size_t>(p)];
      comp.weight += wt;
      comp.sx += wt * (x + 0.5);
      comp.sy += wt * (y + 0.5);
      const int nb[4] = {p - 1, p + 1, p - w, p + w};
      const bool ok[4] = {x > 0, x < w - 1, y > 0, y < h - 1};
      for (int i = 0; i < 4; ++i) {
        if (!ok[i]) continue;
        const int q = nb[i];
        if (mark[static_cast<size_t>(q)] > 0.0f && label[static_cast<size_t>(q)] < 0) {
          label[static_cast<size_t>(q)] = next;
          stack.push_back(q);
        }
      }
    }
    ++next;
    if (comp.size > best.size) best = comp;
  }
  return best;
}

Track run_tracker(const world::Video& video, const std::function<float(const float*, int64_t)>& score) {
  const int t = video.t(), h = video.h(), w = video.w();
  const int64_t plane = static_cast<int64_t>(h) * w;
  Track tr;
  tr.centroids.resize(static_cast<size_t>(t));
  tr.visible.resize(static_cast<size_t>(t), false);
  std::vector<float> mark(static_cast<size_t>(plane));
  Vec2 last{0.0f, 0.0f};
  bool any = false;
  for (int f = 0; f < t; ++f) {
    const float* fr = video.frame(f);
    for (int64_t p = 0; p < plane; ++p) mark[static_cast<size_t>(p)] = score(fr, p);
    const Component comp = largest_component(mark, h, w);
    if (comp.size >= 4) {
      last = {static_cast<float>(comp.sx / comp.weight), static_cast<float>(comp.sy / comp.weight)};
      tr.visible[static_cast<size_t>(f)] = true;
      any = true;
    }
    tr.centroids[static_cast<size_t>(f)] = last;
  }
  if (any) {
    // backfill frames before the first visible one
    int first = 0;
    while (!tr.visible[static_cast<size_t>(first)]) ++first;
    for (int f = 0; f < first; ++f) tr.centroids[static_cast<size_t>(f)] = tr.centroids[static_cast<size_t>(first)];
  }
  return tr;
}

}  // namespace

Track track(const world::Video& video, const std::array<float, 3>& color_key) {
  const int64_t plane = static_cast<int64_t>(video.h()) * video.w();
  auto score = [&](const float* fr, int64_t p) -> float {
    float d = 0.0f;
    for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(fr[c * plane + p] - color_key[static_cast<size_t>(c)]));
    return d <= 0.05f ? 1.0f : 0.0f;
  };
  Track tr = run_tracker(video, score);
  require(tr.visible[0], ErrorKind::NotFound, "color key not found in frame 0");
  return tr;
}

Track track_similarity(const world::Video& video, const std::array<float, 3>& color_key,
                       const std::vector<std::array<float, 3>>& distractors) {
  const int64_t plane = static_cast<int64_t>(video.h()) * video.w();
  constexpr float kTol = 0.55f;
  auto dist = [](const float* fr, int64_t p, int64_t plane_, const std::array<float, 3>& key) {
    float s = 0.0f;
    for (int c = 0; c < 3; ++c) {
      const float d = fr[c * plane_ + p] - key[static_cast<size_t>(c)];
      s += d * d;
    }
    return std::sqrt(s);
  };
  const std::array<float, 3> bg{world::kBackground, world::kBackground, world::kBackground};
  auto score = [&](const float* fr, int64_t p) -> float {
    const float dk = dist(fr, p, plane, color_key);
    if (dk >= kTol) return 0.0f;
    if (dk >= dist(fr, p, plane, bg) - 0.05f) return 0.0f;
    // achromatic pixels (background shades, zone outlines, the arm cross)
    // are never object evidence
    const float mx = std::max({fr[p], fr[plane + p], fr[2 * plane + p]});
    const float mn = std::min({fr[p], fr[plane + p], fr[2 * plane + p]});
    if (mx - mn < 0.15f) return 0.0f;
    for (const auto& other : distractors) {
      if (other == color_key) continue;
      if (dk > dist(fr, p, plane, other)) return 0.0f;
    }
    return kTol - dk;
  };
  return run_tracker(video, score);
}

std::tuple<int, int, int> segment_phases(const Track& obj_track, float motion_eps) {
  const int t = obj_track.length();
  require(t >= 3, ErrorKind::InvalidArgument, "segment_phases needs T >= 3");
  int first = -1, last = -1;
  for (int f = 1; f < t; ++f) {
    const float d = obj_track.centroids[static_cast<size_t>(f)].dist(
        obj_track.centroids[static_cast<size_t>(f - 1)]);
    if (d > motion_eps) {
      if (first < 0) first = f;
      last = f;
    }
  }
  if (first < 0) return {t - 2, 1, 1};  // never moved
  int pre = std::min(first, t - 2);
  int post = std::max(1, (t - 1) - last);
  if (pre + post >= t) post = t - 1 - pre;
  int interact = t - pre - post;
  return {pre, interact, post};
}

bsb::BSB annotate(const world::Video& video, const std::string& instruction,
                  const world::Scene& scene0) {
  const auto tasks = planner::parse(instruction, scene0);
  const bsb::SubTask& st = tasks.front();
  const world::ObjectSpec* obj = scene0.find_object(st.object);
  require(obj != nullptr, ErrorKind::AnnotationFailed, "target object not in scene: " + st.object);

  Track obj_track;
  try {
    obj_track = track(video, obj->color);
  } catch (const Error& e) {
    fail(ErrorKind::AnnotationFailed, "object tracking failed at frame 0 (" + st.object + ")");
  }
  const int t = video.t();
  for (int f = 0; f < t; ++f)
    if (!obj_track.visible[static_cast<size_t>(f)])
      fail(ErrorKind::AnnotationFailed, "object lost at frame " + std::to_string(f));

  Track grip_track;
  bool have_gripper = true;
  try {
    grip_track = track(video, {0.0f, 0.0f, 0.0f});
  } catch (const Error&) {
    have_gripper = false;
  }
  if (have_gripper) {
    // Interpolate linearly across occluded gaps (the cross sits under the
    // held object through the interact phase); hold at the ends.
    int prev = -1;
    for (int f = 0; f < t; ++f) {
      if (!grip_track.visible[static_cast<size_t>(f)]) continue;
      if (prev >= 0 && f > prev + 1) {
        const Vec2 a = grip_track.centroids[static_cast<size_t>(prev)];
        const Vec2 b = grip_track.centroids[static_cast<size_t>(f)];
        for (int m = prev + 1; m < f; ++m) {
          const float u = static_cast<float>(m - prev) / static_cast<float>(f - prev);
          grip_track.centroids[static_cast<size_t>(m)] = a + (b - a) * u;
        }
      }
      prev = f;
    }
    int last_vis = -1;
    for (int f = 0; f < t; ++f)
      if (grip_track.visible[static_cast<size_t>(f)]) last_vis = f;
    for (int f = last_vis + 1; f < t && last_vis >= 0; ++f)
      grip_track.centroids[static_cast<size_t>(f)] =
          grip_track.centroids[static_cast<size_t>(last_vis)];
  } else {
    grip_track = obj_track;  // armless video: degenerate but total
  }

  auto [pre, interact, post] = segment_phases(obj_track, kMotionEps);

  bsb::BSB plan;
  plan.phase_counts = {pre, interact, post};
  plan.meta = st;

  const int64_t plane = static_cast<int64_t>(video.h()) * video.w();
  const float* f0 = video.frame(0);
  plan.m_obj = world::BitMask(video.h(), video.w());
  plan.m_rob = world::BitMask(video.h(), video.w());
  for (int64_t p = 0; p < plane; ++p) {
    float dobj = 0.0f, drob = 0.0f;
    for (int c = 0; c < 3; ++c) {
      dobj = std::max(dobj, std::abs(f0[c * plane + p] - obj->color[static_cast<size_t>(c)]));
      drob = std::max(drob, std::abs(f0[c * plane + p]));
    }
    if (dobj <= 0.05f) plan.m_obj.bits[static_cast<size_t>(p)] = 1;
    if (drob <= 0.05f) plan.m_rob.bits[static_cast<size_t>(p)] = 1;
  }

  for (int f = 0; f < pre; ++f)
    plan.traj_pre.push_back(grip_track.centroids[static_cast<size_t>(f)]);
  for (int f = pre; f < pre + interact; ++f)
    plan.traj_interact.push_back(obj_track.centroids[static_cast<size_t>(f)]);
  for (int f = t - post; f < t; ++f)
    plan.traj_post.push_back(grip_track.centroids[static_cast<size_t>(f)]);

  bsb::ValidateOptions opts;
  opts.check_collisions = false;  // observed data can legitimately include contact
  opts.speed_tolerance = 2.0f;    // rasterized-centroid + partial-occlusion jitter on max-speed steps
  const auto violations = bsb::validate(plan, scene0, opts);
  if (!violations.empty())
    fail(ErrorKind::AnnotationFailed,
         violations.front().what + " (frame " + std::to_string(violations.front().frame) + ")");
  return plan;
}

}  // namespace hierogen::annotator
