#pragma once

#include <array>
#include <string>
#include <tuple>
#include <vector>

#include "hierogen/bsb.hpp"
#include "hierogen/world.hpp"

namespace hierogen::annotator {

struct Track {
  std::vector<Vec2> centroids;   // length T
  std::vector<bool> visible;     // component >= 4 px found

  int length() const { return static_cast<int>(centroids.size()); }
};

/// Color-keyed tracking: per frame, centroid of the largest connected
/// component within L-inf distance 0.05 of the key; visible=false when no
/// component has >= 4 px. Throws not-found when frame 0 has no match.
Track track(const world::Video& video, const std::array<float, 3>& color_key);

/// Wide-tolerance similarity tracker for lossily decoded (generated) videos:
/// candidate pixels are closer to the key than to the background and any
/// listed distractor key; centroid is similarity-weighted over the largest
/// component. Returns all-invisible rather than throwing.
Track track_similarity(const world::Video& video, const std::array<float, 3>& color_key,
                       const std::vector<std::array<float, 3>>& distractors = {});

/// Phase segmentation from object motion onset/offset. F_pre counts leading
/// frames with displacement <= motion_eps, F_post trailing static frames
/// after the last moving frame; a never-moving track yields (T-2, 1, 1).
std::tuple<int, int, int> segment_phases(const Track& obj_track, float motion_eps = 0.5f);

inline constexpr float kMotionEps = 0.5f;

/// Recovers a BSB from a raw video + instruction: frame-0 masks, tracked
/// trajectories, phases from object motion. Collision validation is skipped
/// (observed data can include contact); structural invariants still hold.
bsb::BSB annotate(const world::Video& video, const std::string& instruction,
                  const world::Scene& scene0);

}  // namespace hierogen::annotator
