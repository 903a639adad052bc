#pragma once

#include <vector>

#include "hierogen/tensor.hpp"
#include "hierogen/world.hpp"

namespace hierogen::generator {

inline constexpr int kLatentChannels = 16;
inline constexpr int kSpatialFactor = 8;
inline constexpr int kLatentH = world::kHeight / kSpatialFactor;
inline constexpr int kLatentW = world::kWidth / kSpatialFactor;
inline constexpr uint64_t kCodecSeed = 0x1105C0DECULL;

/// Fixed linear pixel<->latent codec: per-8x8-block channel means lifted by a
/// seeded orthonormal 3->16 map; temporal factor 1. decode is the transpose
/// map followed by nearest-neighbor upsampling.
class LatentCodec {
 public:
  explicit LatentCodec(uint64_t seed = kCodecSeed);

  /// [3,H,W] frame -> [16, H/8, W/8]
  Tensor encode_frame(const float* rgb) const;
  /// Video -> latent [T, 16, H/8, W/8]
  Tensor encode(const world::Video& v) const;
  /// Latent [T,16,h,w] -> Video (values clamped to [0,1])
  world::Video decode(const Tensor& z, float fps = 8.0f) const;

  /// Coverage-weighted average over latent cells of the lifted block means of
  /// the mask-cropped frame (zero outside the mask). Returns a 16-vector;
  /// all-zero for an empty mask.
  std::vector<float> mask_feature(const Tensor& frame_rgb, const world::BitMask& mask) const;

  const Tensor& lift() const { return lift_; }  // [16,3], orthonormal columns
  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  Tensor lift_;
};

}  // namespace hierogen::generator
