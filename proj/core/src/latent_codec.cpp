#include "hierogen/latent_codec.hpp"

#include <algorithm>
#include <cmath>

namespace hierogen::generator {

namespace {

// Seeded Gaussian 16x3, orthonormalized column-wise (modified Gram-Schmidt in
// f64), stored as f32.
Tensor make_lift(uint64_t seed) {
  Rng rng(seed);
  std::array<std::array<double, 16>, 3> cols{};
  for (auto& col : cols)
    for (double& v : col) v = rng.normal();
  for (int c = 0; c < 3; ++c) {
    for (int p = 0; p < c; ++p) {
      double dot = 0.0;
      for (int i = 0; i < 16; ++i) dot += cols[c][i] * cols[p][i];
      for (int i = 0; i < 16; ++i) cols[c][i] -= dot * cols[p][i];
    }
    double norm = 0.0;
    for (int i = 0; i < 16; ++i) norm += cols[c][i] * cols[c][i];
    norm = std::sqrt(norm);
    for (int i = 0; i < 16; ++i) cols[c][i] /= norm;
  }
  Tensor lift({kLatentChannels, 3});
  for (int i = 0; i < 16; ++i)
    for (int c = 0; c < 3; ++c) lift.at(i, c) = static_cast<float>(cols[c][i]);
  return lift;
}

}  // namespace

LatentCodec::LatentCodec(uint64_t seed) : seed_(seed), lift_(make_lift(seed)) {}

Tensor LatentCodec::encode_frame(const float* rgb) const {
  const int h = world::kHeight, w = world::kWidth;
  const int64_t plane = static_cast<int64_t>(h) * w;
  Tensor z({kLatentChannels, kLatentH, kLatentW});
  for (int by = 0; by < kLatentH; ++by)
    for (int bx = 0; bx < kLatentW; ++bx) {
      double mean[3] = {0.0, 0.0, 0.0};
      for (int c = 0; c < 3; ++c) {
        const float* pl = rgb + c * plane;
        for (int y = 0; y < kSpatialFactor; ++y) {
          const float* row = pl + (by * kSpatialFactor + y) * w + bx * kSpatialFactor;
          for (int x = 0; x < kSpatialFactor; ++x) mean[c] += row[x];
        }
        mean[c] /= kSpatialFactor * kSpatialFactor;
      }
      for (int i = 0; i < kLatentChannels; ++i) {
        double v = 0.0;
        for (int c = 0; c < 3; ++c) v += static_cast<double>(lift_.at(i, c)) * mean[c];
        z.at(i, by, bx) = static_cast<float>(v);
      }
    }
  return z;
}

Tensor LatentCodec::encode(const world::Video& v) const {
  require(v.h() == world::kHeight && v.w() == world::kWidth, ErrorKind::InvalidArgument,
          "encode expects 64x64x3 frames");
  const int t = v.t();
  Tensor z({t, kLatentChannels, kLatentH, kLatentW});
  const int64_t per = static_cast<int64_t>(kLatentChannels) * kLatentH * kLatentW;
  for (int f = 0; f < t; ++f) {
    Tensor zf = encode_frame(v.frame(f));
    std::copy(zf.data(), zf.data() + per, z.data() + f * per);
  }
  return z;
}

world::Video LatentCodec::decode(const Tensor& z, float fps) const {
  require(z.rank() == 4 && z.dim(1) == kLatentChannels && z.dim(2) == kLatentH &&
              z.dim(3) == kLatentW,
          ErrorKind::InvalidArgument, "decode expects [T,16,8,8]");
  const int t = z.dim(0), h = world::kHeight, w = world::kWidth;
  const int64_t plane = static_cast<int64_t>(h) * w;
  world::Video v;
  v.fps = fps;
  v.frames = Tensor({t, 3, h, w});
  for (int f = 0; f < t; ++f) {
    float* fr = v.frames.data() + static_cast<int64_t>(f) * 3 * plane;
    for (int by = 0; by < kLatentH; ++by)
      for (int bx = 0; bx < kLatentW; ++bx) {
        float mean[3];
        for (int c = 0; c < 3; ++c) {
          double val = 0.0;
          for (int i = 0; i < kLatentChannels; ++i)
            val += static_cast<double>(lift_.at(i, c)) * z.at(f, i, by, bx);
          mean[c] = std::clamp(static_cast<float>(val), 0.0f, 1.0f);
        }
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < kSpatialFactor; ++y) {
            float* row = fr + c * plane + (by * kSpatialFactor + y) * w + bx * kSpatialFactor;
            for (int x = 0; x < kSpatialFactor; ++x) row[x] = mean[c];
          }
      }
  }
  return v;
}

std::vector<float> LatentCodec::mask_feature(const Tensor& frame_rgb,
                                             const world::BitMask& mask) const {
  require(frame_rgb.rank() == 3 && frame_rgb.dim(0) == 3 && frame_rgb.dim(1) == mask.h &&
              frame_rgb.dim(2) == mask.w,
          ErrorKind::InvalidArgument, "mask_feature frame/mask mismatch");
  const int h = mask.h, w = mask.w;
  const int64_t plane = static_cast<int64_t>(h) * w;
  std::vector<float> feature(kLatentChannels, 0.0f);
  double total_cov = 0.0;
  std::vector<double> acc(kLatentChannels, 0.0);
  for (int by = 0; by * kSpatialFactor < h; ++by)
    for (int bx = 0; bx * kSpatialFactor < w; ++bx) {
      double mean[3] = {0.0, 0.0, 0.0};
      int covered = 0;
      for (int y = 0; y < kSpatialFactor; ++y)
        for (int x = 0; x < kSpatialFactor; ++x) {
          const int py = by * kSpatialFactor + y, px = bx * kSpatialFactor + x;
          if (!mask.at(px, py)) continue;
          ++covered;
          for (int c = 0; c < 3; ++c) mean[c] += frame_rgb[c * plane + py * w + px];
        }
      if (covered == 0) continue;
      const double cov = static_cast<double>(covered) / (kSpatialFactor * kSpatialFactor);
      for (int c = 0; c < 3; ++c) mean[c] /= kSpatialFactor * kSpatialFactor;
      for (int i = 0; i < kLatentChannels; ++i) {
        double v = 0.0;
        for (int c = 0; c < 3; ++c) v += static_cast<double>(lift_.at(i, c)) * mean[c];
        acc[static_cast<size_t>(i)] += cov * v;
      }
      total_cov += cov;
    }
  if (total_cov <= 0.0) return feature;
  for (int i = 0; i < kLatentChannels; ++i)
    feature[static_cast<size_t>(i)] = static_cast<float>(acc[static_cast<size_t>(i)] / total_cov);
  return feature;
}

}  // namespace hierogen::generator
