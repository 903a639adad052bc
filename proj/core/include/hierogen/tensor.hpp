#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hierogen/common.hpp"

namespace hierogen {

/// Live/peak byte counters for all Tensor payloads. The long-horizon rollout
/// memory criterion reads the per-stage high-water mark from here.
struct TensorMemoryStats {
  static int64_t live_bytes();
  static int64_t peak_bytes();
  static void reset_peak();
};

/// Dense row-major float32 tensor. All public operations leave every value
/// finite; shape/data consistency is enforced on construction.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<float> data);
  Tensor(const Tensor& o);
  Tensor(Tensor&& o) noexcept;
  Tensor& operator=(const Tensor& o);
  Tensor& operator=(Tensor&& o) noexcept;
  ~Tensor();

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, float v);
  static Tensor randn(std::vector<int> shape, Rng& rng, float scale = 1.0f);

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  float& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  float at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  float& at(int i, int j, int k) {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  float at(int i, int j, int k) const {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  float& at(int i, int j, int k, int l) {
    return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  float at(int i, int j, int k, int l) const {
    return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  Tensor reshaped(std::vector<int> shape) const;

  bool all_zero() const;
  bool all_finite() const;
  double sum64() const;
  void fill(float v);

  bool same_bytes(const Tensor& o) const;

 private:
  void account_alloc();
  void account_free();

  std::vector<int> shape_;
  std::vector<float> data_;
};

int64_t shape_numel(const std::vector<int>& shape);

/// HGT1 container: magic "HGT1", u32 rank, u32 dims, little-endian f32 payload.
void save_hgt1(const std::filesystem::path& path, const Tensor& t);
Tensor load_hgt1(const std::filesystem::path& path);

}  // namespace hierogen
