#include "hierogen/tensor.hpp"

#include <malloc.h>

#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>

namespace hierogen {

namespace {
// Tensor payloads run 150-600 KB and churn fast on the tape; above glibc's
// default mmap threshold every one would be a fresh mmap + page faults.
const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
  return true;
}();

std::atomic<int64_t> g_live_bytes{0};
std::atomic<int64_t> g_peak_bytes{0};

void add_bytes(int64_t delta) {
  int64_t live = g_live_bytes.fetch_add(delta) + delta;
  if (delta > 0) {
    int64_t peak = g_peak_bytes.load();
    while (live > peak && !g_peak_bytes.compare_exchange_weak(peak, live)) {
    }
  }
}
}  // namespace

int64_t TensorMemoryStats::live_bytes() { return g_live_bytes.load(); }
int64_t TensorMemoryStats::peak_bytes() { return g_peak_bytes.load(); }
void TensorMemoryStats::reset_peak() { g_peak_bytes.store(g_live_bytes.load()); }

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    require(d >= 0, ErrorKind::InvalidArgument, "negative tensor dimension");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
  account_alloc();
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(shape_numel(shape_) == static_cast<int64_t>(data_.size()), ErrorKind::InvalidArgument,
          "tensor shape/data size mismatch");
  account_alloc();
}

Tensor::Tensor(const Tensor& o) : shape_(o.shape_), data_(o.data_) { account_alloc(); }

Tensor::Tensor(Tensor&& o) noexcept : shape_(std::move(o.shape_)), data_(std::move(o.data_)) {
  o.shape_.clear();
}

Tensor& Tensor::operator=(const Tensor& o) {
  if (this != &o) {
    account_free();
    shape_ = o.shape_;
    data_ = o.data_;
    account_alloc();
  }
  return *this;
}

Tensor& Tensor::operator=(Tensor&& o) noexcept {
  if (this != &o) {
    account_free();
    shape_ = std::move(o.shape_);
    data_ = std::move(o.data_);
    o.shape_.clear();
  }
  return *this;
}

Tensor::~Tensor() { account_free(); }

void Tensor::account_alloc() { add_bytes(static_cast<int64_t>(data_.size()) * 4); }
void Tensor::account_free() {
  if (!data_.empty()) add_bytes(-static_cast<int64_t>(data_.size()) * 4);
}

Tensor Tensor::full(std::vector<int> shape, float v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, float scale) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal()) * scale;
  return t;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  require(shape_numel(shape) == numel(), ErrorKind::InvalidArgument, "reshape changes element count");
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_zero() const {
  for (float v : data_)
    if (v != 0.0f) return false;
  return true;
}

bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::sum64() const {
  double s = 0.0;
  for (float v : data_) s += v;
  return s;
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::same_bytes(const Tensor& o) const {
  return shape_ == o.shape_ &&
         std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(float)) == 0;
}

void save_hgt1(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot open for write: " + path.string());
  out.write("HGT1", 4);
  uint32_t rank = static_cast<uint32_t>(t.rank());
  out.write(reinterpret_cast<const char*>(&rank), 4);
  for (int d : t.shape()) {
    uint32_t dim = static_cast<uint32_t>(d);
    out.write(reinterpret_cast<const char*>(&dim), 4);
  }
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
  require(out.good(), ErrorKind::Io, "short write: " + path.string());
}

Tensor load_hgt1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open: " + path.string());
  char magic[4];
  in.read(magic, 4);
  require(in.good() && std::memcmp(magic, "HGT1", 4) == 0, ErrorKind::Parse,
          "bad HGT1 magic in " + path.string());
  uint32_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), 4);
  require(in.good() && rank <= 8, ErrorKind::Parse, "bad HGT1 rank in " + path.string());
  std::vector<int> shape(rank);
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t dim = 0;
    in.read(reinterpret_cast<char*>(&dim), 4);
    require(in.good(), ErrorKind::Parse, "truncated HGT1 header in " + path.string());
    shape[i] = static_cast<int>(dim);
  }
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
  require(in.good() || t.numel() == 0, ErrorKind::Parse, "truncated HGT1 payload in " + path.string());
  return t;
}

}  // namespace hierogen
