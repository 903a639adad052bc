#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace hierogen {

enum class ErrorKind {
  InvalidArgument,
  NotFound,
  Parse,
  PlanInfeasible,
  ExecutionInfeasible,
  AnnotationFailed,
  InsufficientData,
  StagedFailure,
  Io,
  Internal,
};

const char* to_string(ErrorKind kind);

/// Typed runtime error carried across module boundaries; the CLI maps
/// ErrorKind onto process exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool cond, ErrorKind kind, const std::string& message) {
  if (!cond) fail(kind, message);
}

struct Vec2 {
  float x = 0.0f;
  float y = 0.0f;

  Vec2() = default;
  Vec2(float x_, float y_) : x(x_), y(y_) {}

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(float s) const { return {x * s, y * s}; }
  float norm() const { return std::sqrt(x * x + y * y); }
  float dist(Vec2 o) const { return (*this - o).norm(); }
};

/// Deterministic RNG with explicit normal sampling (Box-Muller on mt19937_64
/// uniforms) so streams are reproducible independent of libstdc++'s
/// distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  double uniform() {  // [0,1)
    return (engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
    return lo + static_cast<int64_t>(uniform() * static_cast<double>(hi - lo + 1));
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Splitmix-style seed derivation; children of one master seed are decorrelated
/// and the (seed, tag, index) triple documents the lineage of every stream.
uint64_t derive_seed(uint64_t parent, const std::string& tag, uint64_t index = 0);

/// Worker count for batch fan-out: HIEROGEN_WORKERS env override, else
/// hardware concurrency. Results never depend on the worker count.
int worker_count();

/// Index-parallel loop with deterministic output slots. Runs inline when
/// n is small or a single worker is configured.
void parallel_for(int64_t n, const std::function<void(int64_t)>& body);

}  // namespace hierogen
