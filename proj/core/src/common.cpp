#include "hierogen/common.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace hierogen {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::NotFound: return "not-found";
    case ErrorKind::Parse: return "parse-error";
    case ErrorKind::PlanInfeasible: return "plan-infeasible";
    case ErrorKind::ExecutionInfeasible: return "execution-infeasible";
    case ErrorKind::AnnotationFailed: return "annotation-failed";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::StagedFailure: return "staged-failure";
    case ErrorKind::Io: return "io-error";
    case ErrorKind::Internal: return "internal-error";
  }
  return "unknown-error";
}

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t derive_seed(uint64_t parent, const std::string& tag, uint64_t index) {
  uint64_t h = splitmix64(parent);
  for (unsigned char c : tag) h = splitmix64(h ^ c);
  return splitmix64(h ^ index);
}

int worker_count() {
  if (const char* env = std::getenv("HIEROGEN_WORKERS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& body) {
  int workers = worker_count();
  if (n <= 1 || workers <= 1) {
    for (int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  if (workers > n) workers = static_cast<int>(n);
  std::atomic<int64_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        int64_t i = next.fetch_add(1);
        if (i >= n || failed.load()) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          failed.store(true);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace hierogen
