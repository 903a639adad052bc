#include "hierogen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hierogen::eval {

namespace {

std::vector<uint8_t> background_mask(const world::Video& video, int64_t* count) {
  const int64_t plane = static_cast<int64_t>(video.h()) * video.w();
  const float* f0 = video.frame(0);
  std::vector<uint8_t> mask(static_cast<size_t>(plane), 0);
  int64_t n = 0;
  for (int64_t p = 0; p < plane; ++p) {
    float d = 0.0f;
    for (int c = 0; c < 3; ++c)
      d = std::max(d, std::abs(f0[c * plane + p] - world::kBackground));
    if (d <= 0.02f) {
      mask[static_cast<size_t>(p)] = 1;
      ++n;
    }
  }
  *count = n;
  return mask;
}

}  // namespace

double flicker(const world::Video& video) {
  const int t = video.t();
  if (t <= 1) return 1.0;
  const int64_t plane = static_cast<int64_t>(video.h()) * video.w();
  int64_t nbg = 0;
  const auto mask = background_mask(video, &nbg);
  const bool use_all = nbg == 0;
  double diff = 0.0;
  int64_t count = 0;
  for (int f = 1; f < t; ++f) {
    const float* a = video.frame(f - 1);
    const float* b = video.frame(f);
    for (int64_t p = 0; p < plane; ++p) {
      if (!use_all && !mask[static_cast<size_t>(p)]) continue;
      for (int c = 0; c < 3; ++c) diff += std::abs(a[c * plane + p] - b[c * plane + p]);
      ++count;
    }
  }
  if (count == 0) return 1.0;
  return std::clamp(1.0 - diff / (3.0 * static_cast<double>(count)), 0.0, 1.0);
}

double subject_consistency(const world::Video& video, const std::array<float, 3>& color_key) {
  const int t = video.t();
  const int64_t plane = static_cast<int64_t>(video.h()) * video.w();
  auto count_key = [&](int f) {
    const float* fr = video.frame(f);
    int64_t n = 0;
    for (int64_t p = 0; p < plane; ++p) {
      float d = 0.0f;
      for (int c = 0; c < 3; ++c)
        d = std::max(d, std::abs(fr[c * plane + p] - color_key[static_cast<size_t>(c)]));
      if (d <= 0.05f) ++n;
    }
    return n;
  };
  const int64_t base = count_key(0);
  if (base == 0) return 0.0;
  int64_t worst = base;
  for (int f = 1; f < t; ++f) worst = std::min(worst, count_key(f));
  return std::clamp(static_cast<double>(worst) / static_cast<double>(base), 0.0, 1.0);
}

double background_consistency(const world::Video& video) {
  const int t = video.t();
  if (t <= 1) return 1.0;
  const int64_t plane = static_cast<int64_t>(video.h()) * video.w();
  int64_t nbg = 0;
  const auto mask = background_mask(video, &nbg);
  if (nbg == 0) return 0.0;
  const float* f0 = video.frame(0);
  double diff = 0.0;
  int64_t count = 0;
  for (int f = 1; f < t; ++f) {
    const float* b = video.frame(f);
    for (int64_t p = 0; p < plane; ++p) {
      if (!mask[static_cast<size_t>(p)]) continue;
      for (int c = 0; c < 3; ++c) diff += std::abs(f0[c * plane + p] - b[c * plane + p]);
      ++count;
    }
  }
  return std::clamp(1.0 - diff / (3.0 * static_cast<double>(count)), 0.0, 1.0);
}

EvalReport aggregate(std::vector<TaskEval> tasks) {
  EvalReport rep;
  rep.tasks = std::move(tasks);
  int64_t subtasks = 0, successes = 0;
  double pfc = 0.0, fl = 0.0, sc = 0.0, bc = 0.0;
  for (const auto& t : rep.tasks) {
    for (int s : t.subtask_success) {
      successes += s;
      ++subtasks;
    }
    pfc += t.mean_pfc;
    fl += t.flicker;
    sc += t.subject_consistency;
    bc += t.background_consistency;
  }
  const double nt = std::max<double>(1.0, static_cast<double>(rep.tasks.size()));
  rep.task_success_rate = subtasks == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(subtasks);
  rep.mean_pfc = pfc / nt;
  rep.mean_flicker = fl / nt;
  rep.mean_subject_consistency = sc / nt;
  rep.mean_background_consistency = bc / nt;
  return rep;
}

std::string render_table(const EvalReport& report) {
  std::ostringstream ss;
  ss << "task                         succ   pfc    flick  subj   bg\n";
  auto row = [&](const std::string& name, const std::string& succ, double pfc, double fl,
                 double sc, double bc) {
    ss << name;
    for (size_t i = name.size(); i < 29; ++i) ss << ' ';
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-6s %-6.3f %-6.3f %-6.3f %-6.3f\n", succ.c_str(), pfc, fl,
                  sc, bc);
    ss << buf;
  };
  for (const auto& t : report.tasks) {
    int ok = 0;
    for (int s : t.subtask_success) ok += s;
    row(t.name, std::to_string(ok) + "/" + std::to_string(t.subtask_success.size()), t.mean_pfc,
        t.flicker, t.subject_consistency, t.background_consistency);
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "aggregate: success_rate=%.3f pfc=%.3f flicker=%.3f subject=%.3f background=%.3f\n",
                report.task_success_rate, report.mean_pfc, report.mean_flicker,
                report.mean_subject_consistency, report.mean_background_consistency);
  ss << buf;
  return ss.str();
}

}  // namespace hierogen::eval
