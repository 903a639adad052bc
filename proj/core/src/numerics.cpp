#include "hierogen/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace hierogen::numerics {

std::vector<double> softmax(std::span<const double> v, double temperature) {
  require(temperature > 0.0, ErrorKind::InvalidArgument, "softmax temperature must be positive");
  require(!v.empty(), ErrorKind::InvalidArgument, "softmax of empty vector");
  double mx = v[0];
  for (double x : v) {
    require(std::isfinite(x), ErrorKind::InvalidArgument, "softmax input not finite");
    mx = std::max(mx, x);
  }
  std::vector<double> out(v.size());
  double denom = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp((v[i] - mx) / temperature);
    denom += out[i];
  }
  for (double& x : out) x /= denom;
  return out;
}

double cosine_sim(std::span<const float> a, std::span<const float> b) {
  require(a.size() == b.size(), ErrorKind::InvalidArgument, "cosine_sim size mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < 1e-12 || nb < 1e-12) return 0.0;  // degenerate window
  double c = dot / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

double gaussian_logpdf(std::span<const float> x, std::span<const float> mean, double var) {
  require(var > 0.0, ErrorKind::InvalidArgument, "gaussian_logpdf variance must be positive");
  require(x.size() == mean.size(), ErrorKind::InvalidArgument, "gaussian_logpdf size mismatch");
  const double n = static_cast<double>(x.size());
  double ss = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double d = static_cast<double>(x[i]) - mean[i];
    ss += d * d;
  }
  return -0.5 * (n * std::log(2.0 * M_PI * var) + ss / var);
}

void group_norm_batched(const float* x, float* y, int batch, int channels, int spatial,
                        int groups, float eps, float* save_mean, float* save_invstd) {
  require(groups >= 1 && channels % groups == 0, ErrorKind::InvalidArgument,
          "channels not divisible by groups");
  require(eps > 0.0f, ErrorKind::InvalidArgument, "group_norm eps must be positive");
  const int cpg = channels / groups;
  const int64_t gsize = static_cast<int64_t>(cpg) * spatial;
  for (int b = 0; b < batch; ++b) {
    for (int g = 0; g < groups; ++g) {
      const float* xg = x + (static_cast<int64_t>(b) * channels + g * cpg) * spatial;
      double sum = 0.0, sq = 0.0;
      for (int64_t i = 0; i < gsize; ++i) {
        sum += xg[i];
        sq += static_cast<double>(xg[i]) * xg[i];
      }
      double mean = sum / static_cast<double>(gsize);
      double var = sq / static_cast<double>(gsize) - mean * mean;
      if (var < 0.0) var = 0.0;
      double invstd = 1.0 / std::sqrt(var + eps);
      if (save_mean) save_mean[b * groups + g] = static_cast<float>(mean);
      if (save_invstd) save_invstd[b * groups + g] = static_cast<float>(invstd);
      float* yg = y + (static_cast<int64_t>(b) * channels + g * cpg) * spatial;
      const float fm = static_cast<float>(mean);
      const float fs = static_cast<float>(invstd);
      for (int64_t i = 0; i < gsize; ++i) yg[i] = (xg[i] - fm) * fs;
    }
  }
}

Tensor group_norm(const Tensor& x, int groups, float eps) {
  require(x.rank() == 3, ErrorKind::InvalidArgument, "group_norm expects [C,H,W]");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor y({c, h, w});
  group_norm_batched(x.data(), y.data(), 1, c, h * w, groups, eps);
  return y;
}

void solve_spd(std::vector<double> a, int n, const std::vector<double>& b, int m, double lambda,
               std::vector<double>& x) {
  require(static_cast<int64_t>(a.size()) == static_cast<int64_t>(n) * n, ErrorKind::InvalidArgument,
          "solve_spd: bad A size");
  require(static_cast<int64_t>(b.size()) == static_cast<int64_t>(n) * m, ErrorKind::InvalidArgument,
          "solve_spd: bad B size");
  for (int i = 0; i < n; ++i) a[static_cast<size_t>(i) * n + i] += lambda;

  // In-place lower Cholesky.
  for (int j = 0; j < n; ++j) {
    double d = a[static_cast<size_t>(j) * n + j];
    for (int k = 0; k < j; ++k) {
      double l = a[static_cast<size_t>(j) * n + k];
      d -= l * l;
    }
    require(d > 0.0, ErrorKind::Internal, "solve_spd: matrix not positive definite");
    d = std::sqrt(d);
    a[static_cast<size_t>(j) * n + j] = d;
    for (int i = j + 1; i < n; ++i) {
      double s = a[static_cast<size_t>(i) * n + j];
      for (int k = 0; k < j; ++k)
        s -= a[static_cast<size_t>(i) * n + k] * a[static_cast<size_t>(j) * n + k];
      a[static_cast<size_t>(i) * n + j] = s / d;
    }
  }

  x = b;
  // Forward solve L Z = B, then back solve L^T X = Z, column blocks at once.
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < i; ++k) {
      double l = a[static_cast<size_t>(i) * n + k];
      for (int c = 0; c < m; ++c) x[static_cast<size_t>(i) * m + c] -= l * x[static_cast<size_t>(k) * m + c];
    }
    double d = a[static_cast<size_t>(i) * n + i];
    for (int c = 0; c < m; ++c) x[static_cast<size_t>(i) * m + c] /= d;
  }
  for (int i = n - 1; i >= 0; --i) {
    for (int k = i + 1; k < n; ++k) {
      double l = a[static_cast<size_t>(k) * n + i];
      for (int c = 0; c < m; ++c) x[static_cast<size_t>(i) * m + c] -= l * x[static_cast<size_t>(k) * m + c];
    }
    double d = a[static_cast<size_t>(i) * n + i];
    for (int c = 0; c < m; ++c) x[static_cast<size_t>(i) * m + c] /= d;
  }
}

}  // namespace hierogen::numerics
