#pragma once

#include <span>
#include <vector>

#include "hierogen/tensor.hpp"

namespace hierogen::numerics {

/// Temperature softmax with max-subtraction; outputs sum to 1 within 1e-6.
std::vector<double> softmax(std::span<const double> v, double temperature);

/// Cosine similarity in [-1,1]; defined as 0 if either norm is < 1e-12.
double cosine_sim(std::span<const float> a, std::span<const float> b);

/// Isotropic Gaussian log-density, additive over dimensions (f64 accumulation).
double gaussian_logpdf(std::span<const float> x, std::span<const float> mean, double var);

/// Group normalization over [C,H,W] with fixed affine (gamma=1, beta=0).
Tensor group_norm(const Tensor& x, int groups, float eps = 1e-5f);

/// Shared kernel: normalizes `batch` blocks of [C, spatial] data per group.
/// Optionally records per-(batch,group) mean / inverse stddev for backprop.
void group_norm_batched(const float* x, float* y, int batch, int channels, int spatial,
                        int groups, float eps, float* save_mean = nullptr,
                        float* save_invstd = nullptr);

/// Solves (A + lambda I) X = B for symmetric positive definite A via f64
/// Cholesky. A is n*n row-major, B and X are n*m row-major.
void solve_spd(std::vector<double> a, int n, const std::vector<double>& b, int m,
               double lambda, std::vector<double>& x);

}  // namespace hierogen::numerics
