#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hierogen/tensor.hpp"

namespace hierogen::nn {

/// Named parameter registry with matching gradient buffers. One store owns the
/// weights of one model; tapes snapshot values from it and accumulate into its
/// gradients.
struct ParamStore {
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  std::vector<Entry> entries;

  int add(const std::string& name, Tensor init) {
    Entry e;
    e.name = name;
    e.grad = Tensor::zeros(init.shape());
    e.value = std::move(init);
    entries.push_back(std::move(e));
    return static_cast<int>(entries.size()) - 1;
  }

  int find(const std::string& name) const {
    for (size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name == name) return static_cast<int>(i);
    return -1;
  }

  void zero_grad() {
    for (auto& e : entries) e.grad.fill(0.0f);
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& e : entries) n += e.value.numel();
    return n;
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& e : entries)
      for (int64_t i = 0; i < e.grad.numel(); ++i) s += static_cast<double>(e.grad[i]) * e.grad[i];
    return std::sqrt(s);
  }

  bool all_finite() const {
    for (const auto& e : entries)
      if (!e.value.all_finite()) return false;
    return true;
  }
};

struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over a closed set of primitives (matmul, conv2d,
/// temporal conv1d, add/sub/mul, group norm, gated nonlinearity, reductions,
/// row gather, scalar glue). Forward values are computed eagerly; backward
/// visits each recorded op exactly once in reverse order and accumulates
/// parameter gradients into the bound ParamStore.
class GradTape {
 public:
  explicit GradTape(ParamStore* params);
  ~GradTape();

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  Var param(int param_index);
  Var leaf(Tensor t);
  Var leaf_scalar(double v);

  Var matmul(Var a, Var b);                       // [M,K] @ [K,N]
  Var mixer(Var x, Var w, int frames);            // x:[T*S,C] per-frame W[S,S] @ x_t
  Var conv2d3(Var x, Var w);                      // x:[T,Ci,H,W], w:[Co,Ci,3,3], pad 1
  Var conv1d_temporal(Var x, Var w);              // x:[T,C,S], w:[Co,Ci,3], pad 1 over T
  Var tokens_from_chw(Var x);                     // [T,C,H,W] -> [T*H*W, C]
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var silu(Var x);                                // x * sigmoid(x)
  Var group_norm_tokens(Var x, int frames, int groups, float eps);
  Var add_row_vec(Var x, Var bias);               // bias [C] broadcast over rows
  Var add_token_bias(Var x, Var bias, int frames);// bias [S] per in-frame row
  Var gather_row(Var table, int row);             // -> [1,C]
  Var broadcast_row_add(Var x, Var row);          // x [R,C] + row [1,C]
  Var scale(Var x, double c);

  Var sum(Var x);                                 // tensor -> scalar (f64)
  Var mean(Var x);
  /// sum_i (target_i - x_i)^2 with the subtraction and square in f64; the
  /// fused form keeps trajectory log-densities accurate enough for central
  /// differences.
  Var sq_error_sum(Var x, Tensor target);
  Var sadd(Var a, Var b);
  Var ssub(Var a, Var b);
  Var sscale(Var a, double c);
  Var saddc(Var a, double c);
  Var sexp(Var a);

  const Tensor& value(Var v) const;
  double scalar(Var v) const;
  bool is_scalar(Var v) const;

  /// Accumulates d(root)/d(param) * seed into the bound store's grads.
  void backward(Var root, double seed = 1.0);

  size_t node_count() const;

 private:
  struct Impl;
  Impl* impl_;
};

/// Max over checked parameters of |analytic - central difference| / max(1, |analytic|).
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  bool nonfinite = false;
  std::string nonfinite_param;
};

/// grad_fn must zero and refill the store's gradients; loss_fn must be a pure,
/// seeded re-evaluation of the same scalar. max_checks_per_tensor == 0 checks
/// every entry; otherwise a deterministic stride covers the tensor.
GradCheckResult grad_check(ParamStore& params, const std::function<double()>& loss_fn,
                           const std::function<void()>& grad_fn, double step,
                           int max_checks_per_tensor = 0);

/// Per-tensor base step plus optional step-grid selection: each parameter is
/// scored by its best central-difference step over {step, step/2, ..., step/16}
/// (noise-floor-limited parameters want large steps, curvature-limited ones
/// small steps).
GradCheckResult grad_check_steps(ParamStore& params, const std::function<double()>& loss_fn,
                                 const std::function<void()>& grad_fn,
                                 const std::function<double(const std::string&)>& step_for,
                                 int max_checks_per_tensor = 0, bool step_grid = false);

/// Moment-averaged gradient descent (Adam moments) with optional global
/// gradient-norm clipping.
class Adam {
 public:
  Adam(ParamStore* params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8, double grad_clip = 0.0);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void step();

 private:
  ParamStore* params_;
  double lr_, beta1_, beta2_, eps_, grad_clip_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace hierogen::nn
