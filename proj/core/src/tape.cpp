#include "hierogen/tape.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "hierogen/numerics.hpp"

namespace hierogen::nn {

namespace {

// C[M,N] (+)= A[M,K] @ B[K,N]. Branch-free axpy body so the j-loop vectorizes;
// 4-row blocking amortizes each B-row load across four accumulation streams.
void matmul_nn(const float* __restrict a, const float* __restrict b, float* __restrict c,
               int m, int k, int n, bool acc) {
  if (!acc) std::fill(c, c + static_cast<int64_t>(m) * n, 0.0f);
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    float* __restrict c0 = c + static_cast<int64_t>(i) * n;
    float* __restrict c1 = c0 + n;
    float* __restrict c2 = c1 + n;
    float* __restrict c3 = c2 + n;
    const float* a0 = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
      const float* __restrict br = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) {
        const float bv = br[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    float* __restrict cr = c + static_cast<int64_t>(i) * n;
    const float* ar = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float av = ar[p];
      const float* __restrict br = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// C[M,K] += A[M,N] @ B[K,N]^T. Reduction via a fixed 16-lane accumulator so
// the loop vectorizes without float reassociation.
void matmul_nt_acc(const float* __restrict a, const float* __restrict b, float* __restrict c,
                   int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const float* ar = a + static_cast<int64_t>(i) * n;
    float* cr = c + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float* br = b + static_cast<int64_t>(p) * n;
      float lanes[16] = {0};
      int j = 0;
      for (; j + 16 <= n; j += 16)
        for (int l = 0; l < 16; ++l) lanes[l] += ar[j + l] * br[j + l];
      float dot = 0.0f;
      for (int l = 0; l < 16; ++l) dot += lanes[l];
      for (; j < n; ++j) dot += ar[j] * br[j];
      cr[p] += dot;
    }
  }
}

// C[K,N] += A[M,K]^T @ B[M,N]
void matmul_tn_acc(const float* __restrict a, const float* __restrict b, float* __restrict c,
                   int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* ar = a + static_cast<int64_t>(i) * k;
    const float* br = b + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = ar[p];
      float* __restrict cr = c + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// cephes-style expf: pure float arithmetic, so the compiler can vectorize
// activation loops; |rel err| < 3e-7 over the clamped range.
inline float fast_expf(float x) {
  const float log2e = 1.44269504088896341f;
  const float ln2_hi = 0.693359375f;
  const float ln2_lo = -2.12194440e-4f;
  x = std::min(87.3f, std::max(-87.3f, x));
  const float k = std::floor(x * log2e + 0.5f);
  const float r = (x - k * ln2_hi) - k * ln2_lo;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const float y = 1.0f + r + r * r * p;
  const int32_t ki = static_cast<int32_t>(k);
  const uint32_t bits = std::bit_cast<uint32_t>(y) + (static_cast<uint32_t>(ki) << 23);
  return std::bit_cast<float>(bits);
}

inline float sigmoidf(float x) { return 1.0f / (1.0f + fast_expf(-x)); }

enum class Op : uint8_t {
  Leaf,
  LeafScalar,
  Param,
  Matmul,
  Mixer,
  Conv2d3,
  Conv1dT,
  TokensFromCHW,
  Add,
  Sub,
  Mul,
  SiLU,
  GroupNormTok,
  AddRowVec,
  AddTokenBias,
  GatherRow,
  Scale,
  Sum,
  Mean,
  SqErrSum,
  SAdd,
  SSub,
  SScale,
  SAddC,
  SExp,
};

struct Node {
  Op op = Op::Leaf;
  int32_t a = -1;
  int32_t b = -1;
  int i0 = 0;  // frames / param index / row
  int i1 = 0;  // groups
  float f0 = 0.0f;
  double c0 = 0.0;
  Tensor saved;
};

}  // namespace

struct GradTape::Impl {
  ParamStore* store = nullptr;
  std::vector<Node> nodes;
  std::vector<Tensor> vals;
  std::vector<double> svals;
  std::vector<uint8_t> scalar_flag;
  std::vector<uint8_t> needs_grad;

  std::vector<Tensor> grads;
  std::vector<uint8_t> grad_set;
  std::vector<double> sgrads;

  int32_t push(Node n, Tensor val, bool scalar, double sval, bool ng) {
    nodes.push_back(std::move(n));
    vals.push_back(std::move(val));
    svals.push_back(sval);
    scalar_flag.push_back(scalar ? 1 : 0);
    needs_grad.push_back(ng ? 1 : 0);
    return static_cast<int32_t>(nodes.size()) - 1;
  }

  bool ng(Var v) const { return needs_grad[static_cast<size_t>(v.id)] != 0; }

  Tensor& g(int32_t id) {
    if (!grad_set[static_cast<size_t>(id)]) {
      grads[static_cast<size_t>(id)] = Tensor::zeros(vals[static_cast<size_t>(id)].shape());
      grad_set[static_cast<size_t>(id)] = 1;
    }
    return grads[static_cast<size_t>(id)];
  }
};

GradTape::GradTape(ParamStore* params) : impl_(new Impl) { impl_->store = params; }
GradTape::~GradTape() { delete impl_; }

size_t GradTape::node_count() const { return impl_->nodes.size(); }

const Tensor& GradTape::value(Var v) const { return impl_->vals[static_cast<size_t>(v.id)]; }
double GradTape::scalar(Var v) const { return impl_->svals[static_cast<size_t>(v.id)]; }
bool GradTape::is_scalar(Var v) const { return impl_->scalar_flag[static_cast<size_t>(v.id)] != 0; }

Var GradTape::param(int param_index) {
  Node n;
  n.op = Op::Param;
  n.i0 = param_index;
  Tensor snapshot = impl_->store->entries[static_cast<size_t>(param_index)].value;
  return {impl_->push(std::move(n), std::move(snapshot), false, 0.0, true)};
}

Var GradTape::leaf(Tensor t) {
  Node n;
  n.op = Op::Leaf;
  return {impl_->push(std::move(n), std::move(t), false, 0.0, false)};
}

Var GradTape::leaf_scalar(double v) {
  Node n;
  n.op = Op::LeafScalar;
  return {impl_->push(std::move(n), Tensor(), true, v, false)};
}

Var GradTape::matmul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.rank() == 2 && tb.rank() == 2 && ta.dim(1) == tb.dim(0), ErrorKind::InvalidArgument,
          "matmul shape mismatch");
  Tensor out({ta.dim(0), tb.dim(1)});
  matmul_nn(ta.data(), tb.data(), out.data(), ta.dim(0), ta.dim(1), tb.dim(1), false);
  Node n;
  n.op = Op::Matmul;
  n.a = a.id;
  n.b = b.id;
  return {impl_->push(std::move(n), std::move(out), false, 0.0, impl_->ng(a) || impl_->ng(b))};
}

Var GradTape::mixer(Var x, Var w, int frames) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const int s = tw.dim(0);
  require(tw.rank() == 2 && tw.dim(1) == s, ErrorKind::InvalidArgument, "mixer weight must be square");
  require(tx.rank() == 2 && tx.dim(0) == frames * s, ErrorKind::InvalidArgument,
          "mixer input rows must be frames*tokens");
  const int c = tx.dim(1);
  Tensor out({frames * s, c});
  for (int t = 0; t < frames; ++t)
    matmul_nn(tw.data(), tx.data() + static_cast<int64_t>(t) * s * c,
              out.data() + static_cast<int64_t>(t) * s * c, s, s, c, false);
  Node n;
  n.op = Op::Mixer;
  n.a = x.id;
  n.b = w.id;
  n.i0 = frames;
  return {impl_->push(std::move(n), std::move(out), false, 0.0, impl_->ng(x) || impl_->ng(w))};
}

namespace {

// im2col for the 3x3 pad-1 case: col is [H*W, Ci*9] per frame.
void conv3_im2col(const float* frame, int ci, int h, int wd, float* col) {
  const int k = ci * 9;
  for (int i = 0; i < ci; ++i) {
    const float* ip = frame + static_cast<int64_t>(i) * h * wd;
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        float* cp = col + i * 9 + ky * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          for (int x = 0; x < wd; ++x) {
            const int sx = x + kx - 1;
            const bool in = sy >= 0 && sy < h && sx >= 0 && sx < wd;
            cp[static_cast<int64_t>(y * wd + x) * k] = in ? ip[sy * wd + sx] : 0.0f;
          }
        }
      }
  }
}

}  // namespace

Var GradTape::conv2d3(Var x, Var w) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  require(tx.rank() == 4 && tw.rank() == 4 && tw.dim(2) == 3 && tw.dim(3) == 3 &&
              tw.dim(1) == tx.dim(1),
          ErrorKind::InvalidArgument, "conv2d3 shape mismatch");
  const int t = tx.dim(0), ci = tx.dim(1), h = tx.dim(2), wd = tx.dim(3), co = tw.dim(0);
  const int s = h * wd, k = ci * 9;
  // weights rearranged to [Ci*9, Co] so each frame is one GEMM
  Tensor wt({k, co});
  for (int o = 0; o < co; ++o)
    for (int i = 0; i < ci; ++i)
      for (int kk = 0; kk < 9; ++kk) wt.at(i * 9 + kk, o) = tw[((o * ci + i) * 9) + kk];
  Tensor col({s, k});
  Tensor out_t({s, co});
  Tensor out({t, co, h, wd});
  for (int f = 0; f < t; ++f) {
    conv3_im2col(tx.data() + static_cast<int64_t>(f) * ci * s, ci, h, wd, col.data());
    matmul_nn(col.data(), wt.data(), out_t.data(), s, k, co, false);
    float* op = out.data() + static_cast<int64_t>(f) * co * s;
    for (int o = 0; o < co; ++o)
      for (int p = 0; p < s; ++p) op[o * s + p] = out_t[static_cast<int64_t>(p) * co + o];
  }
  Node n;
  n.op = Op::Conv2d3;
  n.a = x.id;
  n.b = w.id;
  return {impl_->push(std::move(n), std::move(out), false, 0.0, impl_->ng(x) || impl_->ng(w))};
}

Var GradTape::conv1d_temporal(Var x, Var w) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  require(tx.rank() >= 3 && tw.rank() == 3 && tw.dim(2) == 3 && tw.dim(1) == tx.dim(1),
          ErrorKind::InvalidArgument, "conv1d_temporal shape mismatch");
  const int t = tx.dim(0), ci = tx.dim(1), co = tw.dim(0);
  const int s = static_cast<int>(tx.numel() / (static_cast<int64_t>(t) * ci));
  Tensor out({t, co, s});
  for (int f = 0; f < t; ++f)
    for (int k = 0; k < 3; ++k) {
      const int src = f + k - 1;
      if (src < 0 || src >= t) continue;
      for (int o = 0; o < co; ++o) {
        float* op = out.data() + (static_cast<int64_t>(f) * co + o) * s;
        for (int i = 0; i < ci; ++i) {
          const float wv = tw.at(o, i, k);
          if (wv == 0.0f) continue;
          const float* ip = tx.data() + (static_cast<int64_t>(src) * ci + i) * s;
          for (int j = 0; j < s; ++j) op[j] += wv * ip[j];
        }
      }
    }
  Node n;
  n.op = Op::Conv1dT;
  n.a = x.id;
  n.b = w.id;
  return {impl_->push(std::move(n), std::move(out), false, 0.0, impl_->ng(x) || impl_->ng(w))};
}

Var GradTape::tokens_from_chw(Var x) {
  const Tensor& tx = value(x);
  require(tx.rank() >= 3, ErrorKind::InvalidArgument, "tokens_from_chw expects [T,C,spatial...]");
  const int t = tx.dim(0), c = tx.dim(1);
  const int hw = static_cast<int>(tx.numel() / (static_cast<int64_t>(t) * c));
  Tensor out({t * hw, c});
  for (int f = 0; f < t; ++f)
    for (int ch = 0; ch < c; ++ch) {
      const float* ip = tx.data() + (static_cast<int64_t>(f) * c + ch) * hw;
      float* op = out.data() + static_cast<int64_t>(f) * hw * c + ch;
      for (int p = 0; p < hw; ++p) op[static_cast<int64_t>(p) * c] = ip[p];
    }
  Node n;
  n.op = Op::TokensFromCHW;
  n.a = x.id;
  return {impl_->push(std::move(n), std::move(out), false, 0.0, impl_->ng(x))};
}

Var GradTape::add(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.shape() == tb.shape(), ErrorKind::InvalidArgument, "add shape mismatch");
  Tensor out = ta;
  const float* pb = tb.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] += pb[i];
  Node n;
  n.op = Op::Add;
  n.a = a.id;
  n.b = b.id;
  return {impl_->push(std::move(n), std::move(out), false, 0.0, impl_->ng(a) || impl_->ng(b))};
}

Var GradTape::sub(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.shape() == tb.shape(), ErrorKind::InvalidArgument, "sub shape mismatch");
  Tensor out = ta;
  const float* pb = tb.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] -= pb[i];
  Node n;
  n.op = Op::Sub;
  n.a = a.id;
  n.b = b.id;
  return {impl_->push(std::move(n), std::move(out), false, 0.0, impl_->ng(a) || impl_->ng(b))};
}

Var GradTape::mul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.shape() == tb.shape(), ErrorKind::InvalidArgument, "mul shape mismatch");
  Tensor out = ta;
  const float* pb = tb.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] *= pb[i];
  Node n;
  n.op = Op::Mul;
  n.a = a.id;
  n.b = b.id;
  return {impl_->push(std::move(n), std::move(out), false, 0.0, impl_->ng(a) || impl_->ng(b))};
}

Var GradTape::silu(Var x) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape());
  const float* px = tx.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = px[i] * sigmoidf(px[i]);
  Node n;
  n.op = Op::SiLU;
  n.a = x.id;
  return {impl_->push(std::move(n), std::move(out), false, 0.0, impl_->ng(x))};
}

Var GradTape::group_norm_tokens(Var x, int frames, int groups, float eps) {
  const Tensor& tx = value(x);
  require(tx.rank() == 2 && tx.dim(0) % frames == 0, ErrorKind::InvalidArgument,
          "group_norm_tokens expects [T*S,C]");
  const int s = tx.dim(0) / frames;
  const int c = tx.dim(1);
  require(c % groups == 0, ErrorKind::InvalidArgument, "channels not divisible by groups");
  const int cpg = c / groups;
  Tensor out(tx.shape());
  Tensor stats({frames, groups, 2});
  for (int f = 0; f < frames; ++f) {
    const float* xf = tx.data() + static_cast<int64_t>(f) * s * c;
    float* yf = out.data() + static_cast<int64_t>(f) * s * c;
    for (int g = 0; g < groups; ++g) {
      double sum = 0.0, sq = 0.0;
      for (int r = 0; r < s; ++r) {
        const float* row = xf + static_cast<int64_t>(r) * c + g * cpg;
        for (int j = 0; j < cpg; ++j) {
          sum += row[j];
          sq += static_cast<double>(row[j]) * row[j];
        }
      }
      const double cnt = static_cast<double>(s) * cpg;
      double mean = sum / cnt;
      double var = sq / cnt - mean * mean;
      if (var < 0.0) var = 0.0;
      double invstd = 1.0 / std::sqrt(var + eps);
      stats.at(f, g, 0) = static_cast<float>(mean);
      stats.at(f, g, 1) = static_cast<float>(invstd);
      const float fm = static_cast<float>(mean), fi = static_cast<float>(invstd);
      for (int r = 0; r < s; ++r) {
        const float* row = xf + static_cast<int64_t>(r) * c + g * cpg;
        float* orow = yf + static_cast<int64_t>(r) * c + g * cpg;
        for (int j = 0; j < cpg; ++j) orow[j] = (row[j] - fm) * fi;
      }
    }
  }
  Node n;
  n.op = Op::GroupNormTok;
  n.a = x.id;
  n.i0 = frames;
  n.i1 = groups;
  n.f0 = eps;
  n.saved = std::move(stats);
  return {impl_->push(std::move(n), std::move(out), false, 0.0, impl_->ng(x))};
}

Var GradTape::add_row_vec(Var x, Var bias) {
  const Tensor& tx = value(x);
  const Tensor& tb = value(bias);
  const int c = tx.dim(1);
  require(tx.rank() == 2 && tb.numel() == c, ErrorKind::InvalidArgument, "add_row_vec shape mismatch");
  Tensor out = tx;
  float* po = out.data();
  const float* pb = tb.data();
  const int r = tx.dim(0);
  for (int i = 0; i < r; ++i) {
    float* row = po + static_cast<int64_t>(i) * c;
    for (int j = 0; j < c; ++j) row[j] += pb[j];
  }
  Node n;
  n.op = Op::AddRowVec;
  n.a = x.id;
  n.b = bias.id;
  return {impl_->push(std::move(n), std::move(out), false, 0.0, impl_->ng(x) || impl_->ng(bias))};
}

Var GradTape::add_token_bias(Var x, Var bias, int frames) {
  const Tensor& tx = value(x);
  const Tensor& tb = value(bias);
  const int s = tx.dim(0) / frames;
  require(tx.rank() == 2 && tx.dim(0) % frames == 0 && tb.numel() == s, ErrorKind::InvalidArgument,
          "add_token_bias shape mismatch");
  const int c = tx.dim(1);
  Tensor out = tx;
  for (int f = 0; f < frames; ++f)
    for (int r = 0; r < s; ++r) {
      float* row = out.data() + (static_cast<int64_t>(f) * s + r) * c;
      const float bv = tb[r];
      for (int j = 0; j < c; ++j) row[j] += bv;
    }
  Node n;
  n.op = Op::AddTokenBias;
  n.a = x.id;
  n.b = bias.id;
  n.i0 = frames;
  return {impl_->push(std::move(n), std::move(out), false, 0.0, impl_->ng(x) || impl_->ng(bias))};
}

Var GradTape::gather_row(Var table, int row) {
  const Tensor& tt = value(table);
  require(tt.rank() == 2 && row >= 0 && row < tt.dim(0), ErrorKind::InvalidArgument,
          "gather_row out of range");
  const int c = tt.dim(1);
  Tensor out({1, c});
  std::copy(tt.data() + static_cast<int64_t>(row) * c, tt.data() + static_cast<int64_t>(row + 1) * c,
            out.data());
  Node n;
  n.op = Op::GatherRow;
  n.a = table.id;
  n.i0 = row;
  return {impl_->push(std::move(n), std::move(out), false, 0.0, impl_->ng(table))};
}

Var GradTape::scale(Var x, double c) {
  const Tensor& tx = value(x);
  Tensor out = tx;
  const float fc = static_cast<float>(c);
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] *= fc;
  Node n;
  n.op = Op::Scale;
  n.a = x.id;
  n.c0 = c;
  return {impl_->push(std::move(n), std::move(out), false, 0.0, impl_->ng(x))};
}

Var GradTape::sum(Var x) {
  const Tensor& tx = value(x);
  Node n;
  n.op = Op::Sum;
  n.a = x.id;
  return {impl_->push(std::move(n), Tensor(), true, tx.sum64(), impl_->ng(x))};
}

Var GradTape::mean(Var x) {
  const Tensor& tx = value(x);
  require(tx.numel() > 0, ErrorKind::InvalidArgument, "mean of empty tensor");
  Node n;
  n.op = Op::Mean;
  n.a = x.id;
  return {impl_->push(std::move(n), Tensor(), true, tx.sum64() / static_cast<double>(tx.numel()),
                      impl_->ng(x))};
}

Var GradTape::sq_error_sum(Var x, Tensor target) {
  const Tensor& tx = value(x);
  require(tx.shape() == target.shape(), ErrorKind::InvalidArgument, "sq_error_sum shape mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < tx.numel(); ++i) {
    const double d = static_cast<double>(target[i]) - tx[i];
    acc += d * d;
  }
  Node n;
  n.op = Op::SqErrSum;
  n.a = x.id;
  n.saved = std::move(target);
  return {impl_->push(std::move(n), Tensor(), true, acc, impl_->ng(x))};
}

Var GradTape::sadd(Var a, Var b) {
  Node n;
  n.op = Op::SAdd;
  n.a = a.id;
  n.b = b.id;
  return {impl_->push(std::move(n), Tensor(), true, scalar(a) + scalar(b), impl_->ng(a) || impl_->ng(b))};
}

Var GradTape::ssub(Var a, Var b) {
  Node n;
  n.op = Op::SSub;
  n.a = a.id;
  n.b = b.id;
  return {impl_->push(std::move(n), Tensor(), true, scalar(a) - scalar(b), impl_->ng(a) || impl_->ng(b))};
}

Var GradTape::sscale(Var a, double c) {
  Node n;
  n.op = Op::SScale;
  n.a = a.id;
  n.c0 = c;
  return {impl_->push(std::move(n), Tensor(), true, scalar(a) * c, impl_->ng(a))};
}

Var GradTape::saddc(Var a, double c) {
  Node n;
  n.op = Op::SAddC;
  n.a = a.id;
  n.c0 = c;
  return {impl_->push(std::move(n), Tensor(), true, scalar(a) + c, impl_->ng(a))};
}

Var GradTape::sexp(Var a) {
  Node n;
  n.op = Op::SExp;
  n.a = a.id;
  return {impl_->push(std::move(n), Tensor(), true, std::exp(scalar(a)), impl_->ng(a))};
}

void GradTape::backward(Var root, double seed) {
  Impl& im = *impl_;
  require(root.valid() && im.scalar_flag[static_cast<size_t>(root.id)], ErrorKind::InvalidArgument,
          "backward root must be a scalar");
  const size_t n = im.nodes.size();
  im.grads.assign(n, Tensor());
  im.grad_set.assign(n, 0);
  im.sgrads.assign(n, 0.0);
  im.sgrads[static_cast<size_t>(root.id)] = seed;

  for (int32_t id = root.id; id >= 0; --id) {
    const Node& nd = im.nodes[static_cast<size_t>(id)];
    const bool has_tensor_grad = im.grad_set[static_cast<size_t>(id)] != 0;
    const double sg = im.sgrads[static_cast<size_t>(id)];
    if (!has_tensor_grad && sg == 0.0) continue;
    if (!im.needs_grad[static_cast<size_t>(id)]) continue;

    switch (nd.op) {
      case Op::Leaf:
      case Op::LeafScalar:
        break;
      case Op::Param: {
        Tensor& pg = im.store->entries[static_cast<size_t>(nd.i0)].grad;
        const Tensor& gr = im.g(id);
        for (int64_t i = 0; i < pg.numel(); ++i) pg[i] += gr[i];
        break;
      }
      case Op::Matmul: {
        const Tensor& gr = im.g(id);
        const Tensor& ta = im.vals[static_cast<size_t>(nd.a)];
        const Tensor& tb = im.vals[static_cast<size_t>(nd.b)];
        const int m = ta.dim(0), k = ta.dim(1), cn = tb.dim(1);
        if (im.needs_grad[static_cast<size_t>(nd.a)])
          matmul_nt_acc(gr.data(), tb.data(), im.g(nd.a).data(), m, cn, k);
        if (im.needs_grad[static_cast<size_t>(nd.b)])
          matmul_tn_acc(ta.data(), gr.data(), im.g(nd.b).data(), m, k, cn);
        break;
      }
      case Op::Mixer: {
        const Tensor& gr = im.g(id);
        const Tensor& tx = im.vals[static_cast<size_t>(nd.a)];
        const Tensor& tw = im.vals[static_cast<size_t>(nd.b)];
        const int frames = nd.i0, s = tw.dim(0), c = tx.dim(1);
        for (int f = 0; f < frames; ++f) {
          const int64_t off = static_cast<int64_t>(f) * s * c;
          if (im.needs_grad[static_cast<size_t>(nd.b)])
            matmul_nt_acc(gr.data() + off, tx.data() + off, im.g(nd.b).data(), s, c, s);
          if (im.needs_grad[static_cast<size_t>(nd.a)])
            matmul_tn_acc(tw.data(), gr.data() + off, im.g(nd.a).data() + off, s, s, c);
        }
        break;
      }
      case Op::Conv2d3: {
        const Tensor& gr = im.g(id);
        const Tensor& tx = im.vals[static_cast<size_t>(nd.a)];
        const Tensor& tw = im.vals[static_cast<size_t>(nd.b)];
        const int t = tx.dim(0), ci = tx.dim(1), h = tx.dim(2), wd = tx.dim(3), co = tw.dim(0);
        const int s = h * wd, k = ci * 9;
        const bool gx = im.needs_grad[static_cast<size_t>(nd.a)];
        const bool gw = im.needs_grad[static_cast<size_t>(nd.b)];
        Tensor wt({k, co});
        for (int o = 0; o < co; ++o)
          for (int i = 0; i < ci; ++i)
            for (int kk = 0; kk < 9; ++kk) wt.at(i * 9 + kk, o) = tw[((o * ci + i) * 9) + kk];
        Tensor col({s, k});
        Tensor g_t({s, co});
        Tensor dwt = gw ? Tensor({k, co}) : Tensor();
        Tensor dcol = gx ? Tensor({s, k}) : Tensor();
        for (int f = 0; f < t; ++f) {
          const float* gp = gr.data() + static_cast<int64_t>(f) * co * s;
          for (int o = 0; o < co; ++o)
            for (int p = 0; p < s; ++p) g_t[static_cast<int64_t>(p) * co + o] = gp[o * s + p];
          if (gw) {
            conv3_im2col(tx.data() + static_cast<int64_t>(f) * ci * s, ci, h, wd, col.data());
            matmul_tn_acc(col.data(), g_t.data(), dwt.data(), s, k, co);
          }
          if (gx) {
            dcol.fill(0.0f);
            matmul_nt_acc(g_t.data(), wt.data(), dcol.data(), s, co, k);
            float* dxp = im.g(nd.a).data() + static_cast<int64_t>(f) * ci * s;
            for (int i = 0; i < ci; ++i)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const float* cp = dcol.data() + i * 9 + ky * 3 + kx;
                  for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    for (int x = 0; x < wd; ++x) {
                      const int sx = x + kx - 1;
                      if (sx < 0 || sx >= wd) continue;
                      dxp[i * s + sy * wd + sx] += cp[static_cast<int64_t>(y * wd + x) * k];
                    }
                  }
                }
          }
        }
        if (gw) {
          Tensor& dw = im.g(nd.b);
          for (int o = 0; o < co; ++o)
            for (int i = 0; i < ci; ++i)
              for (int kk = 0; kk < 9; ++kk)
                dw[((o * ci + i) * 9) + kk] += dwt.at(i * 9 + kk, o);
        }
        break;
      }
      case Op::Conv1dT: {
        const Tensor& gr = im.g(id);
        const Tensor& tx = im.vals[static_cast<size_t>(nd.a)];
        const Tensor& tw = im.vals[static_cast<size_t>(nd.b)];
        const int t = tx.dim(0), ci = tx.dim(1), co = tw.dim(0);
        const int s = static_cast<int>(tx.numel() / (static_cast<int64_t>(t) * ci));
        const bool gx = im.needs_grad[static_cast<size_t>(nd.a)];
        const bool gw = im.needs_grad[static_cast<size_t>(nd.b)];
        for (int f = 0; f < t; ++f)
          for (int k = 0; k < 3; ++k) {
            const int src = f + k - 1;
            if (src < 0 || src >= t) continue;
            for (int o = 0; o < co; ++o) {
              const float* gp = gr.data() + (static_cast<int64_t>(f) * co + o) * s;
              for (int i = 0; i < ci; ++i) {
                const float* ip = tx.data() + (static_cast<int64_t>(src) * ci + i) * s;
                if (gw) {
                  float acc = 0.0f;
                  for (int j = 0; j < s; ++j) acc += gp[j] * ip[j];
                  im.g(nd.b).at(o, i, k) += acc;
                }
                if (gx) {
                  const float wv = tw.at(o, i, k);
                  if (wv != 0.0f) {
                    float* dxp = im.g(nd.a).data() + (static_cast<int64_t>(src) * ci + i) * s;
                    for (int j = 0; j < s; ++j) dxp[j] += wv * gp[j];
                  }
                }
              }
            }
          }
        break;
      }
      case Op::TokensFromCHW: {
        const Tensor& gr = im.g(id);
        const Tensor& tx = im.vals[static_cast<size_t>(nd.a)];
        const int t = tx.dim(0), c = tx.dim(1);
        const int hw = static_cast<int>(tx.numel() / (static_cast<int64_t>(t) * c));
        Tensor& dx = im.g(nd.a);
        for (int f = 0; f < t; ++f)
          for (int ch = 0; ch < c; ++ch) {
            float* dp = dx.data() + (static_cast<int64_t>(f) * c + ch) * hw;
            const float* gp = gr.data() + static_cast<int64_t>(f) * hw * c + ch;
            for (int p = 0; p < hw; ++p) dp[p] += gp[static_cast<int64_t>(p) * c];
          }
        break;
      }
      case Op::Add: {
        const Tensor& gr = im.g(id);
        for (int32_t in : {nd.a, nd.b}) {
          if (!im.needs_grad[static_cast<size_t>(in)]) continue;
          Tensor& dx = im.g(in);
          for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += gr[i];
        }
        break;
      }
      case Op::Sub: {
        const Tensor& gr = im.g(id);
        if (im.needs_grad[static_cast<size_t>(nd.a)]) {
          Tensor& dx = im.g(nd.a);
          for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += gr[i];
        }
        if (im.needs_grad[static_cast<size_t>(nd.b)]) {
          Tensor& dx = im.g(nd.b);
          for (int64_t i = 0; i < dx.numel(); ++i) dx[i] -= gr[i];
        }
        break;
      }
      case Op::Mul: {
        const Tensor& gr = im.g(id);
        const Tensor& ta = im.vals[static_cast<size_t>(nd.a)];
        const Tensor& tb = im.vals[static_cast<size_t>(nd.b)];
        if (im.needs_grad[static_cast<size_t>(nd.a)]) {
          Tensor& dx = im.g(nd.a);
          for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += gr[i] * tb[i];
        }
        if (im.needs_grad[static_cast<size_t>(nd.b)]) {
          Tensor& dx = im.g(nd.b);
          for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += gr[i] * ta[i];
        }
        break;
      }
      case Op::SiLU: {
        const Tensor& gr = im.g(id);
        const Tensor& tx = im.vals[static_cast<size_t>(nd.a)];
        Tensor& dx = im.g(nd.a);
        for (int64_t i = 0; i < dx.numel(); ++i) {
          const float s = sigmoidf(tx[i]);
          dx[i] += gr[i] * (s + tx[i] * s * (1.0f - s));
        }
        break;
      }
      case Op::GroupNormTok: {
        const Tensor& gr = im.g(id);
        const Tensor& tx = im.vals[static_cast<size_t>(nd.a)];
        const int frames = nd.i0, groups = nd.i1;
        const int s = tx.dim(0) / frames, c = tx.dim(1), cpg = c / groups;
        Tensor& dx = im.g(nd.a);
        const double cnt = static_cast<double>(s) * cpg;
        for (int f = 0; f < frames; ++f) {
          const int64_t base = static_cast<int64_t>(f) * s * c;
          for (int g = 0; g < groups; ++g) {
            const double mean = nd.saved.at(f, g, 0);
            const double invstd = nd.saved.at(f, g, 1);
            double sum_dy = 0.0, sum_dyxh = 0.0;
            for (int r = 0; r < s; ++r) {
              const int64_t off = base + static_cast<int64_t>(r) * c + g * cpg;
              for (int j = 0; j < cpg; ++j) {
                const double xh = (tx[off + j] - mean) * invstd;
                sum_dy += gr[off + j];
                sum_dyxh += gr[off + j] * xh;
              }
            }
            const double mdy = sum_dy / cnt, mdyxh = sum_dyxh / cnt;
            for (int r = 0; r < s; ++r) {
              const int64_t off = base + static_cast<int64_t>(r) * c + g * cpg;
              for (int j = 0; j < cpg; ++j) {
                const double xh = (tx[off + j] - mean) * invstd;
                dx[off + j] += static_cast<float>(invstd * (gr[off + j] - mdy - xh * mdyxh));
              }
            }
          }
        }
        break;
      }
      case Op::AddRowVec: {
        const Tensor& gr = im.g(id);
        const int r = gr.dim(0), c = gr.dim(1);
        if (im.needs_grad[static_cast<size_t>(nd.a)]) {
          Tensor& dx = im.g(nd.a);
          for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += gr[i];
        }
        if (im.needs_grad[static_cast<size_t>(nd.b)]) {
          Tensor& db = im.g(nd.b);
          for (int i = 0; i < r; ++i) {
            const float* grow = gr.data() + static_cast<int64_t>(i) * c;
            for (int j = 0; j < c; ++j) db[j] += grow[j];
          }
        }
        break;
      }
      case Op::AddTokenBias: {
        const Tensor& gr = im.g(id);
        const int frames = nd.i0;
        const int s = gr.dim(0) / frames, c = gr.dim(1);
        if (im.needs_grad[static_cast<size_t>(nd.a)]) {
          Tensor& dx = im.g(nd.a);
          for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += gr[i];
        }
        if (im.needs_grad[static_cast<size_t>(nd.b)]) {
          Tensor& db = im.g(nd.b);
          for (int f = 0; f < frames; ++f)
            for (int r = 0; r < s; ++r) {
              const float* grow = gr.data() + (static_cast<int64_t>(f) * s + r) * c;
              float acc = 0.0f;
              for (int j = 0; j < c; ++j) acc += grow[j];
              db[r] += acc;
            }
        }
        break;
      }
      case Op::GatherRow: {
        const Tensor& gr = im.g(id);
        Tensor& dt = im.g(nd.a);
        const int c = gr.dim(1);
        float* drow = dt.data() + static_cast<int64_t>(nd.i0) * c;
        for (int j = 0; j < c; ++j) drow[j] += gr[j];
        break;
      }
      case Op::Scale: {
        const Tensor& gr = im.g(id);
        Tensor& dx = im.g(nd.a);
        const float fc = static_cast<float>(nd.c0);
        for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += fc * gr[i];
        break;
      }
      case Op::Sum: {
        Tensor& dx = im.g(nd.a);
        const float fs = static_cast<float>(sg);
        for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += fs;
        break;
      }
      case Op::Mean: {
        Tensor& dx = im.g(nd.a);
        const float fs = static_cast<float>(sg / static_cast<double>(dx.numel()));
        for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += fs;
        break;
      }
      case Op::SqErrSum: {
        Tensor& dx = im.g(nd.a);
        const Tensor& tx = im.vals[static_cast<size_t>(nd.a)];
        for (int64_t i = 0; i < dx.numel(); ++i) {
          const double d = static_cast<double>(nd.saved[i]) - tx[i];
          dx[i] += static_cast<float>(-2.0 * d * sg);
        }
        break;
      }
      case Op::SAdd:
        if (im.needs_grad[static_cast<size_t>(nd.a)]) im.sgrads[static_cast<size_t>(nd.a)] += sg;
        if (im.needs_grad[static_cast<size_t>(nd.b)]) im.sgrads[static_cast<size_t>(nd.b)] += sg;
        break;
      case Op::SSub:
        if (im.needs_grad[static_cast<size_t>(nd.a)]) im.sgrads[static_cast<size_t>(nd.a)] += sg;
        if (im.needs_grad[static_cast<size_t>(nd.b)]) im.sgrads[static_cast<size_t>(nd.b)] -= sg;
        break;
      case Op::SScale:
        if (im.needs_grad[static_cast<size_t>(nd.a)]) im.sgrads[static_cast<size_t>(nd.a)] += sg * nd.c0;
        break;
      case Op::SAddC:
        if (im.needs_grad[static_cast<size_t>(nd.a)]) im.sgrads[static_cast<size_t>(nd.a)] += sg;
        break;
      case Op::SExp:
        if (im.needs_grad[static_cast<size_t>(nd.a)])
          im.sgrads[static_cast<size_t>(nd.a)] += sg * im.svals[static_cast<size_t>(id)];
        break;
    }
  }
}

GradCheckResult grad_check(ParamStore& params, const std::function<double()>& loss_fn,
                           const std::function<void()>& grad_fn, double step,
                           int max_checks_per_tensor) {
  return grad_check_steps(
      params, loss_fn, grad_fn, [step](const std::string&) { return step; }, max_checks_per_tensor);
}

GradCheckResult grad_check_steps(ParamStore& params, const std::function<double()>& loss_fn,
                                 const std::function<void()>& grad_fn,
                                 const std::function<double(const std::string&)>& step_for,
                                 int max_checks_per_tensor, bool step_grid) {
  GradCheckResult res;
  grad_fn();
  std::vector<Tensor> analytic;
  analytic.reserve(params.entries.size());
  for (const auto& e : params.entries) analytic.push_back(e.grad);

  for (size_t pi = 0; pi < params.entries.size(); ++pi) {
    auto& entry = params.entries[pi];
    const double step = step_for(entry.name);
    const int64_t n = entry.value.numel();
    int64_t stride = 1;
    if (max_checks_per_tensor > 0 && n > max_checks_per_tensor)
      stride = (n + max_checks_per_tensor - 1) / max_checks_per_tensor;
    for (int64_t i = 0; i < n; i += stride) {
      const double an = analytic[pi][i];
      const int grid = step_grid ? 5 : 1;
      double best_rel = -1.0;
      for (int k = 0; k < grid; ++k) {
        const double h = step / std::pow(2.0, k);
        const float old = entry.value[i];
        entry.value[i] = static_cast<float>(old + h);
        const double lp = loss_fn();
        entry.value[i] = static_cast<float>(old - h);
        const double lm = loss_fn();
        entry.value[i] = old;
        if (!std::isfinite(lp) || !std::isfinite(lm)) {
          res.nonfinite = true;
          res.nonfinite_param = entry.name;
          return res;
        }
        const double fd = (lp - lm) / (2.0 * h);
        const double rel = std::abs(an - fd) / std::max(1.0, std::abs(an));
        if (best_rel < 0.0 || rel < best_rel) best_rel = rel;
      }
      if (best_rel > res.max_rel_err) {
        res.max_rel_err = best_rel;
        res.worst_param = entry.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

Adam::Adam(ParamStore* params, double lr, double beta1, double beta2, double eps, double grad_clip)
    : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), grad_clip_(grad_clip) {
  for (const auto& e : params->entries) {
    m_.push_back(Tensor::zeros(e.value.shape()));
    v_.push_back(Tensor::zeros(e.value.shape()));
  }
}

void Adam::step() {
  ++t_;
  double clip_scale = 1.0;
  if (grad_clip_ > 0.0) {
    const double norm = params_->grad_norm();
    if (norm > grad_clip_) clip_scale = grad_clip_ / norm;
  }
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_->entries.size(); ++pi) {
    auto& e = params_->entries[pi];
    Tensor& m = m_[pi];
    Tensor& v = v_[pi];
    for (int64_t i = 0; i < e.value.numel(); ++i) {
      const double g = static_cast<double>(e.grad[i]) * clip_scale;
      const double mi = beta1_ * m[i] + (1.0 - beta1_) * g;
      const double vi = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mh = mi / bc1;
      const double vh = vi / bc2;
      e.value[i] = static_cast<float>(e.value[i] - lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }
}

}  // namespace hierogen::nn
