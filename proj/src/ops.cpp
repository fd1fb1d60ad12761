#include "fusegrid/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <sstream>

#include "fusegrid/errors.hpp"

namespace fusegrid::ops {

namespace {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;
using MapVec = Eigen::Map<Eigen::VectorXf>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXf>;

std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

void require_rank(const Tensor& t, int rank, const char* op, const char* arg) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                     ", got shape " + shape_str(t.shape()));
}

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void attach(Tensor& out, const char* op, std::vector<Tensor> inputs,
            std::function<void(const detail::TensorImpl&)> backward) {
  out.impl()->requires_grad = true;
  auto node = std::make_shared<detail::AutogradNode>();
  node->op = op;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl()->node = std::move(node);
}

// Unrolls one batch element [C][D][H][W] into the patch matrix
// [C*27][D*H*W] (row-major) for the 3x3x3 / stride 1 / pad 1 convolution.
void im2col(const float* src, int C, int D, int H, int W, float* col) {
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  const std::int64_t dhw = static_cast<std::int64_t>(D) * hw;
  float* row = col;
  for (int c = 0; c < C; ++c) {
    const float* chan = src + c * dhw;
    for (int dz = -1; dz <= 1; ++dz) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx, row += dhw) {
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(W, W - dx);
          for (int z = 0; z < D; ++z) {
            float* seg = row + z * hw;
            const int zi = z + dz;
            if (zi < 0 || zi >= D) {
              std::memset(seg, 0, sizeof(float) * hw);
              continue;
            }
            for (int y = 0; y < H; ++y, seg += W) {
              const int yi = y + dy;
              if (yi < 0 || yi >= H) {
                std::memset(seg, 0, sizeof(float) * W);
                continue;
              }
              const float* s = chan + zi * hw + yi * W + dx;
              if (x0 > 0) seg[0] = 0.0f;
              std::memcpy(seg + x0, s + x0, sizeof(float) * (x1 - x0));
              if (x1 < W) seg[W - 1] = 0.0f;
            }
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col: accumulates the patch-matrix gradient
// back into one batch element's input gradient.
void col2im_add(const float* col, int C, int D, int H, int W, float* dst) {
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  const std::int64_t dhw = static_cast<std::int64_t>(D) * hw;
  const float* row = col;
  for (int c = 0; c < C; ++c) {
    float* chan = dst + c * dhw;
    for (int dz = -1; dz <= 1; ++dz) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx, row += dhw) {
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(W, W - dx);
          for (int z = 0; z < D; ++z) {
            const float* seg = row + z * hw;
            const int zi = z + dz;
            if (zi < 0 || zi >= D) continue;
            for (int y = 0; y < H; ++y) {
              const int yi = y + dy;
              if (yi < 0 || yi >= H) continue;
              float* d = chan + zi * hw + yi * W + dx;
              const float* s = seg + y * W;
              for (int x = x0; x < x1; ++x) d[x] += s[x];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 5, "conv3d", "input");
  require_rank(weight, 5, "conv3d", "weight");
  require_rank(bias, 1, "conv3d", "bias");
  const int B = input.dim(0), Cin = input.dim(1);
  const int D = input.dim(2), H = input.dim(3), W = input.dim(4);
  const int Cout = weight.dim(0);
  if (weight.dim(2) != 3 || weight.dim(3) != 3 || weight.dim(4) != 3)
    throw ShapeError("conv3d: kernel must be 3x3x3, got weight shape " + shape_str(weight.shape()));
  if (weight.dim(1) != Cin)
    throw ShapeError("conv3d: channel mismatch between input " + shape_str(input.shape()) +
                     " and weight " + shape_str(weight.shape()));
  if (bias.dim(0) != Cout)
    throw ShapeError("conv3d: bias shape " + shape_str(bias.shape()) + " does not match Cout " +
                     std::to_string(Cout));

  const std::int64_t N = static_cast<std::int64_t>(D) * H * W;
  const int K = Cin * 27;
  Tensor out = Tensor::zeros({B, Cout, D, H, W});

  ConstMapRM w_mat(weight.data().data(), Cout, K);
  ConstMapVec b_vec(bias.data().data(), Cout);
  MatrixRM col(K, N);
  for (int b = 0; b < B; ++b) {
    im2col(input.data().data() + static_cast<std::int64_t>(b) * Cin * N, Cin, D, H, W, col.data());
    MapRM out_mat(out.data().data() + static_cast<std::int64_t>(b) * Cout * N, Cout, N);
    out_mat.noalias() = w_mat * col;
    out_mat.colwise() += b_vec;
  }

  if (wants_grad({&input, &weight, &bias})) {
    Tensor in = input, w = weight, bi = bias;
    attach(out, "conv3d", {input, weight, bias}, [in, w, bi, B, Cin, Cout, D, H, W, K,
                                                  N](const detail::TensorImpl& o) mutable {
      ConstMapRM w_mat(w.data().data(), Cout, K);
      MatrixRM col(K, N);
      for (int b = 0; b < B; ++b) {
        ConstMapRM dout(o.grad.data() + static_cast<std::int64_t>(b) * Cout * N, Cout, N);
        const bool need_col = w.requires_grad();
        if (need_col)
          im2col(in.data().data() + static_cast<std::int64_t>(b) * Cin * N, Cin, D, H, W,
                 col.data());
        if (w.requires_grad()) {
          w.ensure_grad();
          MapRM dw(w.grad().data(), Cout, K);
          dw.noalias() += dout * col.transpose();
        }
        if (bi.requires_grad()) {
          bi.ensure_grad();
          // Fixed-order accumulation: Eigen's vectorized redux peels to the
          // first aligned element, so its rounding depends on the buffer
          // address and training would not be bit-reproducible.
          float* db = bi.grad().data();
          for (int c = 0; c < Cout; ++c) {
            const float* row = dout.data() + static_cast<std::int64_t>(c) * N;
            double acc = 0.0;
            for (std::int64_t i = 0; i < N; ++i) acc += row[i];
            db[c] += static_cast<float>(acc);
          }
        }
        if (in.requires_grad()) {
          in.ensure_grad();
          MatrixRM dcol(K, N);
          dcol.noalias() = w_mat.transpose() * dout;
          col2im_add(dcol.data(), Cin, D, H, W,
                     in.grad().data() + static_cast<std::int64_t>(b) * Cin * N);
        }
      }
    });
  }
  return out;
}

namespace {

Tensor pool3d(const Tensor& input, bool take_max, const char* op) {
  require_rank(input, 5, op, "input");
  const int B = input.dim(0), C = input.dim(1);
  const int D = input.dim(2), H = input.dim(3), W = input.dim(4);
  if (D % 2 || H % 2 || W % 2)
    throw ShapeError(std::string(op) + ": spatial dims must be even, got " +
                     shape_str(input.shape()));
  const int Do = D / 2, Ho = H / 2, Wo = W / 2;
  Tensor out = Tensor::zeros({B, C, Do, Ho, Wo});

  const float* src = input.data().data();
  float* dst = out.data().data();
  const std::int64_t n_out = out.size();
  std::vector<std::int64_t> argmax(take_max ? n_out : 0);

  std::int64_t o = 0;
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const std::int64_t base = (static_cast<std::int64_t>(b) * C + c) * D * H * W;
      for (int z = 0; z < Do; ++z) {
        for (int y = 0; y < Ho; ++y) {
          for (int x = 0; x < Wo; ++x, ++o) {
            float best = take_max ? -std::numeric_limits<float>::infinity() : 0.0f;
            std::int64_t best_at = -1;
            for (int kz = 0; kz < 2; ++kz) {
              for (int ky = 0; ky < 2; ++ky) {
                for (int kx = 0; kx < 2; ++kx) {
                  const std::int64_t idx =
                      base + (static_cast<std::int64_t>(2 * z + kz) * H + (2 * y + ky)) * W +
                      (2 * x + kx);
                  const float v = src[idx];
                  if (take_max) {
                    if (v > best) {  // strict: first index wins ties
                      best = v;
                      best_at = idx;
                    }
                  } else {
                    best += v;
                  }
                }
              }
            }
            if (take_max) {
              dst[o] = best;
              argmax[o] = best_at;
            } else {
              dst[o] = best * 0.125f;
            }
          }
        }
      }
    }
  }

  if (wants_grad({&input})) {
    Tensor in = input;
    if (take_max) {
      attach(out, op, {input}, [in, argmax = std::move(argmax)](const detail::TensorImpl& o) mutable {
        in.ensure_grad();
        float* g = in.grad().data();
        for (size_t i = 0; i < o.grad.size(); ++i) g[argmax[i]] += o.grad[i];
      });
    } else {
      attach(out, op, {input}, [in, B, C, D, H, W, Do, Ho, Wo](const detail::TensorImpl& o) mutable {
        in.ensure_grad();
        float* g = in.grad().data();
        std::int64_t oi = 0;
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(b) * C + c) * D * H * W;
            for (int z = 0; z < Do; ++z)
              for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x, ++oi) {
                  const float v = o.grad[oi] * 0.125f;
                  for (int kz = 0; kz < 2; ++kz)
                    for (int ky = 0; ky < 2; ++ky)
                      for (int kx = 0; kx < 2; ++kx)
                        g[base + (static_cast<std::int64_t>(2 * z + kz) * H + (2 * y + ky)) * W +
                          (2 * x + kx)] += v;
                }
          }
      });
    }
  }
  return out;
}

}  // namespace

Tensor maxpool3d(const Tensor& input) { return pool3d(input, true, "maxpool3d"); }
Tensor avgpool3d(const Tensor& input) { return pool3d(input, false, "avgpool3d"); }

Tensor batchnorm3d(const Tensor& input, const Tensor& gamma, const Tensor& beta_shift,
                   BatchNormState& state, bool training) {
  require_rank(input, 5, "batchnorm3d", "input");
  require_rank(gamma, 1, "batchnorm3d", "gamma");
  require_rank(beta_shift, 1, "batchnorm3d", "beta");
  const int B = input.dim(0), C = input.dim(1);
  const int D = input.dim(2), H = input.dim(3), W = input.dim(4);
  if (gamma.dim(0) != C || beta_shift.dim(0) != C)
    throw ShapeError("batchnorm3d: gamma/beta must have one entry per channel, input " +
                     shape_str(input.shape()));
  if (state.running_mean.empty()) state = BatchNormState(C);
  if (static_cast<int>(state.running_mean.size()) != C)
    throw ShapeError("batchnorm3d: state tracks " + std::to_string(state.running_mean.size()) +
                     " channels, input has " + std::to_string(C));

  const std::int64_t V = static_cast<std::int64_t>(D) * H * W;
  const std::int64_t n = static_cast<std::int64_t>(B) * V;  // samples per channel
  if (training && n < 2)
    throw ValidationError("batchnorm3d: train mode needs B*D*H*W >= 2 per channel");

  Tensor out = Tensor::zeros({B, C, D, H, W});
  const float* src = input.data().data();
  float* dst = out.data().data();

  // Per-channel normalization parameters actually applied.
  std::vector<float> mean(C), inv_std(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int b = 0; b < B; ++b) {
        const float* p = src + (static_cast<std::int64_t>(b) * C + c) * V;
        for (std::int64_t i = 0; i < V; ++i) {
          s += p[i];
          s2 += static_cast<double>(p[i]) * p[i];
        }
      }
      const double mu = s / static_cast<double>(n);
      const double var = std::max(0.0, s2 / static_cast<double>(n) - mu * mu);
      mean[c] = static_cast<float>(mu);
      inv_std[c] = static_cast<float>(1.0 / std::sqrt(var + kBnEpsilon));
      const double var_unbiased = var * static_cast<double>(n) / static_cast<double>(n - 1);
      state.running_mean[c] = kBnMomentum * state.running_mean[c] + (1.0f - kBnMomentum) * static_cast<float>(mu);
      state.running_var[c] = kBnMomentum * state.running_var[c] + (1.0f - kBnMomentum) * static_cast<float>(var_unbiased);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0f / std::sqrt(state.running_var[c] + kBnEpsilon);
    }
  }

  const float* g = gamma.data().data();
  const float* be = beta_shift.data().data();
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const std::int64_t off = (static_cast<std::int64_t>(b) * C + c) * V;
      const float scale = g[c] * inv_std[c];
      const float shift = be[c] - mean[c] * scale;
      MapVec(dst + off, V) = ConstMapVec(src + off, V) * scale + Eigen::VectorXf::Constant(V, shift);
    }
  }

  if (wants_grad({&input, &gamma, &beta_shift})) {
    Tensor in = input, ga = gamma, bet = beta_shift;
    attach(out, "batchnorm3d", {input, gamma, beta_shift},
           [in, ga, bet, B, C, V, n, training, mean, inv_std](const detail::TensorImpl& o) mutable {
             const float* x = in.data().data();
             const float* gp = ga.data().data();
             for (int c = 0; c < C; ++c) {
               // Channel-wise reductions of dy and dy*xhat.
               double sum_dy = 0.0, sum_dy_xhat = 0.0;
               for (int b = 0; b < B; ++b) {
                 const std::int64_t off = (static_cast<std::int64_t>(b) * C + c) * V;
                 const float* dy = o.grad.data() + off;
                 const float* xb = x + off;
                 for (std::int64_t i = 0; i < V; ++i) {
                   const float xhat = (xb[i] - mean[c]) * inv_std[c];
                   sum_dy += dy[i];
                   sum_dy_xhat += static_cast<double>(dy[i]) * xhat;
                 }
               }
               if (bet.requires_grad()) {
                 bet.ensure_grad();
                 bet.grad()[c] += static_cast<float>(sum_dy);
               }
               if (ga.requires_grad()) {
                 ga.ensure_grad();
                 ga.grad()[c] += static_cast<float>(sum_dy_xhat);
               }
               if (in.requires_grad()) {
                 in.ensure_grad();
                 float* dx = in.grad().data();
                 const float k = gp[c] * inv_std[c];
                 if (training) {
                   const float m_dy = static_cast<float>(sum_dy / static_cast<double>(n));
                   const float m_dy_xhat = static_cast<float>(sum_dy_xhat / static_cast<double>(n));
                   for (int b = 0; b < B; ++b) {
                     const std::int64_t off = (static_cast<std::int64_t>(b) * C + c) * V;
                     const float* dy = o.grad.data() + off;
                     const float* xb = x + off;
                     for (std::int64_t i = 0; i < V; ++i) {
                       const float xhat = (xb[i] - mean[c]) * inv_std[c];
                       dx[off + i] += k * (dy[i] - m_dy - xhat * m_dy_xhat);
                     }
                   }
                 } else {
                   for (int b = 0; b < B; ++b) {
                     const std::int64_t off = (static_cast<std::int64_t>(b) * C + c) * V;
                     const float* dy = o.grad.data() + off;
                     for (std::int64_t i = 0; i < V; ++i) dx[off + i] += k * dy[i];
                   }
                 }
               }
             }
           });
  }
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = Tensor::zeros(input.shape());
  const float* src = input.data().data();
  float* dst = out.data().data();
  const std::int64_t n = input.size();
  for (std::int64_t i = 0; i < n; ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;

  if (wants_grad({&input})) {
    Tensor in = input;
    attach(out, "relu", {input}, [in](const detail::TensorImpl& o) mutable {
      in.ensure_grad();
      const float* x = in.data().data();
      float* g = in.grad().data();
      for (size_t i = 0; i < o.grad.size(); ++i)
        if (x[i] > 0.0f) g[i] += o.grad[i];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& input) {
  Tensor out = Tensor::zeros(input.shape());
  const float* src = input.data().data();
  float* dst = out.data().data();
  const std::int64_t n = input.size();
  // Largest float below 1; keeps the open-interval contract at fp32 precision.
  const float one_minus = std::nextafter(1.0f, 0.0f);
  for (std::int64_t i = 0; i < n; ++i) {
    const float x = src[i];
    float y;
    if (x >= 0.0f) {
      y = 1.0f / (1.0f + std::exp(-x));
    } else {
      const float e = std::exp(x);
      y = e / (1.0f + e);
    }
    if (y >= 1.0f) y = one_minus;
    if (y <= 0.0f) y = std::numeric_limits<float>::denorm_min();
    dst[i] = y;
  }

  if (wants_grad({&input})) {
    Tensor in = input;
    std::vector<float> y(dst, dst + n);
    attach(out, "sigmoid", {input}, [in, y = std::move(y)](const detail::TensorImpl& o) mutable {
      in.ensure_grad();
      float* g = in.grad().data();
      for (size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * y[i] * (1.0f - y[i]);
    });
  }
  return out;
}

Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "fully_connected", "input");
  require_rank(weight, 2, "fully_connected", "weight");
  require_rank(bias, 1, "fully_connected", "bias");
  const int B = input.dim(0), N = input.dim(1);
  const int M = weight.dim(0);
  if (weight.dim(1) != N)
    throw ShapeError("fully_connected: input " + shape_str(input.shape()) + " vs weight " +
                     shape_str(weight.shape()));
  if (bias.dim(0) != M)
    throw ShapeError("fully_connected: bias " + shape_str(bias.shape()) + " vs M " +
                     std::to_string(M));

  Tensor out = Tensor::zeros({B, M});
  ConstMapRM in_mat(input.data().data(), B, N);
  ConstMapRM w_mat(weight.data().data(), M, N);
  MapRM out_mat(out.data().data(), B, M);
  out_mat.noalias() = in_mat * w_mat.transpose();
  out_mat.rowwise() += ConstMapVec(bias.data().data(), M).transpose();

  if (wants_grad({&input, &weight, &bias})) {
    Tensor in = input, w = weight, bi = bias;
    attach(out, "fully_connected", {input, weight, bias},
           [in, w, bi, B, N, M](const detail::TensorImpl& o) mutable {
             ConstMapRM dout(o.grad.data(), B, M);
             if (in.requires_grad()) {
               in.ensure_grad();
               MapRM din(in.grad().data(), B, N);
               din.noalias() += dout * ConstMapRM(w.data().data(), M, N);
             }
             if (w.requires_grad()) {
               w.ensure_grad();
               MapRM dw(w.grad().data(), M, N);
               dw.noalias() += dout.transpose() * ConstMapRM(in.data().data(), B, N);
             }
             if (bi.requires_grad()) {
               bi.ensure_grad();
               // Fixed-order accumulation; see the conv3d bias gradient.
               float* db = bi.grad().data();
               for (int m = 0; m < M; ++m) {
                 double acc = 0.0;
                 for (int b = 0; b < B; ++b)
                   acc += o.grad[static_cast<std::size_t>(b) * static_cast<std::size_t>(M) + m];
                 db[m] += static_cast<float>(acc);
               }
             }
           });
  }
  return out;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const std::int64_t n = a.size();
  MapVec(out.data().data(), n) =
      ConstMapVec(a.data().data(), n) + ConstMapVec(b.data().data(), n);

  if (wants_grad({&a, &b})) {
    Tensor ta = a, tb = b;
    attach(out, "add", {a, b}, [ta, tb](const detail::TensorImpl& o) mutable {
      const std::int64_t n = static_cast<std::int64_t>(o.grad.size());
      if (ta.requires_grad()) {
        ta.ensure_grad();
        MapVec(ta.grad().data(), n) += ConstMapVec(o.grad.data(), n);
      }
      if (tb.requires_grad()) {
        tb.ensure_grad();
        MapVec(tb.grad().data(), n) += ConstMapVec(o.grad.data(), n);
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const std::int64_t n = a.size();
  MapVec(out.data().data(), n) = ConstMapVec(a.data().data(), n).cwiseProduct(
      ConstMapVec(b.data().data(), n));

  if (wants_grad({&a, &b})) {
    Tensor ta = a, tb = b;
    attach(out, "mul", {a, b}, [ta, tb](const detail::TensorImpl& o) mutable {
      const std::int64_t n = static_cast<std::int64_t>(o.grad.size());
      if (ta.requires_grad()) {
        ta.ensure_grad();
        MapVec(ta.grad().data(), n) +=
            ConstMapVec(o.grad.data(), n).cwiseProduct(ConstMapVec(tb.data().data(), n));
      }
      if (tb.requires_grad()) {
        tb.ensure_grad();
        MapVec(tb.grad().data(), n) +=
            ConstMapVec(o.grad.data(), n).cwiseProduct(ConstMapVec(ta.data().data(), n));
      }
    });
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank())
    throw ShapeError("concat_channels: ranks must match and be >= 2, got " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  for (int i = 0; i < a.rank(); ++i)
    if (i != 1 && a.dim(i) != b.dim(i))
      throw ShapeError("concat_channels: non-channel dims differ, " + shape_str(a.shape()) +
                       " vs " + shape_str(b.shape()));

  const int B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  std::int64_t inner = 1;
  for (int i = 2; i < a.rank(); ++i) inner *= a.dim(i);
  std::vector<int> out_shape = a.shape();
  out_shape[1] = Ca + Cb;
  Tensor out = Tensor::zeros(out_shape);

  const std::int64_t na = Ca * inner, nb = Cb * inner;
  for (int bidx = 0; bidx < B; ++bidx) {
    float* dst = out.data().data() + static_cast<std::int64_t>(bidx) * (na + nb);
    std::memcpy(dst, a.data().data() + bidx * na, sizeof(float) * na);
    std::memcpy(dst + na, b.data().data() + bidx * nb, sizeof(float) * nb);
  }

  if (wants_grad({&a, &b})) {
    Tensor ta = a, tb = b;
    attach(out, "concat_channels", {a, b}, [ta, tb, B, na, nb](const detail::TensorImpl& o) mutable {
      for (int bidx = 0; bidx < B; ++bidx) {
        const float* g = o.grad.data() + static_cast<std::int64_t>(bidx) * (na + nb);
        if (ta.requires_grad()) {
          ta.ensure_grad();
          MapVec(ta.grad().data() + bidx * na, na) += ConstMapVec(g, na);
        }
        if (tb.requires_grad()) {
          tb.ensure_grad();
          MapVec(tb.grad().data() + bidx * nb, nb) += ConstMapVec(g + na, nb);
        }
      }
    });
  }
  return out;
}

Tensor flatten(const Tensor& input) {
  if (input.rank() < 1) throw ShapeError("flatten: undefined on rank-0 input");
  const int B = input.dim(0);
  const int N = static_cast<int>(input.size() / B);
  Tensor out = Tensor::from_data({B, N},
                                 std::vector<float>(input.data().begin(), input.data().end()));
  if (wants_grad({&input})) {
    Tensor in = input;
    attach(out, "flatten", {input}, [in](const detail::TensorImpl& o) mutable {
      in.ensure_grad();
      MapVec(in.grad().data(), static_cast<std::int64_t>(o.grad.size())) +=
          ConstMapVec(o.grad.data(), static_cast<std::int64_t>(o.grad.size()));
    });
  }
  return out;
}

Tensor sum(const Tensor& input) {
  double acc = 0.0;
  for (float v : input.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (wants_grad({&input})) {
    Tensor in = input;
    attach(out, "sum", {input}, [in](const detail::TensorImpl& o) mutable {
      in.ensure_grad();
      const float g = o.grad[0];
      for (float& v : in.grad()) v += g;
    });
  }
  return out;
}

}  // namespace fusegrid::ops
