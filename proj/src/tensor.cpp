#include "nvsd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace nvsd {

namespace {

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("non-positive dim in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::shared_ptr<TensorImpl> make_impl(std::vector<int> shape) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(product(impl->shape), 0.0f);
  return impl;
}

// Result node wiring: requires_grad propagates from parents.
Tensor make_result(std::vector<int> shape,
                   std::vector<std::shared_ptr<TensorImpl>> parents,
                   std::function<void(TensorImpl&)> backward_fn) {
  auto impl = make_impl(std::move(shape));
  for (const auto& p : parents)
    if (p->requires_grad) impl->requires_grad = true;
  if (impl->requires_grad) {
    impl->parents = std::move(parents);
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(impl);
}

}  // namespace

std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto impl = make_impl(std::move(shape));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
  auto impl = make_impl(std::move(shape));
  std::fill(impl->data.begin(), impl->data.end(), value);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<float> data,
                    bool requires_grad) {
  auto impl = make_impl(std::move(shape));
  if (impl->data.size() != data.size())
    throw std::invalid_argument("Tensor::from: " + std::to_string(data.size()) +
                                " values for shape " + shape_str(impl->shape));
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::randn(std::vector<int> shape, SeededRng& rng, float stddev,
                     bool requires_grad) {
  auto impl = make_impl(std::move(shape));
  for (auto& v : impl->data) v = rng.next_gaussian() * stddev;
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

float Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("item(): tensor has shape " + shape_str(shape()));
  return impl_->data[0];
}

void check_finite(const Tensor& t, const char* what) {
  for (float v : t.data())
    if (!std::isfinite(v))
      throw std::runtime_error(std::string(what) + ": non-finite value");
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto pa = a.impl(), pb = b.impl();
  Tensor out = make_result(a.shape(), {pa, pb}, [pa, pb](TensorImpl& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = pa->data[i] + pb->data[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto pa = a.impl(), pb = b.impl();
  Tensor out = make_result(a.shape(), {pa, pb}, [pa, pb](TensorImpl& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = pa->data[i] - pb->data[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto pa = a.impl(), pb = b.impl();
  Tensor out = make_result(a.shape(), {pa, pb}, [pa, pb](TensorImpl& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb->grad[i] += self.grad[i] * pa->data[i];
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = pa->data[i] * pb->data[i];
  return out;
}

Tensor scale(const Tensor& a, float c) {
  auto pa = a.impl();
  Tensor out = make_result(a.shape(), {pa}, [pa, c](TensorImpl& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += c * self.grad[i];
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = c * pa->data[i];
  return out;
}

Tensor add_scalar(const Tensor& a, float c) {
  auto pa = a.impl();
  Tensor out = make_result(a.shape(), {pa}, [pa](TensorImpl& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = pa->data[i] + c;
  return out;
}

Tensor silu(const Tensor& a) {
  auto pa = a.impl();
  Tensor out = make_result(a.shape(), {pa}, [pa](TensorImpl& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      float x = pa->data[i];
      float s = 1.0f / (1.0f + std::exp(-x));
      pa->grad[i] += self.grad[i] * (s + x * s * (1.0f - s));
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i) {
    float x = pa->data[i];
    out.data()[i] = x / (1.0f + std::exp(-x));
  }
  return out;
}

// ---- matmul / linear ----

namespace {
// c[m x n] += a[m x k] * b[k x n], ikj order for contiguous inner loops.
void gemm_acc(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::size_t>(i) * k;
    float* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      float av = arow[p];
      if (av == 0.0f) continue;
      const float* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}
// c[m x n] += a[k x m]^T * b[k x n]
void gemm_at_b(const float* a, const float* b, float* c, int k, int m, int n) {
  for (int p = 0; p < k; ++p) {
    const float* arow = a + static_cast<std::size_t>(p) * m;
    const float* brow = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      float av = arow[i];
      if (av == 0.0f) continue;
      float* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}
// c[m x k] += a[m x n] * b[k x n]^T
void gemm_a_bt(const float* a, const float* b, float* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::size_t>(i) * n;
    float* crow = c + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      const float* brow = b + static_cast<std::size_t>(j) * n;
      float acc = 0.0f;
      for (int p = 0; p < n; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto pa = a.impl(), pb = b.impl();
  Tensor out = make_result({m, n}, {pa, pb}, [pa, pb, m, k, n](TensorImpl& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      gemm_a_bt(self.grad.data(), pb->data.data(), pa->grad.data(), m, n, k);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      gemm_at_b(pa->data.data(), self.grad.data(), pb->grad.data(), m, k, n);
    }
  });
  gemm_acc(pa->data.data(), pb->data.data(), out.data().data(), m, k, n);
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  return b.defined() ? add_row_bias(y, b) : y;
}

// ---- conv2d ----

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int padding) {
  if (x.rank() != 3 || w.rank() != 4)
    throw std::invalid_argument("conv2d: want x [CxHxW], w [OxCxkxk], got " +
                                shape_str(x.shape()) + " and " + shape_str(w.shape()));
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  int O = w.dim(0), K = w.dim(2);
  if (w.dim(1) != C)
    throw std::invalid_argument("conv2d: channel mismatch " + shape_str(x.shape()) +
                                " vs " + shape_str(w.shape()));
  if (w.dim(3) != K || K % 2 == 0)
    throw std::invalid_argument("conv2d: kernel must be square and odd, got " +
                                shape_str(w.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O))
    throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) +
                                " for " + std::to_string(O) + " outputs");
  int Ho = (H + 2 * padding - K) / stride + 1;
  int Wo = (W + 2 * padding - K) / stride + 1;
  auto px = x.impl(), pw = w.impl();
  auto pbias = bias.defined() ? bias.impl() : nullptr;
  std::vector<std::shared_ptr<TensorImpl>> parents{px, pw};
  if (pbias) parents.push_back(pbias);

  auto run_backward = [px, pw, pbias, C, H, W, O, K, Ho, Wo, stride,
                       padding](TensorImpl& self) {
    const float* go = self.grad.data();
    if (pbias && pbias->requires_grad) {
      pbias->ensure_grad();
      for (int o = 0; o < O; ++o) {
        float acc = 0.0f;
        const float* g = go + static_cast<std::size_t>(o) * Ho * Wo;
        for (int i = 0; i < Ho * Wo; ++i) acc += g[i];
        pbias->grad[o] += acc;
      }
    }
    bool need_x = px->requires_grad, need_w = pw->requires_grad;
    if (need_x) px->ensure_grad();
    if (need_w) pw->ensure_grad();
    if (!need_x && !need_w) return;
    for (int o = 0; o < O; ++o) {
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
          float g = go[(static_cast<std::size_t>(o) * Ho + oy) * Wo + ox];
          if (g == 0.0f) continue;
          int iy0 = oy * stride - padding, ix0 = ox * stride - padding;
          for (int c = 0; c < C; ++c) {
            const float* xc = px->data.data() + static_cast<std::size_t>(c) * H * W;
            float* gxc = need_x ? px->grad.data() + static_cast<std::size_t>(c) * H * W : nullptr;
            const std::size_t wbase = ((static_cast<std::size_t>(o) * C + c) * K) * K;
            for (int ky = 0; ky < K; ++ky) {
              int iy = iy0 + ky;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < K; ++kx) {
                int ix = ix0 + kx;
                if (ix < 0 || ix >= W) continue;
                std::size_t wi = wbase + static_cast<std::size_t>(ky) * K + kx;
                if (need_w) pw->grad[wi] += g * xc[iy * W + ix];
                if (need_x) gxc[iy * W + ix] += g * pw->data[wi];
              }
            }
          }
        }
      }
    }
  };

  Tensor out = make_result({O, Ho, Wo}, std::move(parents), run_backward);
  float* od = out.data().data();
  const float* xd = px->data.data();
  const float* wd = pw->data.data();
  for (int o = 0; o < O; ++o) {
    float b = pbias ? pbias->data[o] : 0.0f;
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        int iy0 = oy * stride - padding, ix0 = ox * stride - padding;
        float acc = b;
        for (int c = 0; c < C; ++c) {
          const float* xc = xd + static_cast<std::size_t>(c) * H * W;
          const float* wc = wd + ((static_cast<std::size_t>(o) * C + c) * K) * K;
          for (int ky = 0; ky < K; ++ky) {
            int iy = iy0 + ky;
            if (iy < 0 || iy >= H) continue;
            const float* xrow = xc + iy * W;
            const float* wrow = wc + ky * K;
            for (int kx = 0; kx < K; ++kx) {
              int ix = ix0 + kx;
              if (ix < 0 || ix >= W) continue;
              acc += wrow[kx] * xrow[ix];
            }
          }
        }
        od[(static_cast<std::size_t>(o) * Ho + oy) * Wo + ox] = acc;
      }
    }
  }
  return out;
}

// ---- attention ----

namespace {
// Softmax rows of scores [nq x nk] in place, max-subtracted.
void softmax_rows(std::vector<float>& s, int nq, int nk) {
  for (int i = 0; i < nq; ++i) {
    float* row = s.data() + static_cast<std::size_t>(i) * nk;
    float mx = row[0];
    for (int j = 1; j < nk; ++j) mx = std::max(mx, row[j]);
    float sum = 0.0f;
    for (int j = 0; j < nk; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    float inv = 1.0f / sum;
    for (int j = 0; j < nk; ++j) row[j] *= inv;
  }
}

std::vector<float> attn_scores(const TensorImpl& q, const TensorImpl& k,
                               const TensorImpl* mask, int nq, int nk, int d) {
  std::vector<float> s(static_cast<std::size_t>(nq) * nk, 0.0f);
  float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));
  gemm_a_bt(q.data.data(), k.data.data(), s.data(), nq, d, nk);
  for (auto& v : s) v *= inv_sqrt_d;
  if (mask) {
    for (int i = 0; i < nq; ++i)
      for (int j = 0; j < nk; ++j) s[static_cast<std::size_t>(i) * nk + j] += mask->data[j];
  }
  softmax_rows(s, nq, nk);
  return s;
}
}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor& key_mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.dim(0) != v.dim(0) || k.dim(1) != v.dim(1))
    throw std::invalid_argument("attention: shape mismatch Q" + shape_str(q.shape()) +
                                " K" + shape_str(k.shape()) + " V" + shape_str(v.shape()));
  int nq = q.dim(0), nk = k.dim(0), d = q.dim(1);
  if (key_mask.defined() && (key_mask.rank() != 1 || key_mask.dim(0) != nk))
    throw std::invalid_argument("attention: key_mask shape " +
                                shape_str(key_mask.shape()) + " for nk=" + std::to_string(nk));
  auto pq = q.impl(), pk = k.impl(), pv = v.impl();
  auto pm = key_mask.defined() ? key_mask.impl() : nullptr;

  auto weights = std::make_shared<std::vector<float>>(
      attn_scores(*pq, *pk, pm.get(), nq, nk, d));

  Tensor out = make_result({nq, d}, {pq, pk, pv},
                           [pq, pk, pv, weights, nq, nk, d](TensorImpl& self) {
    const float* a = weights->data();
    const float* go = self.grad.data();
    float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));
    if (pv->requires_grad) {
      pv->ensure_grad();
      gemm_at_b(a, go, pv->grad.data(), nq, nk, d);
    }
    if (pq->requires_grad || pk->requires_grad) {
      // dA = dO V^T; dS = A o (dA - rowsum(dA o A))
      std::vector<float> ds(static_cast<std::size_t>(nq) * nk, 0.0f);
      gemm_a_bt(go, pv->data.data(), ds.data(), nq, d, nk);
      for (int i = 0; i < nq; ++i) {
        float* dr = ds.data() + static_cast<std::size_t>(i) * nk;
        const float* ar = a + static_cast<std::size_t>(i) * nk;
        float dot = 0.0f;
        for (int j = 0; j < nk; ++j) dot += dr[j] * ar[j];
        for (int j = 0; j < nk; ++j) dr[j] = ar[j] * (dr[j] - dot) * inv_sqrt_d;
      }
      if (pq->requires_grad) {
        pq->ensure_grad();
        gemm_acc(ds.data(), pk->data.data(), pq->grad.data(), nq, nk, d);
      }
      if (pk->requires_grad) {
        pk->ensure_grad();
        gemm_at_b(ds.data(), pq->data.data(), pk->grad.data(), nq, nk, d);
      }
    }
  });
  gemm_acc(weights->data(), pv->data.data(), out.data().data(), nq, nk, d);
  return out;
}

std::vector<float> attention_weights(const Tensor& q, const Tensor& k,
                                     const Tensor& key_mask) {
  int nq = q.dim(0), nk = k.dim(0), d = q.dim(1);
  auto pm = key_mask.defined() ? key_mask.impl() : nullptr;
  return attn_scores(*q.impl(), *k.impl(), pm.get(), nq, nk, d);
}

// ---- normalization ----

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma,
                  const Tensor& beta) {
  if (x.rank() != 3)
    throw std::invalid_argument("group_norm: want [CxHxW], got " + shape_str(x.shape()));
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (C % groups != 0)
    throw std::invalid_argument("group_norm: C=" + std::to_string(C) +
                                " not divisible by groups=" + std::to_string(groups));
  if (gamma.dim(0) != C || beta.dim(0) != C)
    throw std::invalid_argument("group_norm: affine shape mismatch");
  const float eps = 1e-5f;
  int gc = C / groups;            // channels per group
  std::size_t gsz = static_cast<std::size_t>(gc) * H * W;
  auto px = x.impl(), pg = gamma.impl(), pb = beta.impl();

  auto mu = std::make_shared<std::vector<float>>(groups);
  auto inv_sigma = std::make_shared<std::vector<float>>(groups);
  for (int g = 0; g < groups; ++g) {
    const float* base = px->data.data() + g * gsz;
    float m = 0.0f;
    for (std::size_t i = 0; i < gsz; ++i) m += base[i];
    m /= static_cast<float>(gsz);
    float var = 0.0f;
    for (std::size_t i = 0; i < gsz; ++i) {
      float dv = base[i] - m;
      var += dv * dv;
    }
    var /= static_cast<float>(gsz);
    (*mu)[g] = m;
    (*inv_sigma)[g] = 1.0f / std::sqrt(var + eps);
  }

  Tensor out = make_result(
      x.shape(), {px, pg, pb},
      [px, pg, pb, mu, inv_sigma, groups, gc, H, W, gsz](TensorImpl& self) {
        std::size_t hw = static_cast<std::size_t>(H) * W;
        for (int g = 0; g < groups; ++g) {
          const float* xb = px->data.data() + g * gsz;
          const float* gob = self.grad.data() + g * gsz;
          float m = (*mu)[g], is = (*inv_sigma)[g];
          // dxhat, plus affine grads
          std::vector<float> dxhat(gsz);
          for (int c = 0; c < gc; ++c) {
            int ch = g * gc + c;
            float gam = pg->data[ch];
            float dgam = 0.0f, dbeta = 0.0f;
            for (std::size_t i = 0; i < hw; ++i) {
              std::size_t idx = c * hw + i;
              float xh = (xb[idx] - m) * is;
              float go = gob[idx];
              dxhat[idx] = go * gam;
              dgam += go * xh;
              dbeta += go;
            }
            if (pg->requires_grad) {
              pg->ensure_grad();
              pg->grad[ch] += dgam;
            }
            if (pb->requires_grad) {
              pb->ensure_grad();
              pb->grad[ch] += dbeta;
            }
          }
          if (px->requires_grad) {
            px->ensure_grad();
            float sum_dx = 0.0f, sum_dx_xh = 0.0f;
            for (std::size_t i = 0; i < gsz; ++i) {
              float xh = (xb[i] - m) * is;
              sum_dx += dxhat[i];
              sum_dx_xh += dxhat[i] * xh;
            }
            float inv_n = 1.0f / static_cast<float>(gsz);
            float* gx = px->grad.data() + g * gsz;
            for (std::size_t i = 0; i < gsz; ++i) {
              float xh = (xb[i] - m) * is;
              gx[i] += is * (dxhat[i] - inv_n * sum_dx - xh * inv_n * sum_dx_xh);
            }
          }
        }
      });

  std::size_t hw = static_cast<std::size_t>(H) * W;
  for (int g = 0; g < groups; ++g) {
    const float* xb = px->data.data() + g * gsz;
    float* ob = out.data().data() + g * gsz;
    float m = (*mu)[g], is = (*inv_sigma)[g];
    for (int c = 0; c < gc; ++c) {
      int ch = g * gc + c;
      float gam = pg->data[ch], bet = pb->data[ch];
      for (std::size_t i = 0; i < hw; ++i) {
        std::size_t idx = c * hw + i;
        ob[idx] = (xb[idx] - m) * is * gam + bet;
      }
    }
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.rank() != 2)
    throw std::invalid_argument("layer_norm: want [nxd], got " + shape_str(x.shape()));
  int n = x.dim(0), d = x.dim(1);
  if (gamma.dim(0) != d || beta.dim(0) != d)
    throw std::invalid_argument("layer_norm: affine shape mismatch");
  const float eps = 1e-5f;
  auto px = x.impl(), pg = gamma.impl(), pb = beta.impl();
  auto mu = std::make_shared<std::vector<float>>(n);
  auto inv_sigma = std::make_shared<std::vector<float>>(n);
  for (int i = 0; i < n; ++i) {
    const float* row = px->data.data() + static_cast<std::size_t>(i) * d;
    float m = 0.0f;
    for (int j = 0; j < d; ++j) m += row[j];
    m /= d;
    float var = 0.0f;
    for (int j = 0; j < d; ++j) {
      float dv = row[j] - m;
      var += dv * dv;
    }
    (*mu)[i] = m;
    (*inv_sigma)[i] = 1.0f / std::sqrt(var / d + eps);
  }
  Tensor out = make_result(
      x.shape(), {px, pg, pb}, [px, pg, pb, mu, inv_sigma, n, d](TensorImpl& self) {
        for (int i = 0; i < n; ++i) {
          const float* row = px->data.data() + static_cast<std::size_t>(i) * d;
          const float* go = self.grad.data() + static_cast<std::size_t>(i) * d;
          float m = (*mu)[i], is = (*inv_sigma)[i];
          std::vector<float> dxhat(d);
          float sum_dx = 0.0f, sum_dx_xh = 0.0f;
          for (int j = 0; j < d; ++j) {
            float xh = (row[j] - m) * is;
            dxhat[j] = go[j] * pg->data[j];
            sum_dx += dxhat[j];
            sum_dx_xh += dxhat[j] * xh;
            if (pg->requires_grad) {
              pg->ensure_grad();
              pg->grad[j] += go[j] * xh;
            }
            if (pb->requires_grad) {
              pb->ensure_grad();
              pb->grad[j] += go[j];
            }
          }
          if (px->requires_grad) {
            px->ensure_grad();
            float* gx = px->grad.data() + static_cast<std::size_t>(i) * d;
            for (int j = 0; j < d; ++j) {
              float xh = (row[j] - m) * is;
              gx[j] += is * (dxhat[j] - sum_dx / d - xh * sum_dx_xh / d);
            }
          }
        }
      });
  for (int i = 0; i < n; ++i) {
    const float* row = px->data.data() + static_cast<std::size_t>(i) * d;
    float* orow = out.data().data() + static_cast<std::size_t>(i) * d;
    float m = (*mu)[i], is = (*inv_sigma)[i];
    for (int j = 0; j < d; ++j)
      orow[j] = (row[j] - m) * is * pg->data[j] + pb->data[j];
  }
  return out;
}

// ---- broadcast bias ----

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() != 3 || b.rank() != 1 || b.dim(0) != x.dim(0))
    throw std::invalid_argument("add_channel_bias: " + shape_str(x.shape()) + " vs " +
                                shape_str(b.shape()));
  int C = x.dim(0);
  std::size_t hw = x.numel() / C;
  auto px = x.impl(), pb = b.impl();
  Tensor out = make_result(x.shape(), {px, pb}, [px, pb, C, hw](TensorImpl& self) {
    if (px->requires_grad) {
      px->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int c = 0; c < C; ++c) {
        float acc = 0.0f;
        const float* g = self.grad.data() + c * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += g[i];
        pb->grad[c] += acc;
      }
    }
  });
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < hw; ++i)
      out.data()[c * hw + i] = px->data[c * hw + i] + pb->data[c];
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1))
    throw std::invalid_argument("add_row_bias: " + shape_str(x.shape()) + " vs " +
                                shape_str(b.shape()));
  int n = x.dim(0), d = x.dim(1);
  auto px = x.impl(), pb = b.impl();
  Tensor out = make_result(x.shape(), {px, pb}, [px, pb, n, d](TensorImpl& self) {
    if (px->requires_grad) {
      px->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int j = 0; j < d; ++j) {
        float acc = 0.0f;
        for (int i = 0; i < n; ++i) acc += self.grad[static_cast<std::size_t>(i) * d + j];
        pb->grad[j] += acc;
      }
    }
  });
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out.data()[static_cast<std::size_t>(i) * d + j] =
          px->data[static_cast<std::size_t>(i) * d + j] + pb->data[j];
  return out;
}

// ---- layout ----

Tensor chw_to_nc(const Tensor& x) {
  if (x.rank() != 3)
    throw std::invalid_argument("chw_to_nc: want [CxHxW], got " + shape_str(x.shape()));
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  int n = H * W;
  auto px = x.impl();
  Tensor out = make_result({n, C}, {px}, [px, C, n](TensorImpl& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < C; ++c)
        px->grad[static_cast<std::size_t>(c) * n + i] +=
            self.grad[static_cast<std::size_t>(i) * C + c];
  });
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < C; ++c)
      out.data()[static_cast<std::size_t>(i) * C + c] =
          px->data[static_cast<std::size_t>(c) * n + i];
  return out;
}

Tensor nc_to_chw(const Tensor& x, int c, int h, int w) {
  if (x.rank() != 2 || x.dim(0) != h * w || x.dim(1) != c)
    throw std::invalid_argument("nc_to_chw: " + shape_str(x.shape()) + " vs c=" +
                                std::to_string(c) + " h=" + std::to_string(h) +
                                " w=" + std::to_string(w));
  int n = h * w;
  auto px = x.impl();
  Tensor out = make_result({c, h, w}, {px}, [px, c, n](TensorImpl& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        px->grad[static_cast<std::size_t>(i) * c + ch] +=
            self.grad[static_cast<std::size_t>(ch) * n + i];
  });
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      out.data()[static_cast<std::size_t>(ch) * n + i] =
          px->data[static_cast<std::size_t>(i) * c + ch];
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw std::invalid_argument("concat_channels: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  auto pa = a.impl(), pb = b.impl();
  std::size_t na = pa->numel();
  Tensor out = make_result({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, {pa, pb},
                           [pa, pb, na](TensorImpl& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < na; ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < pb->numel(); ++i) pb->grad[i] += self.grad[na + i];
    }
  });
  std::memcpy(out.data().data(), pa->data.data(), na * sizeof(float));
  std::memcpy(out.data().data() + na, pb->data.data(), pb->numel() * sizeof(float));
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw std::invalid_argument("concat_rows: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  auto pa = a.impl(), pb = b.impl();
  std::size_t na = pa->numel();
  Tensor out = make_result({a.dim(0) + b.dim(0), a.dim(1)}, {pa, pb},
                           [pa, pb, na](TensorImpl& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < na; ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < pb->numel(); ++i) pb->grad[i] += self.grad[na + i];
    }
  });
  std::memcpy(out.data().data(), pa->data.data(), na * sizeof(float));
  std::memcpy(out.data().data() + na, pb->data.data(), pb->numel() * sizeof(float));
  return out;
}

Tensor mean_rows(const Tensor& x) {
  if (x.rank() != 2)
    throw std::invalid_argument("mean_rows: want [nxd], got " + shape_str(x.shape()));
  int n = x.dim(0), d = x.dim(1);
  auto px = x.impl();
  Tensor out = make_result({1, d}, {px}, [px, n, d](TensorImpl& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    float inv = 1.0f / n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        px->grad[static_cast<std::size_t>(i) * d + j] += self.grad[j] * inv;
  });
  for (int j = 0; j < d; ++j) {
    float acc = 0.0f;
    for (int i = 0; i < n; ++i) acc += px->data[static_cast<std::size_t>(i) * d + j];
    out.data()[j] = acc / n;
  }
  return out;
}

Tensor embed_rows(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2)
    throw std::invalid_argument("embed_rows: table " + shape_str(table.shape()));
  int vocab = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= vocab)
      throw std::invalid_argument("embed_rows: id " + std::to_string(id) +
                                  " out of range [0," + std::to_string(vocab) + ")");
  auto pt = table.impl();
  int n = static_cast<int>(ids.size());
  Tensor out = make_result({n, d}, {pt}, [pt, ids, d](TensorImpl& self) {
    if (!pt->requires_grad) return;
    pt->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < d; ++j)
        pt->grad[static_cast<std::size_t>(ids[i]) * d + j] +=
            self.grad[i * d + j];
  });
  for (int i = 0; i < n; ++i)
    std::memcpy(out.data().data() + static_cast<std::size_t>(i) * d,
                pt->data.data() + static_cast<std::size_t>(ids[i]) * d,
                d * sizeof(float));
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  if (n != x.numel())
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " to " +
                                shape_str(shape));
  auto px = x.impl();
  Tensor out = make_result(std::move(shape), {px}, [px](TensorImpl& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
  });
  out.data() = px->data;
  return out;
}

Tensor upsample2x(const Tensor& x) {
  if (x.rank() != 3)
    throw std::invalid_argument("upsample2x: want [CxHxW], got " + shape_str(x.shape()));
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto px = x.impl();
  Tensor out = make_result({C, 2 * H, 2 * W}, {px}, [px, C, H, W](TensorImpl& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < 2 * H; ++y)
        for (int xw = 0; xw < 2 * W; ++xw)
          px->grad[(static_cast<std::size_t>(c) * H + y / 2) * W + xw / 2] +=
              self.grad[(static_cast<std::size_t>(c) * 2 * H + y) * 2 * W + xw];
  });
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < 2 * H; ++y)
      for (int xw = 0; xw < 2 * W; ++xw)
        out.data()[(static_cast<std::size_t>(c) * 2 * H + y) * 2 * W + xw] =
            px->data[(static_cast<std::size_t>(c) * H + y / 2) * W + xw / 2];
  return out;
}

Tensor avgpool2x(const Tensor& x) {
  if (x.rank() != 3 || x.dim(1) % 2 || x.dim(2) % 2)
    throw std::invalid_argument("avgpool2x: want even [CxHxW], got " + shape_str(x.shape()));
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto px = x.impl();
  Tensor out = make_result({C, H / 2, W / 2}, {px}, [px, C, H, W](TensorImpl& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H / 2; ++y)
        for (int xw = 0; xw < W / 2; ++xw) {
          float g = 0.25f * self.grad[(static_cast<std::size_t>(c) * (H / 2) + y) * (W / 2) + xw];
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              px->grad[(static_cast<std::size_t>(c) * H + 2 * y + dy) * W + 2 * xw + dx] += g;
        }
  });
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H / 2; ++y)
      for (int xw = 0; xw < W / 2; ++xw) {
        float acc = 0.0f;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            acc += px->data[(static_cast<std::size_t>(c) * H + 2 * y + dy) * W + 2 * xw + dx];
        out.data()[(static_cast<std::size_t>(c) * (H / 2) + y) * (W / 2) + xw] = 0.25f * acc;
      }
  return out;
}

// ---- reductions ----

Tensor sum(const Tensor& x) {
  auto px = x.impl();
  Tensor out = make_result({1}, {px}, [px](TensorImpl& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (auto& g : px->grad) g += self.grad[0];
  });
  double acc = 0.0;
  for (float v : px->data) acc += v;
  out.data()[0] = static_cast<float>(acc);
  return out;
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mse");
  auto pa = a.impl(), pb = b.impl();
  float inv_n = 1.0f / static_cast<float>(a.numel());
  Tensor out = make_result({1}, {pa, pb}, [pa, pb, inv_n](TensorImpl& self) {
    float g = 2.0f * inv_n * self.grad[0];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < pa->numel(); ++i)
        pa->grad[i] += g * (pa->data[i] - pb->data[i]);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < pb->numel(); ++i)
        pb->grad[i] -= g * (pa->data[i] - pb->data[i]);
    }
  });
  double acc = 0.0;
  for (std::size_t i = 0; i < pa->numel(); ++i) {
    float d = pa->data[i] - pb->data[i];
    acc += static_cast<double>(d) * d;
  }
  out.data()[0] = static_cast<float>(acc * inv_n);
  return out;
}

// ---- backward ----

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss.shape()));
  // Post-order DFS gives reverse topological order when walked backwards.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorImpl* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

}  // namespace nvsd
