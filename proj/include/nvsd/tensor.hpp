#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nvsd/rng.hpp"

namespace nvsd {

// Row-major fp32 tensor with reverse-mode autodiff. Ops record parents and
// a backward closure; backward(loss) walks the DAG in reverse topological
// order, visiting each node exactly once.

struct TensorImpl {
  std::vector<int> shape;
  std::vector<float> data;
  std::vector<float> grad;  // allocated lazily; empty means "no grad yet"
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;  // accumulates into parents

  std::size_t numel() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, float value,
                     bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<float> data,
                     bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, SeededRng& rng, float stddev,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->numel(); }
  int dim(int i) const { return impl_->shape[i]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }

  std::vector<float>& data() { return impl_->data; }
  const std::vector<float>& data() const { return impl_->data; }
  std::vector<float>& grad() { return impl_->grad; }
  const std::vector<float>& grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0f); }

  float item() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Throws std::invalid_argument naming both shapes.
void check_same_shape(const Tensor& a, const Tensor& b, const char* op);
std::string shape_str(const std::vector<int>& s);

// ---- ops ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor add_scalar(const Tensor& a, float c);
Tensor silu(const Tensor& a);

// a: [m x k], b: [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

// x: [C x H x W], w: [O x C x k x k], bias: [O] (optional, pass undefined
// Tensor to skip). Odd k only.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int padding);

// softmax(Q K^T / sqrt(d) + mask) V. Q: [nq x d], K,V: [nk x d].
// key_mask, when defined, is [nk] and added to every score row.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor& key_mask = Tensor());

// Row-wise softmax weights of attention, for tests: [nq x nk].
std::vector<float> attention_weights(const Tensor& q, const Tensor& k,
                                     const Tensor& key_mask = Tensor());

// y = x W + b. x: [n x in], w: [in x out], b: [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// GroupNorm over [C x H x W] with affine gamma, beta: [C].
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma,
                  const Tensor& beta);

// LayerNorm over the last dim of [n x d] with gamma, beta: [d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

// Per-channel bias broadcast over [C x H x W]; b: [C].
Tensor add_channel_bias(const Tensor& x, const Tensor& b);

// Per-row bias broadcast over [n x d]; b: [d].
Tensor add_row_bias(const Tensor& x, const Tensor& b);

// [C x H x W] -> [H*W x C] and back.
Tensor chw_to_nc(const Tensor& x);
Tensor nc_to_chw(const Tensor& x, int c, int h, int w);

// Channel concat of [C1 x H x W] and [C2 x H x W].
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Row concat of [n1 x d] and [n2 x d].
Tensor concat_rows(const Tensor& a, const Tensor& b);

// Mean over rows of [n x d] -> [1 x d].
Tensor mean_rows(const Tensor& x);

// Embedding lookup: table [vocab x d], ids -> [len x d].
Tensor embed_rows(const Tensor& table, const std::vector<int>& ids);

Tensor reshape(const Tensor& x, std::vector<int> shape);

// 2x nearest-neighbor upsample of [C x H x W].
Tensor upsample2x(const Tensor& x);

// Average-pool 2x2 stride 2 of [C x H x W].
Tensor avgpool2x(const Tensor& x);

// Reductions -> scalar tensor (shape {1}).
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// mean((a-b)^2)
Tensor mse(const Tensor& a, const Tensor& b);

// Reverse-mode sweep from a scalar loss. Populates grads of every
// requires_grad leaf reachable from loss. Throws on non-scalar loss.
void backward(const Tensor& loss);

// Asserts all values finite; throws std::runtime_error otherwise.
void check_finite(const Tensor& t, const char* what);

}  // namespace nvsd
