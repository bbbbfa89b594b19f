#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "pfda/tensor.hpp"

namespace pfda::ag {

// Eager reverse-mode autodiff. Every op computes its value immediately and
// records a closure that scatters the node's gradient into its parents.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on demand, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor(value.shape());
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Builds a node from parents; requires_grad is inherited.
Var make_op(Tensor value, std::vector<NodePtr> parents,
            std::function<void(Node&)> backward_fn);

// Backpropagates from a scalar root (size-1 tensor) with seed gradient 1.
void backward(const Var& root);

// ---- elementwise / reduction ops ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scaled(const Var& a, const Var& b, double sb);  // a + sb*b
Var relu(const Var& x);
Var gelu(const Var& x);
Var sum(const Var& x);
Var mean(const Var& x);

// ---- shape / selection ops ----
// Select one channel of (B, K, spatial...) -> (B, spatial...).
Var select_channel(const Var& x, std::size_t channel);
// First `count` samples along axis 0.
Var slice_batch(const Var& x, std::size_t from, std::size_t count);
// Concatenate along axis 1 (channels); all other dims must match.
Var concat_channels(const Var& a, const Var& b);

// ---- neural ops (implemented in conv3d.cpp / nnops.cpp) ----
// x: (B, Cin, D, H, W), w: (Cout, Cin, k, k, k), b: (Cout).
Var conv3d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var maxpool2(const Var& x);              // 2x2x2, stride 2; dims must be even
Var upsample_trilinear2x(const Var& x);  // doubles each spatial dim

struct BnBuffers {
  Var running_mean;  // (C), requires_grad = false
  Var running_var;   // (C)
};
// Per-channel batch norm over (B, C, spatial...). In train mode normalizes
// with batch statistics (biased variance) and, when update_running is set,
// folds them into the running buffers (unbiased variance, momentum update).
Var batchnorm(const Var& x, const Var& scale, const Var& shift, BnBuffers& buf,
              bool train, bool update_running, double eps = 1e-5,
              double momentum = 0.1);

// Layer norm over the last axis of (..., d).
Var layernorm(const Var& x, const Var& scale, const Var& shift,
              double eps = 1e-5);

// x: (..., in) flattened over leading dims; w: (in, out), b: (out).
Var linear(const Var& x, const Var& w, const Var& b);

// Softmax over axis 1 of (B, K, spatial...); per-voxel probability simplex.
Var channel_softmax(const Var& x);
// Softmax over the last axis (attention scores).
Var softmax_lastdim(const Var& x);

// (B, N, d) -> (B, h, N, d/h) and back.
Var split_heads(const Var& x, std::size_t heads);
Var merge_heads(const Var& x);
// Batched matmul over the two leading axes: (B,h,N,K) x (B,h,K,M).
Var bmm(const Var& a, const Var& b);
// a x b^T: (B,h,N,K) x (B,h,M,K) -> (B,h,N,M).
Var bmm_nt(const Var& a, const Var& b);

// (B, d, g, g, g) -> (B, g^3, d), token order z-major over the grid.
Var volume_to_tokens(const Var& x);
// (B, N, d) -> (B, d, g*p, g*p, g*p): each token broadcast over its p^3 patch.
Var tokens_to_volume_broadcast(const Var& t, std::size_t patch_side);

// Global average pooling (B, C, spatial...) -> (B, C).
Var gap(const Var& x);

// Identity forward; backward multiplies the incoming gradient by -lambda.
Var grl(const Var& x, double lambda);

// Inverted dropout with a caller-supplied mask holding {0, 1/(1-p)}.
Var dropout_mask(const Var& x, Tensor mask);

}  // namespace pfda::ag
