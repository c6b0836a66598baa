#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "kws/ops.hpp"
#include "kws/tensor.hpp"

namespace kws {

/// (B,C,H,W) feature map -> (B,N,C) node features, N = H·W in row-major
/// spatial order.
template <typename T>
Tensor<T> to_nodes(const Tensor<T>& x);

/// Inverse of to_nodes.
template <typename T>
Tensor<T> from_nodes(const Tensor<T>& nodes, std::int64_t height, std::int64_t width);

/// Row-softmax of X·Xᵀ: the plain Gaussian (dot-product) affinity.
/// Accepts (N,c) or (B,N,c).
template <typename T>
Tensor<T> gaussian_affinity(const Tensor<T>& nodes);

/// Non-local context module on a fully connected graph over spatial
/// positions. For node features X (N×c):
///
///   A  = softmax_rows( (X W_θᵀ)(X W_φᵀ)ᵀ )      embedded Gaussian affinity
///   X̃  = ReLU(A · X · W)                         one message-passing step
///   Xa = γ·X̃ + X
///
/// W_θ, W_φ are (c/r)×c, W is c×c, γ is a scalar initialised to zero so a
/// freshly inserted module is the identity. All maps are bias-free.
template <typename T>
class NonLocalGcn {
 public:
  NonLocalGcn() = default;
  NonLocalGcn(int channels, int reduction, std::mt19937_64& rng);
  static NonLocalGcn from_weights(Tensor<T> w_theta, Tensor<T> w_phi, Tensor<T> w, T gamma);

  int channels() const { return channels_; }
  int reduction() const { return reduction_; }
  int embed_dim() const { return channels_ / reduction_; }

  const Tensor<T>& w_theta() const { return w_theta_; }
  const Tensor<T>& w_phi() const { return w_phi_; }
  const Tensor<T>& w() const { return w_; }
  const Tensor<T>& gamma() const { return gamma_; }
  Tensor<T>& w_theta() { return w_theta_; }
  Tensor<T>& w_phi() { return w_phi_; }
  Tensor<T>& w() { return w_; }
  Tensor<T>& gamma() { return gamma_; }

  // Node-level steps; `nodes` is (N,c) or (B,N,c).
  Tensor<T> affinity(const Tensor<T>& nodes) const;
  Tensor<T> message_pass(const Tensor<T>& nodes, const Tensor<T>& affinity) const;
  Tensor<T> augment(const Tensor<T>& nodes, const Tensor<T>& messages) const;

  /// Full module on a (B,C,H,W) feature map.
  Tensor<T> forward(const Tensor<T>& x) const;

  /// 2·c·(c/r) + c² weights plus γ.
  std::int64_t parameter_count() const;

 private:
  int channels_ = 0;
  int reduction_ = 4;
  Tensor<T> w_theta_, w_phi_, w_, gamma_;
};

extern template class NonLocalGcn<float>;
extern template class NonLocalGcn<double>;

}  // namespace kws
