#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kws/tensor.hpp"

// Differentiable operators over Tensor<T>. Every op checks its output for
// NaN/Inf and throws std::domain_error if one appears.
namespace kws::ops {

/// Bias-free 2-D cross-correlation. x: (B,Cin,H,W), w: (Cout,Cin,k,k).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad);

/// Mean over k×k windows; windows that would run past the edge are dropped.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int kernel, int stride);

template <typename T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  static BatchNormStats fresh(std::size_t channels) {
    return {std::vector<T>(channels, T(0)), std::vector<T>(channels, T(1))};
  }
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel batch normalization of (B,C,H,W). Train mode normalizes with
/// the biased batch variance and folds the unbiased variance into `stats`;
/// infer mode reads `stats` only.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormStats<T>& stats, Mode mode);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise product of equal shapes.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// x scaled by a one-element tensor.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, const Tensor<T>& s);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// y = x·wᵀ (+ b) over the last axis of x; w: (out,in), b: (out) or undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {});

/// (..,M,K)·(K,N) with a shared right operand, or (B,M,K)·(B,K,N) batched.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

/// (B,C,H,W) -> (B,C)
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Mean negative log-likelihood of `labels` under row-softmax of (B,C) logits.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// Plain GEMM used by the ops: C = alpha·op(A)·op(B) + beta·C, row-major.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc);

}  // namespace kws::ops
