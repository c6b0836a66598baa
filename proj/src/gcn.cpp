#include "kws/gcn.hpp"

#include <cmath>
#include <stdexcept>

namespace kws {

namespace {

template <typename T>
void require_finite(const Tensor<T>& t, const char* what) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) throw std::domain_error(std::string(what) + ": non-finite node features");
  }
}

template <typename T>
void require_nodes(const Tensor<T>& nodes, int channels, const char* what) {
  if (!nodes.defined() || (nodes.rank() != 2 && nodes.rank() != 3)) {
    throw std::invalid_argument(std::string(what) + ": node features must be (N,c) or (B,N,c)");
  }
  if (channels > 0 && nodes.dim(-1) != channels) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(channels) + " channels, got " +
                                shape_to_string(nodes.shape()));
  }
}

template <typename T>
Tensor<T> he_normal(Shape shape, int fan, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan));
  std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

}  // namespace

template <typename T>
Tensor<T> to_nodes(const Tensor<T>& x) {
  if (x.rank() != 4) throw std::invalid_argument("to_nodes: expected (B,C,H,W)");
  return ops::transpose(ops::reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}));
}

template <typename T>
Tensor<T> from_nodes(const Tensor<T>& nodes, std::int64_t height, std::int64_t width) {
  if (nodes.rank() != 3 || nodes.dim(1) != height * width) {
    throw std::invalid_argument("from_nodes: node count does not match spatial size");
  }
  return ops::reshape(ops::transpose(nodes), {nodes.dim(0), nodes.dim(2), height, width});
}

template <typename T>
Tensor<T> gaussian_affinity(const Tensor<T>& nodes) {
  require_nodes(nodes, 0, "gaussian_affinity");
  require_finite(nodes, "gaussian_affinity");
  return ops::softmax(ops::matmul(nodes, ops::transpose(nodes)), -1);
}

template <typename T>
NonLocalGcn<T>::NonLocalGcn(int channels, int reduction, std::mt19937_64& rng)
    : channels_(channels), reduction_(reduction) {
  if (channels < 1 || reduction < 1 || channels % reduction != 0) {
    throw std::invalid_argument("gcn: channels must be a positive multiple of the reduction");
  }
  const int e = channels / reduction;
  // Each map acts as a 1×1 convolution; He-normal over its fan-out.
  w_theta_ = he_normal<T>({e, channels}, e, rng);
  w_phi_ = he_normal<T>({e, channels}, e, rng);
  w_ = he_normal<T>({channels, channels}, channels, rng);
  gamma_ = Tensor<T>::zeros({1}, true);
}

template <typename T>
NonLocalGcn<T> NonLocalGcn<T>::from_weights(Tensor<T> w_theta, Tensor<T> w_phi, Tensor<T> w, T gamma) {
  if (w.rank() != 2 || w.dim(0) != w.dim(1)) throw std::invalid_argument("gcn: W must be c×c");
  const auto c = w.dim(0);
  if (w_theta.rank() != 2 || w_phi.shape() != w_theta.shape() || w_theta.dim(1) != c || c % w_theta.dim(0) != 0) {
    throw std::invalid_argument("gcn: embeddings must be (c/r)×c");
  }
  NonLocalGcn g;
  g.channels_ = static_cast<int>(c);
  g.reduction_ = static_cast<int>(c / w_theta.dim(0));
  g.w_theta_ = std::move(w_theta);
  g.w_phi_ = std::move(w_phi);
  g.w_ = std::move(w);
  g.gamma_ = Tensor<T>::full({1}, gamma, true);
  return g;
}

template <typename T>
Tensor<T> NonLocalGcn<T>::affinity(const Tensor<T>& nodes) const {
  require_nodes(nodes, channels_, "affinity");
  require_finite(nodes, "affinity");
  const auto theta = ops::linear(nodes, w_theta_);
  const auto phi = ops::linear(nodes, w_phi_);
  return ops::softmax(ops::matmul(theta, ops::transpose(phi)), -1);
}

template <typename T>
Tensor<T> NonLocalGcn<T>::message_pass(const Tensor<T>& nodes, const Tensor<T>& affinity) const {
  require_nodes(nodes, channels_, "message_pass");
  const auto n = nodes.dim(-2);
  if (affinity.rank() != nodes.rank() || affinity.dim(-1) != n || affinity.dim(-2) != n) {
    throw std::invalid_argument("message_pass: affinity " + shape_to_string(affinity.shape()) +
                                " does not match nodes " + shape_to_string(nodes.shape()));
  }
  return ops::relu(ops::matmul(affinity, ops::matmul(nodes, w_)));
}

template <typename T>
Tensor<T> NonLocalGcn<T>::augment(const Tensor<T>& nodes, const Tensor<T>& messages) const {
  return ops::add(ops::scale(messages, gamma_), nodes);
}

template <typename T>
Tensor<T> NonLocalGcn<T>::forward(const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != channels_) {
    throw std::invalid_argument("gcn: expected (B," + std::to_string(channels_) + ",H,W), got " +
                                shape_to_string(x.shape()));
  }
  const auto nodes = to_nodes(x);
  const auto a = affinity(nodes);
  return from_nodes(augment(nodes, message_pass(nodes, a)), x.dim(2), x.dim(3));
}

template <typename T>
std::int64_t NonLocalGcn<T>::parameter_count() const {
  const std::int64_t c = channels_;
  return 2 * c * (c / reduction_) + c * c + 1;
}

template class NonLocalGcn<float>;
template class NonLocalGcn<double>;

template Tensor<float> to_nodes(const Tensor<float>&);
template Tensor<double> to_nodes(const Tensor<double>&);
template Tensor<float> from_nodes(const Tensor<float>&, std::int64_t, std::int64_t);
template Tensor<double> from_nodes(const Tensor<double>&, std::int64_t, std::int64_t);
template Tensor<float> gaussian_affinity(const Tensor<float>&);
template Tensor<double> gaussian_affinity(const Tensor<double>&);

}  // namespace kws
