#pragma once

#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mmseg/tensor.hpp"

namespace mmseg {

/// Below this |delta * a| the zero-order-hold input gain switches to its
/// Taylor expansion; the closed form is 0/0 at the origin.
inline constexpr double kZohSeriesThreshold = 1e-8;

/// Zero-order hold of one diagonal mode a < 0 over a step delta > 0.
template <typename Scalar>
struct ZohMode {
  Scalar decay;  // exp(delta * a)
  Scalar gain;   // (exp(delta * a) - 1) / a, multiplies b
};

template <typename Scalar>
ZohMode<Scalar> zoh_mode(Scalar delta, Scalar a) {
  using std::exp;
  using std::expm1;
  using std::abs;
  const Scalar x = delta * a;
  if (abs(x) < Scalar(kZohSeriesThreshold)) {
    return {exp(x), delta * (Scalar(1) + x / Scalar(2))};
  }
  return {exp(x), expm1(x) / a};
}

/// Discrete diagonal system for one step.
template <typename Scalar>
struct DiscretizedSSM {
  Eigen::Array<Scalar, Eigen::Dynamic, 1> a_bar;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> b_bar;
};

/// a_bar = exp(delta a), b_bar = (delta a)^-1 (exp(delta a) - I) delta b for a
/// diagonal state matrix stored as its N diagonal entries.
template <typename DerivedA, typename DerivedB>
DiscretizedSSM<typename DerivedA::Scalar> discretize(const Eigen::ArrayBase<DerivedA>& a,
                                                     const Eigen::ArrayBase<DerivedB>& b,
                                                     typename DerivedA::Scalar delta) {
  using Scalar = typename DerivedA::Scalar;
  if (!(delta > Scalar(0))) throw std::invalid_argument("discretize: delta must be positive");
  if (a.size() != b.size()) throw std::invalid_argument("discretize: A and B must have the same length");
  DiscretizedSSM<Scalar> out;
  out.a_bar.resize(a.size());
  out.b_bar.resize(a.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a(i) == Scalar(0)) throw std::invalid_argument("discretize: A entries must be nonzero");
    const auto m = zoh_mode(delta, Scalar(a(i)));
    out.a_bar(i) = m.decay;
    out.b_bar(i) = m.gain * b(i);
  }
  return out;
}

/// Sequential evaluation of h_t = a_bar_t h_{t-1} + b_bar_t x_t, y_t = c_t h_t
/// for one channel. Rows of a_bar, b_bar and c are timesteps.
template <typename DerivedA, typename DerivedB, typename DerivedC, typename DerivedX, typename DerivedH>
Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, 1> linear_scan(
    const Eigen::MatrixBase<DerivedA>& a_bar, const Eigen::MatrixBase<DerivedB>& b_bar,
    const Eigen::MatrixBase<DerivedC>& c, const Eigen::MatrixBase<DerivedX>& x,
    const Eigen::MatrixBase<DerivedH>& h0) {
  using Scalar = typename DerivedA::Scalar;
  const Eigen::Index L = x.size();
  const Eigen::Index N = h0.size();
  if (a_bar.rows() != L || b_bar.rows() != L || c.rows() != L) {
    throw std::invalid_argument("linear_scan: sequence lengths disagree (x has " + std::to_string(L) + ")");
  }
  if (a_bar.cols() != N || b_bar.cols() != N || c.cols() != N) {
    throw std::invalid_argument("linear_scan: state dimensions disagree (h0 has " + std::to_string(N) + ")");
  }
  Eigen::Array<Scalar, Eigen::Dynamic, 1> h = h0.array();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> y(L);
  for (Eigen::Index t = 0; t < L; ++t) {
    h = a_bar.row(t).transpose().array() * h + b_bar.row(t).transpose().array() * x(t);
    y(t) = (c.row(t).transpose().array() * h).sum();
  }
  return y;
}

/// Learnable selective state-space parameters for `channels` independent
/// channels with diagonal state of size `state_dim`.
struct SSMParams {
  Tensor a_log;         // C x N, A = -exp(a_log) keeps every mode stable
  Tensor delta_weight;  // C x C
  Tensor delta_bias;    // C, softplus offset for delta
  Tensor b_weight;      // N x C
  Tensor c_weight;      // N x C

  Index channels() const { return a_log.dim(0); }
  Index state_dim() const { return a_log.dim(1); }
  /// A as a C x N tensor of strictly negative entries.
  Tensor state_matrix() const;
  std::vector<Tensor> parameters() const { return {a_log, delta_weight, delta_bias, b_weight, c_weight}; }

  /// A_i = -(i+1); initial delta log-uniform in [0.01, 0.1].
  static SSMParams init(Index channels, Index state_dim, std::mt19937_64& rng);
};

/// Input-dependent parameters for a sequence of L tokens.
struct SelectiveInputs {
  Tensor delta;  // L x C, strictly positive
  Tensor b;      // L x N
  Tensor c;      // L x N
};

/// u: L x C tokens.
SelectiveInputs selective_params(const Tensor& u, const SSMParams& p);

/// Scans the rows of u (L x C) in the traversal `order` (a permutation of
/// row indices; empty means 0..L-1) with per-token delta/b/c and state
/// matrix a (C x N), zero initial state. Output row r holds the response at
/// the step that visited row r. Differentiable in every tensor argument.
Tensor ssm_scan(const Tensor& u, const SelectiveInputs& in, const Tensor& a,
                std::span<const Index> order = {});

/// Several traversals of the same tokens with shared parameters; returns the
/// mean of the per-order outputs.
Tensor ssm_scan_mean(const Tensor& u, const SelectiveInputs& in, const Tensor& a,
                     const std::vector<std::vector<Index>>& orders);

/// S6 scan of an L x C sequence.
Tensor selective_scan(const Tensor& u, const SSMParams& p);

}  // namespace mmseg
