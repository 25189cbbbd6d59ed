#include "mmseg/ssm.hpp"

#include <numeric>

#include "mmseg/ops.hpp"

namespace mmseg {

namespace {

// d gain / d a for gain = expm1(delta a) / a, with a series near the origin
// where the closed form cancels.
double zoh_gain_da(double delta, double a, double decay, double gain) {
  const double x = delta * a;
  if (std::abs(x) < 1e-3) return delta * delta * (0.5 + x / 3.0 + x * x / 8.0);
  return (delta * decay - gain) / a;
}

std::vector<Index> resolve_order(std::span<const Index> order, Index length) {
  std::vector<Index> out;
  if (order.empty()) {
    out.resize(static_cast<std::size_t>(length));
    std::iota(out.begin(), out.end(), Index{0});
    return out;
  }
  if (static_cast<Index>(order.size()) != length) {
    throw std::invalid_argument("ssm_scan: order has " + std::to_string(order.size()) + " entries for " +
                                std::to_string(length) + " tokens");
  }
  std::vector<char> seen(static_cast<std::size_t>(length), 0);
  for (Index r : order) {
    if (r < 0 || r >= length || seen[static_cast<std::size_t>(r)]) {
      throw std::invalid_argument("ssm_scan: order is not a permutation");
    }
    seen[static_cast<std::size_t>(r)] = 1;
  }
  return {order.begin(), order.end()};
}

}  // namespace

Tensor SSMParams::state_matrix() const { return neg(exp(a_log)); }

SSMParams SSMParams::init(Index channels, Index state_dim, std::mt19937_64& rng) {
  SSMParams p;
  Array a_log(channels * state_dim);
  for (Index c = 0; c < channels; ++c)
    for (Index i = 0; i < state_dim; ++i) a_log[c * state_dim + i] = std::log(static_cast<double>(i + 1));
  p.a_log = Tensor({channels, state_dim}, std::move(a_log), true);

  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  p.delta_weight = Tensor::uniform({channels, channels}, rng, -0.1 * bound, 0.1 * bound, true);
  std::uniform_real_distribution<double> log_delta(std::log(0.01), std::log(0.1));
  Array bias(channels);
  for (Index c = 0; c < channels; ++c) {
    const double delta = std::exp(log_delta(rng));
    bias[c] = std::log(std::expm1(delta));  // softplus^-1
  }
  p.delta_bias = Tensor({channels}, std::move(bias), true);
  p.b_weight = Tensor::uniform({state_dim, channels}, rng, -bound, bound, true);
  p.c_weight = Tensor::uniform({state_dim, channels}, rng, -bound, bound, true);
  return p;
}

SelectiveInputs selective_params(const Tensor& u, const SSMParams& p) {
  if (u.rank() != 2 || u.dim(1) != p.channels()) {
    throw std::invalid_argument("selective_params: expected L x " + std::to_string(p.channels()) + " tokens, got " +
                                to_string(u.shape()));
  }
  SelectiveInputs in;
  in.delta = softplus(add(matmul(u, transpose(p.delta_weight)), p.delta_bias));
  in.b = matmul(u, transpose(p.b_weight));
  in.c = matmul(u, transpose(p.c_weight));
  return in;
}

Tensor ssm_scan(const Tensor& u, const SelectiveInputs& in, const Tensor& a, std::span<const Index> order_in) {
  if (u.rank() != 2) throw std::invalid_argument("ssm_scan: u must be L x C, got " + to_string(u.shape()));
  const Index L = u.dim(0), C = u.dim(1);
  if (a.rank() != 2 || a.dim(0) != C) throw std::invalid_argument("ssm_scan: A must be C x N, got " + to_string(a.shape()));
  const Index N = a.dim(1);
  if (in.delta.shape() != Shape{L, C}) throw std::invalid_argument("ssm_scan: delta must be " + to_string(Shape{L, C}));
  if (in.b.shape() != Shape{L, N} || in.c.shape() != Shape{L, N}) {
    throw std::invalid_argument("ssm_scan: B and C must be " + to_string(Shape{L, N}));
  }
  auto order = std::make_shared<std::vector<Index>>(resolve_order(order_in, L));

  const Array& uv = u.values();
  const Array& dv = in.delta.values();
  const Array& av = a.values();
  const Array& bv = in.b.values();
  const Array& cv = in.c.values();
  for (Index i = 0; i < av.size(); ++i) {
    if (!(av[i] < 0.0)) throw std::invalid_argument("ssm_scan: state matrix entries must be negative");
  }

  // hidden[(c * L + t) * N + n] is the state after step t.
  auto hidden = std::make_shared<Array>(C * L * N);
  Array y(L * C);
  Array h(N);
  for (Index c = 0; c < C; ++c) {
    h.setZero();
    for (Index t = 0; t < L; ++t) {
      const Index r = (*order)[static_cast<std::size_t>(t)];
      const double dt = dv[r * C + c];
      const double x = uv[r * C + c];
      double out = 0.0;
      for (Index n = 0; n < N; ++n) {
        const auto m = zoh_mode(dt, av[c * N + n]);
        h[n] = m.decay * h[n] + m.gain * bv[r * N + n] * x;
        out += cv[r * N + n] * h[n];
      }
      hidden->segment((c * L + t) * N, N) = h;
      y[r * C + c] = out;
    }
  }

  return detail::make_result({L, C}, std::move(y), {u, in.delta, a, in.b, in.c},
                             [L, C, N, order, hidden](detail::Node& self) {
    const Array& uv = self.inputs[0]->value;
    const Array& dv = self.inputs[1]->value;
    const Array& av = self.inputs[2]->value;
    const Array& bv = self.inputs[3]->value;
    const Array& cv = self.inputs[4]->value;
    auto buf = [&](std::size_t i) { return self.inputs[i]->requires_grad ? &self.inputs[i]->grad_buffer() : nullptr; };
    Array* gu = buf(0);
    Array* gd = buf(1);
    Array* ga = buf(2);
    Array* gb = buf(3);
    Array* gc = buf(4);
    const Array& gy = self.grad;
    Array gh(N);
    for (Index c = 0; c < C; ++c) {
      gh.setZero();
      for (Index t = L - 1; t >= 0; --t) {
        const Index r = (*order)[static_cast<std::size_t>(t)];
        const double dt = dv[r * C + c];
        const double x = uv[r * C + c];
        const double g_out = gy[r * C + c];
        const double* h_t = hidden->data() + (c * L + t) * N;
        const double* h_prev = t > 0 ? hidden->data() + (c * L + t - 1) * N : nullptr;
        double g_x = 0.0, g_dt = 0.0;
        for (Index n = 0; n < N; ++n) {
          gh[n] += g_out * cv[r * N + n];
          if (gc) (*gc)[r * N + n] += g_out * h_t[n];
          const double an = av[c * N + n];
          const auto m = zoh_mode(dt, an);
          const double hp = h_prev ? h_prev[n] : 0.0;
          const double g_decay = gh[n] * hp;
          const double g_gain = gh[n] * bv[r * N + n] * x;
          g_x += gh[n] * m.gain * bv[r * N + n];
          if (gb) (*gb)[r * N + n] += gh[n] * m.gain * x;
          g_dt += g_decay * an * m.decay + g_gain * m.decay;
          if (ga) (*ga)[c * N + n] += g_decay * dt * m.decay + g_gain * zoh_gain_da(dt, an, m.decay, m.gain);
          gh[n] *= m.decay;
        }
        if (gu) (*gu)[r * C + c] += g_x;
        if (gd) (*gd)[r * C + c] += g_dt;
      }
    }
  });
}

Tensor ssm_scan_mean(const Tensor& u, const SelectiveInputs& in, const Tensor& a,
                     const std::vector<std::vector<Index>>& orders) {
  if (orders.empty()) throw std::invalid_argument("ssm_scan_mean: no traversal orders");
  Tensor total = ssm_scan(u, in, a, orders.front());
  for (std::size_t k = 1; k < orders.size(); ++k) total = add(total, ssm_scan(u, in, a, orders[k]));
  return orders.size() == 1 ? total : scale(total, 1.0 / static_cast<double>(orders.size()));
}

Tensor selective_scan(const Tensor& u, const SSMParams& p) {
  return ssm_scan(u, selective_params(u, p), p.state_matrix());
}

}  // namespace mmseg
