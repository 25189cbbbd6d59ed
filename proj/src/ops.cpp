#include "mmseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmseg {

using detail::make_result;
using detail::Node;

namespace {

// Gradient buffer of input `i`, or nullptr when that input takes no gradient.
Array* input_grad(Node& self, std::size_t i) {
  auto& in = self.inputs[i];
  return in->requires_grad ? &in->grad_buffer() : nullptr;
}

const Array& input_value(const Node& self, std::size_t i) { return self.inputs[i]->value; }

// Flat offsets into an operand for every element of the broadcast result.
std::vector<Index> broadcast_offsets(const Shape& operand, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t lead = rank - operand.size();
  std::vector<Index> stride(rank, 0);
  Index s = 1;
  for (std::size_t k = operand.size(); k-- > 0;) {
    stride[lead + k] = operand[k] == 1 ? 0 : s;
    s *= operand[k];
  }
  std::vector<Index> offsets(static_cast<std::size_t>(numel(out)));
  std::vector<Index> counter(rank, 0);
  Index off = 0;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    offsets[i] = off;
    for (std::size_t k = rank; k-- > 0;) {
      ++counter[k];
      off += stride[k];
      if (counter[k] < out[k]) break;
      off -= stride[k] * counter[k];
      counter[k] = 0;
    }
  }
  return offsets;
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(BinaryKind kind, const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape());
  const Array& av = a.values();
  const Array& bv = b.values();
  const Index n = numel(out);

  if (a.shape() == out && b.shape() == out) {
    Array v = kind == BinaryKind::kAdd ? Array(av + bv) : kind == BinaryKind::kSub ? Array(av - bv) : Array(av * bv);
    return make_result(std::move(out), std::move(v), {a, b}, [kind](Node& self) {
      const Array& g = self.grad;
      if (Array* ga = input_grad(self, 0)) {
        if (kind == BinaryKind::kMul) *ga += g * input_value(self, 1);
        else *ga += g;
      }
      if (Array* gb = input_grad(self, 1)) {
        if (kind == BinaryKind::kMul) *gb += g * input_value(self, 0);
        else if (kind == BinaryKind::kSub) *gb -= g;
        else *gb += g;
      }
    });
  }

  auto ia = std::make_shared<std::vector<Index>>(broadcast_offsets(a.shape(), out));
  auto ib = std::make_shared<std::vector<Index>>(broadcast_offsets(b.shape(), out));
  Array v(n);
  for (Index i = 0; i < n; ++i) {
    const double x = av[(*ia)[i]];
    const double y = bv[(*ib)[i]];
    v[i] = kind == BinaryKind::kAdd ? x + y : kind == BinaryKind::kSub ? x - y : x * y;
  }
  return make_result(std::move(out), std::move(v), {a, b}, [kind, ia, ib](Node& self) {
    const Array& g = self.grad;
    const Array& av = input_value(self, 0);
    const Array& bv = input_value(self, 1);
    Array* ga = input_grad(self, 0);
    Array* gb = input_grad(self, 1);
    for (Index i = 0; i < g.size(); ++i) {
      const Index oa = (*ia)[i];
      const Index ob = (*ib)[i];
      switch (kind) {
        case BinaryKind::kAdd:
          if (ga) (*ga)[oa] += g[i];
          if (gb) (*gb)[ob] += g[i];
          break;
        case BinaryKind::kSub:
          if (ga) (*ga)[oa] += g[i];
          if (gb) (*gb)[ob] -= g[i];
          break;
        case BinaryKind::kMul:
          if (ga) (*ga)[oa] += g[i] * bv[ob];
          if (gb) (*gb)[ob] += g[i] * av[oa];
          break;
      }
    }
  });
}

// Elementwise unary op given value and derivative in terms of (x, y).
template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  const Array& xv = x.values();
  Array y = xv.unaryExpr(f);
  return make_result(x.shape(), std::move(y), {x}, [df](Node& self) {
    if (Array* gx = input_grad(self, 0)) {
      const Array& xv = input_value(self, 0);
      const Array& g = self.grad;
      for (Index i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * df(xv[i], self.value[i]);
    }
  });
}

struct AxisSplit {
  Index outer, extent, inner;
};

AxisSplit split_at(const Shape& s, Index axis) {
  const Index rank = static_cast<Index>(s.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("axis out of range for shape " + to_string(s));
  AxisSplit r{1, s[static_cast<std::size_t>(axis)], 1};
  for (Index k = 0; k < axis; ++k) r.outer *= s[static_cast<std::size_t>(k)];
  for (Index k = axis + 1; k < rank; ++k) r.inner *= s[static_cast<std::size_t>(k)];
  return r;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t k = 0; k < rank; ++k) {
    const Index ea = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
    const Index eb = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw std::invalid_argument("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    }
    out[k] = std::max(ea, eb);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinaryKind::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinaryKind::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinaryKind::kMul, a, b); }

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
  return make_result(x.shape(), x.values() * factor, {x}, [factor](Node& self) {
    if (Array* gx = input_grad(self, 0)) *gx += self.grad * factor;
  });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return make_result(x.shape(), x.values() + offset, {x}, [](Node& self) {
    if (Array* gx = input_grad(self, 0)) *gx += self.grad;
  });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

namespace {
thread_local ReluSignDigest* active_digest = nullptr;
}

ReluSignDigest::ReluSignDigest() : previous_(active_digest) { active_digest = this; }
ReluSignDigest::~ReluSignDigest() { active_digest = previous_; }

Tensor relu(const Tensor& x) {
  if (active_digest != nullptr) {
    std::uint64_t& h = active_digest->hash_;
    const Array& v = x.values();
    for (Index i = 0; i < v.size(); ++i) h = (h ^ (v[i] > 0.0 ? 1u : 0u)) * 1099511628211ull;
  }
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
}

Tensor silu(const Tensor& x) {
  auto sig = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary(
      x, [sig](double v) { return v * sig(v); },
      [sig](double v, double) {
        const double s = sig(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor softmax(const Tensor& x, Index axis) {
  const AxisSplit sp = split_at(x.shape(), axis);
  const Array& xv = x.values();
  Array y(xv.size());
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index i = 0; i < sp.inner; ++i) {
      const Index base = o * sp.extent * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < sp.extent; ++k) mx = std::max(mx, xv[base + k * sp.inner]);
      double total = 0.0;
      for (Index k = 0; k < sp.extent; ++k) {
        const double e = std::exp(xv[base + k * sp.inner] - mx);
        y[base + k * sp.inner] = e;
        total += e;
      }
      for (Index k = 0; k < sp.extent; ++k) y[base + k * sp.inner] /= total;
    }
  }
  return make_result(x.shape(), std::move(y), {x}, [sp](Node& self) {
    Array* gx = input_grad(self, 0);
    if (!gx) return;
    const Array& y = self.value;
    const Array& g = self.grad;
    for (Index o = 0; o < sp.outer; ++o) {
      for (Index i = 0; i < sp.inner; ++i) {
        const Index base = o * sp.extent * sp.inner + i;
        double dot = 0.0;
        for (Index k = 0; k < sp.extent; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
        for (Index k = 0; k < sp.extent; ++k) {
          const Index j = base + k * sp.inner;
          (*gx)[j] += y[j] * (g[j] - dot);
        }
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  return make_result({}, Array::Constant(1, x.values().sum()), {x}, [](Node& self) {
    if (Array* gx = input_grad(self, 0)) *gx += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  return make_result({}, Array::Constant(1, x.values().sum() / n), {x}, [n](Node& self) {
    if (Array* gx = input_grad(self, 0)) *gx += self.grad[0] / n;
  });
}

Tensor mean_trailing(const Tensor& x, Index keep_axes) {
  const Shape& s = x.shape();
  if (keep_axes < 0 || keep_axes > static_cast<Index>(s.size())) {
    throw std::invalid_argument("mean_trailing: bad axis count for shape " + to_string(s));
  }
  Shape out(s.begin(), s.begin() + keep_axes);
  const Index rows = numel(out);
  const Index cols = x.numel() / rows;
  ConstRowMap xm(x.values().data(), rows, cols);
  Array v = xm.rowwise().mean().array();
  return make_result(std::move(out), std::move(v), {x}, [rows, cols](Node& self) {
    if (Array* gx = input_grad(self, 0)) {
      RowMap gm(gx->data(), rows, cols);
      gm.colwise() += (self.grad / static_cast<double>(cols)).matrix();
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw std::invalid_argument("matmul needs rank-2 operands, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw std::invalid_argument("matmul inner dimensions disagree: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Array v(m * n);
  RowMap(v.data(), m, n).noalias() = ConstRowMap(a.values().data(), m, k) * ConstRowMap(b.values().data(), k, n);
  return make_result({m, n}, std::move(v), {a, b}, [m, k, n](Node& self) {
    ConstRowMap g(self.grad.data(), m, n);
    if (Array* ga = input_grad(self, 0)) {
      RowMap(ga->data(), m, k).noalias() += g * ConstRowMap(input_value(self, 1).data(), k, n).transpose();
    }
    if (Array* gb = input_grad(self, 1)) {
      RowMap(gb->data(), k, n).noalias() += ConstRowMap(input_value(self, 0).data(), m, k).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("transpose needs rank 2, got " + to_string(x.shape()));
  const Index r = x.dim(0), c = x.dim(1);
  Array v(r * c);
  RowMap(v.data(), c, r) = ConstRowMap(x.values().data(), r, c).transpose();
  return make_result({c, r}, std::move(v), {x}, [r, c](Node& self) {
    if (Array* gx = input_grad(self, 0)) {
      RowMap(gx->data(), r, c) += ConstRowMap(self.grad.data(), c, r).transpose();
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw std::invalid_argument("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  return make_result(std::move(shape), x.values(), {x}, [](Node& self) {
    if (Array* gx = input_grad(self, 0)) *gx += self.grad;
  });
}

Tensor gather(const Tensor& x, std::span<const Index> indices, Shape shape) {
  if (numel(shape) != static_cast<Index>(indices.size())) {
    throw std::invalid_argument("gather: " + std::to_string(indices.size()) + " indices for shape " + to_string(shape));
  }
  const Array& xv = x.values();
  auto idx = std::make_shared<std::vector<Index>>(indices.begin(), indices.end());
  Array v(static_cast<Index>(idx->size()));
  for (std::size_t i = 0; i < idx->size(); ++i) {
    const Index j = (*idx)[i];
    if (j < 0 || j >= xv.size()) throw std::out_of_range("gather index out of range");
    v[static_cast<Index>(i)] = xv[j];
  }
  return make_result(std::move(shape), std::move(v), {x}, [idx](Node& self) {
    if (Array* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < idx->size(); ++i) (*gx)[(*idx)[i]] += self.grad[static_cast<Index>(i)];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat of no tensors");
  Shape out = parts.front().shape();
  if (out.empty()) throw std::invalid_argument("concat needs rank >= 1");
  Index rows = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != out.size() || !std::equal(s.begin() + 1, s.end(), out.begin() + 1)) {
      throw std::invalid_argument("concat: incompatible shapes " + to_string(out) + " and " + to_string(s));
    }
    rows += s[0];
  }
  out[0] = rows;
  Array v(numel(out));
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    v.segment(off, p.numel()) = p.values();
    off += p.numel();
  }
  return make_result(std::move(out), std::move(v), {parts.begin(), parts.end()}, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      if (Array* gi = input_grad(self, i)) *gi += self.grad.segment(offsets[i], gi->size());
    }
  });
}

Tensor slice(const Tensor& x, Index begin, Index end) {
  const Shape& s = x.shape();
  if (s.empty() || begin < 0 || end > s[0] || begin >= end) {
    throw std::invalid_argument("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for shape " + to_string(s));
  }
  const Index row = x.numel() / s[0];
  Shape out = s;
  out[0] = end - begin;
  Array v = x.values().segment(begin * row, (end - begin) * row);
  return make_result(std::move(out), std::move(v), {x}, [begin, row](Node& self) {
    if (Array* gx = input_grad(self, 0)) gx->segment(begin * row, self.grad.size()) += self.grad;
  });
}

Tensor upsample_nearest2(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("upsample expects C x D x H x W, got " + to_string(x.shape()));
  const Index c = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index D = 2 * d, H = 2 * h, W = 2 * w;
  Array v(c * D * H * W);
  const Array& xv = x.values();
  for (Index ch = 0; ch < c; ++ch)
    for (Index z = 0; z < D; ++z)
      for (Index y = 0; y < H; ++y)
        for (Index q = 0; q < W; ++q)
          v[((ch * D + z) * H + y) * W + q] = xv[((ch * d + z / 2) * h + y / 2) * w + q / 2];
  return make_result({c, D, H, W}, std::move(v), {x}, [c, d, h, w](Node& self) {
    Array* gx = input_grad(self, 0);
    if (!gx) return;
    const Index D = 2 * d, H = 2 * h, W = 2 * w;
    for (Index ch = 0; ch < c; ++ch)
      for (Index z = 0; z < D; ++z)
        for (Index y = 0; y < H; ++y)
          for (Index q = 0; q < W; ++q)
            (*gx)[((ch * d + z / 2) * h + y / 2) * w + q / 2] += self.grad[((ch * D + z) * H + y) * W + q];
  });
}

Tensor layer_norm(const Tensor& x, Index axis, const Tensor& gain, const Tensor& bias, double eps) {
  const AxisSplit sp = split_at(x.shape(), axis);
  if (gain.numel() != sp.extent || bias.numel() != sp.extent) {
    throw std::invalid_argument("layer_norm: gain/bias length must be " + std::to_string(sp.extent));
  }
  const Array& xv = x.values();
  const Array& gv = gain.values();
  const Array& bv = bias.values();
  auto xhat = std::make_shared<Array>(xv.size());
  auto rstd = std::make_shared<Array>(sp.outer * sp.inner);
  Array y(xv.size());
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index i = 0; i < sp.inner; ++i) {
      const Index base = o * sp.extent * sp.inner + i;
      double mu = 0.0;
      for (Index k = 0; k < sp.extent; ++k) mu += xv[base + k * sp.inner];
      mu /= static_cast<double>(sp.extent);
      double var = 0.0;
      for (Index k = 0; k < sp.extent; ++k) {
        const double dlt = xv[base + k * sp.inner] - mu;
        var += dlt * dlt;
      }
      var /= static_cast<double>(sp.extent);
      const double r = 1.0 / std::sqrt(var + eps);
      (*rstd)[o * sp.inner + i] = r;
      for (Index k = 0; k < sp.extent; ++k) {
        const Index j = base + k * sp.inner;
        (*xhat)[j] = (xv[j] - mu) * r;
        y[j] = (*xhat)[j] * gv[k] + bv[k];
      }
    }
  }
  return make_result(x.shape(), std::move(y), {x, gain, bias}, [sp, xhat, rstd](Node& self) {
    const Array& g = self.grad;
    const Array& gv = input_value(self, 1);
    Array* gx = input_grad(self, 0);
    Array* gg = input_grad(self, 1);
    Array* gb = input_grad(self, 2);
    const double n = static_cast<double>(sp.extent);
    for (Index o = 0; o < sp.outer; ++o) {
      for (Index i = 0; i < sp.inner; ++i) {
        const Index base = o * sp.extent * sp.inner + i;
        double m1 = 0.0, m2 = 0.0;
        for (Index k = 0; k < sp.extent; ++k) {
          const Index j = base + k * sp.inner;
          const double dxh = g[j] * gv[k];
          m1 += dxh;
          m2 += dxh * (*xhat)[j];
          if (gg) (*gg)[k] += g[j] * (*xhat)[j];
          if (gb) (*gb)[k] += g[j];
        }
        if (!gx) continue;
        m1 /= n;
        m2 /= n;
        const double r = (*rstd)[o * sp.inner + i];
        for (Index k = 0; k < sp.extent; ++k) {
          const Index j = base + k * sp.inner;
          (*gx)[j] += r * (g[j] * gv[k] - m1 - (*xhat)[j] * m2);
        }
      }
    }
  });
}

Tensor instance_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 2) throw std::invalid_argument("instance_norm expects C x ..., got " + to_string(x.shape()));
  const Index c = x.dim(0);
  const Index n = x.numel() / c;
  if (gain.numel() != c || bias.numel() != c) {
    throw std::invalid_argument("instance_norm: gain/bias length must be " + std::to_string(c));
  }
  ConstRowMap xm(x.values().data(), c, n);
  auto xhat = std::make_shared<RowMat>(c, n);
  auto rstd = std::make_shared<Eigen::VectorXd>(c);
  Array y(x.numel());
  RowMap ym(y.data(), c, n);
  for (Index ch = 0; ch < c; ++ch) {
    const double mu = xm.row(ch).mean();
    const double var = (xm.row(ch).array() - mu).square().mean();
    const double r = 1.0 / std::sqrt(var + eps);
    (*rstd)[ch] = r;
    xhat->row(ch) = (xm.row(ch).array() - mu) * r;
    ym.row(ch) = xhat->row(ch) * gain.values()[ch] + Eigen::RowVectorXd::Constant(n, bias.values()[ch]);
  }
  return make_result(x.shape(), std::move(y), {x, gain, bias}, [c, n, xhat, rstd](Node& self) {
    ConstRowMap g(self.grad.data(), c, n);
    const Array& gv = input_value(self, 1);
    Array* gx = input_grad(self, 0);
    Array* gg = input_grad(self, 1);
    Array* gb = input_grad(self, 2);
    for (Index ch = 0; ch < c; ++ch) {
      if (gg) (*gg)[ch] += g.row(ch).dot(xhat->row(ch));
      if (gb) (*gb)[ch] += g.row(ch).sum();
      if (!gx) continue;
      const Eigen::RowVectorXd dxh = g.row(ch) * gv[ch];
      const double m1 = dxh.mean();
      const double m2 = dxh.dot(xhat->row(ch)) / static_cast<double>(n);
      RowMap(gx->data(), c, n).row(ch).array() +=
          (*rstd)[ch] * (dxh.array() - m1 - xhat->row(ch).array() * m2);
    }
  });
}

}  // namespace mmseg
