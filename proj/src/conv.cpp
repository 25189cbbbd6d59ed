#include <stdexcept>

#include "mmseg/ops.hpp"

namespace mmseg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;

struct ConvGeometry {
  Index cin, d, h, w;
  Index cout, kd, kh, kw;
  Index od, oh, ow;
  Index stride, padding, groups;

  Index group_in() const { return cin / groups; }
  Index group_out() const { return cout / groups; }
  Index taps() const { return kd * kh * kw; }
  Index out_voxels() const { return od * oh * ow; }
  Index in_voxels() const { return d * h * w; }
};

// Unfolds the channels of one group into a (channels * taps) x out_voxels
// matrix; out-of-volume taps read zero.
void im2col(const double* x, const ConvGeometry& g, Index group, RowMat& cols) {
  const Index cg = g.group_in();
  cols.resize(cg * g.taps(), g.out_voxels());
  for (Index c = 0; c < cg; ++c) {
    const double* xc = x + (group * cg + c) * g.in_voxels();
    for (Index a = 0; a < g.kd; ++a)
      for (Index b = 0; b < g.kh; ++b)
        for (Index e = 0; e < g.kw; ++e) {
          double* row = cols.row(((c * g.kd + a) * g.kh + b) * g.kw + e).data();
          Index p = 0;
          for (Index oz = 0; oz < g.od; ++oz) {
            const Index iz = oz * g.stride - g.padding + a;
            const bool zin = iz >= 0 && iz < g.d;
            for (Index oy = 0; oy < g.oh; ++oy) {
              const Index iy = oy * g.stride - g.padding + b;
              const bool yin = zin && iy >= 0 && iy < g.h;
              for (Index ox = 0; ox < g.ow; ++ox, ++p) {
                const Index ix = ox * g.stride - g.padding + e;
                row[p] = (yin && ix >= 0 && ix < g.w) ? xc[(iz * g.h + iy) * g.w + ix] : 0.0;
              }
            }
          }
        }
  }
}

void col2im_add(const RowMat& cols, const ConvGeometry& g, Index group, double* gx) {
  const Index cg = g.group_in();
  for (Index c = 0; c < cg; ++c) {
    double* gc = gx + (group * cg + c) * g.in_voxels();
    for (Index a = 0; a < g.kd; ++a)
      for (Index b = 0; b < g.kh; ++b)
        for (Index e = 0; e < g.kw; ++e) {
          const double* row = cols.row(((c * g.kd + a) * g.kh + b) * g.kw + e).data();
          Index p = 0;
          for (Index oz = 0; oz < g.od; ++oz) {
            const Index iz = oz * g.stride - g.padding + a;
            const bool zin = iz >= 0 && iz < g.d;
            for (Index oy = 0; oy < g.oh; ++oy) {
              const Index iy = oy * g.stride - g.padding + b;
              const bool yin = zin && iy >= 0 && iy < g.h;
              for (Index ox = 0; ox < g.ow; ++ox, ++p) {
                const Index ix = ox * g.stride - g.padding + e;
                if (yin && ix >= 0 && ix < g.w) gc[(iz * g.h + iy) * g.w + ix] += row[p];
              }
            }
          }
        }
  }
}

}  // namespace

Index conv_output_extent(Index in, Index kernel, Index stride, Index padding) {
  const Index span = in + 2 * padding - kernel;
  if (span < 0) throw std::invalid_argument("conv3d: kernel larger than padded input");
  return span / stride + 1;
}

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, Index stride, Index padding,
              Index groups) {
  if (x.rank() != 4) throw std::invalid_argument("conv3d input must be C x D x H x W, got " + to_string(x.shape()));
  if (weight.rank() != 5) throw std::invalid_argument("conv3d weight must be rank 5, got " + to_string(weight.shape()));
  if (stride < 1 || padding < 0 || groups < 1) throw std::invalid_argument("conv3d: bad stride/padding/groups");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3),
                 weight.dim(0), weight.dim(2), weight.dim(3), weight.dim(4),
                 0, 0, 0, stride, padding, groups};
  if (g.cin % groups != 0 || g.cout % groups != 0) {
    throw std::invalid_argument("conv3d: groups=" + std::to_string(groups) + " must divide C_in=" +
                                std::to_string(g.cin) + " and C_out=" + std::to_string(g.cout));
  }
  if (weight.dim(1) != g.group_in()) {
    throw std::invalid_argument("conv3d: weight " + to_string(weight.shape()) + " does not match " +
                                std::to_string(g.group_in()) + " input channels per group");
  }
  if (g.kd % 2 == 0 || g.kh % 2 == 0 || g.kw % 2 == 0) {
    throw std::invalid_argument("conv3d: kernel extents must be odd, got " + to_string(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != g.cout) throw std::invalid_argument("conv3d: bias length must equal C_out");
  g.od = conv_output_extent(g.d, g.kd, stride, padding);
  g.oh = conv_output_extent(g.h, g.kh, stride, padding);
  g.ow = conv_output_extent(g.w, g.kw, stride, padding);

  const Index P = g.out_voxels();
  const Index K = g.group_in() * g.taps();
  Array y(g.cout * P);
  RowMat cols;
  for (Index grp = 0; grp < groups; ++grp) {
    im2col(x.values().data(), g, grp, cols);
    RowMap(y.data() + grp * g.group_out() * P, g.group_out(), P).noalias() =
        ConstRowMap(weight.values().data() + grp * g.group_out() * K, g.group_out(), K) * cols;
  }
  if (has_bias) {
    RowMap ym(y.data(), g.cout, P);
    ym.colwise() += bias.values().matrix();
  }

  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return detail::make_result({g.cout, g.od, g.oh, g.ow}, std::move(y), std::move(inputs),
                             [g, has_bias, P, K](detail::Node& self) {
    auto& xin = self.inputs[0];
    auto& win = self.inputs[1];
    RowMat cols;
    for (Index grp = 0; grp < g.groups; ++grp) {
      ConstRowMap gy(self.grad.data() + grp * g.group_out() * P, g.group_out(), P);
      im2col(xin->value.data(), g, grp, cols);
      if (win->requires_grad) {
        RowMap(win->grad_buffer().data() + grp * g.group_out() * K, g.group_out(), K).noalias() +=
            gy * cols.transpose();
      }
      if (xin->requires_grad) {
        cols.noalias() = ConstRowMap(win->value.data() + grp * g.group_out() * K, g.group_out(), K).transpose() * gy;
        col2im_add(cols, g, grp, xin->grad_buffer().data());
      }
    }
    if (has_bias && self.inputs[2]->requires_grad) {
      self.inputs[2]->grad_buffer() += ConstRowMap(self.grad.data(), g.cout, P).rowwise().sum().array();
    }
  });
}

}  // namespace mmseg
