#include "mmseg/scan3d.hpp"

#include <algorithm>
#include <stdexcept>

#include "mmseg/ops.hpp"

namespace mmseg {

namespace {

char axis_letter(Axis a) {
  switch (a) {
    case Axis::kDepth: return 'D';
    case Axis::kHeight: return 'H';
    case Axis::kWidth: return 'W';
  }
  return '?';
}

void check_volume(const Tensor& v) {
  if (v.rank() != 4) throw std::invalid_argument("expected a C x D x H x W volume, got " + to_string(v.shape()));
}

}  // namespace

std::string ScanDirection::name() const {
  std::string s;
  for (Axis a : axis_order) s += axis_letter(a);
  return s + (reversed ? "-" : "+");
}

std::vector<ScanDirection> default_directions() {
  using A = Axis;
  std::vector<ScanDirection> dirs;
  for (auto order : {std::array{A::kDepth, A::kHeight, A::kWidth}, std::array{A::kHeight, A::kWidth, A::kDepth},
                     std::array{A::kWidth, A::kDepth, A::kHeight}}) {
    dirs.push_back({order, false});
    dirs.push_back({order, true});
  }
  return dirs;
}

std::vector<ScanDirection> all_axis_directions() {
  std::array<Axis, 3> order{Axis::kDepth, Axis::kHeight, Axis::kWidth};
  std::vector<ScanDirection> dirs;
  do {
    dirs.push_back({order, false});
    dirs.push_back({order, true});
  } while (std::next_permutation(order.begin(), order.end()));
  return dirs;
}

std::vector<ScanDirection> bidirectional_directions() {
  return {ScanDirection{{Axis::kDepth, Axis::kHeight, Axis::kWidth}, false},
          ScanDirection{{Axis::kDepth, Axis::kHeight, Axis::kWidth}, true}};
}

std::vector<Index> traversal_order(Index depth, Index height, Index width, const ScanDirection& dir) {
  const std::array<Index, 3> extent{depth, height, width};
  const std::array<Index, 3> stride{height * width, width, 1};
  std::array<bool, 3> used{};
  for (Axis a : dir.axis_order) {
    const int k = static_cast<int>(a);
    if (used[k]) throw std::invalid_argument("scan direction repeats an axis: " + dir.name());
    used[k] = true;
  }
  const auto s = static_cast<std::size_t>(dir.axis_order[0]);
  const auto m = static_cast<std::size_t>(dir.axis_order[1]);
  const auto f = static_cast<std::size_t>(dir.axis_order[2]);
  std::vector<Index> order;
  order.reserve(static_cast<std::size_t>(depth * height * width));
  for (Index i = 0; i < extent[s]; ++i)
    for (Index j = 0; j < extent[m]; ++j)
      for (Index k = 0; k < extent[f]; ++k) order.push_back(i * stride[s] + j * stride[m] + k * stride[f]);
  if (dir.reversed) std::reverse(order.begin(), order.end());
  return order;
}

Tensor serialize(const Tensor& volume, const ScanDirection& dir) {
  check_volume(volume);
  const Index C = volume.dim(0), D = volume.dim(1), H = volume.dim(2), W = volume.dim(3);
  const Index L = D * H * W;
  const auto order = traversal_order(D, H, W, dir);
  std::vector<Index> idx(static_cast<std::size_t>(C * L));
  for (Index c = 0; c < C; ++c)
    for (Index t = 0; t < L; ++t) idx[static_cast<std::size_t>(c * L + t)] = c * L + order[static_cast<std::size_t>(t)];
  return gather(volume, idx, {C, L});
}

Tensor deserialize(const Tensor& sequence, const ScanDirection& dir, Index depth, Index height, Index width) {
  const Index L = depth * height * width;
  if (sequence.rank() != 2 || sequence.dim(1) != L) {
    throw std::invalid_argument("deserialize: sequence " + to_string(sequence.shape()) + " does not hold " +
                                std::to_string(L) + " voxels per channel");
  }
  const Index C = sequence.dim(0);
  const auto order = traversal_order(depth, height, width, dir);
  std::vector<Index> idx(static_cast<std::size_t>(C * L));
  for (Index c = 0; c < C; ++c)
    for (Index t = 0; t < L; ++t) idx[static_cast<std::size_t>(c * L + order[static_cast<std::size_t>(t)])] = c * L + t;
  return gather(sequence, idx, {C, depth, height, width});
}

Tensor ss3d(const Tensor& volume, const SSMParams& ssm, const std::vector<ScanDirection>& dirs) {
  check_volume(volume);
  if (dirs.empty()) throw std::invalid_argument("ss3d: direction set is empty");
  const Index C = volume.dim(0), D = volume.dim(1), H = volume.dim(2), W = volume.dim(3);
  const Index L = D * H * W;
  // Tokens in voxel order; each direction scans them in its own order.
  Tensor tokens = transpose(reshape(volume, {C, L}));
  const SelectiveInputs in = selective_params(tokens, ssm);
  std::vector<std::vector<Index>> orders;
  orders.reserve(dirs.size());
  for (const auto& d : dirs) orders.push_back(traversal_order(D, H, W, d));
  Tensor y = ssm_scan_mean(tokens, in, ssm.state_matrix(), orders);
  return reshape(transpose(y), {C, D, H, W});
}

}  // namespace mmseg
