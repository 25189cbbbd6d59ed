#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <sstream>

#include "mmseg/gradcheck.hpp"
#include "mmseg/ops.hpp"
#include "mmseg/scan3d.hpp"
#include "mmseg/train.hpp"

namespace mmseg {

namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kNetworkTolerance = 1e-3;
// Five-point stencils are tried from the widest step down; the first whose
// evaluations all share one relu sign pattern is used.
constexpr double kSteps[] = {1e-3, 1e-4, 1e-5, 1e-6};
constexpr int kKinkRetries = 8;

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12});
}

// Fourth-order central difference of loss along coordinate i of leaf, or
// nullopt when every step in kSteps straddles a relu kink.
std::optional<double> five_point(const std::function<Tensor()>& loss, const Tensor& leaf, Index i) {
  NoGradGuard no_grad;
  Array& v = Tensor(leaf).mutable_values();
  const double saved = v[i];
  for (double h : kSteps) {
    double f[4];
    std::uint64_t digest[4];
    const double offsets[4] = {-2.0, -1.0, 1.0, 2.0};
    for (int k = 0; k < 4; ++k) {
      v[i] = saved + offsets[k] * h;
      ReluSignDigest d;
      f[k] = loss().item();
      digest[k] = d.value();
    }
    v[i] = saved;
    if (std::all_of(digest, digest + 4, [&](std::uint64_t d) { return d == digest[0]; })) {
      return (8.0 * (f[2] - f[1]) - (f[3] - f[0])) / (12.0 * h);
    }
  }
  return std::nullopt;
}

std::vector<Array> analytic_gradients(const std::function<Tensor()>& loss, const std::vector<Tensor>& leaves) {
  for (const auto& t : leaves) Tensor(t).zero_grad();
  backward(loss());
  std::vector<Array> out;
  for (const auto& t : leaves) out.push_back(t.grad());
  return out;
}

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(seed) {}

  Tensor randn(Shape s, double stddev = 1.0) { return Tensor::randn(std::move(s), rng_, stddev, true); }
  Tensor positive(Shape s, double lo = 0.5, double hi = 1.5) { return Tensor::uniform(std::move(s), rng_, lo, hi, true); }

  // Sum of out weighted by fixed random coefficients, so every output
  // element carries a distinct O(1) gradient.
  std::function<Tensor(const Tensor&)> probe(const Shape& out_shape) {
    Tensor r = Tensor::randn(out_shape, rng_);
    return [r](const Tensor& out) { return sum(mul(out, r)); };
  }

  void check(const std::string& name, const std::function<Tensor()>& body, const std::vector<Tensor>& leaves,
             double tolerance = kOpTolerance) {
    Tensor sample;
    {
      NoGradGuard no_grad;
      sample = body();
    }
    auto weigh = probe(sample.shape());
    const std::function<Tensor()> loss = [&] { return weigh(body()); };
    const std::vector<Array> analytic = analytic_gradients(loss, leaves);
    double err = 0.0;
    std::size_t kinks = 0;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
      for (Index i = 0; i < leaves[k].numel(); ++i) {
        const auto numeric = five_point(loss, leaves[k], i);
        if (numeric) {
          err = std::max(err, relative_error(analytic[k][i], *numeric));
        } else {
          ++kinks;
        }
      }
    }
    std::string label = name;
    if (kinks > 0) label += " (" + std::to_string(kinks) + " kinks skipped)";
    cases_.push_back({label, err, tolerance});
  }

  void perturb(const ParameterList& params, double stddev) {
    std::normal_distribution<double> n(0.0, stddev);
    for (const auto& p : params) {
      Array& v = Tensor(p.tensor).mutable_values();
      for (Index i = 0; i < v.size(); ++i) v[i] += n(rng_);
    }
  }

  void record(std::string name, double err, double tolerance) { cases_.push_back({std::move(name), err, tolerance}); }
  std::mt19937_64& rng() { return rng_; }
  std::vector<GradCheckCase> take() { return std::move(cases_); }

 private:
  std::mt19937_64 rng_;
  std::vector<GradCheckCase> cases_;
};

std::vector<Tensor> tensors(const ParameterList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

void elementwise_cases(Suite& s) {
  Tensor a = s.randn({2, 3, 4});
  Tensor b = s.randn({3, 1});
  Tensor c = s.randn({2, 3, 4});
  s.check("add", [&] { return add(a, c); }, {a, c});
  s.check("add (broadcast)", [&] { return add(a, b); }, {a, b});
  s.check("sub (broadcast)", [&] { return sub(b, a); }, {a, b});
  s.check("mul", [&] { return mul(a, c); }, {a, c});
  s.check("mul (broadcast)", [&] { return mul(a, b); }, {a, b});
  s.check("neg", [&] { return neg(a); }, {a});
  s.check("exp", [&] { return exp(a); }, {a});
  s.check("scale", [&] { return scale(a, -1.7); }, {a});
  s.check("add_scalar", [&] { return add_scalar(a, 0.3); }, {a});
  s.check("relu", [&] { return relu(a); }, {a});
  s.check("sigmoid", [&] { return sigmoid(scale(a, 3.0)); }, {a});
  s.check("softplus", [&] { return softplus(scale(a, 3.0)); }, {a});
  s.check("silu", [&] { return silu(scale(a, 3.0)); }, {a});
  s.check("softmax axis 0", [&] { return softmax(a, 0); }, {a});
  s.check("softmax axis 2", [&] { return softmax(a, 2); }, {a});
  s.check("sum", [&] { return sum(a); }, {a});
  s.check("mean", [&] { return mean(a); }, {a});
  s.check("mean_trailing", [&] { return mean_trailing(a, 1); }, {a});
}

void structural_cases(Suite& s) {
  Tensor m = s.randn({3, 4});
  Tensor n = s.randn({4, 5});
  Tensor x = s.randn({2, 3, 4});
  Tensor y = s.randn({1, 3, 4});
  s.check("matmul", [&] { return matmul(m, n); }, {m, n});
  s.check("transpose", [&] { return transpose(m); }, {m});
  s.check("reshape", [&] { return reshape(x, {6, 4}); }, {x});
  const std::vector<Index> idx{5, 0, 23, 5, 11, 7};
  s.check("gather", [&] { return gather(x, idx, {2, 3}); }, {x});
  s.check("concat", [&] { return concat({x, y}); }, {x, y});
  s.check("slice", [&] { return slice(x, 1, 2); }, {x});
  Tensor v = s.randn({2, 3, 2, 4});
  s.check("upsample_nearest2", [&] { return upsample_nearest2(v); }, {v});
}

void conv_norm_cases(Suite& s) {
  Tensor x = s.randn({2, 4, 5, 4});
  Tensor w = s.randn({3, 2, 3, 3, 3}, 0.3);
  Tensor bias = s.randn({3});
  s.check("conv3d", [&] { return conv3d(x, w, bias, 1, 1); }, {x, w, bias});
  s.check("conv3d stride 2", [&] { return conv3d(x, w, bias, 2, 1); }, {x, w, bias});
  Tensor xg = s.randn({4, 4, 4, 4});
  Tensor wg = s.randn({4, 1, 3, 3, 3}, 0.3);
  Tensor bg = s.randn({4});
  s.check("conv3d depthwise", [&] { return conv3d(xg, wg, bg, 1, 1, 4); }, {xg, wg, bg});
  Tensor w1 = s.randn({3, 2, 1, 1, 1});
  s.check("conv3d 1x1 no bias", [&] { return conv3d(x, w1, Tensor(), 1, 0); }, {x, w1});

  Tensor gain = s.positive({4});
  Tensor shift = s.randn({4});
  s.check("layer_norm", [&] { return layer_norm(xg, 0, gain, shift); }, {xg, gain, shift});
  s.check("instance_norm", [&] { return instance_norm(xg, gain, shift); }, {xg, gain, shift});
}

void ssm_cases(Suite& s) {
  const Index L = 7, C = 3, N = 4;
  Tensor u = s.randn({L, C});
  Tensor delta = s.positive({L, C}, 0.05, 0.6);
  Tensor b = s.randn({L, N});
  Tensor c = s.randn({L, N});
  Tensor a = neg(s.positive({C, N}, 0.5, 3.0)).detach().clone(true);
  const std::vector<Index> order{3, 0, 6, 2, 5, 1, 4};
  s.check("ssm_scan", [&] { return ssm_scan(u, {delta, b, c}, a, order); }, {u, delta, b, c, a});

  SSMParams p = SSMParams::init(C, N, s.rng());
  ParameterList pl;
  for (Tensor t : p.parameters()) pl.push_back({"", t, true});
  s.perturb(pl, 0.1);
  std::vector<Tensor> leaves = p.parameters();
  leaves.push_back(u);
  s.check("selective_scan", [&] { return selective_scan(u, p); }, leaves);

  Tensor vol = s.randn({C, 3, 2, 4});
  leaves.back() = vol;
  s.check("ss3d (6 directions)", [&] { return ss3d(vol, p, default_directions()); }, leaves);
}

void block_cases(Suite& s) {
  const Index C = 4;
  Tensor x = s.randn({C, 4, 4, 4});

  MambaBlock mb = MambaBlock::init(C, 4, default_directions(), s.rng());
  ParameterList mp;
  mb.collect("", mp);
  s.perturb(mp, 0.2);
  auto leaves = tensors(mp);
  leaves.push_back(x);
  s.check("mamba block", [&] { return mamba_block(x, mb); }, leaves);

  ResBlock rb = ResBlock::init(C, 2 * C, s.rng());
  ParameterList rp;
  rb.collect("", rp);
  s.perturb(rp, 0.1);
  leaves = tensors(rp);
  leaves.push_back(x);
  s.check("res block", [&] { return res_block(x, rb); }, leaves);

  Downsample down = Downsample::init(C, s.rng());
  ParameterList dp;
  down.collect("", dp);
  leaves = tensors(dp);
  leaves.push_back(x);
  s.check("downsample", [&] { return downsample(x, down); }, leaves);

  Upsample up = Upsample::init(C, s.rng());
  ParameterList up_params;
  up.collect("", up_params);
  leaves = tensors(up_params);
  leaves.push_back(x);
  s.check("upsample", [&] { return upsample(x, up); }, leaves);

  const Index M = 2;
  FusionParams fp = FusionParams::init(M, C, s.rng());
  ParameterList fl;
  fp.collect("", fl);
  s.perturb(fl, 0.5);
  Tensor x2 = s.randn({C, 4, 4, 4});
  leaves = tensors(fl);
  leaves.push_back(x);
  leaves.push_back(x2);
  s.check("bi-level fusion", [&] { return merge_modalities(bi_level_fuse({x, x2}, fp)); }, leaves);

  Tensor logits = s.randn({3, 2, 2, 2});
  LabelVolume labels{{2, 2, 2}, {0, 1, 2, 2, 1, 0, 0, 1}};
  s.check("cross_entropy", [&] { return cross_entropy(logits, labels); }, {logits});
}

void network_case(Suite& s, NetConfig net) {
  net.patch = {8, 8, 8};
  SegModel model = SegModel::init(net, s.rng()());
  const ParameterList params = model.parameters();
  s.perturb(params, 0.05);
  std::vector<Tensor> inputs;
  for (Index m = 0; m < net.modalities; ++m) inputs.push_back(Tensor::uniform({1, 8, 8, 8}, s.rng(), 0.0, 1.0));
  LabelVolume labels{{8, 8, 8}, std::vector<std::uint8_t>(512)};
  std::uniform_int_distribution<int> cls(0, static_cast<int>(net.num_classes) - 1);
  for (auto& l : labels.labels) l = static_cast<std::uint8_t>(cls(s.rng()));

  const std::function<Tensor()> loss = [&] { return cross_entropy(forward(model, inputs), labels); };

  // Two coordinates per parameter tensor; a coordinate whose every stencil
  // straddles a kink is redrawn.
  const std::vector<Tensor> leaves = tensors(params);
  const std::vector<Array> analytic = analytic_gradients(loss, leaves);
  double err = 0.0;
  int kinks = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::uniform_int_distribution<Index> pick(0, params[k].tensor.numel() - 1);
    for (int n = 0; n < 2; ++n) {
      for (int retry = 0; retry <= kKinkRetries; ++retry) {
        const Index i = pick(s.rng());
        if (const auto numeric = five_point(loss, leaves[k], i)) {
          err = std::max(err, relative_error(analytic[k][i], *numeric));
          break;
        }
        ++kinks;
      }
    }
  }
  std::ostringstream name;
  name << "network " << to_string(net.fusion) << (net.mamba ? " + mamba" : "") << " (8^3, M=" << net.modalities
       << ", sampled, " << kinks << " kinks resampled)";
  s.record(name.str(), err, kNetworkTolerance);
}

}  // namespace

std::vector<GradCheckCase> gradient_suite(std::uint64_t seed, NetConfig net) {
  Suite s(seed);
  elementwise_cases(s);
  structural_cases(s);
  conv_norm_cases(s);
  ssm_cases(s);
  block_cases(s);
  network_case(s, net);
  return s.take();
}

}  // namespace mmseg
