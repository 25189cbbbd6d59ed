#include "mmseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmseg {

namespace {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

double scalar_value(const Tensor& t) {
  if (t.numel() != 1) throw std::invalid_argument("grad_check: function is not scalar-valued");
  return t.item();
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor& x, double step) {
  if (step <= 0.0) throw std::invalid_argument("grad_check: step must be positive");
  Tensor probe = x.clone(true);
  Tensor out = f(probe);
  scalar_value(out);
  backward(out);
  const Array analytic = probe.grad();

  double worst = 0.0;
  Array& v = probe.mutable_values();
  NoGradGuard no_grad;
  for (Index i = 0; i < v.size(); ++i) {
    const double saved = v[i];
    // Divide by the step actually taken, not the nominal one.
    v[i] = saved + step;
    const double hi = v[i];
    const double up = scalar_value(f(probe));
    v[i] = saved - step;
    const double lo = v[i];
    const double down = scalar_value(f(probe));
    v[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (hi - lo)));
  }
  return worst;
}

double grad_check_params(const std::function<Tensor()>& loss, const std::vector<Tensor>& params, double step,
                         const std::vector<ParamCoordinate>& coordinates) {
  if (step <= 0.0) throw std::invalid_argument("grad_check: step must be positive");
  for (const auto& p : params) {
    if (!p.is_leaf() || !p.requires_grad()) throw std::invalid_argument("grad_check_params: parameters must be grad leaves");
    Tensor(p).zero_grad();
  }
  Tensor out = loss();
  scalar_value(out);
  backward(out);

  std::vector<ParamCoordinate> coords = coordinates;
  if (coords.empty()) {
    for (std::size_t k = 0; k < params.size(); ++k)
      for (Index i = 0; i < params[k].numel(); ++i) coords.push_back({k, i});
  }
  std::vector<double> analytic;
  for (const auto& c : coords) analytic.push_back(params.at(c.param).grad()[c.index]);

  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t n = 0; n < coords.size(); ++n) {
    Tensor p = params[coords[n].param];
    Array& v = p.mutable_values();
    const Index i = coords[n].index;
    const double saved = v[i];
    v[i] = saved + step;
    const double hi = v[i];
    const double up = scalar_value(loss());
    v[i] = saved - step;
    const double lo = v[i];
    const double down = scalar_value(loss());
    v[i] = saved;
    worst = std::max(worst, relative_error(analytic[n], (up - down) / (hi - lo)));
  }
  return worst;
}

}  // namespace mmseg
