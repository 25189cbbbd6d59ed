#pragma once

#include <functional>
#include <vector>

#include "mmseg/tensor.hpp"

namespace mmseg {

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Max over coordinates of |analytic - central| / max(|analytic|, |central|, 1e-12).
/// `f` must be scalar-valued; `x` is not modified.
double grad_check(const ScalarFn& f, const Tensor& x, double step = 1e-6);

/// Same criterion over leaf parameters that `loss` closes over. Each
/// parameter is perturbed in place and restored. When `coordinates` is
/// non-empty only those (parameter, flat index) pairs are checked.
struct ParamCoordinate {
  std::size_t param;
  Index index;
};
double grad_check_params(const std::function<Tensor()>& loss, const std::vector<Tensor>& params,
                         double step = 1e-6, const std::vector<ParamCoordinate>& coordinates = {});

}  // namespace mmseg
