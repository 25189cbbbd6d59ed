#pragma once

#include <string>
#include <vector>

#include "mmseg/tensor.hpp"

namespace mmseg {

struct NamedParameter {
  std::string name;
  Tensor tensor;
  bool decay = true;  // false for normalization gains/biases
};

using ParameterList = std::vector<NamedParameter>;

inline void add_parameter(ParameterList& out, const std::string& prefix, const std::string& name,
                          const Tensor& t, bool decay = true) {
  if (t.defined()) out.push_back({prefix + name, t, decay});
}

}  // namespace mmseg
