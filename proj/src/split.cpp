#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "mmseg/data.hpp"

namespace mmseg {

DatasetSplit split(std::size_t dataset_size, const SplitFractions& f, std::uint64_t seed) {
  if (dataset_size == 0) throw std::invalid_argument("split: empty dataset");
  if (f.train < 0.0 || f.val < 0.0 || f.test < 0.0) throw std::invalid_argument("split: negative fraction");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");

  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const double n = static_cast<double>(dataset_size);
  const auto n_val = static_cast<std::size_t>(std::floor(n * f.val + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(n * f.test + 1e-9));
  DatasetSplit s;
  const auto begin = order.begin();
  const auto n_train = dataset_size - n_val - n_test;
  s.train.assign(begin, begin + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(begin + static_cast<std::ptrdiff_t>(n_train), begin + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(begin + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

}  // namespace mmseg
