#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mmseg {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

// One recorded primitive. `backward` reads `grad` and accumulates into the
// gradients of `inputs`; it never captures its own node.
struct Node {
  Shape shape;
  Array value;
  Array grad;
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Array& grad_buffer();
};

std::uint64_t next_node_id();

}  // namespace detail

/// Dense row-major array of doubles that may take part in reverse-mode
/// differentiation. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Array values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor from(Shape shape, std::initializer_list<double> values,
                     bool requires_grad = false);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                      bool requires_grad = false);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo,
                        double hi, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  Index rank() const { return static_cast<Index>(shape().size()); }
  Index dim(Index axis) const;
  Index numel() const { return values().size(); }

  const Array& values() const;
  /// Writable storage; only valid on leaves (no recorded inputs).
  Array& mutable_values();
  double item() const;
  double at(std::initializer_list<Index> index) const;

  bool requires_grad() const;
  bool has_grad() const;
  const Array& grad() const;
  void zero_grad();

  std::uint64_t node_id() const;
  bool is_leaf() const;

  /// Same values, no tape participation.
  Tensor detach() const;
  /// Independent leaf with copied values.
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables tape recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Ordered record of the primitives reachable from a root. Nodes are sorted
/// by creation id, so every node's inputs precede it.
class Tape {
 public:
  static Tape collect(const Tensor& root);

  const std::vector<detail::Node*>& nodes() const { return nodes_; }
  /// Seeds the root gradient with ones and replays in reverse order.
  void replay(const Tensor& root) const;

 private:
  std::vector<detail::Node*> nodes_;
};

/// Reverse-mode pass from a scalar loss. Leaf gradients accumulate across
/// calls; intermediate gradients are reset.
void backward(const Tensor& loss);

namespace detail {

/// Builds a result tensor. The backward closure is dropped when recording is
/// off or no input requires a gradient.
Tensor make_result(Shape shape, Array value,
                   std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward);

}  // namespace detail

}  // namespace mmseg
