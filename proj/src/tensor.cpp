#include "mmseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace mmseg {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace detail {

Array& Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Array::Zero(value.size());
  return grad;
}

std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> make_leaf(Shape shape, Array values,
                                        bool requires_grad) {
  for (Index e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor extents must be positive, got " + to_string(shape));
  }
  if (numel(shape) != values.size()) {
    throw std::invalid_argument("shape " + to_string(shape) + " holds " +
                                std::to_string(numel(shape)) + " values, got " +
                                std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->id = detail::next_node_id();
  return node;
}

}  // namespace

Tensor::Tensor(Shape shape, Array values, bool requires_grad)
    : node_(make_leaf(std::move(shape), std::move(values), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const Index n = mmseg::numel(shape);
  return Tensor(std::move(shape), Array::Zero(n), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const Index n = mmseg::numel(shape);
  return Tensor(std::move(shape), Array::Constant(n, value), requires_grad);
}

Tensor Tensor::scalar(double value) { return full({}, value); }

Tensor Tensor::from(Shape shape, std::initializer_list<double> values,
                    bool requires_grad) {
  Array a(static_cast<Index>(values.size()));
  std::copy(values.begin(), values.end(), a.data());
  return Tensor(std::move(shape), std::move(a), requires_grad);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev,
                     bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  Array a(mmseg::numel(shape));
  for (Index i = 0; i < a.size(); ++i) a[i] = dist(rng);
  return Tensor(std::move(shape), std::move(a), requires_grad);
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi,
                       bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Array a(mmseg::numel(shape));
  for (Index i = 0; i < a.size(); ++i) a[i] = dist(rng);
  return Tensor(std::move(shape), std::move(a), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->shape;
}

Index Tensor::dim(Index axis) const {
  const auto& s = shape();
  if (axis < 0) axis += static_cast<Index>(s.size());
  if (axis < 0 || axis >= static_cast<Index>(s.size())) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

const Array& Tensor::values() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->value;
}

Array& Tensor::mutable_values() {
  if (!node_) throw std::logic_error("undefined tensor");
  if (!node_->inputs.empty()) throw std::logic_error("mutable_values on a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + to_string(shape()));
  return values()[0];
}

double Tensor::at(std::initializer_list<Index> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw std::invalid_argument("index rank mismatch for shape " + to_string(s));
  Index flat = 0;
  std::size_t k = 0;
  for (Index i : index) {
    if (i < 0 || i >= s[k]) throw std::out_of_range("index out of range for shape " + to_string(s));
    flat = flat * s[k] + i;
    ++k;
  }
  return values()[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

const Array& Tensor::grad() const {
  if (!has_grad()) node_->grad_buffer();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad = Array::Zero(node_->value.size());
}

std::uint64_t Tensor::node_id() const { return node_ ? node_->id : 0; }

bool Tensor::is_leaf() const { return node_ && node_->inputs.empty(); }

Tensor Tensor::detach() const { return Tensor(shape(), values(), false); }

Tensor Tensor::clone(bool requires_grad) const { return Tensor(shape(), values(), requires_grad); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tape Tape::collect(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  std::unordered_set<const detail::Node*> seen;
  std::vector<detail::Node*> stack{root.node().get()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    tape.nodes_.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(tape.nodes_.begin(), tape.nodes_.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->id < b->id; });
  return tape;
}

void Tape::replay(const Tensor& root) const {
  for (detail::Node* n : nodes_) {
    if (!n->inputs.empty()) n->grad = Array::Zero(n->value.size());
  }
  root.node()->grad_buffer() += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) throw std::invalid_argument("backward: loss is not connected to the tape");
  Tape::collect(loss).replay(loss);
}

namespace detail {

Tensor make_result(Shape shape, Array value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->id = next_node_id();
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& t : inputs) node->inputs.push_back(t.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace detail

}  // namespace mmseg
