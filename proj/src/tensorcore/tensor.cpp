// SPDX-License-Identifier: Apache-2.0
#include "ppt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ppt {

namespace {

std::atomic<LeafId> g_next_leaf_id{1};

#if defined(__GLIBC__)
// Activation and gradient buffers are allocated and freed every step; keep
// them on the heap instead of round-tripping through mmap and page faults.
[[maybe_unused]] const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::make_leaf(Shape shape, std::vector<float> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->leaf_id = g_next_leaf_id.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return make_leaf(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return make_leaf(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> data, bool requires_grad) {
  return make_leaf(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(float value) { return make_leaf({}, {value}, false); }

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw std::out_of_range("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                            shape_str(shape()));
  }
  return node_->shape[static_cast<std::size_t>(a)];
}

std::span<float> Tensor::mutable_data() {
  if (!is_leaf()) throw std::logic_error("tensor: mutable_data on a non-leaf tensor");
  return node_->data;
}

float Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("tensor: item() on shape " + shape_str(shape()));
  }
  return node_->data[0];
}

float Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw std::invalid_argument("tensor: at() rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw std::out_of_range("tensor: at() index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw std::logic_error("tensor: requires_grad can only be set on leaves");
  node_->requires_grad = flag;
}

Tensor Tensor::detach() const { return make_leaf(node_->shape, node_->data, false); }

Tensor Tensor::clone() const { return make_leaf(node_->shape, node_->data, node_->requires_grad); }

Tensor Tensor::make_result(Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                           detail::BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  node->requires_grad = needs;
  // Constant subgraphs keep no history.
  if (needs) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

const std::vector<float>& Gradients::of(const Tensor& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) throw std::out_of_range("gradients: leaf has no gradient");
  return it->second;
}

Gradients backward(const Tensor& loss) {
  if (!loss.defined() || loss.rank() != 0) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<none>")));
  }
  Gradients result;
  const detail::Node* root = loss.node().get();
  if (!root->requires_grad) return result;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<const detail::Node*> order;
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<const detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<const detail::Node*, std::vector<float>> grads;
  grads[root] = {1.0f};
  std::vector<std::vector<float>*> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const detail::Node* node = *it;
    auto g_it = grads.find(node);
    if (g_it == grads.end()) continue;
    if (node->leaf_id != 0) {
      result.insert(node->leaf_id, std::move(g_it->second));
      grads.erase(g_it);
      continue;
    }
    std::vector<float> g_out = std::move(g_it->second);
    grads.erase(g_it);
    slots.assign(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const detail::Node* in = node->inputs[i].get();
      if (!in->requires_grad) continue;
      auto& buf = grads[in];
      if (buf.empty()) buf.assign(in->data.size(), 0.0f);
      slots[i] = &buf;
    }
    // The same input may appear twice (e.g. mul(x, x)); both slots then alias
    // one accumulator, which is what the chain rule wants.
    node->backward(*node, g_out, slots);
  }
  return result;
}

}  // namespace ppt
