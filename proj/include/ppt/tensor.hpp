// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation over row-major float32 arrays.
//
// A Tensor is a cheap shared handle onto a node of the computation record.
// Leaves own their data and may require gradients; every primitive in ops.hpp
// produces a new interior node holding its forward value plus a closure that
// maps the output gradient back onto its inputs. The record is rebuilt on
// every forward pass and released when the last handle goes away.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ppt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Identity of a leaf tensor. Copies made with Tensor::clone get a new id.
using LeafId = std::uint64_t;

namespace detail {

struct Node;

/// Receives gradients for the inputs of a node. A null slot means the input
/// does not need a gradient and the closure may skip that work.
using BackwardFn = std::function<void(const Node& self, std::span<const float> grad_out,
                                      std::span<std::vector<float>*> grad_in)>;

struct Node {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  LeafId leaf_id = 0;  // 0 for interior nodes
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(float value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  /// Size of an axis; negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const float> data() const { return node_->data; }
  /// Writable view of a leaf's storage. Rejected on interior nodes, whose
  /// values are owned by the computation record.
  std::span<float> mutable_data();
  float item() const;
  float at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  /// Toggles gradient tracking on a leaf (used to freeze parameters).
  void set_requires_grad(bool flag);
  bool is_leaf() const { return node_->leaf_id != 0; }
  LeafId id() const { return node_->leaf_id; }

  /// New leaf with a copy of the values and no gradient tracking.
  Tensor detach() const;
  /// Deep copy as a fresh leaf with the same requires_grad flag.
  Tensor clone() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Internal: used by primitives.
  static Tensor make_result(Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                            detail::BackwardFn backward);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  static Tensor make_leaf(Shape shape, std::vector<float> data, bool requires_grad);

  std::shared_ptr<detail::Node> node_;
};

/// Gradients of a scalar with respect to the requires_grad leaves reached by
/// the backward sweep, keyed by leaf identity.
class Gradients {
 public:
  bool contains(const Tensor& leaf) const { return grads_.count(leaf.id()) != 0; }
  /// Gradient of a leaf; throws std::out_of_range when the leaf was not reached.
  const std::vector<float>& of(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }

  void insert(LeafId id, std::vector<float> grad) { grads_[id] = std::move(grad); }

 private:
  std::unordered_map<LeafId, std::vector<float>> grads_;
};

/// Reverse-mode sweep from a scalar. The record is left untouched, so calling
/// this again on the same loss recomputes identical gradients.
Gradients backward(const Tensor& loss);

}  // namespace ppt
