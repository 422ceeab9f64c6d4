#include "cw3/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace cw3 {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

void Node::ensure_grad() {
  if (grad_alloc) return;
  size_t n = static_cast<size_t>(numel());
  if (dtype == Dtype::kF32)
    grad_f32.assign(n, 0.0f);
  else
    grad_f64.assign(n, 0.0);
  grad_alloc = true;
}

void Node::zero_grad() {
  if (!grad_alloc) return;
  std::fill(grad_f32.begin(), grad_f32.end(), 0.0f);
  std::fill(grad_f64.begin(), grad_f64.end(), 0.0);
}

}  // namespace detail

static std::shared_ptr<detail::Node> make_node(Shape shape, Dtype dt, bool rg) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->dtype = dt;
  n->requires_grad = rg;
  size_t sz = static_cast<size_t>(n->numel());
  if (dt == Dtype::kF32)
    n->data_f32 = std::make_shared<std::vector<float>>(sz, 0.0f);
  else
    n->data_f64 = std::make_shared<std::vector<double>>(sz, 0.0);
  return n;
}

Tensor Tensor::zeros(Shape shape, Dtype dt, bool requires_grad) {
  return Tensor(make_node(std::move(shape), dt, requires_grad));
}

Tensor Tensor::full(Shape shape, double value, Dtype dt, bool requires_grad) {
  Tensor t = zeros(std::move(shape), dt, requires_grad);
  if (dt == Dtype::kF32)
    std::fill(t.node()->data_f32->begin(), t.node()->data_f32->end(),
              static_cast<float>(value));
  else
    std::fill(t.node()->data_f64->begin(), t.node()->data_f64->end(), value);
  return t;
}

Tensor Tensor::from_doubles(Shape shape, const std::vector<double>& values,
                            Dtype dt, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("from_doubles: size mismatch for shape " +
                                shape_str(shape));
  Tensor t = zeros(std::move(shape), dt, requires_grad);
  if (dt == Dtype::kF32) {
    auto& d = *t.node()->data_f32;
    for (size_t i = 0; i < values.size(); ++i) d[i] = static_cast<float>(values[i]);
  } else {
    *t.node()->data_f64 = values;
  }
  return t;
}

Tensor Tensor::from_floats(Shape shape, const std::vector<float>& values,
                           bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("from_floats: size mismatch for shape " +
                                shape_str(shape));
  Tensor t = zeros(std::move(shape), Dtype::kF32, requires_grad);
  *t.node()->data_f32 = values;
  return t;
}

double Tensor::at(int64_t i) const {
  return node_->dtype == Dtype::kF32 ? (*node_->data_f32)[i] : (*node_->data_f64)[i];
}

void Tensor::set(int64_t i, double v) {
  if (node_->dtype == Dtype::kF32)
    (*node_->data_f32)[i] = static_cast<float>(v);
  else
    (*node_->data_f64)[i] = v;
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
  return at(0);
}

double Tensor::grad_at(int64_t i) const {
  if (!node_->grad_alloc) throw std::logic_error("gradient not populated");
  return node_->dtype == Dtype::kF32 ? node_->grad_f32[i] : node_->grad_f64[i];
}

std::vector<double> Tensor::to_doubles() const {
  std::vector<double> out(static_cast<size_t>(numel()));
  for (size_t i = 0; i < out.size(); ++i) out[i] = at(static_cast<int64_t>(i));
  return out;
}

std::vector<double> Tensor::grad_to_doubles() const {
  std::vector<double> out(static_cast<size_t>(numel()));
  for (size_t i = 0; i < out.size(); ++i) out[i] = grad_at(static_cast<int64_t>(i));
  return out;
}

Tensor Tensor::shared_leaf(bool requires_grad) const {
  auto n = std::make_shared<detail::Node>();
  n->shape = node_->shape;
  n->dtype = node_->dtype;
  n->requires_grad = requires_grad;
  n->data_f32 = node_->data_f32;
  n->data_f64 = node_->data_f64;
  return Tensor(std::move(n));
}

Tensor Tensor::copy_as(Dtype dt, bool requires_grad) const {
  Tensor t = zeros(node_->shape, dt, requires_grad);
  int64_t n = numel();
  for (int64_t i = 0; i < n; ++i) t.set(i, at(i));
  return t;
}

Tensor Tensor::make_op(Shape shape, Dtype dt,
                       std::vector<std::shared_ptr<detail::Node>> parents,
                       std::function<void(detail::Node&)> backward_fn) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  auto n = make_node(std::move(shape), dt, rg);
  if (rg) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(n);
}

void Tensor::backward() {
  if (numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  if (!node_->requires_grad)
    throw std::invalid_argument("backward: root does not require grad");
  if (node_->backward_used)
    throw std::logic_error(
        "backward: graph already consumed; rebuild it or zero gradients first");

  // Iterative topological order over the requires-grad subgraph.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      detail::Node* p = n->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) (*it)->ensure_grad();
  if (node_->dtype == Dtype::kF32)
    node_->grad_f32[0] = 1.0f;
  else
    node_->grad_f64[0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    n->backward_used = true;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace cw3
