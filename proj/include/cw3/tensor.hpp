#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cw3 {

// Scalar type of a tensor. Gradient checks and closed-form tests run in kF64;
// kF32 halves memory traffic and doubles SIMD width for long training runs.
enum class Dtype : uint8_t { kF32 = 0, kF64 = 1 };

inline size_t dtype_size(Dtype dt) { return dt == Dtype::kF32 ? 4 : 8; }
inline const char* dtype_name(Dtype dt) { return dt == Dtype::kF32 ? "f32" : "f64"; }

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  Dtype dtype = Dtype::kF64;
  bool requires_grad = false;
  bool backward_used = false;

  // Storage is shared so a leaf can be cloned per worker thread: clones read
  // the same values but accumulate into private gradients.
  std::shared_ptr<std::vector<float>> data_f32;
  std::shared_ptr<std::vector<double>> data_f64;
  std::vector<float> grad_f32;
  std::vector<double> grad_f64;
  bool grad_alloc = false;

  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  int64_t numel() const { return shape_numel(shape); }
  void ensure_grad();
  void zero_grad();

  template <class T>
  std::span<T> data();
  template <class T>
  std::span<const T> cdata() const;
  template <class T>
  std::span<T> grad();
};

template <>
inline std::span<float> Node::data<float>() {
  return {data_f32->data(), data_f32->size()};
}
template <>
inline std::span<double> Node::data<double>() {
  return {data_f64->data(), data_f64->size()};
}
template <>
inline std::span<const float> Node::cdata<float>() const {
  return {data_f32->data(), data_f32->size()};
}
template <>
inline std::span<const double> Node::cdata<double>() const {
  return {data_f64->data(), data_f64->size()};
}
template <>
inline std::span<float> Node::grad<float>() {
  return {grad_f32.data(), grad_f32.size()};
}
template <>
inline std::span<double> Node::grad<double>() {
  return {grad_f64.data(), grad_f64.size()};
}

}  // namespace detail

// Reverse-mode autodiff tensor. Operations record a define-by-run graph;
// backward() walks it once in reverse topological order. A second backward()
// through an already-consumed graph throws std::logic_error.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, Dtype dt = Dtype::kF64, bool requires_grad = false);
  static Tensor full(Shape shape, double value, Dtype dt = Dtype::kF64,
                     bool requires_grad = false);
  static Tensor from_doubles(Shape shape, const std::vector<double>& values,
                             Dtype dt = Dtype::kF64, bool requires_grad = false);
  static Tensor from_floats(Shape shape, const std::vector<float>& values,
                            bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t numel() const { return node_->numel(); }
  Dtype dtype() const { return node_->dtype; }
  bool requires_grad() const { return node_->requires_grad; }

  template <class T>
  std::span<T> data() {
    check_dtype<T>();
    return node_->data<T>();
  }
  template <class T>
  std::span<const T> data() const {
    check_dtype<T>();
    return const_cast<const detail::Node&>(*node_).cdata<T>();
  }
  template <class T>
  std::span<const T> grad() const {
    check_dtype<T>();
    if (!node_->grad_alloc) throw std::logic_error("gradient not populated");
    return node_->grad<T>();
  }

  double at(int64_t i) const;
  void set(int64_t i, double v);
  double item() const;
  double grad_at(int64_t i) const;
  std::vector<double> to_doubles() const;
  std::vector<double> grad_to_doubles() const;

  // Fresh leaf viewing the same storage. No graph edge to the original.
  Tensor shared_leaf(bool requires_grad) const;
  // Deep copy as a detached leaf, optionally converting precision.
  Tensor copy_as(Dtype dt, bool requires_grad = false) const;

  void backward();
  void zero_grad() { node_->zero_grad(); }

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  static Tensor make_op(Shape shape, Dtype dt,
                        std::vector<std::shared_ptr<detail::Node>> parents,
                        std::function<void(detail::Node&)> backward_fn);

 private:
  template <class T>
  void check_dtype() const {
    constexpr Dtype want = std::is_same_v<T, float> ? Dtype::kF32 : Dtype::kF64;
    if (node_->dtype != want)
      throw std::invalid_argument(std::string("tensor dtype is ") +
                                  dtype_name(node_->dtype));
  }

  std::shared_ptr<detail::Node> node_;
};

}  // namespace cw3
