#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sfi::nn {

using Shape = std::vector<std::size_t>;

// Per-position validity flags; nonzero means "keep".
using Mask = std::vector<std::uint8_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::uint64_t graph_id = 0;  // 0 for leaves
};

/// Dense row-major float64 array with an optional gradient slot.
///
/// Copies are shallow: two Tensor handles may refer to the same storage,
/// which is how parameters are shared between a model and the graphs that
/// read them. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  std::span<double> mutable_data() const;
  double at(std::size_t flat_index) const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value) const;

  bool has_grad() const;
  std::span<const double> grad() const;
  // Allocates a zero gradient buffer on first use.
  std::span<double> mutable_grad() const;
  void zero_grad() const;

  Tensor clone() const;

  std::uint64_t graph_id() const;
  TensorImpl* impl() const { return impl_.get(); }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

}  // namespace sfi::nn
