#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pvgc/errors.hpp"

namespace pvgc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Storage precision for op outputs. Values are always held as doubles; in
/// f32 mode every op result and parameter update is rounded to float.
enum class Precision { f64, f32 };

void set_precision(Precision p);
Precision precision();
const char* precision_name(Precision p);
Precision parse_precision(const std::string& name);

class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p) : previous_(precision()) { set_precision(p); }
  ~PrecisionScope() { set_precision(previous_); }
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision previous_;
};

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t tape_serial = 0;
  std::size_t node = 0;
};

}  // namespace detail

/// Dense row-major tensor handle. Copies share storage; op results are never
/// modified after creation. Leaves (parameters, inputs) may be updated in
/// place through mutable_values() while no tape is recording them.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t numel() const { return impl().data.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> values() const { return impl().data; }
  std::span<double> mutable_values() { return impl().data; }
  double operator[](std::size_t flat) const { return impl().data[flat]; }
  double item() const;

  bool requires_grad() const { return impl().requires_grad; }
  void set_requires_grad(bool flag);
  bool is_leaf() const { return impl().leaf; }

  /// Fresh leaf holding a copy of the values, without gradient tracking.
  Tensor detach() const;
  /// Fresh leaf holding a copy of the values, keeping the grad flag.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  detail::TensorImpl& impl() const;
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Round in place to the active precision.
void round_to_precision(std::span<double> values);

bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace pvgc
