#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace xmodal {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage, and identity
/// (is_same) is how parameter sharing is detected. The gradient buffer
/// exists iff requires_grad() and always matches the data shape.
class Tensor {
 public:
  Tensor() = default;
  // Zero-filled, no gradient.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(storage_); }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> data_mut();
  double at(std::size_t flat_index) const { return data()[flat_index]; }
  // Value of a single-element tensor.
  double item() const;

  bool requires_grad() const;
  std::span<const double> grad() const;
  // Gradient slots are shared by all handles, so this is available on const handles.
  std::span<double> grad_mut() const;
  void zero_grad();

  // Deep copy of the values without gradient tracking.
  Tensor clone(bool requires_grad = false) const;

  bool is_same(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> storage_;
};

/// Records backward rules in forward order and replays them in reverse.
///
/// A tape belongs to one thread. After backward() it is empty and spent;
/// calling backward() again before any new op is recorded throws.
class Tape {
 public:
  enum class ReluRule { standard, guided };

  Tape() = default;

  // A tape that never records: ops return tensors without gradients.
  static Tape inference();

  bool recording() const { return recording_; }
  std::size_t size() const { return rules_.size(); }

  ReluRule relu_rule() const { return relu_rule_; }
  void set_relu_rule(ReluRule rule) { relu_rule_ = rule; }

  void record(std::function<void()> rule);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse.
  void backward(const Tensor& loss);

  void clear() { rules_.clear(); }

 private:
  std::vector<std::function<void()>> rules_;
  bool recording_ = true;
  bool spent_ = false;
  ReluRule relu_rule_ = ReluRule::standard;
};

}  // namespace xmodal
