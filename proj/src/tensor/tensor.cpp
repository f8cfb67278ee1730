#include "xmodal/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "xmodal/error.hpp"

namespace xmodal {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : Tensor(zeros(std::move(shape), false)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  check_extents(shape);
  t.storage_ = std::make_shared<Storage>();
  t.storage_->data.assign(shape_numel(shape), 0.0);
  if (requires_grad) t.storage_->grad.assign(t.storage_->data.size(), 0.0);
  t.storage_->shape = std::move(shape);
  t.storage_->requires_grad = requires_grad;
  return t;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : storage_(std::make_shared<Storage>()) {
  check_extents(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  storage_->data = std::move(values);
  if (requires_grad) storage_->grad.assign(storage_->data.size(), 0.0);
  storage_->shape = std::move(shape);
  storage_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!storage_) throw TapeError("use of an undefined tensor");
  return storage_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  shape();
  return storage_->data;
}

std::span<double> Tensor::data_mut() {
  shape();
  return storage_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return storage_->data[0];
}

bool Tensor::requires_grad() const { return storage_ && storage_->requires_grad; }

std::span<const double> Tensor::grad() const {
  if (!requires_grad()) throw TapeError("tensor has no gradient buffer");
  return storage_->grad;
}

std::span<double> Tensor::grad_mut() const {
  if (!requires_grad()) throw TapeError("tensor has no gradient buffer");
  return storage_->grad;
}

void Tensor::zero_grad() {
  if (requires_grad()) std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(shape(), storage_->data, requires_grad);
}

Tape Tape::inference() {
  Tape t;
  t.recording_ = false;
  return t;
}

void Tape::record(std::function<void()> rule) {
  if (!recording_) return;
  rules_.push_back(std::move(rule));
  spent_ = false;
}

void Tape::backward(const Tensor& loss) {
  if (!recording_) throw TapeError("backward on a non-recording tape");
  if (spent_) throw TapeError("backward called twice without a new forward pass");
  if (!loss.requires_grad()) throw TapeError("loss does not depend on any tensor that requires grad");
  if (loss.numel() != 1) throw DimensionError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  Tensor seed = loss;
  seed.grad_mut()[0] += 1.0;
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
  rules_.clear();
  spent_ = true;
}

}  // namespace xmodal
