#include "sslseg/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "sslseg/errors.hpp"

namespace sslseg {

long shape_numel(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

void Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() {
  std::fill(grad.begin(), grad.end(), 0.0);
}

static void validate_shape(const Shape& shape) {
  if (shape.empty())
    throw dimension_error("tensor shape must have at least one extent");
  for (int d : shape)
    if (d <= 0)
      throw dimension_error("tensor extents must be positive, got " +
                            shape_str(shape));
}

TensorPtr make_tensor(Shape shape, double fill, bool requires_grad) {
  validate_shape(shape);
  auto t = std::make_shared<Tensor>();
  t->values.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
  t->shape = std::move(shape);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr make_tensor(Shape shape, std::vector<double> values,
                      bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != static_cast<long>(values.size()))
    throw dimension_error("value count " + std::to_string(values.size()) +
                          " does not fill shape " + shape_str(shape));
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->values = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

void Tape::record(std::function<void()> backward) {
  if (enabled_) nodes_.push_back(std::move(backward));
}

void Tape::backward(const TensorPtr& root) {
  root->grad.assign(root->values.size(), 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void check_finite(const char* op_name, const Tensor& t) {
  for (double v : t.values)
    if (!std::isfinite(v))
      throw numeric_error(std::string(op_name) +
                          ": non-finite value produced");
}

void finish_op(Tape& tape, const char* op_name, const TensorPtr& out,
               bool any_input_grad, std::function<void()> backward) {
  check_finite(op_name, *out);
  if (any_input_grad && tape.recording()) {
    out->requires_grad = true;
    tape.record(std::move(backward));
  }
}

}  // namespace sslseg
