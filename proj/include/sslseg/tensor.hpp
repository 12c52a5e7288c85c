#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace sslseg {

using Shape = std::vector<int>;

long shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense 64-bit float tensor. Values are produced once by the op that creates
// the tensor; grad stays empty until the first backward accumulation.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;

  long numel() const { return static_cast<long>(values.size()); }
  bool has_grad() const { return !grad.empty(); }
  void ensure_grad();
  void zero_grad();

  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  // Row-major NCHW offset; the tensor must be 4-d.
  long offset4(int n, int c, int y, int x) const {
    return ((static_cast<long>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x;
  }
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(Shape shape, double fill = 0.0,
                      bool requires_grad = false);
TensorPtr make_tensor(Shape shape, std::vector<double> values,
                      bool requires_grad = false);

// Backward closures of one forward pass, replayed in exact reverse recording
// order. Fan-out is handled by additive accumulation into Tensor::grad, so
// d(x + x)/dx comes out as 2.
class Tape {
 public:
  bool recording() const { return enabled_; }
  void set_recording(bool on) { enabled_ = on; }

  void record(std::function<void()> backward);

  // Seeds root->grad with ones, then replays every closure in reverse.
  void backward(const TensorPtr& root);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
  bool enabled_ = true;
};

// Raises numeric_error naming op_name if any value in t is NaN or infinite.
void check_finite(const char* op_name, const Tensor& t);

// Shared op epilogue: finiteness check, grad flag propagation, closure
// recording. Records nothing when the tape is not recording or no input
// carries gradients.
void finish_op(Tape& tape, const char* op_name, const TensorPtr& out,
               bool any_input_grad, std::function<void()> backward);

}  // namespace sslseg
