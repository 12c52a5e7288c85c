#include "sslseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "sslseg/errors.hpp"
#include "sslseg/ops.hpp"
#include "sslseg/rng.hpp"

namespace sslseg {

double check_gradients(const GradCheckFn& fn,
                       const std::vector<TensorPtr>& inputs, double eps,
                       std::uint64_t seed) {
  if (inputs.empty())
    throw dimension_error("check_gradients: need at least one input");
  for (const auto& in : inputs) in->requires_grad = true;

  // Shape probe plus fixed projection weights.
  Tape probe;
  probe.set_recording(false);
  auto y0 = fn(probe, inputs);
  Rng wr = derive_rng(seed, 0x11);
  auto w = make_tensor(y0->shape);
  for (auto& v : w->values) v = wr.uniform(0.5, 1.5);

  auto weighted_eval = [&]() {
    Tape t;
    t.set_recording(false);
    auto y = fn(t, inputs);
    if (y->shape != w->shape)
      throw dimension_error(
          "check_gradients: output shape changed between evaluations");
    double s = 0.0;
    for (std::size_t i = 0; i < y->values.size(); ++i)
      s += y->values[i] * w->values[i];
    return s;
  };

  // Analytic pass.
  for (const auto& in : inputs) {
    in->ensure_grad();
    in->zero_grad();
  }
  Tape tape;
  auto y = fn(tape, inputs);
  auto s = sum(tape, mul(tape, y, w));
  tape.backward(s);

  double max_err = 0.0;
  for (const auto& in : inputs) {
    for (std::size_t j = 0; j < in->values.size(); ++j) {
      const double v = in->values[j];
      in->values[j] = v + eps;
      const double sp = weighted_eval();
      in->values[j] = v - eps;
      const double sm = weighted_eval();
      in->values[j] = v;
      const double gn = (sp - sm) / (2.0 * eps);
      const double ga = in->has_grad() ? in->grad[j] : 0.0;
      const double err = std::abs(ga - gn) / std::max(1.0, std::abs(gn));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace sslseg
