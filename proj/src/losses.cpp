#include "sslseg/losses.hpp"

#include <cmath>
#include <memory>

#include "sslseg/errors.hpp"

namespace sslseg {

namespace {

struct PixelStats {
  // Softmax probabilities [N*C*H*W] and per-pixel log-sum-exp [N*H*W].
  std::shared_ptr<std::vector<double>> p;
  std::shared_ptr<std::vector<double>> lse;
  std::vector<double> maxp;  // per pixel
};

void check_labels(const char* op, const TensorPtr& logits,
                  std::span<const std::uint8_t> labels, int ignore_index) {
  if (logits->shape.size() != 4)
    throw dimension_error(std::string(op) + ": expected 4-d logits, got " +
                          shape_str(logits->shape));
  const int C = logits->dim(1);
  if (C < 2)
    throw dimension_error(std::string(op) + ": need at least 2 classes");
  const long pixels =
      static_cast<long>(logits->dim(0)) * logits->dim(2) * logits->dim(3);
  if (static_cast<long>(labels.size()) != pixels)
    throw dimension_error(std::string(op) + ": got " +
                          std::to_string(labels.size()) + " labels for " +
                          std::to_string(pixels) + " pixels");
  for (std::uint8_t v : labels)
    if (v >= C && v != ignore_index)
      throw domain_error(std::string(op) + ": label " + std::to_string(v) +
                         " outside [0, " + std::to_string(C) +
                         ") and not the ignore index");
}

PixelStats pixel_stats(const TensorPtr& logits) {
  const int N = logits->dim(0), C = logits->dim(1);
  const long plane = static_cast<long>(logits->dim(2)) * logits->dim(3);
  PixelStats st;
  st.p = std::make_shared<std::vector<double>>(logits->values.size(), 0.0);
  st.lse = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(N * plane), 0.0);
  st.maxp.assign(static_cast<std::size_t>(N * plane), 0.0);
  for (int n = 0; n < N; ++n) {
    const long base = static_cast<long>(n) * C * plane;
    for (long i = 0; i < plane; ++i) {
      double mx = logits->values[static_cast<std::size_t>(base + i)];
      for (int c = 1; c < C; ++c)
        mx = std::max(mx, logits->values[static_cast<std::size_t>(
                              base + c * plane + i)]);
      double denom = 0.0;
      for (int c = 0; c < C; ++c)
        denom += std::exp(logits->values[static_cast<std::size_t>(
                              base + c * plane + i)] -
                          mx);
      const double lse = mx + std::log(denom);
      (*st.lse)[static_cast<std::size_t>(n * plane + i)] = lse;
      double best = 0.0;
      for (int c = 0; c < C; ++c) {
        const double pv = std::exp(logits->values[static_cast<std::size_t>(
                                       base + c * plane + i)] -
                                   lse);
        (*st.p)[static_cast<std::size_t>(base + c * plane + i)] = pv;
        best = std::max(best, pv);
      }
      st.maxp[static_cast<std::size_t>(n * plane + i)] = best;
    }
  }
  return st;
}

}  // namespace

LossOutput cross_entropy(Tape& tape, const TensorPtr& logits,
                         std::span<const std::uint8_t> labels,
                         int ignore_index) {
  check_labels("cross_entropy", logits, labels, ignore_index);
  const int N = logits->dim(0), C = logits->dim(1);
  const long plane = static_cast<long>(logits->dim(2)) * logits->dim(3);
  PixelStats st = pixel_stats(logits);

  LossOutput out;
  out.weights = st.maxp;
  double acc = 0.0;
  long count = 0;
  for (int n = 0; n < N; ++n)
    for (long i = 0; i < plane; ++i) {
      const std::uint8_t t = labels[static_cast<std::size_t>(n * plane + i)];
      if (t == ignore_index) continue;
      const double zt = logits->values[static_cast<std::size_t>(
          (static_cast<long>(n) * C + t) * plane + i)];
      acc += (*st.lse)[static_cast<std::size_t>(n * plane + i)] - zt;
      ++count;
    }
  out.pixel_count = count;
  out.loss = make_tensor(Shape{1}, count > 0 ? acc / count : 0.0);
  check_finite("cross_entropy", *out.loss);
  if (count == 0) return out;

  auto lab = std::make_shared<std::vector<std::uint8_t>>(labels.begin(),
                                                         labels.end());
  auto loss = out.loss;
  auto p = st.p;
  finish_op(tape, "cross_entropy", loss, logits->requires_grad,
            [logits, loss, lab, p, count, ignore_index]() {
    if (!loss->has_grad() || !logits->requires_grad) return;
    logits->ensure_grad();
    const int N = logits->dim(0), C = logits->dim(1);
    const long plane = static_cast<long>(logits->dim(2)) * logits->dim(3);
    const double up = loss->grad[0] / static_cast<double>(count);
    for (int n = 0; n < N; ++n)
      for (long i = 0; i < plane; ++i) {
        const std::uint8_t t = (*lab)[static_cast<std::size_t>(n * plane + i)];
        if (t == ignore_index) continue;
        for (int c = 0; c < C; ++c) {
          const std::size_t idx = static_cast<std::size_t>(
              (static_cast<long>(n) * C + c) * plane + i);
          const double delta = c == t ? 1.0 : 0.0;
          logits->grad[idx] += up * ((*p)[idx] - delta);
        }
      }
  });
  return out;
}

LossOutput scl(Tape& tape, const TensorPtr& logits,
               std::span<const std::uint8_t> labels, int ignore_index,
               const SclOptions& opts) {
  check_labels("scl", logits, labels, ignore_index);
  if (opts.clamp_log_zero >= 0.0)
    throw domain_error("scl: clamp_log_zero must be negative");
  const int N = logits->dim(0), C = logits->dim(1);
  const long plane = static_cast<long>(logits->dim(2)) * logits->dim(3);
  const long pixels = static_cast<long>(N) * plane;
  if (opts.fixed_weights &&
      static_cast<long>(opts.fixed_weights->size()) != pixels)
    throw dimension_error("scl: fixed_weights size does not match pixels");
  PixelStats st = pixel_stats(logits);

  // The weight map reported (and used) per pixel. Treated as constant in
  // backward: the envelope it came from does not receive gradient.
  auto weights = std::make_shared<std::vector<double>>(st.maxp);
  if (opts.unit_weight)
    weights->assign(static_cast<std::size_t>(pixels), 1.0);
  else if (opts.fixed_weights)
    *weights = *opts.fixed_weights;

  LossOutput out;
  out.weights = *weights;
  const double A = opts.clamp_log_zero;
  double acc = 0.0;
  long count = 0;
  for (int n = 0; n < N; ++n)
    for (long i = 0; i < plane; ++i) {
      const std::size_t pix = static_cast<std::size_t>(n * plane + i);
      const std::uint8_t t = labels[pix];
      if (t == ignore_index) continue;
      const double zt = logits->values[static_cast<std::size_t>(
          (static_cast<long>(n) * C + t) * plane + i)];
      const double nlp = (*st.lse)[pix] - zt;  // -log p_t
      const double pt = (*st.p)[static_cast<std::size_t>(
          (static_cast<long>(n) * C + t) * plane + i)];
      const double w = (*weights)[pix];
      acc += w * nlp + (1.0 - w) * (-A) * (1.0 - pt);
      ++count;
    }
  out.pixel_count = count;
  out.loss = make_tensor(Shape{1}, count > 0 ? acc / count : 0.0);
  check_finite("scl", *out.loss);
  if (count == 0) return out;

  auto lab = std::make_shared<std::vector<std::uint8_t>>(labels.begin(),
                                                         labels.end());
  auto loss = out.loss;
  auto p = st.p;
  finish_op(tape, "scl", loss, logits->requires_grad,
            [logits, loss, lab, p, weights, count, ignore_index, A]() {
    if (!loss->has_grad() || !logits->requires_grad) return;
    logits->ensure_grad();
    const int N = logits->dim(0), C = logits->dim(1);
    const long plane = static_cast<long>(logits->dim(2)) * logits->dim(3);
    const double up = loss->grad[0] / static_cast<double>(count);
    for (int n = 0; n < N; ++n)
      for (long i = 0; i < plane; ++i) {
        const std::size_t pix = static_cast<std::size_t>(n * plane + i);
        const std::uint8_t t = (*lab)[pix];
        if (t == ignore_index) continue;
        const double pt = (*p)[static_cast<std::size_t>(
            (static_cast<long>(n) * C + t) * plane + i)];
        const double w = (*weights)[pix];
        const double coeff = w - (1.0 - w) * A * pt;
        for (int c = 0; c < C; ++c) {
          const std::size_t idx = static_cast<std::size_t>(
              (static_cast<long>(n) * C + c) * plane + i);
          const double delta = c == t ? 1.0 : 0.0;
          logits->grad[idx] += up * ((*p)[idx] - delta) * coeff;
        }
      }
  });
  return out;
}

}  // namespace sslseg
