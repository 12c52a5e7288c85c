#include "sslseg/dsbn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "sslseg/errors.hpp"

namespace sslseg {

DsbnState DsbnState::create(int channels, double momentum, double epsilon) {
  if (channels < 1)
    throw dimension_error("DsbnState: channels must be positive");
  if (momentum < 0.0 || momentum >= 1.0)
    throw domain_error("DsbnState: momentum must lie in [0, 1)");
  if (epsilon <= 0.0) throw domain_error("DsbnState: epsilon must be positive");
  DsbnState s;
  s.gamma = make_tensor({channels}, 1.0, true);
  s.beta = make_tensor({channels}, 0.0, true);
  s.weak_mean.assign(static_cast<std::size_t>(channels), 0.0);
  s.weak_var.assign(static_cast<std::size_t>(channels), 1.0);
  s.strong_mean.assign(static_cast<std::size_t>(channels), 0.0);
  s.strong_var.assign(static_cast<std::size_t>(channels), 1.0);
  s.momentum = momentum;
  s.epsilon = epsilon;
  return s;
}

namespace {

void check_input(const TensorPtr& x, const DsbnState& bn) {
  if (x->shape.size() != 4)
    throw dimension_error("bn: expected a 4-d tensor, got " +
                          shape_str(x->shape));
  if (x->dim(1) != bn.channels())
    throw dimension_error("bn: input has " + std::to_string(x->dim(1)) +
                          " channels, state expects " +
                          std::to_string(bn.channels()));
}

// y = gamma * (x - mean) / sqrt(var + eps) + beta with fixed statistics;
// shared by eval mode and the frozen training mode.
void normalize_fixed(const TensorPtr& x, const DsbnState& bn,
                     const std::vector<double>& mean,
                     const std::vector<double>& var, TensorPtr& out) {
  const int N = x->dim(0), C = x->dim(1);
  const long plane = static_cast<long>(x->dim(2)) * x->dim(3);
  for (int c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(var[static_cast<std::size_t>(c)] +
                                       bn.epsilon);
    const double g = bn.gamma->values[static_cast<std::size_t>(c)];
    const double b = bn.beta->values[static_cast<std::size_t>(c)];
    const double m = mean[static_cast<std::size_t>(c)];
    for (int n = 0; n < N; ++n) {
      const long base = (static_cast<long>(n) * C + c) * plane;
      for (long i = 0; i < plane; ++i) {
        const std::size_t idx = static_cast<std::size_t>(base + i);
        out->values[idx] = g * (x->values[idx] - m) * inv + b;
      }
    }
  }
}

}  // namespace

TensorPtr bn_forward_train(Tape& tape, const TensorPtr& x, DsbnState& bn,
                           BranchTag tag, BnMode mode) {
  check_input(x, bn);
  const int N = x->dim(0), C = x->dim(1);
  const long plane = static_cast<long>(x->dim(2)) * x->dim(3);
  const long m = static_cast<long>(N) * plane;
  if (m < 2)
    throw dimension_error(
        "bn_forward_train: need more than one element per channel, got " +
        std::to_string(m));

  auto out = make_tensor(x->shape);
  const bool needs_grad =
      x->requires_grad || bn.gamma->requires_grad || bn.beta->requires_grad;

  if (mode == BnMode::Frozen) {
    normalize_fixed(x, bn, bn.weak_mean, bn.weak_var, out);
    // Backward with constant statistics: dx = g * gamma / sqrt(var + eps).
    auto gamma = bn.gamma;
    auto beta = bn.beta;
    std::vector<double> mean = bn.weak_mean;
    std::vector<double> var = bn.weak_var;
    const double eps = bn.epsilon;
    finish_op(tape, "bn_forward_train", out, needs_grad,
              [x, gamma, beta, out, mean, var, eps]() {
      if (!out->has_grad()) return;
      const int N = x->dim(0), C = x->dim(1);
      const long plane = static_cast<long>(x->dim(2)) * x->dim(3);
      for (int c = 0; c < C; ++c) {
        const std::size_t cc = static_cast<std::size_t>(c);
        const double inv = 1.0 / std::sqrt(var[cc] + eps);
        const double g = gamma->values[cc];
        double dg = 0.0, db = 0.0;
        for (int n = 0; n < N; ++n) {
          const long base = (static_cast<long>(n) * C + c) * plane;
          for (long i = 0; i < plane; ++i) {
            const std::size_t idx = static_cast<std::size_t>(base + i);
            const double up = out->grad[idx];
            dg += up * (x->values[idx] - mean[cc]) * inv;
            db += up;
            if (x->requires_grad) {
              x->ensure_grad();
              x->grad[idx] += up * g * inv;
            }
          }
        }
        if (gamma->requires_grad) {
          gamma->ensure_grad();
          gamma->grad[cc] += dg;
        }
        if (beta->requires_grad) {
          beta->ensure_grad();
          beta->grad[cc] += db;
        }
      }
    });
    return out;
  }

  // Batch statistics (biased variance) and normalized activations.
  auto batch_mean = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(C), 0.0);
  auto inv_std = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(C), 0.0);
  auto xhat = std::make_shared<std::vector<double>>(x->values.size(), 0.0);

  for (int c = 0; c < C; ++c) {
    const std::size_t cc = static_cast<std::size_t>(c);
    double s = 0.0;
    for (int n = 0; n < N; ++n) {
      const long base = (static_cast<long>(n) * C + c) * plane;
      for (long i = 0; i < plane; ++i)
        s += x->values[static_cast<std::size_t>(base + i)];
    }
    const double mu = s / static_cast<double>(m);
    double sq = 0.0;
    for (int n = 0; n < N; ++n) {
      const long base = (static_cast<long>(n) * C + c) * plane;
      for (long i = 0; i < plane; ++i) {
        const double d = x->values[static_cast<std::size_t>(base + i)] - mu;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(m);
    if (!std::isfinite(mu) || !std::isfinite(var))
      throw numeric_error("bn_forward_train: non-finite batch statistics");
    const double inv = 1.0 / std::sqrt(var + bn.epsilon);
    (*batch_mean)[cc] = mu;
    (*inv_std)[cc] = inv;
    const double g = bn.gamma->values[cc];
    const double b = bn.beta->values[cc];
    for (int n = 0; n < N; ++n) {
      const long base = (static_cast<long>(n) * C + c) * plane;
      for (long i = 0; i < plane; ++i) {
        const std::size_t idx = static_cast<std::size_t>(base + i);
        const double xh = (x->values[idx] - mu) * inv;
        (*xhat)[idx] = xh;
        out->values[idx] = g * xh + b;
      }
    }

    // Routed running update; Shared mode sends every branch to the weak bank.
    const bool to_strong = (mode == BnMode::Dsbn && tag == BranchTag::Strong);
    std::vector<double>& rm = to_strong ? bn.strong_mean : bn.weak_mean;
    std::vector<double>& rv = to_strong ? bn.strong_var : bn.weak_var;
    rm[cc] = bn.momentum * rm[cc] + (1.0 - bn.momentum) * mu;
    rv[cc] = bn.momentum * rv[cc] + (1.0 - bn.momentum) * var;
  }
  if (mode == BnMode::Dsbn && tag == BranchTag::Strong)
    ++bn.strong_updates;
  else
    ++bn.weak_updates;

  auto gamma = bn.gamma;
  auto beta = bn.beta;
  finish_op(tape, "bn_forward_train", out, needs_grad,
            [x, gamma, beta, out, xhat, inv_std]() {
    if (!out->has_grad()) return;
    const int N = x->dim(0), C = x->dim(1);
    const long plane = static_cast<long>(x->dim(2)) * x->dim(3);
    const double m = static_cast<double>(static_cast<long>(N) * plane);
    for (int c = 0; c < C; ++c) {
      const std::size_t cc = static_cast<std::size_t>(c);
      double sum_g = 0.0, sum_gx = 0.0;
      for (int n = 0; n < N; ++n) {
        const long base = (static_cast<long>(n) * C + c) * plane;
        for (long i = 0; i < plane; ++i) {
          const std::size_t idx = static_cast<std::size_t>(base + i);
          sum_g += out->grad[idx];
          sum_gx += out->grad[idx] * (*xhat)[idx];
        }
      }
      if (gamma->requires_grad) {
        gamma->ensure_grad();
        gamma->grad[cc] += sum_gx;
      }
      if (beta->requires_grad) {
        beta->ensure_grad();
        beta->grad[cc] += sum_g;
      }
      if (x->requires_grad) {
        x->ensure_grad();
        const double a = gamma->values[cc] * (*inv_std)[cc];
        const double mg = sum_g / m;
        const double mgx = sum_gx / m;
        for (int n = 0; n < N; ++n) {
          const long base = (static_cast<long>(n) * C + c) * plane;
          for (long i = 0; i < plane; ++i) {
            const std::size_t idx = static_cast<std::size_t>(base + i);
            x->grad[idx] +=
                a * (out->grad[idx] - mg - (*xhat)[idx] * mgx);
          }
        }
      }
    }
  });
  return out;
}

TensorPtr bn_forward_eval(const TensorPtr& x, const DsbnState& bn) {
  check_input(x, bn);
  auto out = make_tensor(x->shape);
  normalize_fixed(x, bn, bn.weak_mean, bn.weak_var, out);
  check_finite("bn_forward_eval", *out);
  return out;
}

void init_pbn(DsbnState& bn) {
  bn.strong_mean = bn.weak_mean;
  bn.strong_var = bn.weak_var;
  bn.strong_updates = 0;
}

StatsReport stats_report(
    const std::vector<std::pair<std::string, const DsbnState*>>& layers) {
  StatsReport rep;
  double sum_mean = 0.0, sum_logvar = 0.0;
  long total_channels = 0;
  long total_strong_updates = 0;
  for (const auto& [name, bn] : layers) {
    const int C = bn->channels();
    total_strong_updates += bn->strong_updates;
    double layer_sum = 0.0;
    for (int c = 0; c < C; ++c) {
      const std::size_t cc = static_cast<std::size_t>(c);
      rep.rows.push_back({name, c, bn->weak_mean[cc], bn->weak_var[cc],
                          bn->strong_mean[cc], bn->strong_var[cc]});
      if (bn->strong_updates > 0) {
        const double dm = std::abs(bn->weak_mean[cc] - bn->strong_mean[cc]);
        const double dv =
            std::abs(std::log(std::max(bn->weak_var[cc], 1e-300)) -
                     std::log(std::max(bn->strong_var[cc], 1e-300)));
        sum_mean += dm;
        sum_logvar += dv;
        layer_sum += dm + dv;
      }
    }
    total_channels += C;
    rep.per_layer.emplace_back(name, C > 0 ? layer_sum / C : 0.0);
  }
  if (total_channels > 0) {
    rep.mean_abs_mean_diff = sum_mean / static_cast<double>(total_channels);
    rep.mean_abs_logvar_diff =
        sum_logvar / static_cast<double>(total_channels);
  }
  rep.strong_at_init = total_strong_updates == 0;
  return rep;
}

void write_stats_csv(const std::string& path, const StatsReport& report) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw io_error("cannot open " + path + " for writing");
  std::fprintf(f, "layer,channel,weak_mean,weak_var,strong_mean,strong_var\n");
  for (const auto& r : report.rows)
    std::fprintf(f, "%s,%d,%.17g,%.17g,%.17g,%.17g\n", r.layer.c_str(),
                 r.channel, r.weak_mean, r.weak_var, r.strong_mean,
                 r.strong_var);
  std::fclose(f);
}

}  // namespace sslseg
