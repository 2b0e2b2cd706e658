// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include "rba/train.hpp"

namespace rba {

void TrainConfig::validate() const {
  check(momentum_min > 0 && momentum_min < momentum_max && momentum_max < 1,
        "config: momenta must satisfy 0 < momentum_min < momentum_max < 1, "
        "got ",
        momentum_min, " and ", momentum_max);
  if (eta_max) check(*eta_max > 0, "config: eta_max must be positive");
  check(pct_start > 0 && pct_start < 1,
        "config: pct_start must be inside (0,1), got ", pct_start);
  check(div_factor > 1 && final_div >= 1, "config: bad lr divisors");
  check(beta2 > 0 && beta2 < 1, "config: beta2 must be in (0,1)");
  check(epsilon > 0, "config: epsilon must be positive");
  check(weight_decay >= 0, "config: weight_decay must be non-negative");
  check(epochs >= 0, "config: epochs must be non-negative");
  check(batch_size >= 2,
        "config: batch_size must be at least 2 (batch statistics)");
  check(lr_find_start > 0 && lr_find_start < lr_find_end,
        "config: learning-rate sweep needs 0 < lr_find_start < lr_find_end");
  check(lr_find_steps >= 2, "config: lr_find_steps must be at least 2");
}

void adamw_step(std::map<std::string, Tensor>& params, OptimizerState& opt,
                double lr, double beta1, double beta2, double epsilon,
                double weight_decay) {
  check(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1,
        "adamw: betas must lie in (0,1)");
  opt.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, double(opt.t));
  const double bc2 = 1.0 - std::pow(beta2, double(opt.t));

  for (auto& [name, theta] : params) {
    auto mit = opt.m.find(name);
    if (mit == opt.m.end()) {
      mit = opt.m.emplace(name, Tensor::zeros(theta.shape())).first;
      opt.v.emplace(name, Tensor::zeros(theta.shape()));
    }
    auto& m = mit->second;
    auto& v = opt.v.at(name);
    check(m.shape() == theta.shape(), "adamw: moment shape ",
          shape_str(m.shape()), " does not match parameter '", name, "' ",
          shape_str(theta.shape()));

    auto th = theta.mutable_data();
    auto md = m.mutable_data();
    auto vd = v.mutable_data();
    const std::span<const float> gd = theta.grad();
    for (std::size_t i = 0; i < th.size(); ++i) {
      const double g = gd.empty() ? 0.0 : double(gd[i]);
      check(std::isfinite(g), "adamw: non-finite gradient for parameter '",
            name, "' at element ", i);
      const double m_new = beta1 * double(md[i]) + (1.0 - beta1) * g;
      const double v_new = beta2 * double(vd[i]) + (1.0 - beta2) * g * g;
      md[i] = float(m_new);
      vd[i] = float(v_new);
      const double m_hat = m_new / bc1;
      const double v_hat = v_new / bc2;
      const double step = lr * m_hat / (std::sqrt(v_hat) + epsilon);
      // decoupled decay: applied to the parameter directly
      th[i] = float(double(th[i]) - step - lr * weight_decay * double(th[i]));
    }
  }
}

namespace {

// cosine interpolation from a (t=0) to b (t=1)
double cosine(double a, double b, double t) {
  return b + (a - b) * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

}  // namespace

SchedulePoint one_cycle(std::int64_t step, std::int64_t total_steps,
                        const TrainConfig& cfg) {
  cfg.validate();
  check(cfg.eta_max.has_value(), "one_cycle: eta_max is not resolved");
  check(total_steps >= 2, "one_cycle: need at least 2 steps");
  check(step >= 0 && step < total_steps, "one_cycle: step ", step,
        " outside [0, ", total_steps, ")");
  const double eta = *cfg.eta_max;
  const double lr_start = eta / cfg.div_factor;
  const double lr_final = eta / (cfg.div_factor * cfg.final_div);

  std::int64_t peak = std::llround(cfg.pct_start * double(total_steps));
  peak = std::clamp<std::int64_t>(peak, 1, total_steps - 1);

  SchedulePoint p;
  if (step <= peak) {
    const double t = double(step) / double(peak);
    p.lr = cosine(lr_start, eta, t);
    p.momentum = cosine(cfg.momentum_max, cfg.momentum_min, t);
  } else {
    const double t = double(step - peak) / double(total_steps - 1 - peak);
    p.lr = cosine(eta, lr_final, t);
    p.momentum = cosine(cfg.momentum_min, cfg.momentum_max, t);
  }
  return p;
}

}  // namespace rba
