#include "pointlang/optim.hpp"

#include <cmath>

namespace pointlang {

double Schedule::lr_at(int step) const {
  if (step < 1) fail("Schedule::lr_at: step must be >= 1");
  if (warmup_steps > 0 && step <= warmup_steps)
    return warmup_init_lr +
           (base_lr - warmup_init_lr) * double(step) / double(warmup_steps);
  if (kind == WarmupCosine) {
    if (total_steps <= warmup_steps) return base_lr;
    double t = double(step - warmup_steps) / double(total_steps - warmup_steps);
    t = std::min(t, 1.0);
    return min_lr + (base_lr - min_lr) * 0.5 * (1.0 + std::cos(M_PI * t));
  }
  return base_lr;
}

void AdamW::step(ParamStore& params,
                 const std::map<std::string, std::vector<double>>& grads) {
  ++step_;
  double lr = cfg_.schedule.lr_at(step_);
  last_lr_ = lr;
  double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
  double bc2 = 1.0 - std::pow(cfg_.beta2, step_);

  for (const auto& [name, g] : grads) {
    const Tensor& theta = params.at(name);
    if (std::int64_t(g.size()) != theta.size())
      fail("AdamW: gradient size ", g.size(), " != parameter size ",
           theta.size(), " for '", name, "'");
    for (double x : g)
      if (!std::isfinite(x))
        fail<NumericError>("AdamW: non-finite gradient for '", name, "'");

    auto& mom = mom_[name];
    if (mom.m.empty()) {
      mom.m.assign(g.size(), 0.0);
      mom.v.assign(g.size(), 0.0);
    }
    std::vector<double> next(theta.vec());
    for (std::size_t i = 0; i < g.size(); ++i) {
      double gi = g[i];
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * gi;
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      double mhat = mom.m[i] / bc1;
      double vhat = mom.v[i] / bc2;
      double theta_old = next[i];
      next[i] = theta_old - lr * mhat / std::sqrt(vhat + cfg_.eps) -
                lr * cfg_.weight_decay * theta_old;
    }
    params.set(name, Tensor::from(theta.shape(), std::move(next)));
  }
}

}  // namespace pointlang
