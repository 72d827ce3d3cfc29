#pragma once

#include <map>
#include <string>
#include <vector>

#include "pointlang/params.hpp"

namespace pointlang {

// Learning-rate schedule. Steps are 1-based. During warmup the rate ramps
// linearly from warmup_init_lr to base_lr; afterwards either stays constant
// or follows a cosine from base_lr down to min_lr over the remaining steps.
struct Schedule {
  enum Kind { Constant, WarmupCosine };
  Kind kind = Constant;
  double base_lr = 1e-3;
  double min_lr = 0.0;
  double warmup_init_lr = 0.0;
  int warmup_steps = 0;
  int total_steps = 0;  // required for WarmupCosine

  double lr_at(int step) const;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  Schedule schedule;
};

// AdamW with decoupled weight decay: the decay is applied to the parameter
// directly (theta *= 1 - lr*wd) and never enters the moment estimates.
// Denominator is sqrt(v_hat + eps), matching the hand-derived reference
// values in the test suite. Parameters without a gradient entry are left
// untouched (no decay either): that is what freezing means here.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  void step(ParamStore& params,
            const std::map<std::string, std::vector<double>>& grads);

  int step_count() const { return step_; }
  double last_lr() const { return last_lr_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamWConfig cfg_;
  std::map<std::string, Moments> mom_;
  int step_ = 0;
  double last_lr_ = 0.0;
};

}  // namespace pointlang
