#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "core/nn.hpp"

namespace ov::optim {

struct ScheduleSpec {
  double base_lr = 0;
  double min_lr = 0;
  int64_t warmup_steps = 0;
  int64_t total_steps = 0;
};

// 0 at step 0, linear to base_lr at warmup_steps, cosine to min_lr at
// total_steps, clamped to min_lr beyond.
double cosine_warmup_lr(int64_t step, const ScheduleSpec& spec);

struct AdamState {
  std::map<std::string, Tensor> m;  // first moments
  std::map<std::string, Tensor> v;  // second moments
  int64_t step = 0;
};

// Adam with decoupled weight decay. Every parameter must carry a grad.
void adam_step(nn::ParamSet& params, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
               double weight_decay = 0.0);

struct LarsState {
  int64_t step = 0;
};

// Trust-ratio scaled SGD. Parameters whose names mark them as bias or norm
// affine terms take a plain SGD step without trust scaling or weight decay.
void lars_step(nn::ParamSet& params, LarsState& state, double lr,
               double weight_decay, double trust_coef = 0.001);

enum class OptKind { adam, lars };

// Selectable optimizer facade used by the training loops.
struct Optimizer {
  OptKind kind = OptKind::adam;
  AdamState adam;
  LarsState lars;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;
  double trust_coef = 0.001;
  void step(nn::ParamSet& params, double lr) {
    if (kind == OptKind::adam)
      adam_step(params, adam, lr, beta1, beta2, eps, weight_decay);
    else
      lars_step(params, lars, lr, weight_decay, trust_coef);
  }
};

}  // namespace ov::optim
