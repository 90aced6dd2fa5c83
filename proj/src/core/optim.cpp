#include "core/optim.hpp"

#include <cmath>

namespace ov::optim {

double cosine_warmup_lr(int64_t step, const ScheduleSpec& spec) {
  OV_REQUIRE(spec.warmup_steps >= 0 && spec.warmup_steps <= spec.total_steps,
             "schedule: 0 <= warmup <= total violated");
  OV_REQUIRE(spec.min_lr <= spec.base_lr, "schedule: min_lr > base_lr");
  if (step >= spec.total_steps) return spec.min_lr;
  if (step < spec.warmup_steps)
    return spec.base_lr * static_cast<double>(step) /
           static_cast<double>(spec.warmup_steps);
  int64_t span = spec.total_steps - spec.warmup_steps;
  if (span == 0) return spec.min_lr;
  double t = static_cast<double>(step - spec.warmup_steps) /
             static_cast<double>(span);
  return spec.min_lr +
         0.5 * (spec.base_lr - spec.min_lr) * (1.0 + std::cos(M_PI * t));
}

void adam_step(nn::ParamSet& params, AdamState& state, double lr, double beta1,
               double beta2, double eps, double weight_decay) {
  state.step += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    OV_REQUIRE(p.has_grad(), "adam_step: missing grad for parameter '", name,
               "'");
    auto mit = state.m.find(name);
    if (mit == state.m.end()) {
      state.m[name] = Tensor::zeros(p.shape(), p.dtype());
      state.v[name] = Tensor::zeros(p.shape(), p.dtype());
    }
    Tensor& m = state.m[name];
    Tensor& v = state.v[name];
    const Storage& g = *p.grad_ptr();
    dispatch_dtype(p.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pp = p.data<T>();
      auto pm = m.data<T>();
      auto pv = v.data<T>();
      auto pg = g.span<T>();
      for (size_t i = 0; i < pp.size(); ++i) {
        double gi = pg[i];
        double mi = beta1 * pm[i] + (1.0 - beta1) * gi;
        double vi = beta2 * pv[i] + (1.0 - beta2) * gi * gi;
        pm[i] = static_cast<T>(mi);
        pv[i] = static_cast<T>(vi);
        double mhat = mi / bc1;
        double vhat = vi / bc2;
        double upd = lr * mhat / (std::sqrt(vhat) + eps);
        pp[i] = static_cast<T>(pp[i] - upd - lr * weight_decay * pp[i]);
      }
    });
  }
}

namespace {
bool is_bias_or_norm(const std::string& name) {
  auto ends_with = [&](const char* suf) {
    size_t n = std::string(suf).size();
    return name.size() >= n && name.compare(name.size() - n, n, suf) == 0;
  };
  return ends_with(".bias") || ends_with(".gamma") || ends_with(".beta") ||
         ends_with(".b_ih") || ends_with(".b_hh");
}
}  // namespace

void lars_step(nn::ParamSet& params, LarsState& state, double lr,
               double weight_decay, double trust_coef) {
  state.step += 1;
  for (auto& [name, p] : params) {
    OV_REQUIRE(p.has_grad(), "lars_step: missing grad for parameter '", name,
               "'");
    const Storage& g = *p.grad_ptr();
    bool plain = is_bias_or_norm(name);
    dispatch_dtype(p.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pp = p.data<T>();
      auto pg = g.span<T>();
      if (plain) {
        for (size_t i = 0; i < pp.size(); ++i)
          pp[i] = static_cast<T>(pp[i] - lr * pg[i]);
        return;
      }
      double wn = 0, gn = 0;
      for (size_t i = 0; i < pp.size(); ++i) {
        wn += static_cast<double>(pp[i]) * pp[i];
        gn += static_cast<double>(pg[i]) * pg[i];
      }
      wn = std::sqrt(wn);
      gn = std::sqrt(gn);
      double denom = gn + weight_decay * wn;
      // Zero-norm parameter (or vanished gradient): trust ratio defined as 1.
      double trust = (wn == 0 || denom == 0) ? 1.0 : wn / denom;
      double local_lr = lr * trust_coef * trust;
      for (size_t i = 0; i < pp.size(); ++i)
        pp[i] = static_cast<T>(pp[i] -
                               local_lr * (pg[i] + weight_decay * pp[i]));
    });
  }
}

}  // namespace ov::optim
