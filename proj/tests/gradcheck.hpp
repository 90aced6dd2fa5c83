#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace ovtest {

using BuildFn =
    std::function<ov::Tensor(const std::vector<ov::Tensor>& inputs)>;

struct GradCheckResult {
  bool ok = true;
  double worst_rel = 0;
  std::string detail;
};

// Central finite differences in f64 against the analytic backward pass.
// Independent of the autodiff path: FD only uses forward evaluations.
inline GradCheckResult check_gradients(const BuildFn& f,
                                       std::vector<ov::Tensor> inputs,
                                       double h = 1e-5, double tol = 1e-4) {
  GradCheckResult res;
  for (auto& t : inputs) t.set_requires_grad(true);
  ov::Tensor loss = f(inputs);
  loss.backward();

  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    std::vector<double> g(t.numel(), 0.0);
    if (t.grad_ptr())
      for (int64_t i = 0; i < t.numel(); ++i) g[i] = t.grad_ptr()->at(i);
    analytic.push_back(std::move(g));
  }

  auto eval = [&]() {
    ov::NoGradGuard ng;
    return f(inputs).item();
  };

  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    ov::Tensor& t = inputs[ti];
    for (int64_t i = 0; i < t.numel(); ++i) {
      double orig = t.at(i);
      t.set(i, orig + h);
      double fp = eval();
      t.set(i, orig - h);
      double fm = eval();
      t.set(i, orig);
      double fd = (fp - fm) / (2 * h);
      double a = analytic[ti][i];
      double denom = std::max(std::abs(a), std::abs(fd));
      if (denom < 1e-7) continue;  // both effectively zero
      double rel = std::abs(a - fd) / denom;
      res.worst_rel = std::max(res.worst_rel, rel);
      if (rel >= tol) {
        res.ok = false;
        if (res.detail.empty())
          res.detail = ov::str("input ", ti, " elem ", i, ": analytic ", a,
                               " vs fd ", fd, " rel ", rel);
      }
    }
  }
  return res;
}

}  // namespace ovtest
