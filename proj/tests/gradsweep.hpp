#pragma once

// Random-instance gradient sweep over every differentiable op and both
// recurrent cells. Shared by the unit tests (few instances) and the
// acceptance suite (>= 20 instances per op).

#include <functional>
#include <string>
#include <vector>

#include "core/ops.hpp"
#include "core/rng.hpp"
#include "gradcheck.hpp"

namespace ovtest {

using ov::DType;
using ov::RngStream;
using ov::Shape;
using ov::Tensor;
namespace ops = ov::ops;

inline Tensor rnd(RngStream& rng, const Shape& s, double lo = -1.0,
                  double hi = 1.0) {
  return Tensor::rand_uniform(s, rng, lo, hi, DType::f64);
}

// Keeps values away from relu/clamp kinks so finite differences stay valid.
inline Tensor rnd_away_from(RngStream& rng, const Shape& s, double kink,
                            double margin = 5e-3) {
  Tensor t = rnd(rng, s, -1.0, 1.0);
  for (int64_t i = 0; i < t.numel(); ++i) {
    double v = t.at(i);
    if (std::abs(v - kink) < margin)
      t.set(i, v >= kink ? kink + margin : kink - margin);
  }
  return t;
}

// Scalar probe: mean of elementwise product with a fixed random tensor, so
// the upstream gradient is non-uniform and indexing bugs can't cancel.
inline Tensor probed(const Tensor& out, RngStream& rng) {
  Tensor w = rnd(rng, out.shape(), -1.0, 1.0);
  return ops::mean_all(ops::mul(out, w));
}

struct SweepCase {
  std::string name;
  std::function<GradCheckResult(uint64_t seed)> run;
};

inline std::vector<SweepCase> gradcheck_cases() {
  std::vector<SweepCase> cases;
  auto add_case = [&](std::string name,
                      std::function<GradCheckResult(uint64_t)> fn) {
    cases.push_back({std::move(name), std::move(fn)});
  };

  add_case("add", [](uint64_t seed) {
    RngStream rng(seed);
    int n = static_cast<int>(rng.uniform_int(1, 6));
    int m = static_cast<int>(rng.uniform_int(1, 6));
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::add(in[0], in[1]), p);
        },
        {rnd(rng, {n, m}), rnd(rng, {n, m})});
  });
  add_case("sub", [](uint64_t seed) {
    RngStream rng(seed);
    int n = static_cast<int>(rng.uniform_int(1, 6));
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::sub(in[0], in[1]), p);
        },
        {rnd(rng, {n, 3}), rnd(rng, {n, 3})});
  });
  add_case("mul", [](uint64_t seed) {
    RngStream rng(seed);
    int n = static_cast<int>(rng.uniform_int(1, 6));
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::mul(in[0], in[1]), p);
        },
        {rnd(rng, {n, 4}), rnd(rng, {n, 4})});
  });
  add_case("add_scalar", [](uint64_t seed) {
    RngStream rng(seed);
    double s = rng.uniform(-2, 2);
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&, s](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::add_scalar(in[0], s), p);
        },
        {rnd(rng, {3, 5})});
  });
  add_case("mul_scalar", [](uint64_t seed) {
    RngStream rng(seed);
    double s = rng.uniform(-2, 2);
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&, s](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::mul_scalar(in[0], s), p);
        },
        {rnd(rng, {4, 4})});
  });
  add_case("relu", [](uint64_t seed) {
    RngStream rng(seed);
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::relu(in[0]), p);
        },
        {rnd_away_from(rng, {5, 5}, 0.0)});
  });
  add_case("clamp_min", [](uint64_t seed) {
    RngStream rng(seed);
    double c = rng.uniform(-0.5, 0.5);
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&, c](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::clamp_min(in[0], c), p);
        },
        {rnd_away_from(rng, {4, 6}, c)});
  });
  add_case("exp", [](uint64_t seed) {
    RngStream rng(seed);
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::exp(in[0]), p);
        },
        {rnd(rng, {3, 4})});
  });
  add_case("log", [](uint64_t seed) {
    RngStream rng(seed);
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::log(in[0]), p);
        },
        {rnd(rng, {3, 4}, 0.3, 2.0)});
  });
  add_case("matmul", [](uint64_t seed) {
    RngStream rng(seed);
    int m = static_cast<int>(rng.uniform_int(1, 6));
    int k = static_cast<int>(rng.uniform_int(1, 6));
    int n = static_cast<int>(rng.uniform_int(1, 6));
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::matmul(in[0], in[1]), p);
        },
        {rnd(rng, {m, k}), rnd(rng, {k, n})});
  });
  add_case("linear", [](uint64_t seed) {
    RngStream rng(seed);
    int b = static_cast<int>(rng.uniform_int(1, 6));
    int i = static_cast<int>(rng.uniform_int(1, 6));
    int o = static_cast<int>(rng.uniform_int(1, 6));
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::linear(in[0], in[1], in[2]), p);
        },
        {rnd(rng, {b, i}), rnd(rng, {o, i}), rnd(rng, {o})});
  });
  add_case("conv2d", [](uint64_t seed) {
    RngStream rng(seed);
    int n = static_cast<int>(rng.uniform_int(1, 2));
    int c = static_cast<int>(rng.uniform_int(1, 3));
    int o = static_cast<int>(rng.uniform_int(1, 3));
    int hw = static_cast<int>(rng.uniform_int(3, 6));
    int k = static_cast<int>(rng.uniform_int(1, 3));
    int stride = static_cast<int>(rng.uniform_int(1, 2));
    int pad = static_cast<int>(rng.uniform_int(0, 1));
    if (hw + 2 * pad < k) pad = k;
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&, stride, pad](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::conv2d(in[0], in[1], in[2], stride, pad), p);
        },
        {rnd(rng, {n, c, hw, hw}), rnd(rng, {o, c, k, k}), rnd(rng, {o})});
  });
  add_case("group_norm", [](uint64_t seed) {
    RngStream rng(seed);
    int n = static_cast<int>(rng.uniform_int(1, 2));
    int g = static_cast<int>(rng.uniform_int(1, 2));
    int c = g * static_cast<int>(rng.uniform_int(1, 3));
    int hw = static_cast<int>(rng.uniform_int(2, 4));
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&, g](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::group_norm(in[0], g, in[1], in[2]), p);
        },
        {rnd(rng, {n, c, hw, hw}), rnd(rng, {c}, 0.5, 1.5),
         rnd(rng, {c}, -0.5, 0.5)});
  });
  add_case("softmax_with_temperature", [](uint64_t seed) {
    RngStream rng(seed);
    double taus[3] = {0.04, 0.1, 1.0};
    double tau = taus[rng.uniform_int(0, 2)];
    int b = static_cast<int>(rng.uniform_int(1, 4));
    int k = static_cast<int>(rng.uniform_int(2, 6));
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&, tau](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::softmax_with_temperature(in[0], tau), p);
        },
        {rnd(rng, {b, k})});
  });
  add_case("sum_axes", [](uint64_t seed) {
    RngStream rng(seed);
    int a = static_cast<int>(rng.uniform_int(0, 2));
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&, a](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::sum(in[0], {a}), p);
        },
        {rnd(rng, {3, 4, 2})});
  });
  add_case("mean_axes", [](uint64_t seed) {
    RngStream rng(seed);
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::mean(in[0], {0, 2}), p);
        },
        {rnd(rng, {3, 4, 2})});
  });
  add_case("l2_normalize", [](uint64_t seed) {
    RngStream rng(seed);
    int b = static_cast<int>(rng.uniform_int(1, 4));
    int k = static_cast<int>(rng.uniform_int(2, 6));
    Tensor x = rnd(rng, {b, k}, -1.0, 1.0);
    // keep rows clear of the eps clamp
    for (int r = 0; r < b; ++r) x.set(static_cast<int64_t>(r) * k, x.at(static_cast<int64_t>(r) * k) + 2.0);
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::l2_normalize(in[0]), p);
        },
        {x});
  });
  add_case("weight_normalized_linear", [](uint64_t seed) {
    RngStream rng(seed);
    int b = static_cast<int>(rng.uniform_int(1, 4));
    int i = static_cast<int>(rng.uniform_int(2, 5));
    int o = static_cast<int>(rng.uniform_int(1, 5));
    Tensor v = rnd(rng, {o, i}, -1.0, 1.0);
    for (int r = 0; r < o; ++r) v.set(static_cast<int64_t>(r) * i, v.at(static_cast<int64_t>(r) * i) + 2.0);
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::weight_normalized_linear(in[0], in[1], in[2]), p);
        },
        {rnd(rng, {b, i}), v, rnd(rng, {o}, 0.5, 1.5)});
  });
  add_case("average_pool", [](uint64_t seed) {
    RngStream rng(seed);
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::average_pool(in[0]), p);
        },
        {rnd(rng, {2, 3, 4, 4})});
  });
  add_case("embedding_lookup", [](uint64_t seed) {
    RngStream rng(seed);
    int v = static_cast<int>(rng.uniform_int(2, 6));
    int d = static_cast<int>(rng.uniform_int(1, 5));
    std::vector<int> ids;
    for (int i = 0; i < 4; ++i)
      ids.push_back(static_cast<int>(rng.uniform_int(0, v - 1)));
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&, ids](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::embedding_lookup(in[0], ids), p);
        },
        {rnd(rng, {v, d})});
  });
  add_case("concat", [](uint64_t seed) {
    RngStream rng(seed);
    int axis = static_cast<int>(rng.uniform_int(0, 1));
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&, axis](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::concat({in[0], in[1], in[2]}, axis), p);
        },
        axis == 0 ? std::vector<Tensor>{rnd(rng, {2, 3}), rnd(rng, {1, 3}),
                                        rnd(rng, {4, 3})}
                  : std::vector<Tensor>{rnd(rng, {3, 2}), rnd(rng, {3, 1}),
                                        rnd(rng, {3, 4})});
  });
  add_case("reshape", [](uint64_t seed) {
    RngStream rng(seed);
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::reshape(in[0], {6, 2}), p);
        },
        {rnd(rng, {3, 4})});
  });
  add_case("slice", [](uint64_t seed) {
    RngStream rng(seed);
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::slice(in[0], 1, 1, 3), p);
        },
        {rnd(rng, {4, 6})});
  });
  add_case("lstm_cell", [](uint64_t seed) {
    RngStream rng(seed);
    int b = static_cast<int>(rng.uniform_int(1, 3));
    int i = static_cast<int>(rng.uniform_int(1, 4));
    int h = static_cast<int>(rng.uniform_int(1, 4));
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          auto [ho, co] = ops::lstm_cell(in[0], in[1], in[2], in[3], in[4],
                                         in[5], in[6]);
          return ops::add(probed(ho, p), probed(co, p));
        },
        {rnd(rng, {b, i}), rnd(rng, {b, h}), rnd(rng, {b, h}),
         rnd(rng, {4 * h, i}), rnd(rng, {4 * h, h}), rnd(rng, {4 * h}),
         rnd(rng, {4 * h})});
  });
  add_case("gru_cell", [](uint64_t seed) {
    RngStream rng(seed);
    int b = static_cast<int>(rng.uniform_int(1, 3));
    int i = static_cast<int>(rng.uniform_int(1, 4));
    int h = static_cast<int>(rng.uniform_int(1, 4));
    RngStream pr = rng.split("probe");
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          RngStream p = pr;
          return probed(ops::gru_cell(in[0], in[1], in[2], in[3], in[4], in[5]),
                        p);
        },
        {rnd(rng, {b, i}), rnd(rng, {b, h}), rnd(rng, {3 * h, i}),
         rnd(rng, {3 * h, h}), rnd(rng, {3 * h}), rnd(rng, {3 * h})});
  });
  return cases;
}

}  // namespace ovtest
