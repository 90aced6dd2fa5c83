#pragma once

#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace ov::ops {

// Elementwise, same shape unless noted.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
// max(x, c); building block for clamps composed at call sites.
Tensor clamp_min(const Tensor& x, double c);

// a [M,K] x b [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
// x [B,I], w [O,I], optional bias [O] -> [B,O]; matmul with transposed
// weight and a row-bias attribute.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});
// x [N,C,H,W], w [O,C,kh,kw], optional bias [O]; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad);
// x [N,C,H,W]; per-(sample,group) normalization with per-channel affine.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma,
                  const Tensor& beta, double eps = 1e-5);
// softmax(x / temperature) along the last axis; temperature > 0.
Tensor softmax_with_temperature(const Tensor& x, double temperature);
// Reductions. Axes are removed from the output shape.
Tensor sum(const Tensor& x, const std::vector<int>& axes);
Tensor mean(const Tensor& x, const std::vector<int>& axes);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// Row-wise x / max(||x||2, eps) along the last axis.
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);
// x [B,I], v [O,I], g [O]: rows of v rescaled to unit norm times g.
Tensor weight_normalized_linear(const Tensor& x, const Tensor& v,
                                const Tensor& g);
// Global spatial average: [N,C,H,W] -> [N,C].
Tensor average_pool(const Tensor& x);
// table [V,D], ids in [0,V) -> [B,D].
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor slice(const Tensor& x, int axis, int start, int len);

// Fused recurrent cells (gate order i,f,g,o / r,z,n).
std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h,
                                    const Tensor& c, const Tensor& w_ih,
                                    const Tensor& w_hh, const Tensor& b_ih,
                                    const Tensor& b_hh);
Tensor gru_cell(const Tensor& x, const Tensor& h, const Tensor& w_ih,
                const Tensor& w_hh, const Tensor& b_ih, const Tensor& b_hh);

}  // namespace ov::ops
