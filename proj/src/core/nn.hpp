#pragma once

#include <map>
#include <string>
#include <vector>

#include "core/ops.hpp"
#include "core/tensor.hpp"

namespace ov::nn {

// Ordered name -> parameter map. Iteration order is lexicographic by name,
// which fixes reduction and update order everywhere.
using ParamSet = std::map<std::string, Tensor>;

void zero_grads(ParamSet& params);
double global_grad_norm(const ParamSet& params);
void clip_grad_norm(ParamSet& params, double max_norm);
// Copies values of src into dst; name/shape sets must match exactly.
void copy_params(const ParamSet& src, ParamSet& dst);
void set_requires_grad(ParamSet& params, bool rg);

struct Linear {
  Tensor w;  // [out, in]
  Tensor b;  // [out] or undefined
  Linear() = default;
  Linear(int in, int out, RngStream& rng, bool bias = true);
  Tensor forward(const Tensor& x) const { return ops::linear(x, w, b); }
  void collect(ParamSet& ps, const std::string& prefix) const;
};

struct Conv2d {
  Tensor w;  // [out, in, kh, kw]
  Tensor b;
  int stride = 1, pad = 0;
  Conv2d() = default;
  Conv2d(int in, int out, int ksize, int stride, int pad, RngStream& rng,
         bool bias = true);
  Tensor forward(const Tensor& x) const {
    return ops::conv2d(x, w, b, stride, pad);
  }
  void collect(ParamSet& ps, const std::string& prefix) const;
};

struct GroupNorm {
  Tensor gamma, beta;
  int groups = 1;
  double eps = 1e-5;
  GroupNorm() = default;
  GroupNorm(int channels, int groups);
  Tensor forward(const Tensor& x) const {
    return ops::group_norm(x, groups, gamma, beta, eps);
  }
  void collect(ParamSet& ps, const std::string& prefix) const;
};

struct Embedding {
  Tensor table;  // [V, D]
  Embedding() = default;
  Embedding(int vocab, int dim, RngStream& rng);
  Tensor forward(const std::vector<int>& ids) const {
    return ops::embedding_lookup(table, ids);
  }
  void collect(ParamSet& ps, const std::string& prefix) const;
};

// Stacked recurrent cells. States are kept as plain tensors [B,H] per layer.
struct LstmStack {
  struct Layer {
    Tensor w_ih, w_hh, b_ih, b_hh;
  };
  std::vector<Layer> layers;
  int hidden = 0;
  LstmStack() = default;
  LstmStack(int input, int hidden, int n_layers, RngStream& rng);
  struct State {
    std::vector<Tensor> h, c;  // per layer
  };
  State zero_state(int batch, DType dt = DType::f32) const;
  // Returns top-layer output; state updated in place.
  Tensor step(const Tensor& x, State& state) const;
  void collect(ParamSet& ps, const std::string& prefix) const;
};

struct GruStack {
  struct Layer {
    Tensor w_ih, w_hh, b_ih, b_hh;
  };
  std::vector<Layer> layers;
  int hidden = 0;
  GruStack() = default;
  GruStack(int input, int hidden, int n_layers, RngStream& rng);
  struct State {
    std::vector<Tensor> h;
  };
  State zero_state(int batch, DType dt = DType::f32) const;
  Tensor step(const Tensor& x, State& state) const;
  void collect(ParamSet& ps, const std::string& prefix) const;
};

// Backbone: conv stages (stride 2, GroupNorm, relu) + global average pool.
// Width scales with base channels; feature dim is 8*base.
struct ConvEncoder {
  std::vector<Conv2d> convs;
  std::vector<GroupNorm> norms;
  int base = 16;
  int in_channels = 3;
  int feature_dim = 0;
  ConvEncoder() = default;
  ConvEncoder(int in_channels, int base, int gn_groups, RngStream& rng);
  // images [N, C, H, W] -> features [N, feature_dim]
  Tensor forward(const Tensor& x) const;
  void collect(ParamSet& ps, const std::string& prefix) const;
};

}  // namespace ov::nn
