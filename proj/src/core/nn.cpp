#include "core/nn.hpp"

#include <cmath>

namespace ov::nn {

void zero_grads(ParamSet& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

double global_grad_norm(const ParamSet& params) {
  double s = 0;
  for (const auto& [name, t] : params) {
    const Storage* g = t.grad_ptr();
    if (!g) continue;
    dispatch_dtype(g->dtype(), [&](auto tag) {
      using T = decltype(tag);
      for (T v : g->span<T>()) s += static_cast<double>(v) * v;
    });
  }
  return std::sqrt(s);
}

void clip_grad_norm(ParamSet& params, double max_norm) {
  double n = global_grad_norm(params);
  if (n <= max_norm || n == 0) return;
  double scale = max_norm / n;
  for (auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    Storage& g = t.grad_storage();
    dispatch_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      for (T& v : g.span<T>()) v = static_cast<T>(v * scale);
    });
  }
}

void copy_params(const ParamSet& src, ParamSet& dst) {
  OV_REQUIRE(src.size() == dst.size(), "copy_params: size mismatch ",
             src.size(), " vs ", dst.size());
  auto it = dst.begin();
  for (const auto& [name, t] : src) {
    OV_REQUIRE(it->first == name, "copy_params: name mismatch ", name, " vs ",
               it->first);
    OV_REQUIRE(it->second.shape() == t.shape(), "copy_params: shape mismatch for ",
               name);
    for (int64_t i = 0; i < t.numel(); ++i) it->second.set(i, t.at(i));
    ++it;
  }
}

void set_requires_grad(ParamSet& params, bool rg) {
  for (auto& [name, t] : params) t.set_requires_grad(rg);
}

namespace {
Tensor uniform_init(const Shape& shape, int fan_in, RngStream& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::rand_uniform(shape, rng, -bound, bound);
  t.set_requires_grad(true);
  return t;
}
}  // namespace

Linear::Linear(int in, int out, RngStream& rng, bool bias) {
  w = uniform_init({out, in}, in, rng);
  if (bias) b = uniform_init({out}, in, rng);
}

void Linear::collect(ParamSet& ps, const std::string& prefix) const {
  ps[prefix + ".weight"] = w;
  if (b.defined()) ps[prefix + ".bias"] = b;
}

Conv2d::Conv2d(int in, int out, int ksize, int stride, int pad, RngStream& rng,
               bool bias)
    : stride(stride), pad(pad) {
  int fan_in = in * ksize * ksize;
  w = uniform_init({out, in, ksize, ksize}, fan_in, rng);
  if (bias) b = uniform_init({out}, fan_in, rng);
}

void Conv2d::collect(ParamSet& ps, const std::string& prefix) const {
  ps[prefix + ".weight"] = w;
  if (b.defined()) ps[prefix + ".bias"] = b;
}

GroupNorm::GroupNorm(int channels, int groups) : groups(groups) {
  gamma = Tensor::full({channels}, 1.0);
  gamma.set_requires_grad(true);
  beta = Tensor::zeros({channels});
  beta.set_requires_grad(true);
}

void GroupNorm::collect(ParamSet& ps, const std::string& prefix) const {
  ps[prefix + ".gamma"] = gamma;
  ps[prefix + ".beta"] = beta;
}

Embedding::Embedding(int vocab, int dim, RngStream& rng) {
  table = Tensor::rand_normal({vocab, dim}, rng, 0.02);
  table.set_requires_grad(true);
}

void Embedding::collect(ParamSet& ps, const std::string& prefix) const {
  ps[prefix + ".table"] = table;
}

LstmStack::LstmStack(int input, int hidden, int n_layers, RngStream& rng)
    : hidden(hidden) {
  int in = input;
  for (int l = 0; l < n_layers; ++l) {
    Layer layer;
    layer.w_ih = uniform_init({4 * hidden, in}, hidden, rng);
    layer.w_hh = uniform_init({4 * hidden, hidden}, hidden, rng);
    layer.b_ih = uniform_init({4 * hidden}, hidden, rng);
    layer.b_hh = uniform_init({4 * hidden}, hidden, rng);
    layers.push_back(layer);
    in = hidden;
  }
}

LstmStack::State LstmStack::zero_state(int batch, DType dt) const {
  State s;
  for (size_t l = 0; l < layers.size(); ++l) {
    s.h.push_back(Tensor::zeros({batch, hidden}, dt));
    s.c.push_back(Tensor::zeros({batch, hidden}, dt));
  }
  return s;
}

Tensor LstmStack::step(const Tensor& x, State& state) const {
  Tensor cur = x;
  for (size_t l = 0; l < layers.size(); ++l) {
    auto [h, c] = ops::lstm_cell(cur, state.h[l], state.c[l], layers[l].w_ih,
                                 layers[l].w_hh, layers[l].b_ih,
                                 layers[l].b_hh);
    state.h[l] = h;
    state.c[l] = c;
    cur = h;
  }
  return cur;
}

void LstmStack::collect(ParamSet& ps, const std::string& prefix) const {
  for (size_t l = 0; l < layers.size(); ++l) {
    std::string p = prefix + ".l" + std::to_string(l);
    ps[p + ".w_ih"] = layers[l].w_ih;
    ps[p + ".w_hh"] = layers[l].w_hh;
    ps[p + ".b_ih"] = layers[l].b_ih;
    ps[p + ".b_hh"] = layers[l].b_hh;
  }
}

GruStack::GruStack(int input, int hidden, int n_layers, RngStream& rng)
    : hidden(hidden) {
  int in = input;
  for (int l = 0; l < n_layers; ++l) {
    Layer layer;
    layer.w_ih = uniform_init({3 * hidden, in}, hidden, rng);
    layer.w_hh = uniform_init({3 * hidden, hidden}, hidden, rng);
    layer.b_ih = uniform_init({3 * hidden}, hidden, rng);
    layer.b_hh = uniform_init({3 * hidden}, hidden, rng);
    layers.push_back(layer);
    in = hidden;
  }
}

GruStack::State GruStack::zero_state(int batch, DType dt) const {
  State s;
  for (size_t l = 0; l < layers.size(); ++l)
    s.h.push_back(Tensor::zeros({batch, hidden}, dt));
  return s;
}

Tensor GruStack::step(const Tensor& x, State& state) const {
  Tensor cur = x;
  for (size_t l = 0; l < layers.size(); ++l) {
    Tensor h = ops::gru_cell(cur, state.h[l], layers[l].w_ih, layers[l].w_hh,
                             layers[l].b_ih, layers[l].b_hh);
    state.h[l] = h;
    cur = h;
  }
  return cur;
}

void GruStack::collect(ParamSet& ps, const std::string& prefix) const {
  for (size_t l = 0; l < layers.size(); ++l) {
    std::string p = prefix + ".l" + std::to_string(l);
    ps[p + ".w_ih"] = layers[l].w_ih;
    ps[p + ".w_hh"] = layers[l].w_hh;
    ps[p + ".b_ih"] = layers[l].b_ih;
    ps[p + ".b_hh"] = layers[l].b_hh;
  }
}

ConvEncoder::ConvEncoder(int in_channels, int base, int gn_groups,
                         RngStream& rng)
    : base(base), in_channels(in_channels) {
  int chans[4] = {base, 2 * base, 4 * base, 8 * base};
  int in = in_channels;
  for (int s = 0; s < 4; ++s) {
    convs.emplace_back(in, chans[s], 3, /*stride=*/2, /*pad=*/1, rng,
                       /*bias=*/false);
    norms.emplace_back(chans[s], gn_groups);
    in = chans[s];
  }
  feature_dim = chans[3];
}

Tensor ConvEncoder::forward(const Tensor& x) const {
  OV_REQUIRE(x.rank() == 4 && x.dim(1) == in_channels,
             "ConvEncoder: input must be [N,", in_channels, ",H,W], got ",
             shape_str(x.shape()));
  Tensor cur = x;
  for (size_t s = 0; s < convs.size(); ++s) {
    cur = convs[s].forward(cur);
    cur = norms[s].forward(cur);
    cur = ops::relu(cur);
  }
  return ops::average_pool(cur);
}

void ConvEncoder::collect(ParamSet& ps, const std::string& prefix) const {
  for (size_t s = 0; s < convs.size(); ++s) {
    std::string p = prefix + ".stage" + std::to_string(s);
    convs[s].collect(ps, p + ".conv");
    norms[s].collect(ps, p + ".gn");
  }
}

}  // namespace ov::nn
