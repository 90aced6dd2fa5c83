#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace ov {

namespace {
thread_local bool g_grad_enabled = true;
bool g_nan_guard = false;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void set_nan_guard(bool on) { g_nan_guard = on; }
bool nan_guard() { return g_nan_guard; }

Tensor Tensor::zeros(const Shape& shape, DType dt) {
  auto n = std::make_shared<TensorNode>();
  n->shape = shape;
  n->data = Storage(dt, numel_of(shape));
  return Tensor(std::move(n));
}

Tensor Tensor::full(const Shape& shape, double value, DType dt) {
  Tensor t = zeros(shape, dt);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, value);
  return t;
}

Tensor Tensor::scalar(double value, DType dt) { return full({1}, value, dt); }

Tensor Tensor::from_span(const Shape& shape, std::span<const float> v) {
  OV_REQUIRE(numel_of(shape) == static_cast<int64_t>(v.size()),
             "from_span: shape ", shape_str(shape), " wants ", numel_of(shape),
             " values, got ", v.size());
  Tensor t = zeros(shape, DType::f32);
  std::copy(v.begin(), v.end(), t.data<float>().begin());
  return t;
}

Tensor Tensor::from_span(const Shape& shape, std::span<const double> v) {
  OV_REQUIRE(numel_of(shape) == static_cast<int64_t>(v.size()),
             "from_span: shape ", shape_str(shape), " wants ", numel_of(shape),
             " values, got ", v.size());
  Tensor t = zeros(shape, DType::f64);
  std::copy(v.begin(), v.end(), t.data<double>().begin());
  return t;
}

Tensor Tensor::from_vec(const Shape& shape, const std::vector<double>& v, DType dt) {
  OV_REQUIRE(numel_of(shape) == static_cast<int64_t>(v.size()),
             "from_vec: shape ", shape_str(shape), " wants ", numel_of(shape),
             " values, got ", v.size());
  Tensor t = zeros(shape, dt);
  for (size_t i = 0; i < v.size(); ++i) t.set(static_cast<int64_t>(i), v[i]);
  return t;
}

Tensor Tensor::rand_uniform(const Shape& shape, RngStream& rng, double lo,
                            double hi, DType dt) {
  Tensor t = zeros(shape, dt);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(lo, hi));
  return t;
}

Tensor Tensor::rand_normal(const Shape& shape, RngStream& rng, double stddev,
                           DType dt) {
  Tensor t = zeros(shape, dt);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.normal() * stddev);
  return t;
}

double Tensor::item() const {
  OV_REQUIRE(numel() == 1, "item(): tensor has ", numel(), " elements");
  return at(0);
}

Tensor Tensor::grad_tensor() const {
  OV_REQUIRE(node_->grad, "grad_tensor(): no grad present");
  Tensor g = Tensor::zeros(shape(), dtype());
  const Storage& src = *node_->grad;
  for (int64_t i = 0; i < numel(); ++i) g.set(i, src.at(i));
  return g;
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<TensorNode>();
  n->shape = node_->shape;
  n->data = node_->data;  // value copy; graphs stay small and short-lived
  return Tensor(std::move(n));
}

Tensor Tensor::clone() const { return detach(); }

Tensor Tensor::to(DType dt) const {
  if (dt == dtype()) return clone();
  Tensor t = zeros(shape(), dt);
  for (int64_t i = 0; i < numel(); ++i) t.set(i, at(i));
  return t;
}

bool Tensor::all_finite() const {
  bool ok = true;
  dispatch_dtype(dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (T v : data<T>())
      if (!std::isfinite(static_cast<double>(v))) {
        ok = false;
        break;
      }
  });
  return ok;
}

void accumulate_grad(TensorNode& node, const Storage& incoming) {
  Storage& g = node.ensure_grad();
  OV_REQUIRE(g.size() == incoming.size(), "grad accumulate size mismatch");
  dispatch_dtype(node.data.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto dst = g.span<T>();
    auto src = incoming.span<T>();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
}

bool wants_grad(std::initializer_list<const Tensor*> parents) {
  if (!grad_enabled()) return false;
  for (const Tensor* p : parents)
    if (p && p->defined() && p->requires_grad()) return true;
  return false;
}

void attach_backward(Tensor& out, std::vector<Tensor> parents,
                     std::function<void(TensorNode&)> backward_fn) {
  TensorNode& n = *out.node();
  n.requires_grad = true;
  n.parents.reserve(parents.size());
  for (Tensor& p : parents)
    if (p.defined()) n.parents.push_back(p.node());
  n.backward_fn = std::move(backward_fn);
}

namespace {

bool storage_finite(const Storage& s) {
  bool ok = true;
  dispatch_dtype(s.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (T v : s.span<T>())
      if (!std::isfinite(static_cast<double>(v))) {
        ok = false;
        break;
      }
  });
  return ok;
}

}  // namespace

void Tensor::backward() {
  OV_REQUIRE(numel() == 1, "backward(): loss must be scalar, got shape ",
             shape_str(node_->shape));
  OV_REQUIRE(requires_grad(), "backward(): loss does not require grad");

  // Post-order DFS -> topological order; reversed gives root-to-leaf sweep.
  std::vector<TensorNode*> order;
  std::vector<std::shared_ptr<TensorNode>> keep_alive;
  std::unordered_set<TensorNode*> seen;
  struct Frame {
    std::shared_ptr<TensorNode> node;
    size_t next_parent = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({node_, 0});
  seen.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      auto p = f.node->parents[f.next_parent++];
      if (p->requires_grad && !seen.count(p.get())) {
        seen.insert(p.get());
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node.get());
      keep_alive.push_back(f.node);
      stack.pop_back();
    }
  }

  // Seed d(loss)/d(loss) = 1.
  Storage& seed = node_->ensure_grad();
  seed.set(0, seed.at(0) + 1.0);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->is_leaf()) continue;  // leaves keep their accumulated grads
    if (n->backward_fn && n->grad) {
      n->backward_fn(*n);
      if (nan_guard()) {
        for (const auto& p : n->parents)
          if (p->grad && !storage_finite(*p->grad))
            fail("nan guard: non-finite gradient produced during backward");
      }
    }
    // Graph is define-by-run and single-use: free edges and intermediate
    // grads as soon as this node has propagated.
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.reset();
  }
}

}  // namespace ov
