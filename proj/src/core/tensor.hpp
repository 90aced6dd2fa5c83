#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "core/common.hpp"
#include "core/rng.hpp"

namespace ov {

// Flat numeric buffer holding either f32 or f64 values.
class Storage {
 public:
  Storage() = default;
  Storage(DType dt, int64_t n) : dt_(dt) {
    if (dt == DType::f32)
      f_.assign(static_cast<size_t>(n), 0.0f);
    else
      d_.assign(static_cast<size_t>(n), 0.0);
  }

  DType dtype() const { return dt_; }
  int64_t size() const {
    return dt_ == DType::f32 ? static_cast<int64_t>(f_.size())
                             : static_cast<int64_t>(d_.size());
  }

  template <class T>
  std::span<T> span();
  template <class T>
  std::span<const T> span() const;

  void fill_zero() {
    std::fill(f_.begin(), f_.end(), 0.0f);
    std::fill(d_.begin(), d_.end(), 0.0);
  }

  double at(int64_t i) const {
    return dt_ == DType::f32 ? static_cast<double>(f_[i]) : d_[i];
  }
  void set(int64_t i, double v) {
    if (dt_ == DType::f32)
      f_[i] = static_cast<float>(v);
    else
      d_[i] = v;
  }

 private:
  DType dt_ = DType::f32;
  std::vector<float> f_;
  std::vector<double> d_;
};

template <>
inline std::span<float> Storage::span<float>() { return {f_.data(), f_.size()}; }
template <>
inline std::span<double> Storage::span<double>() { return {d_.data(), d_.size()}; }
template <>
inline std::span<const float> Storage::span<float>() const { return {f_.data(), f_.size()}; }
template <>
inline std::span<const double> Storage::span<double>() const { return {d_.data(), d_.size()}; }

class Tensor;

struct TensorNode {
  Shape shape;
  Storage data;
  std::unique_ptr<Storage> grad;  // allocated lazily; nullptr means "no grad yet"
  bool requires_grad = false;
  // Non-empty parents + backward_fn mark an interior node of a define-by-run
  // graph. Both are cleared when backward() frees the graph.
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  int64_t numel() const { return numel_of(shape); }
  bool is_leaf() const { return parents.empty() && !backward_fn; }
  Storage& ensure_grad() {
    if (!grad) grad = std::make_unique<Storage>(data.dtype(), numel());
    return *grad;
  }
};

// Gradient recording is on by default; disable around inference-only forward
// passes (rollout collection, teacher forwards, evaluation).
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();

 private:
  bool prev_;
};

// When set, backward() aborts with diagnostics on the first non-finite grad.
void set_nan_guard(bool on);
bool nan_guard();

// Value handle over a shared TensorNode.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& shape, DType dt = DType::f32);
  static Tensor full(const Shape& shape, double value, DType dt = DType::f32);
  static Tensor scalar(double value, DType dt = DType::f32);
  static Tensor from_span(const Shape& shape, std::span<const float> v);
  static Tensor from_span(const Shape& shape, std::span<const double> v);
  static Tensor from_vec(const Shape& shape, const std::vector<double>& v,
                         DType dt = DType::f32);
  // Uniform in [lo, hi).
  static Tensor rand_uniform(const Shape& shape, RngStream& rng, double lo,
                             double hi, DType dt = DType::f32);
  static Tensor rand_normal(const Shape& shape, RngStream& rng, double stddev,
                            DType dt = DType::f32);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  DType dtype() const { return node_->data.dtype(); }
  int64_t numel() const { return node_->numel(); }
  int dim(int i) const { return node_->shape[i]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }

  template <class T>
  std::span<T> data() { return node_->data.span<T>(); }
  template <class T>
  std::span<const T> data() const {
    return static_cast<const TensorNode&>(*node_).data.span<T>();
  }
  double at(int64_t i) const { return node_->data.at(i); }
  void set(int64_t i, double v) { node_->data.set(i, v); }
  double item() const;

  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }
  bool requires_grad() const { return node_->requires_grad; }

  bool has_grad() const { return node_->grad != nullptr; }
  Storage& grad_storage() { return node_->ensure_grad(); }
  const Storage* grad_ptr() const { return node_->grad.get(); }
  void zero_grad() { node_->ensure_grad().fill_zero(); }
  void drop_grad() { node_->grad.reset(); }
  // Copies the grad into a fresh tensor (for tests / inspection).
  Tensor grad_tensor() const;

  // Same data buffer, detached from any graph, requires_grad off.
  Tensor detach() const;
  Tensor clone() const;
  // Cast to a different dtype (copy).
  Tensor to(DType dt) const;

  bool all_finite() const;

  // Reverse-mode sweep from a scalar. Populates grads of reachable
  // requires_grad leaves, then frees the traversed graph.
  void backward();

  std::shared_ptr<TensorNode>& node() { return node_; }
  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// True when recording is on and some input requires grad; ops call this
// before building backward closures so no-grad forwards stay cheap.
bool wants_grad(std::initializer_list<const Tensor*> parents);
void attach_backward(Tensor& out, std::vector<Tensor> parents,
                     std::function<void(TensorNode&)> backward_fn);

void accumulate_grad(TensorNode& node, const Storage& incoming);

}  // namespace ov
