#include "core/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace ov::ops {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<RowMat<T>>;
template <class T>
using CMapM = Eigen::Map<const RowMat<T>>;

using NodePtr = std::shared_ptr<TensorNode>;

template <class T>
std::span<T> grad_of(const NodePtr& n) {
  return n->ensure_grad().span<T>();
}

DType same_dtype(const char* op, std::initializer_list<const Tensor*> ts) {
  DType dt = (*ts.begin())->dtype();
  for (const Tensor* t : ts)
    OV_REQUIRE(t->dtype() == dt, op, ": mixed dtypes");
  return dt;
}

void same_shape(const char* op, const Tensor& a, const Tensor& b) {
  OV_REQUIRE(a.shape() == b.shape(), op, ": shape mismatch ",
             shape_str(a.shape()), " vs ", shape_str(b.shape()));
}

template <class T>
T sigmoid_v(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  same_shape("add", a, b);
  DType dt = same_dtype("add", {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), dt);
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    auto pa = a.data<T>(), pb = b.data<T>();
    auto po = out.data<T>();
    for (size_t i = 0; i < po.size(); ++i) po[i] = pa[i] + pb[i];
  });
  if (wants_grad({&a, &b})) {
    NodePtr na = a.node(), nb = b.node();
    attach_backward(out, {a, b}, [na, nb](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto dy = self.grad->span<T>();
        if (na->requires_grad) {
          auto da = grad_of<T>(na);
          for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        }
        if (nb->requires_grad) {
          auto db = grad_of<T>(nb);
          for (size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
        }
      });
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  same_shape("sub", a, b);
  DType dt = same_dtype("sub", {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), dt);
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    auto pa = a.data<T>(), pb = b.data<T>();
    auto po = out.data<T>();
    for (size_t i = 0; i < po.size(); ++i) po[i] = pa[i] - pb[i];
  });
  if (wants_grad({&a, &b})) {
    NodePtr na = a.node(), nb = b.node();
    attach_backward(out, {a, b}, [na, nb](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto dy = self.grad->span<T>();
        if (na->requires_grad) {
          auto da = grad_of<T>(na);
          for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        }
        if (nb->requires_grad) {
          auto db = grad_of<T>(nb);
          for (size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
        }
      });
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  same_shape("mul", a, b);
  DType dt = same_dtype("mul", {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), dt);
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    auto pa = a.data<T>(), pb = b.data<T>();
    auto po = out.data<T>();
    for (size_t i = 0; i < po.size(); ++i) po[i] = pa[i] * pb[i];
  });
  if (wants_grad({&a, &b})) {
    NodePtr na = a.node(), nb = b.node();
    attach_backward(out, {a, b}, [na, nb](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto dy = self.grad->span<T>();
        auto pa = na->data.span<T>(), pb = nb->data.span<T>();
        if (na->requires_grad) {
          auto da = grad_of<T>(na);
          for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * pb[i];
        }
        if (nb->requires_grad) {
          auto db = grad_of<T>(nb);
          for (size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * pa[i];
        }
      });
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto pa = a.data<T>();
    auto po = out.data<T>();
    T sv = static_cast<T>(s);
    for (size_t i = 0; i < po.size(); ++i) po[i] = pa[i] + sv;
  });
  if (wants_grad({&a})) {
    NodePtr na = a.node();
    attach_backward(out, {a}, [na](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto dy = self.grad->span<T>();
        auto da = grad_of<T>(na);
        for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      });
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto pa = a.data<T>();
    auto po = out.data<T>();
    T sv = static_cast<T>(s);
    for (size_t i = 0; i < po.size(); ++i) po[i] = pa[i] * sv;
  });
  if (wants_grad({&a})) {
    NodePtr na = a.node();
    attach_backward(out, {a}, [na, s](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto dy = self.grad->span<T>();
        auto da = grad_of<T>(na);
        T sv = static_cast<T>(s);
        for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * sv;
      });
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto px = x.data<T>();
    auto po = out.data<T>();
    for (size_t i = 0; i < po.size(); ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  });
  if (wants_grad({&x})) {
    NodePtr nx = x.node();
    attach_backward(out, {x}, [nx](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto dy = self.grad->span<T>();
        auto px = nx->data.span<T>();
        auto dx = grad_of<T>(nx);
        for (size_t i = 0; i < dy.size(); ++i)
          if (px[i] > T(0)) dx[i] += dy[i];
      });
    });
  }
  return out;
}

Tensor clamp_min(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto px = x.data<T>();
    auto po = out.data<T>();
    T cv = static_cast<T>(c);
    for (size_t i = 0; i < po.size(); ++i) po[i] = px[i] > cv ? px[i] : cv;
  });
  if (wants_grad({&x})) {
    NodePtr nx = x.node();
    attach_backward(out, {x}, [nx, c](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto dy = self.grad->span<T>();
        auto px = nx->data.span<T>();
        auto dx = grad_of<T>(nx);
        T cv = static_cast<T>(c);
        for (size_t i = 0; i < dy.size(); ++i)
          if (px[i] > cv) dx[i] += dy[i];
      });
    });
  }
  return out;
}

Tensor exp(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto px = x.data<T>();
    auto po = out.data<T>();
    for (size_t i = 0; i < po.size(); ++i) po[i] = std::exp(px[i]);
  });
  if (wants_grad({&x})) {
    NodePtr nx = x.node();
    attach_backward(out, {x}, [nx](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto dy = self.grad->span<T>();
        auto y = self.data.span<T>();
        auto dx = grad_of<T>(nx);
        for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i];
      });
    });
  }
  return out;
}

Tensor log(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto px = x.data<T>();
    auto po = out.data<T>();
    for (size_t i = 0; i < po.size(); ++i) po[i] = std::log(px[i]);
  });
  if (wants_grad({&x})) {
    NodePtr nx = x.node();
    attach_backward(out, {x}, [nx](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto dy = self.grad->span<T>();
        auto px = nx->data.span<T>();
        auto dx = grad_of<T>(nx);
        for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] / px[i];
      });
    });
  }
  return out;
}

// ------------------------------------------------------------------- matmuls

Tensor matmul(const Tensor& a, const Tensor& b) {
  OV_REQUIRE(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
             "matmul: incompatible shapes ", shape_str(a.shape()), " x ",
             shape_str(b.shape()));
  DType dt = same_dtype("matmul", {&a, &b});
  int M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor out = Tensor::zeros({M, N}, dt);
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    MapM<T>(out.data<T>().data(), M, N).noalias() =
        CMapM<T>(a.data<T>().data(), M, K) * CMapM<T>(b.data<T>().data(), K, N);
  });
  if (wants_grad({&a, &b})) {
    NodePtr na = a.node(), nb = b.node();
    attach_backward(out, {a, b}, [na, nb, M, K, N](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        CMapM<T> dy(self.grad->span<T>().data(), M, N);
        if (na->requires_grad)
          MapM<T>(grad_of<T>(na).data(), M, K).noalias() +=
              dy * CMapM<T>(nb->data.span<T>().data(), K, N).transpose();
        if (nb->requires_grad)
          MapM<T>(grad_of<T>(nb).data(), K, N).noalias() +=
              CMapM<T>(na->data.span<T>().data(), M, K).transpose() * dy;
      });
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  OV_REQUIRE(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1),
             "linear: x ", shape_str(x.shape()), " w ", shape_str(w.shape()));
  if (b.defined())
    OV_REQUIRE(b.rank() == 1 && b.dim(0) == w.dim(0), "linear: bias shape ",
               shape_str(b.shape()), " wants [", w.dim(0), "]");
  DType dt = same_dtype("linear", b.defined()
                                      ? std::initializer_list<const Tensor*>{&x, &w, &b}
                                      : std::initializer_list<const Tensor*>{&x, &w});
  int B = x.dim(0), I = x.dim(1), O = w.dim(0);
  Tensor out = Tensor::zeros({B, O}, dt);
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    MapM<T> y(out.data<T>().data(), B, O);
    y.noalias() = CMapM<T>(x.data<T>().data(), B, I) *
                  CMapM<T>(w.data<T>().data(), O, I).transpose();
    if (b.defined()) {
      auto pb = b.data<T>();
      for (int r = 0; r < B; ++r)
        for (int c = 0; c < O; ++c) y(r, c) += pb[c];
    }
  });
  if (wants_grad({&x, &w, &b})) {
    NodePtr nx = x.node(), nw = w.node(),
            nb = b.defined() ? b.node() : nullptr;
    attach_backward(out, {x, w, b}, [nx, nw, nb, B, I, O](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        CMapM<T> dy(self.grad->span<T>().data(), B, O);
        if (nx->requires_grad)
          MapM<T>(grad_of<T>(nx).data(), B, I).noalias() +=
              dy * CMapM<T>(nw->data.span<T>().data(), O, I);
        if (nw->requires_grad)
          MapM<T>(grad_of<T>(nw).data(), O, I).noalias() +=
              dy.transpose() * CMapM<T>(nx->data.span<T>().data(), B, I);
        if (nb && nb->requires_grad) {
          auto db = grad_of<T>(nb);
          for (int r = 0; r < B; ++r)
            for (int c = 0; c < O; ++c) db[c] += dy(r, c);
        }
      });
    });
  }
  return out;
}

// -------------------------------------------------------------------- conv2d

namespace {

// cols is (C*kh*kw) x (OH*OW), row-major.
template <class T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride,
            int pad, int OH, int OW, T* cols) {
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        T* row = cols + (static_cast<int64_t>(c) * kh * kw + i * kw + j) *
                            (static_cast<int64_t>(OH) * OW);
        for (int oh = 0; oh < OH; ++oh) {
          int ih = oh * stride - pad + i;
          if (ih < 0 || ih >= H) {
            std::fill(row + static_cast<int64_t>(oh) * OW,
                      row + static_cast<int64_t>(oh + 1) * OW, T(0));
            continue;
          }
          const T* src = x + (static_cast<int64_t>(c) * H + ih) * W;
          for (int ow = 0; ow < OW; ++ow) {
            int iw = ow * stride - pad + j;
            row[static_cast<int64_t>(oh) * OW + ow] =
                (iw >= 0 && iw < W) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, int C, int H, int W, int kh, int kw, int stride,
                int pad, int OH, int OW, T* dx) {
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const T* row = cols + (static_cast<int64_t>(c) * kh * kw + i * kw + j) *
                                  (static_cast<int64_t>(OH) * OW);
        for (int oh = 0; oh < OH; ++oh) {
          int ih = oh * stride - pad + i;
          if (ih < 0 || ih >= H) continue;
          T* dst = dx + (static_cast<int64_t>(c) * H + ih) * W;
          for (int ow = 0; ow < OW; ++ow) {
            int iw = ow * stride - pad + j;
            if (iw >= 0 && iw < W)
              dst[iw] += row[static_cast<int64_t>(oh) * OW + ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad) {
  OV_REQUIRE(x.rank() == 4 && w.rank() == 4, "conv2d: x ",
             shape_str(x.shape()), " w ", shape_str(w.shape()));
  OV_REQUIRE(x.dim(1) == w.dim(1), "conv2d: channel mismatch x ",
             shape_str(x.shape()), " w ", shape_str(w.shape()));
  OV_REQUIRE(stride >= 1 && pad >= 0, "conv2d: bad stride/pad ", stride, "/", pad);
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int OH = (H + 2 * pad - kh) / stride + 1;
  int OW = (W + 2 * pad - kw) / stride + 1;
  OV_REQUIRE(OH > 0 && OW > 0, "conv2d: kernel ", kh, "x", kw,
             " too large for input ", shape_str(x.shape()), " pad ", pad);
  if (b.defined())
    OV_REQUIRE(b.rank() == 1 && b.dim(0) == O, "conv2d: bias shape ",
               shape_str(b.shape()));
  DType dt = same_dtype("conv2d", b.defined()
                                      ? std::initializer_list<const Tensor*>{&x, &w, &b}
                                      : std::initializer_list<const Tensor*>{&x, &w});
  Tensor out = Tensor::zeros({N, O, OH, OW}, dt);
  int ckk = C * kh * kw;
  int64_t osp = static_cast<int64_t>(OH) * OW;
  int64_t isp = static_cast<int64_t>(C) * H * W;
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> cols(static_cast<size_t>(ckk) * osp);
    const T* px = x.data<T>().data();
    T* po = out.data<T>().data();
    CMapM<T> wm(w.data<T>().data(), O, ckk);
    for (int n = 0; n < N; ++n) {
      im2col(px + n * isp, C, H, W, kh, kw, stride, pad, OH, OW, cols.data());
      MapM<T> ym(po + n * O * osp, O, osp);
      ym.noalias() = wm * CMapM<T>(cols.data(), ckk, osp);
      if (b.defined()) {
        auto pb = b.data<T>();
        for (int o = 0; o < O; ++o) ym.row(o).array() += pb[o];
      }
    }
  });
  if (wants_grad({&x, &w, &b})) {
    NodePtr nx = x.node(), nw = w.node(),
            nb = b.defined() ? b.node() : nullptr;
    attach_backward(
        out, {x, w, b},
        [nx, nw, nb, N, C, H, W, O, kh, kw, stride, pad, OH, OW, ckk, osp,
         isp](TensorNode& self) {
          dispatch_dtype(self.data.dtype(), [&](auto tag) {
            using T = decltype(tag);
            std::vector<T> cols(static_cast<size_t>(ckk) * osp);
            std::vector<T> dcols;
            const T* px = nx->data.span<T>().data();
            const T* pdy = self.grad->span<T>().data();
            CMapM<T> wm(nw->data.span<T>().data(), O, ckk);
            T* pdx = nullptr;
            if (nx->requires_grad) pdx = grad_of<T>(nx).data();
            T* pdw = nullptr;
            if (nw->requires_grad) pdw = grad_of<T>(nw).data();
            if (nx->requires_grad) dcols.resize(cols.size());
            for (int n = 0; n < N; ++n) {
              CMapM<T> dym(pdy + n * O * osp, O, osp);
              if (pdw || pdx)
                im2col(px + n * isp, C, H, W, kh, kw, stride, pad, OH, OW,
                       cols.data());
              if (pdw)
                MapM<T>(pdw, O, ckk).noalias() +=
                    dym * CMapM<T>(cols.data(), ckk, osp).transpose();
              if (pdx) {
                MapM<T>(dcols.data(), ckk, osp).noalias() =
                    wm.transpose() * dym;
                col2im_add(dcols.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                           pdx + n * isp);
              }
            }
            if (nb && nb->requires_grad) {
              auto db = grad_of<T>(nb);
              for (int n = 0; n < N; ++n)
                for (int o = 0; o < O; ++o) {
                  const T* r = pdy + (static_cast<int64_t>(n) * O + o) * osp;
                  T s = 0;
                  for (int64_t k = 0; k < osp; ++k) s += r[k];
                  db[o] += s;
                }
            }
          });
        });
  }
  return out;
}

// ---------------------------------------------------------------- group_norm

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma,
                  const Tensor& beta, double eps) {
  OV_REQUIRE(x.rank() == 4, "group_norm: x must be NCHW, got ",
             shape_str(x.shape()));
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  OV_REQUIRE(C % groups == 0, "group_norm: C=", C, " not divisible by groups=",
             groups);
  OV_REQUIRE(gamma.rank() == 1 && gamma.dim(0) == C && beta.rank() == 1 &&
                 beta.dim(0) == C,
             "group_norm: affine params must be [C]");
  DType dt = same_dtype("group_norm", {&x, &gamma, &beta});
  int cg = C / groups;
  int64_t sp = static_cast<int64_t>(H) * W;
  int64_t gsz = cg * sp;
  Tensor out = Tensor::zeros(x.shape(), dt);
  std::vector<double> means(static_cast<size_t>(N) * groups);
  std::vector<double> inv_stds(static_cast<size_t>(N) * groups);
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>().data();
    T* po = out.data<T>().data();
    auto pg = gamma.data<T>();
    auto pb = beta.data<T>();
    for (int n = 0; n < N; ++n) {
      for (int g = 0; g < groups; ++g) {
        const T* base = px + (static_cast<int64_t>(n) * C + g * cg) * sp;
        double s = 0, s2 = 0;
        for (int64_t i = 0; i < gsz; ++i) {
          double v = base[i];
          s += v;
          s2 += v * v;
        }
        double mean = s / gsz;
        double var = s2 / gsz - mean * mean;
        double inv = 1.0 / std::sqrt(var + eps);
        means[n * groups + g] = mean;
        inv_stds[n * groups + g] = inv;
        T* ob = po + (static_cast<int64_t>(n) * C + g * cg) * sp;
        for (int c = 0; c < cg; ++c) {
          T gm = pg[g * cg + c], bt = pb[g * cg + c];
          const T* xr = base + c * sp;
          T* yr = ob + c * sp;
          for (int64_t i = 0; i < sp; ++i)
            yr[i] = static_cast<T>((xr[i] - mean) * inv) * gm + bt;
        }
      }
    }
  });
  if (wants_grad({&x, &gamma, &beta})) {
    NodePtr nx = x.node(), ng = gamma.node(), nb = beta.node();
    attach_backward(
        out, {x, gamma, beta},
        [nx, ng, nb, N, C, groups, cg, sp, gsz, means,
         inv_stds](TensorNode& self) {
          dispatch_dtype(self.data.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* px = nx->data.span<T>().data();
            const T* pdy = self.grad->span<T>().data();
            auto pg = ng->data.span<T>();
            T* pdx = nx->requires_grad ? grad_of<T>(nx).data() : nullptr;
            T* pdg = ng->requires_grad ? grad_of<T>(ng).data() : nullptr;
            T* pdb = nb->requires_grad ? grad_of<T>(nb).data() : nullptr;
            for (int n = 0; n < N; ++n) {
              for (int g = 0; g < groups; ++g) {
                double mean = means[n * groups + g];
                double inv = inv_stds[n * groups + g];
                int64_t off = (static_cast<int64_t>(n) * C + g * cg) * sp;
                const T* xb = px + off;
                const T* dyb = pdy + off;
                // dxhat = dy * gamma; need its mean and <dxhat, xhat>.
                double s1 = 0, s2 = 0;
                for (int c = 0; c < cg; ++c) {
                  double gm = pg[g * cg + c];
                  for (int64_t i = 0; i < sp; ++i) {
                    double xh = (xb[c * sp + i] - mean) * inv;
                    double dxh = dyb[c * sp + i] * gm;
                    s1 += dxh;
                    s2 += dxh * xh;
                  }
                }
                s1 /= gsz;
                s2 /= gsz;
                for (int c = 0; c < cg; ++c) {
                  double gm = pg[g * cg + c];
                  double dgc = 0, dbc = 0;
                  for (int64_t i = 0; i < sp; ++i) {
                    double xh = (xb[c * sp + i] - mean) * inv;
                    double dy = dyb[c * sp + i];
                    if (pdx) {
                      double dxh = dy * gm;
                      pdx[off + c * sp + i] +=
                          static_cast<T>(inv * (dxh - s1 - xh * s2));
                    }
                    dgc += dy * xh;
                    dbc += dy;
                  }
                  if (pdg) pdg[g * cg + c] += static_cast<T>(dgc);
                  if (pdb) pdb[g * cg + c] += static_cast<T>(dbc);
                }
              }
            }
          });
        });
  }
  return out;
}

// ------------------------------------------------------------------- softmax

Tensor softmax_with_temperature(const Tensor& x, double temperature) {
  OV_REQUIRE(temperature > 0.0,
             "softmax_with_temperature: temperature must be > 0, got ",
             temperature);
  OV_REQUIRE(x.rank() >= 1, "softmax_with_temperature: scalar input");
  int K = x.dim(x.rank() - 1);
  int64_t rows = x.numel() / K;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>().data();
    T* po = out.data<T>().data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* xr = px + r * K;
      T* yr = po + r * K;
      double m = xr[0];
      for (int k = 1; k < K; ++k) m = std::max<double>(m, xr[k]);
      double s = 0;
      for (int k = 0; k < K; ++k) {
        double e = std::exp((static_cast<double>(xr[k]) - m) / temperature);
        yr[k] = static_cast<T>(e);
        s += e;
      }
      double invs = 1.0 / s;
      for (int k = 0; k < K; ++k) yr[k] = static_cast<T>(yr[k] * invs);
    }
  });
  if (wants_grad({&x})) {
    NodePtr nx = x.node();
    attach_backward(out, {x}, [nx, K, rows, temperature](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* y = self.data.span<T>().data();
        const T* dy = self.grad->span<T>().data();
        auto dx = grad_of<T>(nx);
        for (int64_t r = 0; r < rows; ++r) {
          const T* yr = y + r * K;
          const T* dyr = dy + r * K;
          double dot = 0;
          for (int k = 0; k < K; ++k) dot += static_cast<double>(dyr[k]) * yr[k];
          for (int k = 0; k < K; ++k)
            dx[r * K + k] +=
                static_cast<T>(yr[k] * (dyr[k] - dot) / temperature);
        }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------- reductions

namespace {

Tensor reduce_impl(const char* name, const Tensor& x,
                   const std::vector<int>& axes, bool take_mean) {
  for (int a : axes)
    OV_REQUIRE(a >= 0 && a < x.rank(), name, ": axis ", a,
               " out of range for ", shape_str(x.shape()));
  std::vector<bool> reduced(x.rank(), false);
  for (int a : axes) reduced[a] = true;
  Shape out_shape;
  for (int d = 0; d < x.rank(); ++d)
    if (!reduced[d]) out_shape.push_back(x.dim(d));
  if (out_shape.empty()) out_shape.push_back(1);

  int64_t count = 1;
  for (int a : axes) count *= x.dim(a);
  double scale = take_mean ? 1.0 / static_cast<double>(count) : 1.0;

  // Strides mapping each input element to its output slot.
  int rank = x.rank();
  std::vector<int64_t> in_stride(rank, 1), out_stride(rank, 0);
  for (int d = rank - 2; d >= 0; --d)
    in_stride[d] = in_stride[d + 1] * x.dim(d + 1);
  int64_t os = 1;
  for (int d = rank - 1; d >= 0; --d) {
    if (!reduced[d]) {
      out_stride[d] = os;
      os *= x.dim(d);
    }
  }

  Tensor out = Tensor::zeros(out_shape, x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>().data();
    T* po = out.data<T>().data();
    if (rank == 2 && reduced[1] && !reduced[0]) {  // row reduce fast path
      int64_t R = x.dim(0), K = x.dim(1);
      for (int64_t r = 0; r < R; ++r) {
        double s = 0;
        const T* xr = px + r * K;
        for (int64_t k = 0; k < K; ++k) s += xr[k];
        po[r] = static_cast<T>(s * scale);
      }
      return;
    }
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
      int64_t rem = i, oi = 0;
      for (int d = 0; d < rank; ++d) {
        int64_t coord = rem / in_stride[d];
        rem -= coord * in_stride[d];
        oi += coord * out_stride[d];
      }
      po[oi] += static_cast<T>(px[i] * scale);
    }
  });
  if (wants_grad({&x})) {
    NodePtr nx = x.node();
    attach_backward(out, {x},
                    [nx, in_stride, out_stride, rank, scale](TensorNode& self) {
                      dispatch_dtype(self.data.dtype(), [&](auto tag) {
                        using T = decltype(tag);
                        const T* dy = self.grad->span<T>().data();
                        auto dx = grad_of<T>(nx);
                        int64_t n = nx->numel();
                        for (int64_t i = 0; i < n; ++i) {
                          int64_t rem = i, oi = 0;
                          for (int d = 0; d < rank; ++d) {
                            int64_t coord = rem / in_stride[d];
                            rem -= coord * in_stride[d];
                            oi += coord * out_stride[d];
                          }
                          dx[i] += static_cast<T>(dy[oi] * scale);
                        }
                      });
                    });
  }
  return out;
}

}  // namespace

Tensor sum(const Tensor& x, const std::vector<int>& axes) {
  return reduce_impl("sum", x, axes, false);
}
Tensor mean(const Tensor& x, const std::vector<int>& axes) {
  return reduce_impl("mean", x, axes, true);
}
Tensor sum_all(const Tensor& x) {
  std::vector<int> axes(x.rank());
  for (int i = 0; i < x.rank(); ++i) axes[i] = i;
  return reduce_impl("sum", x, axes, false);
}
Tensor mean_all(const Tensor& x) {
  std::vector<int> axes(x.rank());
  for (int i = 0; i < x.rank(); ++i) axes[i] = i;
  return reduce_impl("mean", x, axes, true);
}

// ------------------------------------------------------------- normalization

Tensor l2_normalize(const Tensor& x, double eps) {
  OV_REQUIRE(x.rank() >= 1, "l2_normalize: scalar input");
  int K = x.dim(x.rank() - 1);
  int64_t rows = x.numel() / K;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  std::vector<double> norms(rows);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>().data();
    T* po = out.data<T>().data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* xr = px + r * K;
      double s = 0;
      for (int k = 0; k < K; ++k) s += static_cast<double>(xr[k]) * xr[k];
      double n = std::max(std::sqrt(s), eps);
      norms[r] = n;
      for (int k = 0; k < K; ++k) po[r * K + k] = static_cast<T>(xr[k] / n);
    }
  });
  if (wants_grad({&x})) {
    NodePtr nx = x.node();
    attach_backward(out, {x}, [nx, K, rows, norms, eps](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = nx->data.span<T>().data();
        const T* dy = self.grad->span<T>().data();
        auto dx = grad_of<T>(nx);
        for (int64_t r = 0; r < rows; ++r) {
          double n = norms[r];
          const T* xr = px + r * K;
          const T* dyr = dy + r * K;
          bool clamped = false;
          {
            double s = 0;
            for (int k = 0; k < K; ++k) s += static_cast<double>(xr[k]) * xr[k];
            clamped = std::sqrt(s) < eps;
          }
          if (clamped) {
            for (int k = 0; k < K; ++k)
              dx[r * K + k] += static_cast<T>(dyr[k] / n);
          } else {
            double dot = 0;
            for (int k = 0; k < K; ++k)
              dot += static_cast<double>(dyr[k]) * xr[k];
            double n3 = n * n * n;
            for (int k = 0; k < K; ++k)
              dx[r * K + k] += static_cast<T>(dyr[k] / n - xr[k] * dot / n3);
          }
        }
      });
    });
  }
  return out;
}

Tensor weight_normalized_linear(const Tensor& x, const Tensor& v,
                                const Tensor& g) {
  OV_REQUIRE(x.rank() == 2 && v.rank() == 2 && x.dim(1) == v.dim(1),
             "weight_normalized_linear: x ", shape_str(x.shape()), " v ",
             shape_str(v.shape()));
  OV_REQUIRE(g.rank() == 1 && g.dim(0) == v.dim(0),
             "weight_normalized_linear: g shape ", shape_str(g.shape()));
  DType dt = same_dtype("weight_normalized_linear", {&x, &v, &g});
  int B = x.dim(0), I = x.dim(1), O = v.dim(0);
  Tensor out = Tensor::zeros({B, O}, dt);
  std::vector<double> norms(O);
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    const T* pv = v.data<T>().data();
    auto pg = g.data<T>();
    std::vector<T> what(static_cast<size_t>(O) * I);
    for (int o = 0; o < O; ++o) {
      double s = 0;
      for (int i = 0; i < I; ++i)
        s += static_cast<double>(pv[o * I + i]) * pv[o * I + i];
      double n = std::max(std::sqrt(s), 1e-12);
      norms[o] = n;
      double sc = pg[o] / n;
      for (int i = 0; i < I; ++i)
        what[o * I + i] = static_cast<T>(pv[o * I + i] * sc);
    }
    MapM<T>(out.data<T>().data(), B, O).noalias() =
        CMapM<T>(x.data<T>().data(), B, I) *
        CMapM<T>(what.data(), O, I).transpose();
  });
  if (wants_grad({&x, &v, &g})) {
    NodePtr nx = x.node(), nv = v.node(), ng = g.node();
    attach_backward(out, {x, v, g}, [nx, nv, ng, B, I, O,
                                     norms](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pv = nv->data.span<T>().data();
        auto pg = ng->data.span<T>();
        CMapM<T> dy(self.grad->span<T>().data(), B, O);
        // dwhat = dy^T * x  (O x I)
        std::vector<T> dwhat(static_cast<size_t>(O) * I);
        MapM<T>(dwhat.data(), O, I).noalias() =
            dy.transpose() * CMapM<T>(nx->data.span<T>().data(), B, I);
        if (nx->requires_grad) {
          std::vector<T> what(static_cast<size_t>(O) * I);
          for (int o = 0; o < O; ++o) {
            double sc = pg[o] / norms[o];
            for (int i = 0; i < I; ++i)
              what[o * I + i] = static_cast<T>(pv[o * I + i] * sc);
          }
          MapM<T>(grad_of<T>(nx).data(), B, I).noalias() +=
              dy * CMapM<T>(what.data(), O, I);
        }
        T* pdv = nv->requires_grad ? grad_of<T>(nv).data() : nullptr;
        T* pdg = ng->requires_grad ? grad_of<T>(ng).data() : nullptr;
        for (int o = 0; o < O; ++o) {
          double n = norms[o];
          double dot = 0;  // dwhat_o . vhat_o
          for (int i = 0; i < I; ++i)
            dot += static_cast<double>(dwhat[o * I + i]) * pv[o * I + i] / n;
          if (pdg) pdg[o] += static_cast<T>(dot);
          if (pdv) {
            double sc = pg[o] / n;
            for (int i = 0; i < I; ++i) {
              double vhat = pv[o * I + i] / n;
              pdv[o * I + i] +=
                  static_cast<T>(sc * (dwhat[o * I + i] - vhat * dot));
            }
          }
        }
      });
    });
  }
  return out;
}

// ------------------------------------------------------------------- pooling

Tensor average_pool(const Tensor& x) {
  OV_REQUIRE(x.rank() == 4, "average_pool: x must be NCHW, got ",
             shape_str(x.shape()));
  int N = x.dim(0), C = x.dim(1);
  int64_t sp = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor out = Tensor::zeros({N, C}, x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>().data();
    T* po = out.data<T>().data();
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
      double s = 0;
      const T* b = px + nc * sp;
      for (int64_t i = 0; i < sp; ++i) s += b[i];
      po[nc] = static_cast<T>(s / sp);
    }
  });
  if (wants_grad({&x})) {
    NodePtr nx = x.node();
    attach_backward(out, {x}, [nx, N, C, sp](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* dy = self.grad->span<T>().data();
        auto dx = grad_of<T>(nx);
        for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
          T v = static_cast<T>(dy[nc] / sp);
          for (int64_t i = 0; i < sp; ++i) dx[nc * sp + i] += v;
        }
      });
    });
  }
  return out;
}

// ----------------------------------------------------------------- embedding

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  OV_REQUIRE(table.rank() == 2, "embedding_lookup: table must be [V,D]");
  int V = table.dim(0), D = table.dim(1);
  int B = static_cast<int>(ids.size());
  for (int id : ids)
    OV_REQUIRE(id >= 0 && id < V, "embedding_lookup: id ", id,
               " out of range [0,", V, ")");
  Tensor out = Tensor::zeros({B, D}, table.dtype());
  dispatch_dtype(table.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pt = table.data<T>().data();
    T* po = out.data<T>().data();
    for (int b = 0; b < B; ++b)
      std::copy(pt + static_cast<int64_t>(ids[b]) * D,
                pt + static_cast<int64_t>(ids[b] + 1) * D, po + static_cast<int64_t>(b) * D);
  });
  if (wants_grad({&table})) {
    NodePtr nt = table.node();
    attach_backward(out, {table}, [nt, ids, D](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* dy = self.grad->span<T>().data();
        auto dt_ = grad_of<T>(nt);
        for (size_t b = 0; b < ids.size(); ++b)
          for (int d = 0; d < D; ++d)
            dt_[static_cast<int64_t>(ids[b]) * D + d] +=
                dy[static_cast<int64_t>(b) * D + d];
      });
    });
  }
  return out;
}

// --------------------------------------------------------------- shape moves

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  OV_REQUIRE(!xs.empty(), "concat: empty input list");
  int rank = xs[0].rank();
  OV_REQUIRE(axis >= 0 && axis < rank, "concat: axis ", axis, " out of range");
  Shape out_shape = xs[0].shape();
  int64_t axis_total = 0;
  for (const Tensor& t : xs) {
    OV_REQUIRE(t.rank() == rank, "concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis)
        OV_REQUIRE(t.dim(d) == out_shape[d], "concat: shape mismatch ",
                   shape_str(t.shape()), " vs ", shape_str(xs[0].shape()));
    axis_total += t.dim(axis);
  }
  out_shape[axis] = static_cast<int>(axis_total);
  DType dt = xs[0].dtype();
  for (const Tensor& t : xs) OV_REQUIRE(t.dtype() == dt, "concat: mixed dtypes");

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[d];
  for (int d = axis + 1; d < rank; ++d) inner *= out_shape[d];

  Tensor out = Tensor::zeros(out_shape, dt);
  std::vector<int64_t> offsets(xs.size());
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    T* po = out.data<T>().data();
    int64_t out_row = axis_total * inner;
    int64_t off = 0;
    for (size_t t = 0; t < xs.size(); ++t) {
      offsets[t] = off;
      const T* px = xs[t].data<T>().data();
      int64_t blk = xs[t].dim(axis) * inner;
      for (int64_t o = 0; o < outer; ++o)
        std::copy(px + o * blk, px + (o + 1) * blk, po + o * out_row + off);
      off += blk;
    }
  });
  bool any = false;
  for (const Tensor& t : xs)
    if (wants_grad({&t})) any = true;
  if (any) {
    std::vector<NodePtr> nodes;
    for (const Tensor& t : xs) nodes.push_back(t.node());
    std::vector<int64_t> blks;
    for (const Tensor& t : xs)
      blks.push_back(static_cast<int64_t>(t.dim(axis)) * inner);
    int64_t out_row = axis_total * inner;
    attach_backward(out, xs,
                    [nodes, offsets, blks, outer, out_row](TensorNode& self) {
                      dispatch_dtype(self.data.dtype(), [&](auto tag) {
                        using T = decltype(tag);
                        const T* dy = self.grad->span<T>().data();
                        for (size_t t = 0; t < nodes.size(); ++t) {
                          if (!nodes[t]->requires_grad) continue;
                          auto dx = grad_of<T>(nodes[t]);
                          for (int64_t o = 0; o < outer; ++o) {
                            const T* src = dy + o * out_row + offsets[t];
                            T* dst = dx.data() + o * blks[t];
                            for (int64_t i = 0; i < blks[t]; ++i)
                              dst[i] += src[i];
                          }
                        }
                      });
                    });
  }
  return out;
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  OV_REQUIRE(numel_of(shape) == x.numel(), "reshape: ", shape_str(x.shape()),
             " -> ", shape_str(shape), " changes element count");
  Tensor out = Tensor::zeros(shape, x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto px = x.data<T>();
    auto po = out.data<T>();
    std::copy(px.begin(), px.end(), po.begin());
  });
  if (wants_grad({&x})) {
    NodePtr nx = x.node();
    attach_backward(out, {x}, [nx](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto dy = self.grad->span<T>();
        auto dx = grad_of<T>(nx);
        for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
      });
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
  OV_REQUIRE(axis >= 0 && axis < x.rank(), "slice: axis out of range");
  OV_REQUIRE(start >= 0 && len > 0 && start + len <= x.dim(axis),
             "slice: [", start, ",", start + len, ") out of range for dim ",
             x.dim(axis));
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  int64_t in_blk = static_cast<int64_t>(x.dim(axis)) * inner;
  int64_t out_blk = static_cast<int64_t>(len) * inner;
  int64_t off = static_cast<int64_t>(start) * inner;
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>().data();
    T* po = out.data<T>().data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(px + o * in_blk + off, px + o * in_blk + off + out_blk,
                po + o * out_blk);
  });
  if (wants_grad({&x})) {
    NodePtr nx = x.node();
    attach_backward(out, {x}, [nx, outer, in_blk, out_blk, off](TensorNode& self) {
      dispatch_dtype(self.data.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* dy = self.grad->span<T>().data();
        auto dx = grad_of<T>(nx);
        for (int64_t o = 0; o < outer; ++o) {
          T* dst = dx.data() + o * in_blk + off;
          const T* src = dy + o * out_blk;
          for (int64_t i = 0; i < out_blk; ++i) dst[i] += src[i];
        }
      });
    });
  }
  return out;
}

// ----------------------------------------------------------- recurrent cells

std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h,
                                    const Tensor& c, const Tensor& w_ih,
                                    const Tensor& w_hh, const Tensor& b_ih,
                                    const Tensor& b_hh) {
  OV_REQUIRE(x.rank() == 2 && h.rank() == 2 && c.rank() == 2,
             "lstm_cell: x/h/c must be rank 2");
  int B = x.dim(0), I = x.dim(1), H = h.dim(1);
  OV_REQUIRE(h.dim(0) == B && c.dim(0) == B && c.dim(1) == H,
             "lstm_cell: batch/width mismatch x ", shape_str(x.shape()), " h ",
             shape_str(h.shape()), " c ", shape_str(c.shape()));
  OV_REQUIRE(w_ih.rank() == 2 && w_ih.dim(0) == 4 * H && w_ih.dim(1) == I,
             "lstm_cell: w_ih ", shape_str(w_ih.shape()), " wants [", 4 * H,
             ",", I, "]");
  OV_REQUIRE(w_hh.rank() == 2 && w_hh.dim(0) == 4 * H && w_hh.dim(1) == H,
             "lstm_cell: w_hh ", shape_str(w_hh.shape()));
  OV_REQUIRE(b_ih.numel() == 4 * H && b_hh.numel() == 4 * H,
             "lstm_cell: bias sizes");
  DType dt = same_dtype("lstm_cell", {&x, &h, &c, &w_ih, &w_hh, &b_ih, &b_hh});

  Tensor hc = Tensor::zeros({B, 2 * H}, dt);
  // Post-activation gates i,f,g,o and tanh(c') saved for backward.
  auto acts = std::make_shared<std::vector<double>>(
      static_cast<size_t>(B) * 4 * H);
  auto tanhc = std::make_shared<std::vector<double>>(
      static_cast<size_t>(B) * H);
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> gates(static_cast<size_t>(B) * 4 * H);
    MapM<T> gm(gates.data(), B, 4 * H);
    gm.noalias() = CMapM<T>(x.data<T>().data(), B, I) *
                   CMapM<T>(w_ih.data<T>().data(), 4 * H, I).transpose();
    gm.noalias() += CMapM<T>(h.data<T>().data(), B, H) *
                    CMapM<T>(w_hh.data<T>().data(), 4 * H, H).transpose();
    auto pbi = b_ih.data<T>();
    auto pbh = b_hh.data<T>();
    const T* pc = c.data<T>().data();
    T* po = hc.data<T>().data();
    for (int b = 0; b < B; ++b) {
      for (int k = 0; k < H; ++k) {
        double gi = gm(b, k) + pbi[k] + pbh[k];
        double gf = gm(b, H + k) + pbi[H + k] + pbh[H + k];
        double gg = gm(b, 2 * H + k) + pbi[2 * H + k] + pbh[2 * H + k];
        double go = gm(b, 3 * H + k) + pbi[3 * H + k] + pbh[3 * H + k];
        double iv = sigmoid_v(gi), fv = sigmoid_v(gf), gv = std::tanh(gg),
               ov_ = sigmoid_v(go);
        double cn = fv * pc[b * H + k] + iv * gv;
        double th = std::tanh(cn);
        (*acts)[(static_cast<size_t>(b) * 4 + 0) * H + k] = iv;
        (*acts)[(static_cast<size_t>(b) * 4 + 1) * H + k] = fv;
        (*acts)[(static_cast<size_t>(b) * 4 + 2) * H + k] = gv;
        (*acts)[(static_cast<size_t>(b) * 4 + 3) * H + k] = ov_;
        (*tanhc)[static_cast<size_t>(b) * H + k] = th;
        po[b * 2 * H + k] = static_cast<T>(ov_ * th);
        po[b * 2 * H + H + k] = static_cast<T>(cn);
      }
    }
  });
  if (wants_grad({&x, &h, &c, &w_ih, &w_hh, &b_ih, &b_hh})) {
    NodePtr nx = x.node(), nh = h.node(), nc = c.node(), nwi = w_ih.node(),
            nwh = w_hh.node(), nbi = b_ih.node(), nbh = b_hh.node();
    attach_backward(
        hc, {x, h, c, w_ih, w_hh, b_ih, b_hh},
        [nx, nh, nc, nwi, nwh, nbi, nbh, acts, tanhc, B, I, H](TensorNode& self) {
          dispatch_dtype(self.data.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* dhc = self.grad->span<T>().data();
            const T* pc = nc->data.span<T>().data();
            std::vector<T> dgates(static_cast<size_t>(B) * 4 * H);
            T* pdc = nc->requires_grad ? grad_of<T>(nc).data() : nullptr;
            for (int b = 0; b < B; ++b) {
              for (int k = 0; k < H; ++k) {
                double dh = dhc[b * 2 * H + k];
                double dcn = dhc[b * 2 * H + H + k];
                double iv = (*acts)[(static_cast<size_t>(b) * 4 + 0) * H + k];
                double fv = (*acts)[(static_cast<size_t>(b) * 4 + 1) * H + k];
                double gv = (*acts)[(static_cast<size_t>(b) * 4 + 2) * H + k];
                double ov_ = (*acts)[(static_cast<size_t>(b) * 4 + 3) * H + k];
                double th = (*tanhc)[static_cast<size_t>(b) * H + k];
                double dct = dcn + dh * ov_ * (1.0 - th * th);
                double dov = dh * th;
                double div = dct * gv;
                double dfv = dct * pc[b * H + k];
                double dgv = dct * iv;
                if (pdc) pdc[b * H + k] += static_cast<T>(dct * fv);
                dgates[static_cast<size_t>(b) * 4 * H + k] =
                    static_cast<T>(div * iv * (1 - iv));
                dgates[static_cast<size_t>(b) * 4 * H + H + k] =
                    static_cast<T>(dfv * fv * (1 - fv));
                dgates[static_cast<size_t>(b) * 4 * H + 2 * H + k] =
                    static_cast<T>(dgv * (1 - gv * gv));
                dgates[static_cast<size_t>(b) * 4 * H + 3 * H + k] =
                    static_cast<T>(dov * ov_ * (1 - ov_));
              }
            }
            CMapM<T> dg(dgates.data(), B, 4 * H);
            if (nx->requires_grad)
              MapM<T>(grad_of<T>(nx).data(), B, I).noalias() +=
                  dg * CMapM<T>(nwi->data.span<T>().data(), 4 * H, I);
            if (nh->requires_grad)
              MapM<T>(grad_of<T>(nh).data(), B, H).noalias() +=
                  dg * CMapM<T>(nwh->data.span<T>().data(), 4 * H, H);
            if (nwi->requires_grad)
              MapM<T>(grad_of<T>(nwi).data(), 4 * H, I).noalias() +=
                  dg.transpose() * CMapM<T>(nx->data.span<T>().data(), B, I);
            if (nwh->requires_grad)
              MapM<T>(grad_of<T>(nwh).data(), 4 * H, H).noalias() +=
                  dg.transpose() * CMapM<T>(nh->data.span<T>().data(), B, H);
            if (nbi->requires_grad || nbh->requires_grad) {
              std::vector<double> db(static_cast<size_t>(4) * H, 0.0);
              for (int b = 0; b < B; ++b)
                for (int k = 0; k < 4 * H; ++k)
                  db[k] += dgates[static_cast<size_t>(b) * 4 * H + k];
              if (nbi->requires_grad) {
                auto d = grad_of<T>(nbi);
                for (int k = 0; k < 4 * H; ++k) d[k] += static_cast<T>(db[k]);
              }
              if (nbh->requires_grad) {
                auto d = grad_of<T>(nbh);
                for (int k = 0; k < 4 * H; ++k) d[k] += static_cast<T>(db[k]);
              }
            }
          });
        });
  }
  Tensor h_out = slice(hc, 1, 0, H);
  Tensor c_out = slice(hc, 1, H, H);
  return {h_out, c_out};
}

Tensor gru_cell(const Tensor& x, const Tensor& h, const Tensor& w_ih,
                const Tensor& w_hh, const Tensor& b_ih, const Tensor& b_hh) {
  OV_REQUIRE(x.rank() == 2 && h.rank() == 2, "gru_cell: x/h must be rank 2");
  int B = x.dim(0), I = x.dim(1), H = h.dim(1);
  OV_REQUIRE(h.dim(0) == B, "gru_cell: batch mismatch");
  OV_REQUIRE(w_ih.rank() == 2 && w_ih.dim(0) == 3 * H && w_ih.dim(1) == I,
             "gru_cell: w_ih ", shape_str(w_ih.shape()), " wants [", 3 * H, ",",
             I, "]");
  OV_REQUIRE(w_hh.rank() == 2 && w_hh.dim(0) == 3 * H && w_hh.dim(1) == H,
             "gru_cell: w_hh ", shape_str(w_hh.shape()));
  OV_REQUIRE(b_ih.numel() == 3 * H && b_hh.numel() == 3 * H,
             "gru_cell: bias sizes");
  DType dt = same_dtype("gru_cell", {&x, &h, &w_ih, &w_hh, &b_ih, &b_hh});

  Tensor out = Tensor::zeros({B, H}, dt);
  // Saved: r, z, n and the hidden-side candidate pre-mix (W_hn h + b_hn).
  auto saved = std::make_shared<std::vector<double>>(
      static_cast<size_t>(B) * 4 * H);
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> gi(static_cast<size_t>(B) * 3 * H);
    std::vector<T> gh(static_cast<size_t>(B) * 3 * H);
    MapM<T>(gi.data(), B, 3 * H).noalias() =
        CMapM<T>(x.data<T>().data(), B, I) *
        CMapM<T>(w_ih.data<T>().data(), 3 * H, I).transpose();
    MapM<T>(gh.data(), B, 3 * H).noalias() =
        CMapM<T>(h.data<T>().data(), B, H) *
        CMapM<T>(w_hh.data<T>().data(), 3 * H, H).transpose();
    auto pbi = b_ih.data<T>();
    auto pbh = b_hh.data<T>();
    const T* ph = h.data<T>().data();
    T* po = out.data<T>().data();
    for (int b = 0; b < B; ++b) {
      for (int k = 0; k < H; ++k) {
        double r = sigmoid_v(static_cast<double>(gi[b * 3 * H + k]) + pbi[k] +
                             gh[b * 3 * H + k] + pbh[k]);
        double z = sigmoid_v(static_cast<double>(gi[b * 3 * H + H + k]) +
                             pbi[H + k] + gh[b * 3 * H + H + k] + pbh[H + k]);
        double hn = static_cast<double>(gh[b * 3 * H + 2 * H + k]) + pbh[2 * H + k];
        double n = std::tanh(static_cast<double>(gi[b * 3 * H + 2 * H + k]) +
                             pbi[2 * H + k] + r * hn);
        (*saved)[(static_cast<size_t>(b) * 4 + 0) * H + k] = r;
        (*saved)[(static_cast<size_t>(b) * 4 + 1) * H + k] = z;
        (*saved)[(static_cast<size_t>(b) * 4 + 2) * H + k] = n;
        (*saved)[(static_cast<size_t>(b) * 4 + 3) * H + k] = hn;
        po[b * H + k] = static_cast<T>((1.0 - z) * n + z * ph[b * H + k]);
      }
    }
  });
  if (wants_grad({&x, &h, &w_ih, &w_hh, &b_ih, &b_hh})) {
    NodePtr nx = x.node(), nh = h.node(), nwi = w_ih.node(), nwh = w_hh.node(),
            nbi = b_ih.node(), nbh = b_hh.node();
    attach_backward(
        out, {x, h, w_ih, w_hh, b_ih, b_hh},
        [nx, nh, nwi, nwh, nbi, nbh, saved, B, I, H](TensorNode& self) {
          dispatch_dtype(self.data.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* dy = self.grad->span<T>().data();
            const T* ph = nh->data.span<T>().data();
            std::vector<T> dgi(static_cast<size_t>(B) * 3 * H);
            std::vector<T> dgh(static_cast<size_t>(B) * 3 * H);
            T* pdh = nh->requires_grad ? grad_of<T>(nh).data() : nullptr;
            for (int b = 0; b < B; ++b) {
              for (int k = 0; k < H; ++k) {
                double r = (*saved)[(static_cast<size_t>(b) * 4 + 0) * H + k];
                double z = (*saved)[(static_cast<size_t>(b) * 4 + 1) * H + k];
                double n = (*saved)[(static_cast<size_t>(b) * 4 + 2) * H + k];
                double hn = (*saved)[(static_cast<size_t>(b) * 4 + 3) * H + k];
                double d = dy[b * H + k];
                double dz = d * (ph[b * H + k] - n) * z * (1 - z);
                double dn = d * (1 - z) * (1 - n * n);
                double dr = dn * hn * r * (1 - r);
                dgi[b * 3 * H + k] = static_cast<T>(dr);
                dgi[b * 3 * H + H + k] = static_cast<T>(dz);
                dgi[b * 3 * H + 2 * H + k] = static_cast<T>(dn);
                dgh[b * 3 * H + k] = static_cast<T>(dr);
                dgh[b * 3 * H + H + k] = static_cast<T>(dz);
                dgh[b * 3 * H + 2 * H + k] = static_cast<T>(dn * r);
                if (pdh) pdh[b * H + k] += static_cast<T>(d * z);
              }
            }
            CMapM<T> dgim(dgi.data(), B, 3 * H);
            CMapM<T> dghm(dgh.data(), B, 3 * H);
            if (nx->requires_grad)
              MapM<T>(grad_of<T>(nx).data(), B, I).noalias() +=
                  dgim * CMapM<T>(nwi->data.span<T>().data(), 3 * H, I);
            if (pdh)
              MapM<T>(pdh, B, H).noalias() +=
                  dghm * CMapM<T>(nwh->data.span<T>().data(), 3 * H, H);
            if (nwi->requires_grad)
              MapM<T>(grad_of<T>(nwi).data(), 3 * H, I).noalias() +=
                  dgim.transpose() * CMapM<T>(nx->data.span<T>().data(), B, I);
            if (nwh->requires_grad)
              MapM<T>(grad_of<T>(nwh).data(), 3 * H, H).noalias() +=
                  dghm.transpose() * CMapM<T>(nh->data.span<T>().data(), B, H);
            if (nbi->requires_grad) {
              auto d = grad_of<T>(nbi);
              for (int b = 0; b < B; ++b)
                for (int k = 0; k < 3 * H; ++k)
                  d[k] += dgi[static_cast<size_t>(b) * 3 * H + k];
            }
            if (nbh->requires_grad) {
              auto d = grad_of<T>(nbh);
              for (int b = 0; b < B; ++b)
                for (int k = 0; k < 3 * H; ++k)
                  d[k] += dgh[static_cast<size_t>(b) * 3 * H + k];
            }
          });
        });
  }
  return out;
}

}  // namespace ov::ops
