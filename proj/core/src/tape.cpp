#include "lvae/tape.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>

namespace lvae {

size_t Tape::check_id(NodeId id) const {
  check(id >= 0 && static_cast<size_t>(id) < nodes_.size(),
        "invalid node id " + std::to_string(id));
  return static_cast<size_t>(id);
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  if (precise()) n.dv.assign(value.data.begin(), value.data.end());
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::emit(Tensor value, std::initializer_list<NodeId> inputs, BackFn back) {
  Node n;
  n.value = std::move(value);
  for (NodeId in : inputs) {
    if (nodes_[check_id(in)].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::emit(Tensor value, const std::vector<NodeId>& inputs, BackFn back) {
  Node n;
  n.value = std::move(value);
  for (NodeId in : inputs) {
    if (nodes_[check_id(in)].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

const std::vector<double>* Tape::dval(NodeId id) const {
  const Node& n = nodes_[check_id(id)];
  return n.dv.empty() ? nullptr : &n.dv;
}

void Tape::set_dval(NodeId id, std::vector<double> dv) {
  Node& n = nodes_[check_id(id)];
  check(dv.size() == n.value.data.size(), "float64 lane size mismatch");
  n.dv = std::move(dv);
}

double Tape::scalar_value(NodeId id) const {
  const Node& n = nodes_[check_id(id)];
  check(n.value.is_scalar(), "scalar_value: node is not scalar");
  return n.dv.empty() ? static_cast<double>(n.value.data[0]) : n.dv[0];
}

Tensor& Tape::grad_buffer(NodeId id) {
  Node& n = nodes_[check_id(id)];
  if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

bool Tape::has_grad(NodeId id) const { return !nodes_[check_id(id)].grad.data.empty(); }

const Tensor& Tape::grad(NodeId id) const {
  const Node& n = nodes_[check_id(id)];
  check(!n.grad.data.empty(),
        "node " + std::to_string(id) + " has no gradient; run backward first");
  return n.grad;
}

void Tape::backward(NodeId loss) {
  check(!backward_done_, "backward already ran on this tape; record a new forward pass");
  const Node& ln = nodes_[check_id(loss)];
  check(ln.value.is_scalar(),
        "backward requires a scalar loss, got shape " + shape_str(ln.value.shape));
  backward_done_ = true;
  grad_buffer(loss).data[0] = 1.0f;
  for (NodeId id = loss; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad || !n.back) continue;
    if (n.grad.data.empty()) continue;  // not reachable from the loss
    n.back(*this, id);
  }
}

namespace ops {
namespace {

void check_same_shape(const Tape& t, NodeId a, NodeId b, const char* op) {
  check(t.value(a).same_shape(t.value(b)),
        std::string(op) + ": shape mismatch " + shape_str(t.value(a).shape) + " vs " +
            shape_str(t.value(b).shape));
}

bool all_dval(const Tape& t, std::initializer_list<NodeId> ids) {
  for (NodeId id : ids)
    if (t.dval(id) == nullptr) return false;
  return true;
}

// Unary elementwise op. `fwd` runs in double on whichever lane is live;
// `dlocal(x, y)` is dy/dx for the f32 backward pass.
template <typename F, typename D>
NodeId unary(Tape& t, NodeId a, F fwd, D dlocal) {
  const Tensor& x = t.value(a);
  const std::vector<double>* dx = t.dval(a);
  Tensor y(x.shape);
  std::vector<double> dy;
  if (dx != nullptr) {
    dy.resize(x.data.size());
    for (int64_t i = 0; i < x.size(); ++i) {
      dy[i] = fwd((*dx)[i]);
      y.data[i] = static_cast<float>(dy[i]);
    }
  } else {
    for (int64_t i = 0; i < x.size(); ++i)
      y.data[i] = static_cast<float>(fwd(static_cast<double>(x.data[i])));
  }
  NodeId out = t.emit(std::move(y), {a}, [a, dlocal](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.value(a);
    const Tensor& yv = tp.value(self);
    Tensor& ga = tp.grad_buffer(a);
    for (int64_t i = 0; i < g.size(); ++i)
      ga.data[i] += g.data[i] * dlocal(xv.data[i], yv.data[i]);
  });
  if (!dy.empty()) t.set_dval(out, std::move(dy));
  return out;
}

// Binary elementwise op over identical shapes.
template <typename F>
NodeId binary(Tape& t, NodeId a, NodeId b, const char* name, F fwd, Tape::BackFn back) {
  check_same_shape(t, a, b, name);
  const Tensor& xa = t.value(a);
  const Tensor& xb = t.value(b);
  Tensor y(xa.shape);
  std::vector<double> dy;
  if (all_dval(t, {a, b})) {
    const std::vector<double>& da = *t.dval(a);
    const std::vector<double>& db = *t.dval(b);
    dy.resize(xa.data.size());
    for (int64_t i = 0; i < xa.size(); ++i) {
      dy[i] = fwd(da[i], db[i]);
      y.data[i] = static_cast<float>(dy[i]);
    }
  } else {
    for (int64_t i = 0; i < xa.size(); ++i)
      y.data[i] = static_cast<float>(
          fwd(static_cast<double>(xa.data[i]), static_cast<double>(xb.data[i])));
  }
  NodeId out = t.emit(std::move(y), {a, b}, std::move(back));
  if (!dy.empty()) t.set_dval(out, std::move(dy));
  return out;
}

}  // namespace

NodeId add(Tape& t, NodeId a, NodeId b) {
  return binary(t, a, b, "add", [](double x, double y) { return x + y; },
                [a, b](Tape& tp, NodeId self) {
                  const Tensor& g = tp.grad(self);
                  if (tp.requires_grad(a)) {
                    Tensor& ga = tp.grad_buffer(a);
                    for (int64_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
                  }
                  if (tp.requires_grad(b)) {
                    Tensor& gb = tp.grad_buffer(b);
                    for (int64_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i];
                  }
                });
}

NodeId sub(Tape& t, NodeId a, NodeId b) {
  return binary(t, a, b, "sub", [](double x, double y) { return x - y; },
                [a, b](Tape& tp, NodeId self) {
                  const Tensor& g = tp.grad(self);
                  if (tp.requires_grad(a)) {
                    Tensor& ga = tp.grad_buffer(a);
                    for (int64_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
                  }
                  if (tp.requires_grad(b)) {
                    Tensor& gb = tp.grad_buffer(b);
                    for (int64_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
                  }
                });
}

NodeId mul(Tape& t, NodeId a, NodeId b) {
  return binary(t, a, b, "mul", [](double x, double y) { return x * y; },
                [a, b](Tape& tp, NodeId self) {
                  const Tensor& g = tp.grad(self);
                  const Tensor& va = tp.value(a);
                  const Tensor& vb = tp.value(b);
                  if (tp.requires_grad(a)) {
                    Tensor& ga = tp.grad_buffer(a);
                    for (int64_t i = 0; i < g.size(); ++i)
                      ga.data[i] += g.data[i] * vb.data[i];
                  }
                  if (tp.requires_grad(b)) {
                    Tensor& gb = tp.grad_buffer(b);
                    for (int64_t i = 0; i < g.size(); ++i)
                      gb.data[i] += g.data[i] * va.data[i];
                  }
                });
}

NodeId scale(Tape& t, NodeId a, float c) {
  const double cd = c;
  return unary(t, a, [cd](double x) { return cd * x; }, [c](float, float) { return c; });
}

NodeId add_scalar(Tape& t, NodeId a, float c) {
  const double cd = c;
  return unary(t, a, [cd](double x) { return x + cd; }, [](float, float) { return 1.0f; });
}

NodeId sigmoid(Tape& t, NodeId a) {
  return unary(
      t, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](float, float y) { return y * (1.0f - y); });
}

NodeId tanh(Tape& t, NodeId a) {
  return unary(t, a, [](double x) { return std::tanh(x); },
               [](float, float y) { return 1.0f - y * y; });
}

NodeId relu(Tape& t, NodeId a) {
  const Tensor& xv = t.value(a);
  const std::vector<double>* dx = t.dval(a);
  for (int64_t i = 0; i < xv.size(); ++i)
    t.note_kink_distance(std::fabs(dx ? (*dx)[i] : static_cast<double>(xv.data[i])));
  return unary(t, a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

NodeId exp(Tape& t, NodeId a) {
  return unary(t, a, [](double x) { return std::exp(x); },
               [](float, float y) { return y; });
}

NodeId log(Tape& t, NodeId a) {
  return unary(t, a, [](double x) { return std::log(x); },
               [](float x, float) { return 1.0f / x; });
}

NodeId square(Tape& t, NodeId a) {
  return unary(t, a, [](double x) { return x * x; },
               [](float x, float) { return 2.0f * x; });
}

NodeId clamp(Tape& t, NodeId a, float lo, float hi) {
  check(lo < hi, "clamp: lo must be < hi");
  const double l = lo, h = hi;
  const Tensor& xv = t.value(a);
  const std::vector<double>* dx = t.dval(a);
  for (int64_t i = 0; i < xv.size(); ++i) {
    const double x = dx ? (*dx)[i] : static_cast<double>(xv.data[i]);
    t.note_kink_distance(std::min(std::fabs(x - l), std::fabs(x - h)));
  }
  return unary(
      t, a, [l, h](double x) { return x < l ? l : (x > h ? h : x); },
      [lo, hi](float x, float) { return (x > lo && x < hi) ? 1.0f : 0.0f; });
}

NodeId sum(Tape& t, NodeId a) {
  const Tensor& x = t.value(a);
  const std::vector<double>* dx = t.dval(a);
  double acc = 0.0;
  if (dx != nullptr) {
    for (double v : *dx) acc += v;
  } else {
    for (float v : x.data) acc += v;
  }
  NodeId out = t.emit(Tensor::scalar(static_cast<float>(acc)), {a},
                      [a](Tape& tp, NodeId self) {
                        float g = tp.grad(self).data[0];
                        Tensor& ga = tp.grad_buffer(a);
                        for (float& v : ga.data) v += g;
                      });
  t.set_dval(out, {acc});  // the f64 reduction is kept for scalar chains
  return out;
}

NodeId affine(Tape& t, NodeId x, NodeId w, NodeId b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  const Tensor& bv = t.value(b);
  check(xv.rank() == 2, "affine: input must be [N,D], got " + shape_str(xv.shape));
  check(wv.rank() == 2, "affine: weight must be [D,M], got " + shape_str(wv.shape));
  check(xv.shape[1] == wv.shape[0],
        "affine: inner dims disagree, input " + shape_str(xv.shape) + " weight " +
            shape_str(wv.shape));
  check(bv.rank() == 1 && bv.shape[0] == wv.shape[1],
        "affine: bias must be [M]=" + std::to_string(wv.shape[1]) + ", got " +
            shape_str(bv.shape));
  const int n = xv.shape[0], d = xv.shape[1], m = wv.shape[1];
  Tensor y(Shape{n, m});
  std::vector<double> dy;
  if (all_dval(t, {x, w, b})) {
    dy.assign(static_cast<size_t>(n) * m, 0.0);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, n, m, d, 1.0, t.dval(x)->data(), d,
                t.dval(w)->data(), m, 0.0, dy.data(), m);
    const std::vector<double>& db = *t.dval(b);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        dy[static_cast<size_t>(i) * m + j] += db[j];
        y.data[static_cast<size_t>(i) * m + j] =
            static_cast<float>(dy[static_cast<size_t>(i) * m + j]);
      }
  } else {
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, n, m, d, 1.0f, xv.data.data(), d,
                wv.data.data(), m, 0.0f, y.data.data(), m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) y.data[static_cast<size_t>(i) * m + j] += bv.data[j];
  }
  NodeId out = t.emit(std::move(y), {x, w, b}, [x, w, b, n, d, m](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv2 = tp.value(x);
    const Tensor& wv2 = tp.value(w);
    if (tp.requires_grad(x)) {
      Tensor& gx = tp.grad_buffer(x);  // dX += dY * W^T
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, n, d, m, 1.0f, g.data.data(), m,
                  wv2.data.data(), m, 1.0f, gx.data.data(), d);
    }
    if (tp.requires_grad(w)) {
      Tensor& gw = tp.grad_buffer(w);  // dW += X^T * dY
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, d, m, n, 1.0f, xv2.data.data(), d,
                  g.data.data(), m, 1.0f, gw.data.data(), m);
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) gb.data[j] += g.data[static_cast<size_t>(i) * m + j];
    }
  });
  if (!dy.empty()) t.set_dval(out, std::move(dy));
  return out;
}

namespace {

struct ConvDims {
  int n, c, h, w;  // input
  int k, kh, kw;   // kernel
  int stride, pad;
  int oh, ow;      // output
  int ckk() const { return c * kh * kw; }
  int64_t rows() const { return static_cast<int64_t>(n) * oh * ow; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  check(x.rank() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(x.shape));
  check(w.rank() == 4, "conv2d: weight must be [K,C,kh,kw], got " + shape_str(w.shape));
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(pad >= 0, "conv2d: pad must be >= 0");
  ConvDims d;
  d.n = x.shape[0]; d.c = x.shape[1]; d.h = x.shape[2]; d.w = x.shape[3];
  d.k = w.shape[0]; d.kh = w.shape[2]; d.kw = w.shape[3];
  d.stride = stride; d.pad = pad;
  check(w.shape[1] == d.c, "conv2d: weight expects " + std::to_string(w.shape[1]) +
                               " input channels, input has " + std::to_string(d.c));
  check(b.rank() == 1 && b.shape[0] == d.k,
        "conv2d: bias must be [K]=" + std::to_string(d.k) + ", got " + shape_str(b.shape));
  check(d.kh <= d.h + 2 * pad && d.kw <= d.w + 2 * pad,
        "conv2d: kernel larger than padded input");
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  return d;
}

// cols[row, c*kh*kw] with row = ((n*oh + oy)*ow + ox); zero padding.
template <typename T, typename S>
void im2col(const S* x, const ConvDims& d, std::vector<T>& cols) {
  cols.assign(static_cast<size_t>(d.rows()) * d.ckk(), T(0));
  const int ckk = d.ckk();
  for (int n = 0; n < d.n; ++n) {
    const S* xn = x + static_cast<size_t>(n) * d.c * d.h * d.w;
    for (int oy = 0; oy < d.oh; ++oy) {
      const int iy0 = oy * d.stride - d.pad;
      for (int ox = 0; ox < d.ow; ++ox) {
        const int ix0 = ox * d.stride - d.pad;
        T* row = cols.data() +
                 (static_cast<size_t>(n) * d.oh * d.ow + static_cast<size_t>(oy) * d.ow + ox) *
                     ckk;
        for (int c = 0; c < d.c; ++c) {
          const S* xc = xn + static_cast<size_t>(c) * d.h * d.w;
          T* rc = row + static_cast<size_t>(c) * d.kh * d.kw;
          for (int ky = 0; ky < d.kh; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= d.h) continue;
            const int kx_lo = ix0 < 0 ? -ix0 : 0;
            const int kx_hi = ix0 + d.kw > d.w ? d.w - ix0 : d.kw;
            const S* src = xc + static_cast<size_t>(iy) * d.w + ix0;
            T* dst = rc + static_cast<size_t>(ky) * d.kw;
            for (int kx = kx_lo; kx < kx_hi; ++kx) dst[kx] = static_cast<T>(src[kx]);
          }
        }
      }
    }
  }
}

// scatter-add of dcols back into dx; the adjoint of im2col.
void col2im_acc(const std::vector<float>& dcols, const ConvDims& d, Tensor& dx) {
  const int ckk = d.ckk();
  for (int n = 0; n < d.n; ++n) {
    float* xn = dx.data.data() + static_cast<size_t>(n) * d.c * d.h * d.w;
    for (int oy = 0; oy < d.oh; ++oy) {
      const int iy0 = oy * d.stride - d.pad;
      for (int ox = 0; ox < d.ow; ++ox) {
        const int ix0 = ox * d.stride - d.pad;
        const float* row = dcols.data() +
                           (static_cast<size_t>(n) * d.oh * d.ow +
                            static_cast<size_t>(oy) * d.ow + ox) *
                               ckk;
        for (int c = 0; c < d.c; ++c) {
          float* xc = xn + static_cast<size_t>(c) * d.h * d.w;
          const float* rc = row + static_cast<size_t>(c) * d.kh * d.kw;
          for (int ky = 0; ky < d.kh; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= d.h) continue;
            const int kx_lo = ix0 < 0 ? -ix0 : 0;
            const int kx_hi = ix0 + d.kw > d.w ? d.w - ix0 : d.kw;
            float* dst = xc + static_cast<size_t>(iy) * d.w + ix0;
            const float* src = rc + static_cast<size_t>(ky) * d.kw;
            for (int kx = kx_lo; kx < kx_hi; ++kx) dst[kx] += src[kx];
          }
        }
      }
    }
  }
}

}  // namespace

NodeId conv2d(Tape& t, NodeId x, NodeId w, NodeId b, int stride, int pad) {
  const ConvDims d = conv_dims(t.value(x), t.value(w), t.value(b), stride, pad);
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  const Tensor& bv = t.value(b);
  const int rows = static_cast<int>(d.rows());
  Tensor y(Shape{d.n, d.k, d.oh, d.ow});
  std::vector<double> dy;

  if (all_dval(t, {x, w, b})) {
    std::vector<double> cols;
    im2col(t.dval(x)->data(), d, cols);
    std::vector<double> y_nhwc(static_cast<size_t>(rows) * d.k);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, rows, d.k, d.ckk(), 1.0, cols.data(),
                d.ckk(), t.dval(w)->data(), d.ckk(), 0.0, y_nhwc.data(), d.k);
    const std::vector<double>& db = *t.dval(b);
    dy.resize(y.data.size());
    for (int n = 0; n < d.n; ++n)
      for (int k = 0; k < d.k; ++k) {
        const size_t base = (static_cast<size_t>(n) * d.k + k) * d.oh * d.ow;
        for (int p = 0; p < d.oh * d.ow; ++p) {
          const double v = y_nhwc[(static_cast<size_t>(n) * d.oh * d.ow + p) * d.k + k] + db[k];
          dy[base + p] = v;
          y.data[base + p] = static_cast<float>(v);
        }
      }
  } else {
    std::vector<float> cols;
    im2col(xv.data.data(), d, cols);
    std::vector<float> y_nhwc(static_cast<size_t>(rows) * d.k);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, rows, d.k, d.ckk(), 1.0f, cols.data(),
                d.ckk(), wv.data.data(), d.ckk(), 0.0f, y_nhwc.data(), d.k);
    for (int n = 0; n < d.n; ++n)
      for (int k = 0; k < d.k; ++k) {
        float* dst = y.data.data() + (static_cast<size_t>(n) * d.k + k) * d.oh * d.ow;
        const float bias = bv.data[k];
        for (int p = 0; p < d.oh * d.ow; ++p)
          dst[p] = y_nhwc[(static_cast<size_t>(n) * d.oh * d.ow + p) * d.k + k] + bias;
      }
  }

  NodeId out = t.emit(std::move(y), {x, w, b}, [x, w, b, d](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv2 = tp.value(x);
    const Tensor& wv2 = tp.value(w);
    const int rows2 = static_cast<int>(d.rows());

    std::vector<float> g_nhwc(static_cast<size_t>(rows2) * d.k);
    for (int n = 0; n < d.n; ++n)
      for (int k = 0; k < d.k; ++k) {
        const float* src = g.data.data() + (static_cast<size_t>(n) * d.k + k) * d.oh * d.ow;
        for (int p = 0; p < d.oh * d.ow; ++p)
          g_nhwc[(static_cast<size_t>(n) * d.oh * d.ow + p) * d.k + k] = src[p];
      }

    if (tp.requires_grad(w)) {
      std::vector<float> cols2;
      im2col(xv2.data.data(), d, cols2);  // recomputed; cheaper than caching
      Tensor& gw = tp.grad_buffer(w);
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, d.k, d.ckk(), rows2, 1.0f,
                  g_nhwc.data(), d.k, cols2.data(), d.ckk(), 1.0f, gw.data.data(), d.ckk());
    }
    if (tp.requires_grad(x)) {
      std::vector<float> dcols(static_cast<size_t>(rows2) * d.ckk());
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, rows2, d.ckk(), d.k, 1.0f,
                  g_nhwc.data(), d.k, wv2.data.data(), d.ckk(), 0.0f, dcols.data(), d.ckk());
      col2im_acc(dcols, d, tp.grad_buffer(x));
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      for (int64_t r = 0; r < rows2; ++r)
        for (int k = 0; k < d.k; ++k) gb.data[k] += g_nhwc[static_cast<size_t>(r) * d.k + k];
    }
  });
  if (!dy.empty()) t.set_dval(out, std::move(dy));
  return out;
}

namespace {

// shared index walk for upsample2x on either lane
template <typename T, typename S>
void upsample_copy(const S* src, T* dst, int planes, int h, int w) {
  for (int i = 0; i < planes; ++i) {
    const S* s = src + static_cast<size_t>(i) * h * w;
    T* o = dst + static_cast<size_t>(i) * 4 * h * w;
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) {
        const T v = static_cast<T>(s[static_cast<size_t>(r) * w + col]);
        T* cell = o + (static_cast<size_t>(2 * r) * 2 * w + 2 * col);
        cell[0] = v;
        cell[1] = v;
        cell[2 * w] = v;
        cell[2 * w + 1] = v;
      }
  }
}

}  // namespace

NodeId upsample2x(Tape& t, NodeId a) {
  const Tensor& x = t.value(a);
  check(x.rank() == 4, "upsample2x: input must be [N,C,H,W], got " + shape_str(x.shape));
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  Tensor y(Shape{n, c, 2 * h, 2 * w});
  std::vector<double> dy;
  if (const std::vector<double>* dx = t.dval(a)) {
    dy.resize(y.data.size());
    upsample_copy(dx->data(), dy.data(), n * c, h, w);
    for (size_t i = 0; i < dy.size(); ++i) y.data[i] = static_cast<float>(dy[i]);
  } else {
    upsample_copy(x.data.data(), y.data.data(), n * c, h, w);
  }
  NodeId out = t.emit(std::move(y), {a}, [a, n, c, h, w](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor& ga = tp.grad_buffer(a);
    for (int i = 0; i < n * c; ++i) {
      float* dst = ga.data.data() + static_cast<size_t>(i) * h * w;
      const float* src = g.data.data() + static_cast<size_t>(i) * 4 * h * w;
      for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col) {
          const float* s = src + (static_cast<size_t>(2 * r) * 2 * w + 2 * col);
          dst[static_cast<size_t>(r) * w + col] += s[0] + s[1] + s[2 * w] + s[2 * w + 1];
        }
    }
  });
  if (!dy.empty()) t.set_dval(out, std::move(dy));
  return out;
}

NodeId concat(Tape& t, const std::vector<NodeId>& parts) {
  check(!parts.empty(), "concat: need at least one input");
  if (parts.size() == 1) return parts[0];
  const Tensor& first = t.value(parts[0]);
  const int rank = first.rank();
  check(rank == 2 || rank == 4, "concat: rank must be 2 or 4, got " + shape_str(first.shape));
  int axis_total = 0;
  bool with_dval = true;
  for (NodeId p : parts) {
    const Tensor& v = t.value(p);
    check(v.rank() == rank, "concat: rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i == 1) continue;
      check(v.shape[i] == first.shape[i],
            "concat: non-axis dims must match, " + shape_str(v.shape) + " vs " +
                shape_str(first.shape));
    }
    axis_total += v.shape[1];
    with_dval = with_dval && t.dval(p) != nullptr;
  }
  Shape out_shape = first.shape;
  out_shape[1] = axis_total;
  const int n = first.shape[0];
  const int64_t inner =
      rank == 4 ? static_cast<int64_t>(first.shape[2]) * first.shape[3] : 1;

  Tensor y(out_shape);
  std::vector<double> dy;
  if (with_dval) dy.resize(y.data.size());
  int64_t off = 0;
  for (NodeId p : parts) {
    const Tensor& v = t.value(p);
    const int64_t chunk = v.shape[1] * inner;
    for (int i = 0; i < n; ++i) {
      std::memcpy(y.data.data() + (static_cast<size_t>(i) * axis_total * inner + off),
                  v.data.data() + static_cast<size_t>(i) * chunk, sizeof(float) * chunk);
      if (with_dval)
        std::memcpy(dy.data() + (static_cast<size_t>(i) * axis_total * inner + off),
                    t.dval(p)->data() + static_cast<size_t>(i) * chunk,
                    sizeof(double) * chunk);
    }
    off += chunk;
  }

  NodeId out =
      t.emit(std::move(y), parts, [parts, n, inner, axis_total](Tape& tp, NodeId self) {
        const Tensor& g = tp.grad(self);
        int64_t off2 = 0;
        for (NodeId p : parts) {
          const Tensor& v = tp.value(p);
          const int64_t chunk = v.shape[1] * inner;
          if (tp.requires_grad(p)) {
            Tensor& gp = tp.grad_buffer(p);
            for (int i = 0; i < n; ++i) {
              const float* src =
                  g.data.data() + (static_cast<size_t>(i) * axis_total * inner + off2);
              float* dst = gp.data.data() + static_cast<size_t>(i) * chunk;
              for (int64_t j = 0; j < chunk; ++j) dst[j] += src[j];
            }
          }
          off2 += chunk;
        }
      });
  if (!dy.empty()) t.set_dval(out, std::move(dy));
  return out;
}

NodeId concat(Tape& t, NodeId a, NodeId b) { return concat(t, std::vector<NodeId>{a, b}); }

NodeId slice(Tape& t, NodeId a, int begin, int end) {
  const Tensor& x = t.value(a);
  const int rank = x.rank();
  check(rank == 2 || rank == 4, "slice: rank must be 2 or 4");
  check(0 <= begin && begin < end && end <= x.shape[1],
        "slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
            ") out of bounds for axis size " + std::to_string(x.shape[1]));
  const int n = x.shape[0];
  const int64_t inner = rank == 4 ? static_cast<int64_t>(x.shape[2]) * x.shape[3] : 1;
  const int64_t full = x.shape[1] * inner;
  const int64_t chunk = static_cast<int64_t>(end - begin) * inner;
  Shape out_shape = x.shape;
  out_shape[1] = end - begin;
  Tensor y(out_shape);
  std::vector<double> dy;
  const std::vector<double>* dx = t.dval(a);
  if (dx != nullptr) dy.resize(y.data.size());
  for (int i = 0; i < n; ++i) {
    std::memcpy(y.data.data() + static_cast<size_t>(i) * chunk,
                x.data.data() + static_cast<size_t>(i) * full + begin * inner,
                sizeof(float) * chunk);
    if (dx != nullptr)
      std::memcpy(dy.data() + static_cast<size_t>(i) * chunk,
                  dx->data() + static_cast<size_t>(i) * full + begin * inner,
                  sizeof(double) * chunk);
  }
  NodeId out =
      t.emit(std::move(y), {a}, [a, n, inner, full, chunk, begin](Tape& tp, NodeId self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad_buffer(a);
        for (int i = 0; i < n; ++i) {
          const float* src = g.data.data() + static_cast<size_t>(i) * chunk;
          float* dst = ga.data.data() + static_cast<size_t>(i) * full + begin * inner;
          for (int64_t j = 0; j < chunk; ++j) dst[j] += src[j];
        }
      });
  if (!dy.empty()) t.set_dval(out, std::move(dy));
  return out;
}

NodeId reshape(Tape& t, NodeId a, Shape s) {
  const Tensor& x = t.value(a);
  check(numel(s) == x.size(), "reshape: " + shape_str(x.shape) + " -> " + shape_str(s) +
                                  " changes element count");
  Tensor y;
  y.shape = std::move(s);
  y.data = x.data;
  NodeId out = t.emit(std::move(y), {a}, [a](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor& ga = tp.grad_buffer(a);
    for (int64_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
  });
  if (const std::vector<double>* dx = t.dval(a)) t.set_dval(out, *dx);
  return out;
}

NodeId broadcast_channels(Tape& t, NodeId g, int channels) {
  const Tensor& x = t.value(g);
  check(x.rank() == 4 && x.shape[1] == 1,
        "broadcast_channels: input must be [N,1,H,W], got " + shape_str(x.shape));
  check(channels >= 1, "broadcast_channels: channels must be >= 1");
  const int n = x.shape[0], h = x.shape[2], w = x.shape[3];
  const int64_t hw = static_cast<int64_t>(h) * w;
  Tensor y(Shape{n, channels, h, w});
  std::vector<double> dy;
  const std::vector<double>* dx = t.dval(g);
  if (dx != nullptr) dy.resize(y.data.size());
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < channels; ++c) {
      std::memcpy(y.data.data() + (static_cast<size_t>(i) * channels + c) * hw,
                  x.data.data() + static_cast<size_t>(i) * hw, sizeof(float) * hw);
      if (dx != nullptr)
        std::memcpy(dy.data() + (static_cast<size_t>(i) * channels + c) * hw,
                    dx->data() + static_cast<size_t>(i) * hw, sizeof(double) * hw);
    }
  }
  NodeId out = t.emit(std::move(y), {g}, [g, n, channels, hw](Tape& tp, NodeId self) {
    const Tensor& gr = tp.grad(self);
    Tensor& gg = tp.grad_buffer(g);
    for (int i = 0; i < n; ++i) {
      float* dst = gg.data.data() + static_cast<size_t>(i) * hw;
      for (int c = 0; c < channels; ++c) {
        const float* src = gr.data.data() + (static_cast<size_t>(i) * channels + c) * hw;
        for (int64_t j = 0; j < hw; ++j) dst[j] += src[j];
      }
    }
  });
  if (!dy.empty()) t.set_dval(out, std::move(dy));
  return out;
}

}  // namespace ops

Tensor numeric_gradient(const TapeFn& f, const Tensor& x, double eps) {
  check(eps > 0.0, "numeric_gradient: eps must be > 0");
  Tensor g(x.shape);
  Tensor probe = x;
  for (int64_t i = 0; i < x.size(); ++i) {
    const float orig = probe.data[i];
    // evaluate at exactly representable points and divide by their true span
    const float xp = static_cast<float>(static_cast<double>(orig) + eps);
    const float xm = static_cast<float>(static_cast<double>(orig) - eps);
    check(xp != xm, "numeric_gradient: eps too small for the value scale");
    probe.data[i] = xp;
    Tape tp(Tape::Precision::kDouble);
    const double fp = tp.scalar_value(f(tp, tp.leaf(probe)));
    probe.data[i] = xm;
    Tape tm(Tape::Precision::kDouble);
    const double fm = tm.scalar_value(f(tm, tm.leaf(probe)));
    probe.data[i] = orig;
    g.data[i] =
        static_cast<float>((fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm)));
  }
  return g;
}

double max_rel_err(const Tensor& analytic, const Tensor& numeric) {
  check(analytic.same_shape(numeric), "max_rel_err: shape mismatch");
  double worst = 0.0;
  for (int64_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data[i];
    const double n = numeric.data[i];
    const double denom = std::max({std::fabs(a), std::fabs(n), 1e-8});
    worst = std::max(worst, std::fabs(a - n) / denom);
  }
  return worst;
}

double grad_check(const TapeFn& f, const Tensor& x, double eps) {
  Tape t;
  NodeId in = t.leaf(x, /*requires_grad=*/true);
  NodeId loss = f(t, in);
  check(t.value(loss).is_scalar(), "grad_check: f must be scalar-valued");
  t.backward(loss);
  return max_rel_err(t.grad(in), numeric_gradient(f, x, eps));
}

}  // namespace lvae
