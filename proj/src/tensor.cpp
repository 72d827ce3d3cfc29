#include "pointlang/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "pointlang/threadpool.hpp"

namespace pointlang {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

namespace {

void validate_shape(const Shape& s) {
  for (int d : s)
    if (d <= 0) fail<ShapeError>("non-positive dimension in shape ", shape_str(s));
}

void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) fail<NumericError>(op, ": non-finite value in output");
}

// out = A[M,K] * B[K,N]. Rows are partitioned across workers; the
// k-accumulation per output element is sequential -> bit-identical results
// for any worker count.
void mm(const double* a, const double* b, double* out, int m, int k, int n) {
  std::size_t grain = std::max<std::size_t>(1, 32768 / std::size_t(std::max(1, k * n)));
  parallel_for(std::size_t(m), grain, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      double* orow = out + i * std::size_t(n);
      std::fill(orow, orow + n, 0.0);
      const double* arow = a + i * std::size_t(k);
      for (int kk = 0; kk < k; ++kk) {
        double av = arow[kk];
        const double* brow = b + std::size_t(kk) * std::size_t(n);
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  });
}

// out[M,K] += G[M,N] * B^T where B is [K,N]  (dA of matmul)
void mm_nt_acc(const double* g, const double* b, double* out, int m, int n, int k) {
  std::size_t grain = std::max<std::size_t>(1, 32768 / std::size_t(std::max(1, k * n)));
  parallel_for(std::size_t(m), grain, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      const double* grow = g + i * std::size_t(n);
      double* orow = out + i * std::size_t(k);
      for (int kk = 0; kk < k; ++kk) {
        const double* brow = b + std::size_t(kk) * std::size_t(n);
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
        orow[kk] += acc;
      }
    }
  });
}

// out[K,N] += A^T * G where A is [M,K], G is [M,N]  (dB of matmul).
// k-rows are partitioned; i ascends sequentially inside -> deterministic.
void mm_tn_acc(const double* a, const double* g, double* out, int m, int k, int n) {
  std::size_t grain = std::max<std::size_t>(1, 32768 / std::size_t(std::max(1, m * n)));
  parallel_for(std::size_t(k), grain, [&](std::size_t k0, std::size_t k1) {
    for (int i = 0; i < m; ++i) {
      const double* arow = a + std::size_t(i) * std::size_t(k);
      const double* grow = g + std::size_t(i) * std::size_t(n);
      for (std::size_t kk = k0; kk < k1; ++kk) {
        double av = arow[kk];
        if (av == 0.0) continue;
        double* orow = out + kk * std::size_t(n);
        for (int j = 0; j < n; ++j) orow[j] += av * grow[j];
      }
    }
  });
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> stride_a, stride_b;  // strides on the out grid; 0 = broadcast
};

BroadcastPlan broadcast_plan(const char* op, const Shape& a, const Shape& b) {
  BroadcastPlan p;
  int ra = int(a.size()), rb = int(b.size()), r = std::max(ra, rb);
  p.out.resize(size_t(r));
  p.stride_a.assign(size_t(r), 0);
  p.stride_b.assign(size_t(r), 0);
  for (int i = 0; i < r; ++i) {
    int da = i < r - ra ? 1 : a[size_t(i - (r - ra))];
    int db = i < r - rb ? 1 : b[size_t(i - (r - rb))];
    if (da != db && da != 1 && db != 1)
      fail<ShapeError>(op, ": cannot broadcast ", shape_str(a), " with ", shape_str(b));
    p.out[size_t(i)] = std::max(da, db);
  }
  std::int64_t sa = 1, sb = 1;
  for (int i = r - 1; i >= 0; --i) {
    int da = i < r - ra ? 1 : a[size_t(i - (r - ra))];
    int db = i < r - rb ? 1 : b[size_t(i - (r - rb))];
    p.stride_a[size_t(i)] = da == 1 ? 0 : sa;
    p.stride_b[size_t(i)] = db == 1 ? 0 : sb;
    sa *= da;
    sb *= db;
  }
  return p;
}

// Walks the out grid accumulating grad into an operand's buffer through its
// broadcast strides. Ascending flat order -> deterministic accumulation.
void reduce_into(const std::vector<double>& grad, const Shape& out_shape,
                 const std::vector<std::int64_t>& stride_in, double* into) {
  int r = int(out_shape.size());
  std::vector<std::int64_t> idx(size_t(r), 0);
  std::int64_t n = shape_numel(out_shape);
  std::int64_t off = 0;
  for (std::int64_t f = 0; f < n; ++f) {
    into[off] += grad[size_t(f)];
    for (int ax = r - 1; ax >= 0; --ax) {
      idx[size_t(ax)]++;
      off += stride_in[size_t(ax)];
      if (idx[size_t(ax)] < out_shape[size_t(ax)]) break;
      off -= stride_in[size_t(ax)] * out_shape[size_t(ax)];
      idx[size_t(ax)] = 0;
    }
  }
}

double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
double gelu_bwd(double x) {
  static const double inv_sqrt2pi = 0.3989422804014326779;
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
}

enum { kAdd, kSub, kMul, kDiv };

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

double Tensor::item() const {
  if (size() != 1) fail<ShapeError>("item(): tensor has ", size(), " elements");
  return (*data_)[0];
}

Tensor Tensor::from(Shape s, std::vector<double> data) {
  validate_shape(s);
  if (shape_numel(s) != std::int64_t(data.size()))
    fail<ShapeError>("Tensor::from: shape ", shape_str(s), " needs ",
                     shape_numel(s), " values, got ", data.size());
  Tensor t;
  t.shape_ = std::move(s);
  t.data_ = std::make_shared<const std::vector<double>>(std::move(data));
  return t;
}

Tensor Tensor::zeros(Shape s) { return full(std::move(s), 0.0); }

Tensor Tensor::full(Shape s, double value) {
  validate_shape(s);
  std::vector<double> d(size_t(shape_numel(s)), value);
  return from(std::move(s), std::move(d));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::randn(Shape s, Rng& rng, double stddev) {
  validate_shape(s);
  std::vector<double> d(size_t(shape_numel(s)));
  for (auto& x : d) x = rng.gaussian() * stddev;
  return from(std::move(s), std::move(d));
}

// ---------------------------------------------------------------------------
// Gradients

bool Gradients::has(const Tensor& t) const {
  return t.node >= 0 && size_t(t.node) < by_node_.size() &&
         by_node_[size_t(t.node)] != nullptr;
}

const std::vector<double>& Gradients::wrt(const Tensor& t) const {
  if (t.node < 0) fail("Gradients::wrt: tensor is not tracked on a tape");
  if (!has(t)) fail("Gradients::wrt: no gradient reached this tensor");
  return *by_node_[size_t(t.node)];
}

// ---------------------------------------------------------------------------
// Tape core

Tensor Tape::leaf(const Tensor& t) {
  if (!t.defined()) fail("leaf: undefined tensor");
  Tensor out = t;
  out.requires_grad = true;
  out.node = int(nodes_.size());
  nodes_.push_back(Node{nullptr, out.size()});
  return out;
}

Tensor Tape::detach(const Tensor& t) const {
  Tensor out = t;
  out.node = -1;
  out.requires_grad = false;
  return out;
}

int Tape::record(Tensor& out, std::function<void(const std::vector<double>&)> fn) {
  out.node = int(nodes_.size());
  nodes_.push_back(Node{std::move(fn), out.size()});
  return out.node;
}

std::vector<double>* Tape::gacc(int node_id, std::int64_t numel) {
  if (node_id < 0) return nullptr;
  auto& slot = grads_[size_t(node_id)];
  if (!slot) slot = std::make_shared<std::vector<double>>(size_t(numel), 0.0);
  return slot.get();
}

Gradients Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    fail("backward: loss must be scalar, got shape ", shape_str(loss.shape()));
  if (loss.node < 0) fail("backward: loss is not on this tape");
  grads_.assign(nodes_.size(), nullptr);
  gacc(loss.node, 1)->at(0) = 1.0;
  for (int i = loss.node; i >= 0; --i) {
    if (!grads_[size_t(i)]) continue;
    if (nodes_[size_t(i)].back) nodes_[size_t(i)].back(*grads_[size_t(i)]);
  }
  Gradients g;
  g.by_node_ = std::move(grads_);
  grads_.clear();
  return g;
}

// ---------------------------------------------------------------------------
// matmul

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    fail<ShapeError>("matmul: need 2-D operands, got ", shape_str(a.shape()),
                     " and ", shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    fail<ShapeError>("matmul: inner dimensions differ: ", shape_str(a.shape()),
                     " x ", shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(size_t(m) * size_t(n));
  mm(a.ptr(), b.ptr(), out.data(), m, k, n);
  check_finite("matmul", out);
  Tensor r = Tensor::from({m, n}, std::move(out));
  if (active(a) || active(b)) {
    auto ad = a.data_, bd = b.data_;
    int an = a.node, bn = b.node;
    record(r, [this, ad, bd, an, bn, m, k, n](const std::vector<double>& g) {
      if (auto* ga = gacc(an, std::int64_t(m) * k))
        mm_nt_acc(g.data(), bd->data(), ga->data(), m, n, k);
      if (auto* gb = gacc(bn, std::int64_t(k) * n))
        mm_tn_acc(ad->data(), g.data(), gb->data(), m, k, n);
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// elementwise binary with broadcasting

Tensor Tape::binary(const char* name, int op, const Tensor& a, const Tensor& b) {
  BroadcastPlan plan = broadcast_plan(name, a.shape(), b.shape());
  std::int64_t n = shape_numel(plan.out);
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* pa = a.ptr();
  const double* pb = b.ptr();

  if (a.shape() == b.shape()) {
    switch (op) {
      case kAdd: for (std::int64_t i = 0; i < n; ++i) out[size_t(i)] = pa[i] + pb[i]; break;
      case kSub: for (std::int64_t i = 0; i < n; ++i) out[size_t(i)] = pa[i] - pb[i]; break;
      case kMul: for (std::int64_t i = 0; i < n; ++i) out[size_t(i)] = pa[i] * pb[i]; break;
      case kDiv: for (std::int64_t i = 0; i < n; ++i) out[size_t(i)] = pa[i] / pb[i]; break;
    }
  } else if (b.size() == 1) {
    double y = pb[0];
    switch (op) {
      case kAdd: for (std::int64_t i = 0; i < n; ++i) out[size_t(i)] = pa[i] + y; break;
      case kSub: for (std::int64_t i = 0; i < n; ++i) out[size_t(i)] = pa[i] - y; break;
      case kMul: for (std::int64_t i = 0; i < n; ++i) out[size_t(i)] = pa[i] * y; break;
      case kDiv: for (std::int64_t i = 0; i < n; ++i) out[size_t(i)] = pa[i] / y; break;
    }
  } else if (a.ndim() == 2 && b.ndim() == 1 && a.dim(1) == b.dim(0)) {
    // row-wise bias pattern [N,C] (op) [C]
    int rows = a.dim(0), cols = a.dim(1);
    for (int i = 0; i < rows; ++i) {
      const double* ar = pa + std::size_t(i) * size_t(cols);
      double* orow = out.data() + std::size_t(i) * size_t(cols);
      switch (op) {
        case kAdd: for (int j = 0; j < cols; ++j) orow[j] = ar[j] + pb[j]; break;
        case kSub: for (int j = 0; j < cols; ++j) orow[j] = ar[j] - pb[j]; break;
        case kMul: for (int j = 0; j < cols; ++j) orow[j] = ar[j] * pb[j]; break;
        case kDiv: for (int j = 0; j < cols; ++j) orow[j] = ar[j] / pb[j]; break;
      }
    }
  } else {
    int r = int(plan.out.size());
    std::vector<std::int64_t> idx(size_t(r), 0);
    std::int64_t ia = 0, ib = 0;
    for (std::int64_t f = 0; f < n; ++f) {
      double x = pa[ia], y = pb[ib], z = 0;
      switch (op) {
        case kAdd: z = x + y; break;
        case kSub: z = x - y; break;
        case kMul: z = x * y; break;
        case kDiv: z = x / y; break;
      }
      out[size_t(f)] = z;
      for (int ax = r - 1; ax >= 0; --ax) {
        idx[size_t(ax)]++;
        ia += plan.stride_a[size_t(ax)];
        ib += plan.stride_b[size_t(ax)];
        if (idx[size_t(ax)] < plan.out[size_t(ax)]) break;
        ia -= plan.stride_a[size_t(ax)] * plan.out[size_t(ax)];
        ib -= plan.stride_b[size_t(ax)] * plan.out[size_t(ax)];
        idx[size_t(ax)] = 0;
      }
    }
  }
  check_finite(name, out);
  Tensor result = Tensor::from(plan.out, std::move(out));
  if (active(a) || active(b)) {
    auto ad = a.data_, bd = b.data_;
    int an = a.node, bn = b.node;
    Shape as = a.shape(), bs = b.shape();
    record(result, [this, op, ad, bd, an, bn, as, bs, plan](const std::vector<double>& g) {
      std::int64_t n = std::int64_t(g.size());
      // Per-element local grads on the broadcast grid, then reduction onto
      // each operand through its strides.
      auto walk = [&](const std::vector<std::int64_t>& want_stride_other,
                      const std::vector<double>& other, bool wrt_a,
                      std::vector<double>& local) {
        std::vector<std::int64_t> idx(plan.out.size(), 0);
        std::int64_t io = 0;
        for (std::int64_t f = 0; f < n; ++f) {
          double gv = g[size_t(f)];
          double ov = other.empty() ? 0.0 : other[size_t(io)];
          double lv = 0;
          if (wrt_a) {
            switch (op) {
              case kAdd: lv = gv; break;
              case kSub: lv = gv; break;
              case kMul: lv = gv * ov; break;
              case kDiv: lv = gv / ov; break;
            }
          } else {
            switch (op) {
              case kAdd: lv = gv; break;
              case kSub: lv = -gv; break;
              case kMul: lv = gv * ov; break;
              case kDiv: {
                // ov here is a-value; need b too: recomputed below
                lv = gv;  // placeholder, handled specially
                break;
              }
            }
          }
          local[size_t(f)] = lv;
          for (int ax = int(plan.out.size()) - 1; ax >= 0; --ax) {
            idx[size_t(ax)]++;
            io += want_stride_other[size_t(ax)];
            if (idx[size_t(ax)] < plan.out[size_t(ax)]) break;
            io -= want_stride_other[size_t(ax)] * plan.out[size_t(ax)];
            idx[size_t(ax)] = 0;
          }
        }
      };
      if (an >= 0) {
        std::vector<double> local(g.size());
        if (op == kAdd || op == kSub) {
          local = g;
        } else {
          // needs b values on the grid
          walk(plan.stride_b, *bd, true, local);
        }
        if (auto* acc = gacc(an, shape_numel(as)))
          reduce_into(local, plan.out, plan.stride_a, acc->data());
      }
      if (bn >= 0) {
        std::vector<double> local(g.size());
        if (op == kAdd) {
          local = g;
        } else if (op == kSub) {
          for (std::size_t i = 0; i < g.size(); ++i) local[i] = -g[i];
        } else if (op == kMul) {
          walk(plan.stride_a, *ad, false, local);
        } else {  // kDiv: dL/db = -g*a/b^2, needs both operands on the grid
          std::vector<std::int64_t> idx(plan.out.size(), 0);
          std::int64_t ia = 0, ib = 0;
          for (std::int64_t f = 0; f < n; ++f) {
            double bv = (*bd)[size_t(ib)];
            local[size_t(f)] = -g[size_t(f)] * (*ad)[size_t(ia)] / (bv * bv);
            for (int ax = int(plan.out.size()) - 1; ax >= 0; --ax) {
              idx[size_t(ax)]++;
              ia += plan.stride_a[size_t(ax)];
              ib += plan.stride_b[size_t(ax)];
              if (idx[size_t(ax)] < plan.out[size_t(ax)]) break;
              ia -= plan.stride_a[size_t(ax)] * plan.out[size_t(ax)];
              ib -= plan.stride_b[size_t(ax)] * plan.out[size_t(ax)];
              idx[size_t(ax)] = 0;
            }
          }
        }
        if (auto* acc = gacc(bn, shape_numel(bs)))
          reduce_into(local, plan.out, plan.stride_b, acc->data());
      }
    });
  }
  return result;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) { return binary("add", kAdd, a, b); }
Tensor Tape::sub(const Tensor& a, const Tensor& b) { return binary("sub", kSub, a, b); }
Tensor Tape::mul(const Tensor& a, const Tensor& b) { return binary("mul", kMul, a, b); }
Tensor Tape::div(const Tensor& a, const Tensor& b) { return binary("div", kDiv, a, b); }

Tensor Tape::scale(const Tensor& a, double c) {
  std::vector<double> out(a.vec());
  for (auto& x : out) x *= c;
  check_finite("scale", out);
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (active(a)) {
    int an = a.node;
    std::int64_t numel = a.size();
    record(r, [this, an, c, numel](const std::vector<double>& g) {
      if (auto* ga = gacc(an, numel))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * c;
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// structural ops

Tensor Tape::transpose(const Tensor& a) {
  if (a.ndim() != 2) fail<ShapeError>("transpose: need 2-D, got ", shape_str(a.shape()));
  int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(size_t(m) * size_t(n));
  const double* p = a.ptr();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[size_t(j) * size_t(m) + size_t(i)] = p[size_t(i) * size_t(n) + size_t(j)];
  Tensor r = Tensor::from({n, m}, std::move(out));
  if (active(a)) {
    int an = a.node;
    record(r, [this, an, m, n](const std::vector<double>& g) {
      if (auto* ga = gacc(an, std::int64_t(m) * n))
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            (*ga)[size_t(i) * size_t(n) + size_t(j)] += g[size_t(j) * size_t(m) + size_t(i)];
    });
  }
  return r;
}

Tensor Tape::reshape(const Tensor& a, Shape s) {
  validate_shape(s);
  if (shape_numel(s) != a.size())
    fail<ShapeError>("reshape: cannot view ", shape_str(a.shape()), " as ", shape_str(s));
  Tensor r = a;  // shares payload
  r.shape_ = std::move(s);
  r.node = -1;
  r.requires_grad = false;
  if (active(a)) {
    int an = a.node;
    std::int64_t numel = a.size();
    record(r, [this, an, numel](const std::vector<double>& g) {
      if (auto* ga = gacc(an, numel))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    });
  }
  return r;
}

Tensor Tape::concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) fail<ShapeError>("concat: empty input list");
  int nd = xs[0].ndim();
  if (axis < 0 || axis >= nd) fail<ShapeError>("concat: bad axis ", axis);
  Shape out_shape = xs[0].shape();
  std::int64_t cat_total = 0;
  for (const auto& x : xs) {
    if (x.ndim() != nd) fail<ShapeError>("concat: rank mismatch");
    for (int i = 0; i < nd; ++i)
      if (i != axis && x.dim(i) != out_shape[size_t(i)])
        fail<ShapeError>("concat: shape mismatch at axis ", i, ": ",
                         shape_str(x.shape()), " vs ", shape_str(xs[0].shape()));
    cat_total += x.dim(axis);
  }
  out_shape[size_t(axis)] = int(cat_total);

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[size_t(i)];
  for (int i = axis + 1; i < nd; ++i) inner *= out_shape[size_t(i)];

  std::vector<double> out(size_t(shape_numel(out_shape)));
  std::int64_t col_off = 0;
  for (const auto& x : xs) {
    std::int64_t xc = x.dim(axis);
    const double* p = x.ptr();
    for (std::int64_t o = 0; o < outer; ++o) {
      double* dst = out.data() + (o * cat_total + col_off) * inner;
      const double* src = p + o * xc * inner;
      std::memcpy(dst, src, size_t(xc * inner) * sizeof(double));
    }
    col_off += xc;
  }
  Tensor r = Tensor::from(out_shape, std::move(out));
  bool any = false;
  for (const auto& x : xs) any = any || active(x);
  if (any) {
    struct Piece { int node; std::int64_t cols, numel; };
    std::vector<Piece> pieces;
    pieces.reserve(xs.size());
    for (const auto& x : xs) pieces.push_back({x.node, x.dim(axis), x.size()});
    record(r, [this, pieces, outer, inner, cat_total](const std::vector<double>& g) {
      std::int64_t col_off = 0;
      for (const auto& pc : pieces) {
        if (auto* ga = gacc(pc.node, pc.numel)) {
          for (std::int64_t o = 0; o < outer; ++o) {
            const double* src = g.data() + size_t((o * cat_total + col_off) * inner);
            double* dst = ga->data() + size_t(o * pc.cols * inner);
            for (std::int64_t i = 0; i < pc.cols * inner; ++i) dst[i] += src[i];
          }
        }
        col_off += pc.cols;
      }
    });
  }
  return r;
}

Tensor Tape::slice(const Tensor& a, int axis, int begin, int end) {
  int nd = a.ndim();
  if (axis < 0 || axis >= nd) fail<ShapeError>("slice: bad axis ", axis);
  if (begin < 0 || end > a.dim(axis) || begin >= end)
    fail<ShapeError>("slice: range [", begin, ",", end, ") out of bounds for axis ",
                     axis, " of ", shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[size_t(axis)] = end - begin;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < nd; ++i) inner *= a.dim(i);
  std::int64_t in_cols = a.dim(axis), out_cols = end - begin;

  std::vector<double> out(size_t(shape_numel(out_shape)));
  const double* p = a.ptr();
  for (std::int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * out_cols * inner,
                p + (o * in_cols + begin) * inner,
                size_t(out_cols * inner) * sizeof(double));
  Tensor r = Tensor::from(out_shape, std::move(out));
  if (active(a)) {
    int an = a.node;
    std::int64_t numel = a.size();
    record(r, [this, an, numel, outer, inner, in_cols, out_cols, begin](const std::vector<double>& g) {
      if (auto* ga = gacc(an, numel))
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* src = g.data() + size_t(o * out_cols * inner);
          double* dst = ga->data() + size_t((o * in_cols + begin) * inner);
          for (std::int64_t i = 0; i < out_cols * inner; ++i) dst[i] += src[i];
        }
    });
  }
  return r;
}

Tensor Tape::embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) fail<ShapeError>("embedding_lookup: table must be 2-D");
  if (ids.empty()) fail<ShapeError>("embedding_lookup: empty id list");
  int v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      fail<ContractError>("embedding_lookup: id ", id, " out of range [0,", v, ")");
  std::vector<double> out(ids.size() * size_t(d));
  const double* p = table.ptr();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::memcpy(out.data() + i * size_t(d), p + size_t(ids[i]) * size_t(d),
                size_t(d) * sizeof(double));
  Tensor r = Tensor::from({int(ids.size()), d}, std::move(out));
  if (active(table)) {
    int tn = table.node;
    std::int64_t numel = table.size();
    auto ids_copy = ids;
    record(r, [this, tn, numel, ids_copy, d](const std::vector<double>& g) {
      if (auto* gt = gacc(tn, numel))
        for (std::size_t i = 0; i < ids_copy.size(); ++i) {
          double* dst = gt->data() + size_t(ids_copy[i]) * size_t(d);
          const double* src = g.data() + i * size_t(d);
          for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// nonlinearities and normalizations

Tensor Tape::gelu(const Tensor& a) {
  std::vector<double> out(size_t(a.size()));
  const double* p = a.ptr();
  for (std::int64_t i = 0; i < a.size(); ++i) out[size_t(i)] = gelu_fwd(p[i]);
  check_finite("gelu", out);
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (active(a)) {
    int an = a.node;
    auto ad = a.data_;
    record(r, [this, an, ad](const std::vector<double>& g) {
      if (auto* ga = gacc(an, std::int64_t(ad->size())))
        for (std::size_t i = 0; i < g.size(); ++i)
          (*ga)[i] += g[i] * gelu_bwd((*ad)[i]);
    });
  }
  return r;
}

Tensor Tape::softmax(const Tensor& a) {
  if (a.ndim() < 1) fail<ShapeError>("softmax: need at least 1-D");
  std::int64_t cols = a.dim(a.ndim() - 1);
  std::int64_t rows = a.size() / cols;
  std::vector<double> out(size_t(a.size()));
  const double* p = a.ptr();
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* xr = p + i * cols;
    double* yr = out.data() + i * cols;
    double mx = xr[0];
    for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double sum = 0;
    for (std::int64_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::int64_t j = 0; j < cols; ++j) yr[j] /= sum;
  }
  check_finite("softmax", out);
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (active(a)) {
    int an = a.node;
    auto rd = r.data_;
    record(r, [this, an, rd, rows, cols](const std::vector<double>& g) {
      if (auto* ga = gacc(an, rows * cols)) {
        const double* y = rd->data();
        for (std::int64_t i = 0; i < rows; ++i) {
          const double* yr = y + i * cols;
          const double* gr = g.data() + i * cols;
          double dot = 0;
          for (std::int64_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
          double* gar = ga->data() + i * cols;
          for (std::int64_t j = 0; j < cols; ++j) gar[j] += yr[j] * (gr[j] - dot);
        }
      }
    });
  }
  return r;
}

Tensor Tape::layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias) {
  if (a.ndim() < 1) fail<ShapeError>("layernorm: need at least 1-D");
  std::int64_t cols = a.dim(a.ndim() - 1);
  std::int64_t rows = a.size() / cols;
  if (gain.ndim() != 1 || gain.dim(0) != cols || bias.ndim() != 1 || bias.dim(0) != cols)
    fail<ShapeError>("layernorm: gain/bias must be [", cols, "], got ",
                     shape_str(gain.shape()), " and ", shape_str(bias.shape()));
  const double eps = 1e-5;  // inside the sqrt; population variance
  std::vector<double> out(size_t(a.size()));
  std::vector<double> xhat(size_t(a.size()));
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  const double* p = a.ptr();
  const double* gn = gain.ptr();
  const double* bs = bias.ptr();
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* xr = p + i * cols;
    double mu = 0;
    for (std::int64_t j = 0; j < cols; ++j) mu += xr[j];
    mu /= double(cols);
    double var = 0;
    for (std::int64_t j = 0; j < cols; ++j) {
      double d = xr[j] - mu;
      var += d * d;
    }
    var /= double(cols);
    double istd = 1.0 / std::sqrt(var + eps);
    inv_std[size_t(i)] = istd;
    double* xh = xhat.data() + i * cols;
    double* yr = out.data() + i * cols;
    for (std::int64_t j = 0; j < cols; ++j) {
      xh[j] = (xr[j] - mu) * istd;
      yr[j] = xh[j] * gn[j] + bs[j];
    }
  }
  check_finite("layernorm", out);
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (active(a) || active(gain) || active(bias)) {
    int an = a.node, gnn = gain.node, bn = bias.node;
    auto gd = gain.data_;
    auto xh_ptr = std::make_shared<std::vector<double>>(std::move(xhat));
    auto istd_ptr = std::make_shared<std::vector<double>>(std::move(inv_std));
    record(r, [this, an, gnn, bn, gd, xh_ptr, istd_ptr, rows, cols](const std::vector<double>& g) {
      const double* xh = xh_ptr->data();
      if (auto* ga = gacc(an, rows * cols)) {
        const double* gnv = gd->data();
        for (std::int64_t i = 0; i < rows; ++i) {
          const double* gr = g.data() + i * cols;
          const double* xr = xh + i * cols;
          double istd = (*istd_ptr)[size_t(i)];
          double mean_dxhat = 0, mean_dxhat_xhat = 0;
          for (std::int64_t j = 0; j < cols; ++j) {
            double dxh = gr[j] * gnv[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xr[j];
          }
          mean_dxhat /= double(cols);
          mean_dxhat_xhat /= double(cols);
          double* gar = ga->data() + i * cols;
          for (std::int64_t j = 0; j < cols; ++j) {
            double dxh = gr[j] * gnv[j];
            gar[j] += istd * (dxh - mean_dxhat - xr[j] * mean_dxhat_xhat);
          }
        }
      }
      if (auto* gg = gacc(gnn, cols)) {
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < cols; ++j)
            (*gg)[size_t(j)] += g[size_t(i * cols + j)] * xh[i * cols + j];
      }
      if (auto* gb = gacc(bn, cols)) {
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < cols; ++j)
            (*gb)[size_t(j)] += g[size_t(i * cols + j)];
      }
    });
  }
  return r;
}

Tensor Tape::l2_normalize(const Tensor& a) {
  if (a.ndim() < 1) fail<ShapeError>("l2_normalize: need at least 1-D");
  std::int64_t cols = a.dim(a.ndim() - 1);
  std::int64_t rows = a.size() / cols;
  const double floor_norm = 1e-12;
  std::vector<double> out(size_t(a.size()));
  std::vector<double> norms(static_cast<std::size_t>(rows));
  const double* p = a.ptr();
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* xr = p + i * cols;
    double s = 0;
    for (std::int64_t j = 0; j < cols; ++j) s += xr[j] * xr[j];
    double nrm = std::max(std::sqrt(s), floor_norm);
    norms[size_t(i)] = nrm;
    double* yr = out.data() + i * cols;
    for (std::int64_t j = 0; j < cols; ++j) yr[j] = xr[j] / nrm;
  }
  check_finite("l2_normalize", out);
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (active(a)) {
    int an = a.node;
    auto rd = r.data_;
    auto norm_ptr = std::make_shared<std::vector<double>>(std::move(norms));
    record(r, [this, an, rd, norm_ptr, rows, cols](const std::vector<double>& g) {
      if (auto* ga = gacc(an, rows * cols)) {
        const double* y = rd->data();
        for (std::int64_t i = 0; i < rows; ++i) {
          const double* yr = y + i * cols;
          const double* gr = g.data() + i * cols;
          double dot = 0;
          for (std::int64_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
          double nrm = (*norm_ptr)[size_t(i)];
          double* gar = ga->data() + i * cols;
          for (std::int64_t j = 0; j < cols; ++j)
            gar[j] += (gr[j] - yr[j] * dot) / nrm;
        }
      }
    });
  }
  return r;
}

Tensor Tape::masked_fill(const Tensor& a, const Tensor& mask, double value) {
  if (mask.shape() != a.shape())
    fail<ShapeError>("masked_fill: mask shape ", shape_str(mask.shape()),
                     " != input shape ", shape_str(a.shape()));
  if (mask.node >= 0) fail<ContractError>("masked_fill: mask must be untracked");
  std::vector<double> out(size_t(a.size()));
  const double* p = a.ptr();
  const double* m = mask.ptr();
  for (std::int64_t i = 0; i < a.size(); ++i)
    out[size_t(i)] = m[i] != 0.0 ? value : p[i];
  check_finite("masked_fill", out);
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (active(a)) {
    int an = a.node;
    auto md = mask.data_;
    std::int64_t numel = a.size();
    record(r, [this, an, md, numel](const std::vector<double>& g) {
      if (auto* ga = gacc(an, numel))
        for (std::size_t i = 0; i < g.size(); ++i)
          if ((*md)[i] == 0.0) (*ga)[i] += g[i];
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// fused multi-head attention

Tensor Tape::attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       int heads, const Tensor* bias) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
    fail<ShapeError>("attention: q,k,v must be 2-D");
  int lq = q.dim(0), d = q.dim(1), lk = k.dim(0);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != lk)
    fail<ShapeError>("attention: incompatible shapes q", shape_str(q.shape()),
                     " k", shape_str(k.shape()), " v", shape_str(v.shape()));
  if (heads < 1 || d % heads != 0)
    fail<ShapeError>("attention: width ", d, " not divisible by ", heads, " heads");
  if (bias) {
    if (bias->ndim() != 2 || bias->dim(0) != lq || bias->dim(1) != lk)
      fail<ShapeError>("attention: bias must be [", lq, ",", lk, "]");
    if (bias->node >= 0) fail<ContractError>("attention: bias must be untracked");
  }
  int dh = d / heads;
  double scale = 1.0 / std::sqrt(double(dh));

  const double* qp = q.ptr();
  const double* kp = k.ptr();
  const double* vp = v.ptr();
  const double* bp = bias ? bias->ptr() : nullptr;

  // probs saved for backward: heads x lq x lk
  auto probs = std::make_shared<std::vector<double>>(size_t(heads) * size_t(lq) * size_t(lk));
  std::vector<double> out(size_t(lq) * size_t(d));

  for (int h = 0; h < heads; ++h) {
    int col = h * dh;
    double* ph = probs->data() + std::size_t(h) * size_t(lq) * size_t(lk);
    for (int i = 0; i < lq; ++i) {
      const double* qrow = qp + std::size_t(i) * size_t(d) + size_t(col);
      double* prow = ph + std::size_t(i) * size_t(lk);
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < lk; ++j) {
        const double* krow = kp + std::size_t(j) * size_t(d) + size_t(col);
        double s = 0;
        for (int c = 0; c < dh; ++c) s += qrow[c] * krow[c];
        s *= scale;
        if (bp) s += bp[std::size_t(i) * size_t(lk) + size_t(j)];
        prow[j] = s;
        mx = std::max(mx, s);
      }
      double sum = 0;
      for (int j = 0; j < lk; ++j) {
        prow[j] = std::exp(prow[j] - mx);
        sum += prow[j];
      }
      double* orow = out.data() + std::size_t(i) * size_t(d) + size_t(col);
      std::fill(orow, orow + dh, 0.0);
      for (int j = 0; j < lk; ++j) {
        prow[j] /= sum;
        const double* vrow = vp + std::size_t(j) * size_t(d) + size_t(col);
        double pv = prow[j];
        for (int c = 0; c < dh; ++c) orow[c] += pv * vrow[c];
      }
    }
  }
  check_finite("attention", out);
  Tensor r = Tensor::from({lq, d}, std::move(out));
  if (active(q) || active(k) || active(v)) {
    auto qd = q.data_, kd = k.data_, vd = v.data_;
    int qn = q.node, kn = k.node, vn = v.node;
    record(r, [this, qd, kd, vd, qn, kn, vn, probs, heads, lq, lk, d, dh,
               scale](const std::vector<double>& g) {
      auto* gq = gacc(qn, std::int64_t(lq) * d);
      auto* gk = gacc(kn, std::int64_t(lk) * d);
      auto* gv = gacc(vn, std::int64_t(lk) * d);
      std::vector<double> dp(static_cast<std::size_t>(lk));
      for (int h = 0; h < heads; ++h) {
        int col = h * dh;
        const double* ph = probs->data() + std::size_t(h) * size_t(lq) * size_t(lk);
        for (int i = 0; i < lq; ++i) {
          const double* prow = ph + std::size_t(i) * size_t(lk);
          const double* grow = g.data() + std::size_t(i) * size_t(d) + size_t(col);
          // dV += P^T dO ; dP = dO V^T
          double dot = 0;
          for (int j = 0; j < lk; ++j) {
            const double* vrow = vd->data() + std::size_t(j) * size_t(d) + size_t(col);
            double s = 0;
            for (int c = 0; c < dh; ++c) s += grow[c] * vrow[c];
            dp[size_t(j)] = s;
            dot += s * prow[j];
            if (gv) {
              double* gvrow = gv->data() + std::size_t(j) * size_t(d) + size_t(col);
              double pv = prow[j];
              for (int c = 0; c < dh; ++c) gvrow[c] += pv * grow[c];
            }
          }
          // dS = P (dP - dot); dQ += dS K * scale; dK += dS^T Q * scale
          const double* qrow = qd->data() + std::size_t(i) * size_t(d) + size_t(col);
          double* gqrow = gq ? gq->data() + std::size_t(i) * size_t(d) + size_t(col) : nullptr;
          for (int j = 0; j < lk; ++j) {
            double ds = prow[j] * (dp[size_t(j)] - dot) * scale;
            if (ds == 0.0) continue;
            const double* krow = kd->data() + std::size_t(j) * size_t(d) + size_t(col);
            if (gqrow)
              for (int c = 0; c < dh; ++c) gqrow[c] += ds * krow[c];
            if (gk) {
              double* gkrow = gk->data() + std::size_t(j) * size_t(d) + size_t(col);
              for (int c = 0; c < dh; ++c) gkrow[c] += ds * qrow[c];
            }
          }
        }
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// losses and reductions

Tensor Tape::cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                           int ignore_index) {
  if (logits.ndim() != 2)
    fail<ShapeError>("cross_entropy: logits must be 2-D, got ", shape_str(logits.shape()));
  int n = logits.dim(0), c = logits.dim(1);
  if (int(targets.size()) != n)
    fail<ShapeError>("cross_entropy: ", targets.size(), " targets for ", n, " rows");
  const double* p = logits.ptr();
  auto probs = std::make_shared<std::vector<double>>(size_t(n) * size_t(c));
  double total = 0;
  int counted = 0;
  for (int i = 0; i < n; ++i) {
    int t = targets[size_t(i)];
    const double* row = p + std::size_t(i) * size_t(c);
    double* pr = probs->data() + std::size_t(i) * size_t(c);
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (int j = 0; j < c; ++j) {
      pr[j] = std::exp(row[j] - mx);
      sum += pr[j];
    }
    for (int j = 0; j < c; ++j) pr[j] /= sum;
    if (t == ignore_index) continue;
    if (t < 0 || t >= c)
      fail<ContractError>("cross_entropy: target ", t, " out of range [0,", c, ")");
    double lse = mx + std::log(sum);
    total += lse - row[t];
    ++counted;
  }
  if (counted == 0) fail<ContractError>("cross_entropy: all rows ignored");
  double loss = total / double(counted);
  if (!std::isfinite(loss)) fail<NumericError>("cross_entropy: non-finite value in output");
  Tensor r = Tensor::scalar(loss);
  if (active(logits)) {
    int ln = logits.node;
    auto tg = targets;
    record(r, [this, ln, tg, probs, n, c, counted, ignore_index](const std::vector<double>& g) {
      if (auto* ga = gacc(ln, std::int64_t(n) * c)) {
        double gv = g[0] / double(counted);
        for (int i = 0; i < n; ++i) {
          int t = tg[size_t(i)];
          if (t == ignore_index) continue;
          const double* pr = probs->data() + std::size_t(i) * size_t(c);
          double* gar = ga->data() + std::size_t(i) * size_t(c);
          for (int j = 0; j < c; ++j) gar[j] += gv * (pr[j] - (j == t ? 1.0 : 0.0));
        }
      }
    });
  }
  return r;
}

Tensor Tape::mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    fail<ShapeError>("mse: shape mismatch ", shape_str(a.shape()), " vs ",
                     shape_str(b.shape()));
  std::int64_t n = a.size();
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double d = pa[i] - pb[i];
    total += d * d;
  }
  double loss = total / double(n);
  if (!std::isfinite(loss)) fail<NumericError>("mse: non-finite value in output");
  Tensor r = Tensor::scalar(loss);
  if (active(a) || active(b)) {
    auto ad = a.data_, bd = b.data_;
    int an = a.node, bn = b.node;
    record(r, [this, ad, bd, an, bn, n](const std::vector<double>& g) {
      double gv = 2.0 * g[0] / double(n);
      if (auto* ga = gacc(an, n))
        for (std::int64_t i = 0; i < n; ++i) (*ga)[size_t(i)] += gv * ((*ad)[size_t(i)] - (*bd)[size_t(i)]);
      if (auto* gb = gacc(bn, n))
        for (std::int64_t i = 0; i < n; ++i) (*gb)[size_t(i)] -= gv * ((*ad)[size_t(i)] - (*bd)[size_t(i)]);
    });
  }
  return r;
}

Tensor Tape::mean(const Tensor& a) {
  std::int64_t n = a.size();
  const double* p = a.ptr();
  double total = 0;
  for (std::int64_t i = 0; i < n; ++i) total += p[i];
  double m = total / double(n);
  if (!std::isfinite(m)) fail<NumericError>("mean: non-finite value in output");
  Tensor r = Tensor::scalar(m);
  if (active(a)) {
    int an = a.node;
    record(r, [this, an, n](const std::vector<double>& g) {
      if (auto* ga = gacc(an, n)) {
        double gv = g[0] / double(n);
        for (std::int64_t i = 0; i < n; ++i) (*ga)[size_t(i)] += gv;
      }
    });
  }
  return r;
}

Tensor Tape::sum(const Tensor& a) {
  std::int64_t n = a.size();
  const double* p = a.ptr();
  double total = 0;
  for (std::int64_t i = 0; i < n; ++i) total += p[i];
  if (!std::isfinite(total)) fail<NumericError>("sum: non-finite value in output");
  Tensor r = Tensor::scalar(total);
  if (active(a)) {
    int an = a.node;
    record(r, [this, an, n](const std::vector<double>& g) {
      if (auto* ga = gacc(an, n))
        for (std::int64_t i = 0; i < n; ++i) (*ga)[size_t(i)] += g[0];
    });
  }
  return r;
}

Tensor Tape::mean_rows(const Tensor& a) {
  if (a.ndim() != 2) fail<ShapeError>("mean_rows: need 2-D, got ", shape_str(a.shape()));
  int n = a.dim(0), c = a.dim(1);
  std::vector<double> out(size_t(c), 0.0);
  const double* p = a.ptr();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) out[size_t(j)] += p[std::size_t(i) * size_t(c) + size_t(j)];
  for (int j = 0; j < c; ++j) out[size_t(j)] /= double(n);
  check_finite("mean_rows", out);
  Tensor r = Tensor::from({c}, std::move(out));
  if (active(a)) {
    int an = a.node;
    record(r, [this, an, n, c](const std::vector<double>& g) {
      if (auto* ga = gacc(an, std::int64_t(n) * c))
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < c; ++j)
            (*ga)[std::size_t(i) * size_t(c) + size_t(j)] += g[size_t(j)] / double(n);
    });
  }
  return r;
}

Tensor Tape::maxpool_rows(const Tensor& a, int block) {
  if (a.ndim() != 2) fail<ShapeError>("maxpool_rows: need 2-D, got ", shape_str(a.shape()));
  int n = a.dim(0), c = a.dim(1);
  if (block < 1 || n % block != 0)
    fail<ShapeError>("maxpool_rows: ", n, " rows not divisible into blocks of ", block);
  int groups = n / block;
  std::vector<double> out(size_t(groups) * size_t(c));
  auto argmax = std::make_shared<std::vector<int>>(size_t(groups) * size_t(c));
  const double* p = a.ptr();
  for (int gidx = 0; gidx < groups; ++gidx) {
    for (int j = 0; j < c; ++j) {
      double best = p[std::size_t(gidx) * size_t(block) * size_t(c) + size_t(j)];
      int best_row = gidx * block;  // ties -> lowest row index
      for (int b = 1; b < block; ++b) {
        double v = p[(std::size_t(gidx) * size_t(block) + size_t(b)) * size_t(c) + size_t(j)];
        if (v > best) {
          best = v;
          best_row = gidx * block + b;
        }
      }
      out[std::size_t(gidx) * size_t(c) + size_t(j)] = best;
      (*argmax)[std::size_t(gidx) * size_t(c) + size_t(j)] = best_row;
    }
  }
  check_finite("maxpool_rows", out);
  Tensor r = Tensor::from({groups, c}, std::move(out));
  if (active(a)) {
    int an = a.node;
    record(r, [this, an, argmax, n, c, groups](const std::vector<double>& g) {
      if (auto* ga = gacc(an, std::int64_t(n) * c))
        for (int gi = 0; gi < groups; ++gi)
          for (int j = 0; j < c; ++j) {
            int row = (*argmax)[std::size_t(gi) * size_t(c) + size_t(j)];
            (*ga)[std::size_t(row) * size_t(c) + size_t(j)] += g[std::size_t(gi) * size_t(c) + size_t(j)];
          }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// grad_check

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                  const Tensor& x, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    fail<ContractError>("grad_check: eps ", eps, " outside [1e-7, 1e-3]");
  std::vector<double> g_ad;
  {
    Tape tape;
    Tensor xw = tape.leaf(x);
    Tensor loss = f(tape, xw);
    if (loss.size() != 1) fail<ContractError>("grad_check: f must be scalar-valued");
    Gradients grads = tape.backward(loss);
    if (!grads.has(xw))
      fail<ContractError>("grad_check: loss does not depend on x");
    g_ad = grads.wrt(xw);
  }
  double worst = 0;
  std::vector<double> base = x.vec();
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto eval = [&](double delta) {
      std::vector<double> mod = base;
      mod[i] += delta;
      Tape t;
      Tensor loss = f(t, Tensor::from(x.shape(), std::move(mod)));
      double v = loss.item();
      if (!std::isfinite(v)) fail<NumericError>("grad_check: non-finite probe value");
      return v;
    };
    double g_cd = (eval(eps) - eval(-eps)) / (2 * eps);
    double err = std::abs(g_ad[i] - g_cd) / std::max(1.0, std::abs(g_cd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace pointlang
