#include "csmgan/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>

namespace csmgan {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->node(id_).value;
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
  return tape_->grad_of(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->node(id_).requires_grad;
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return record("constant", std::move(value), false, {});
}

template <typename T>
Var<T> Tape<T>::input(Tensor<T> value) {
  return record("input", std::move(value), true, {});
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  Var<T> v = record("param", p.value, true, {});
  if (grad_enabled_) nodes_[v.id()].sink = &p;
  return v;
}

template <typename T>
Var<T> Tape<T>::record(const char* op, Tensor<T> value, bool requires_grad, Backward backward) {
  if (!all_finite(value)) {
    throw NumericError(std::string("non-finite value produced by ") + op + " " + shape_string(value.shape()));
  }
  const bool track = grad_enabled_ && requires_grad;
  nodes_.push_back(Node{op, std::move(value), Tensor<T>(), track, track ? std::move(backward) : Backward{}, nullptr});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to a different tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  grad_of(loss.id()).fill(T(1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.sink != nullptr) {
      auto dst = n.sink->grad.values();
      auto src = nodes_[i].grad.values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

namespace {

template <typename T>
bool any_requires(std::initializer_list<Var<T>> vars) {
  return std::any_of(vars.begin(), vars.end(), [](const Var<T>& v) { return v.requires_grad(); });
}

template <typename T>
void require_matrix(const Var<T>& v, const char* op) {
  if (v.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(v.shape()));
  }
}

// C += op(A)·op(B) on raw row-major buffers.
template <typename T>
void gemm_acc(Tensor<T>& c, const Tensor<T>& a, bool trans_a, const Tensor<T>& b, bool trans_b) {
  const std::size_t m = c.rows(), n = c.cols();
  const std::size_t k = trans_a ? a.rows() : a.cols();
  const std::size_t lda = a.cols(), ldb = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = &c(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const T av = trans_a ? a[p * lda + i] : a[i * lda + p];
      if (av == T(0)) continue;
      if (!trans_b) {
        const T* brow = &b[p * ldb];
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
      }
    }
  }
}

enum class Broadcast { kSame, kRow, kCol, kScalar };

template <typename T>
Broadcast broadcast_kind(const Var<T>& a, const Var<T>& b, const char* op) {
  require_matrix(a, op);
  require_matrix(b, op);
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) return Broadcast::kSame;
  if (sb[0] == 1 && sb[1] == 1) return Broadcast::kScalar;
  if (sb[0] == 1 && sb[1] == sa[1]) return Broadcast::kRow;
  if (sb[1] == 1 && sb[0] == sa[0]) return Broadcast::kCol;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(sb) + " onto " + shape_string(sa));
}

inline std::size_t bcast_index(Broadcast kind, std::size_t i, std::size_t j, std::size_t cols) {
  switch (kind) {
    case Broadcast::kSame: return i * cols + j;
    case Broadcast::kRow: return j;
    case Broadcast::kCol: return i;
    case Broadcast::kScalar: return 0;
  }
  return 0;
}

enum class BinaryOp { kAdd, kSub, kMul };

template <typename T>
Var<T> binary(const Var<T>& a, const Var<T>& b, BinaryOp op, const char* name) {
  const Broadcast kind = broadcast_kind(a, b, name);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const std::size_t m = av.rows(), n = av.cols();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const T x = av(i, j);
      const T y = bv[bcast_index(kind, i, j, n)];
      out(i, j) = op == BinaryOp::kAdd ? x + y : op == BinaryOp::kSub ? x - y : x * y;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(name, std::move(out), any_requires({a, b}), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    const bool ga = t.node(ia).requires_grad, gb = t.node(ib).requires_grad;
    if (ga) {
      Tensor<T>& da = t.grad_of(ia);
      if (op == BinaryOp::kMul) {
        const Tensor<T>& bv2 = t.node(ib).value;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) da(i, j) += g(i, j) * bv2[bcast_index(kind, i, j, n)];
      } else {
        for (std::size_t k = 0; k < g.size(); ++k) da[k] += g[k];
      }
    }
    if (gb) {
      Tensor<T>& db = t.grad_of(ib);
      const Tensor<T>& av2 = t.node(ia).value;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const T local = op == BinaryOp::kAdd ? T(1) : op == BinaryOp::kSub ? T(-1) : av2(i, j);
          db[bcast_index(kind, i, j, n)] += g(i, j) * local;
        }
      }
    }
  });
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(a.shape()) + " · " +
                         shape_string(b.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros(a.rows(), b.cols());
  gemm_acc(out, a.value(), false, b.value(), false);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("matmul", std::move(out), any_requires({a, b}), [ia, ib](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    if (t.node(ia).requires_grad) gemm_acc(t.grad_of(ia), g, false, t.node(ib).value, true);
    if (t.node(ib).requires_grad) gemm_acc(t.grad_of(ib), t.node(ia).value, true, g, false);
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  require_matrix(a, "transpose");
  const Tensor<T>& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  Tensor<T> out = Tensor<T>::zeros(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = av(i, j);
  const std::size_t ia = a.id();
  return a.tape()->record("transpose", std::move(out), a.requires_grad(), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    Tensor<T>& da = t.grad_of(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) da(i, j) += g(j, i);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, BinaryOp::kAdd, "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, BinaryOp::kSub, "sub");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, BinaryOp::kMul, "mul");
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (T& v : out.values()) v *= s;
  const std::size_t ia = a.id();
  return a.tape()->record("scale", std::move(out), a.requires_grad(), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    Tensor<T>& da = t.grad_of(ia);
    for (std::size_t k = 0; k < g.size(); ++k) da[k] += s * g[k];
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (T& v : out.values()) v += s;
  const std::size_t ia = a.id();
  return a.tape()->record("add_scalar", std::move(out), a.requires_grad(), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    Tensor<T>& da = t.grad_of(ia);
    for (std::size_t k = 0; k < g.size(); ++k) da[k] += g[k];
  });
}

template <typename T>
Var<T> activation(const Var<T>& x, Activation kind) {
  Tensor<T> out = x.value();
  for (T& v : out.values()) {
    switch (kind) {
      case Activation::kSigmoid: v = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); break;
      case Activation::kTanh: v = std::tanh(v); break;
      case Activation::kRelu: v = v > T(0) ? v : T(0); break;
    }
  }
  const char* name = kind == Activation::kSigmoid ? "sigmoid" : kind == Activation::kTanh ? "tanh" : "relu";
  const std::size_t ix = x.id();
  return x.tape()->record(name, std::move(out), x.requires_grad(), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    const Tensor<T>& y = t.node(self).value;
    Tensor<T>& dx = t.grad_of(ix);
    for (std::size_t k = 0; k < g.size(); ++k) {
      T local;
      switch (kind) {
        case Activation::kSigmoid: local = y[k] * (T(1) - y[k]); break;
        case Activation::kTanh: local = T(1) - y[k] * y[k]; break;
        default: local = y[k] > T(0) ? T(1) : T(0); break;
      }
      dx[k] += g[k] * local;
    }
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  require_matrix(x, "softmax_rows");
  Tensor<T> out = x.value();
  const std::size_t m = out.rows(), n = out.cols();
  for (std::size_t i = 0; i < m; ++i) {
    auto row = out.row(i);
    const T mx = *std::max_element(row.begin(), row.end());
    T total = 0;
    for (T& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (T& v : row) v /= total;
  }
  const std::size_t ix = x.id();
  return x.tape()->record("softmax_rows", std::move(out), x.requires_grad(), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    const Tensor<T>& y = t.node(self).value;
    Tensor<T>& dx = t.grad_of(ix);
    for (std::size_t i = 0; i < m; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < n; ++j) dx(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

template <typename T>
Var<T> softmax_cols(const Var<T>& x) {
  require_matrix(x, "softmax_cols");
  Tensor<T> out = x.value();
  const std::size_t m = out.rows(), n = out.cols();
  for (std::size_t j = 0; j < n; ++j) {
    T mx = out(0, j);
    for (std::size_t i = 1; i < m; ++i) mx = std::max(mx, out(i, j));
    T total = 0;
    for (std::size_t i = 0; i < m; ++i) {
      out(i, j) = std::exp(out(i, j) - mx);
      total += out(i, j);
    }
    for (std::size_t i = 0; i < m; ++i) out(i, j) /= total;
  }
  const std::size_t ix = x.id();
  return x.tape()->record("softmax_cols", std::move(out), x.requires_grad(), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    const Tensor<T>& y = t.node(self).value;
    Tensor<T>& dx = t.grad_of(ix);
    for (std::size_t j = 0; j < n; ++j) {
      T dot = 0;
      for (std::size_t i = 0; i < m; ++i) dot += g(i, j) * y(i, j);
      for (std::size_t i = 0; i < m; ++i) dx(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& kernels, std::size_t pad_left, std::size_t pad_right) {
  require_matrix(x, "conv1d");
  const Tensor<T>& xv = x.value();
  const Tensor<T>& kv = kernels.value();
  if (kv.rank() != 3 || kv.shape()[1] != xv.cols()) {
    throw DimensionError("conv1d: kernels " + shape_string(kv.shape()) + " do not match input " +
                         shape_string(xv.shape()) + " (expected [k x " + std::to_string(xv.cols()) + " x c_out])");
  }
  const std::size_t len = xv.rows(), cin = xv.cols();
  const std::size_t width = kv.shape()[0], cout = kv.shape()[2];
  if (width > len + pad_left + pad_right) {
    throw DimensionError("conv1d: kernel width " + std::to_string(width) + " exceeds padded length " +
                         std::to_string(len + pad_left + pad_right));
  }
  const std::size_t out_len = len + pad_left + pad_right - width + 1;
  Tensor<T> out = Tensor<T>::zeros(out_len, cout);
  // Row `src` of x meets kernel tap j at output row src + pad_left − j.
  for (std::size_t o = 0; o < out_len; ++o) {
    T* orow = &out(o, 0);
    for (std::size_t j = 0; j < width; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o + j) - static_cast<std::ptrdiff_t>(pad_left);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      const T* xrow = &xv(static_cast<std::size_t>(src), 0);
      const T* tap = &kv[j * cin * cout];
      for (std::size_t c = 0; c < cin; ++c) {
        const T a = xrow[c];
        if (a == T(0)) continue;
        const T* krow = tap + c * cout;
        for (std::size_t q = 0; q < cout; ++q) orow[q] += a * krow[q];
      }
    }
  }
  const std::size_t ix = x.id(), ik = kernels.id();
  return x.tape()->record("conv1d", std::move(out), any_requires({x, kernels}), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    const Tensor<T>& xv2 = t.node(ix).value;
    const Tensor<T>& kv2 = t.node(ik).value;
    const bool gx = t.node(ix).requires_grad, gk = t.node(ik).requires_grad;
    Tensor<T>* dx = gx ? &t.grad_of(ix) : nullptr;
    Tensor<T>* dk = gk ? &t.grad_of(ik) : nullptr;
    for (std::size_t o = 0; o < out_len; ++o) {
      const T* grow = &g(o, 0);
      for (std::size_t j = 0; j < width; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o + j) - static_cast<std::ptrdiff_t>(pad_left);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
        const std::size_t s = static_cast<std::size_t>(src);
        for (std::size_t c = 0; c < cin; ++c) {
          const std::size_t kbase = (j * cin + c) * cout;
          if (dx) {
            T acc = 0;
            for (std::size_t q = 0; q < cout; ++q) acc += grow[q] * kv2[kbase + q];
            (*dx)(s, c) += acc;
          }
          if (dk) {
            const T a = xv2(s, c);
            for (std::size_t q = 0; q < cout; ++q) (*dk)[kbase + q] += a * grow[q];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> conv1d_same(const Var<T>& x, const Var<T>& kernels) {
  if (kernels.value().rank() != 3) throw DimensionError("conv1d_same: kernels must be rank 3");
  const std::size_t width = kernels.shape()[0];
  const std::size_t left = (width - 1) / 2;
  return conv1d(x, kernels, left, width - 1 - left);
}

template <typename T>
Var<T> smooth_l1(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (T& v : out.values()) {
    const T a = std::abs(v);
    v = a < T(1) ? T(0.5) * v * v : a - T(0.5);
  }
  const std::size_t ix = x.id();
  return x.tape()->record("smooth_l1", std::move(out), x.requires_grad(), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    const Tensor<T>& xv = t.node(ix).value;
    Tensor<T>& dx = t.grad_of(ix);
    for (std::size_t k = 0; k < g.size(); ++k) {
      const T v = xv[k];
      const T local = std::abs(v) < T(1) ? v : (v > T(0) ? T(1) : T(-1));
      dx[k] += g[k] * local;
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = 0;
  for (T v : x.value().values()) total += v;
  const std::size_t ix = x.id();
  return x.tape()->record("sum", Tensor<T>(Shape{1, 1}, total), x.requires_grad(), [=](Tape<T>& t, std::size_t self) {
    const T g = t.node(self).grad[0];
    for (T& d : t.grad_of(ix).values()) d += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows");
  if (begin >= end || end > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                         shape_string(x.shape()));
  }
  const std::size_t n = x.cols();
  const auto src = x.value().values().subspan(begin * n, (end - begin) * n);
  Tensor<T> out(Shape{end - begin, n}, std::vector<T>(src.begin(), src.end()));
  const std::size_t ix = x.id();
  return x.tape()->record("slice_rows", std::move(out), x.requires_grad(), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    Tensor<T>& dx = t.grad_of(ix);
    for (std::size_t k = 0; k < g.size(); ++k) dx[begin * n + k] += g[k];
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  if (begin >= end || end > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                         shape_string(x.shape()));
  }
  const std::size_t m = x.rows(), w = end - begin;
  const Tensor<T>& xv = x.value();
  Tensor<T> out = Tensor<T>::zeros(m, w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = xv(i, begin + j);
  const std::size_t ix = x.id();
  return x.tape()->record("slice_cols", std::move(out), x.requires_grad(), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    Tensor<T>& dx = t.grad_of(ix);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) dx(i, begin + j) += g(i, j);
  });
}

template <typename T>
Var<T> select_rows(const Var<T>& x, const std::vector<std::size_t>& rows) {
  require_matrix(x, "select_rows");
  if (rows.empty()) throw DimensionError("select_rows: empty row list");
  const std::size_t n = x.cols();
  Tensor<T> out = Tensor<T>::zeros(rows.size(), n);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.rows()) {
      throw DimensionError("select_rows: row " + std::to_string(rows[r]) + " out of range for " +
                           shape_string(x.shape()));
    }
    std::copy_n(x.value().row(rows[r]).begin(), n, out.row(r).begin());
  }
  const std::size_t ix = x.id();
  return x.tape()->record("select_rows", std::move(out), x.requires_grad(), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    Tensor<T>& dx = t.grad_of(ix);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) dx(rows[r], j) += g(r, j);
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row counts differ (" + shape_string(parts.front().shape()) + " vs " +
                           shape_string(p.shape()) + ")");
    }
    total += p.cols();
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor<T> out = Tensor<T>::zeros(m, total);
  std::vector<std::size_t> ids, offsets, widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor<T>& v = p.value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out(i, off + j) = v(i, j);
    ids.push_back(p.id());
    offsets.push_back(off);
    widths.push_back(v.cols());
    off += v.cols();
  }
  return parts.front().tape()->record("concat_cols", std::move(out), needs_grad, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (!t.node(ids[p]).requires_grad) continue;
      Tensor<T>& d = t.grad_of(ids[p]);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < widths[p]; ++j) d(i, j) += g(i, offsets[p] + j);
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column counts differ (" + shape_string(parts.front().shape()) + " vs " +
                           shape_string(p.shape()) + ")");
    }
    total += p.rows();
    needs_grad = needs_grad || p.requires_grad();
  }
  std::vector<T> values;
  values.reserve(total * n);
  std::vector<std::size_t> ids, starts;
  for (const auto& p : parts) {
    starts.push_back(values.size());
    ids.push_back(p.id());
    values.insert(values.end(), p.value().values().begin(), p.value().values().end());
  }
  return parts.front().tape()->record(
      "concat_rows", Tensor<T>(Shape{total, n}, std::move(values)), needs_grad, [=](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.node(self).grad;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (!t.node(ids[p]).requires_grad) continue;
          Tensor<T>& d = t.grad_of(ids[p]);
          for (std::size_t k = 0; k < d.size(); ++k) d[k] += g[starts[p] + k];
        }
      });
}

template <typename T>
Var<T> reverse_rows(const Var<T>& x) {
  require_matrix(x, "reverse_rows");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor<T> out = Tensor<T>::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(x.value().row(m - 1 - i).begin(), n, out.row(i).begin());
  const std::size_t ix = x.id();
  return x.tape()->record("reverse_rows", std::move(out), x.requires_grad(), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    Tensor<T>& dx = t.grad_of(ix);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dx(m - 1 - i, j) += g(i, j);
  });
}

template <typename T>
Var<T> maximum(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("maximum: no inputs");
  bool needs_grad = false;
  for (const auto& p : parts) {
    if (p.shape() != parts.front().shape()) {
      throw DimensionError("maximum: shapes differ (" + shape_string(parts.front().shape()) + " vs " +
                           shape_string(p.shape()) + ")");
    }
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor<T> out = parts.front().value();
  auto winner = std::make_shared<std::vector<std::uint8_t>>(out.size(), 0);
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const Tensor<T>& v = parts[p].value();
    for (std::size_t k = 0; k < out.size(); ++k) {
      if (v[k] > out[k]) {
        out[k] = v[k];
        (*winner)[k] = static_cast<std::uint8_t>(p);
      }
    }
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts.front().tape()->record("maximum", std::move(out), needs_grad, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node(self).grad;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const std::size_t id = ids[(*winner)[k]];
      if (t.node(id).requires_grad) t.grad_of(id)[k] += g[k];
    }
  });
}

template <typename T>
Var<T> cosine_similarity(const Var<T>& a, const Var<T>& b) {
  require_matrix(a, "cosine_similarity");
  require_matrix(b, "cosine_similarity");
  if (a.cols() != b.cols()) {
    throw DimensionError("cosine_similarity: widths differ for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), n = b.rows(), d = a.cols();
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  constexpr double kMinNorm = 1e-8;
  auto norms = [d](const Tensor<T>& v) {
    std::vector<T> out(v.rows());
    for (std::size_t i = 0; i < v.rows(); ++i) {
      T s = 0;
      for (std::size_t k = 0; k < d; ++k) s += v(i, k) * v(i, k);
      out[i] = std::sqrt(s);
    }
    return out;
  };
  std::vector<T> na = norms(av), nb = norms(bv);
  Tensor<T> out = Tensor<T>::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    if (na[i] < kMinNorm) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (nb[j] < kMinNorm) continue;
      T dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += av(i, k) * bv(j, k);
      out(i, j) = dot / (na[i] * nb[j]);
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(
      "cosine_similarity", std::move(out), any_requires({a, b}),
      [=, na = std::move(na), nb = std::move(nb)](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.node(self).grad;
        const Tensor<T>& c = t.node(self).value;
        const Tensor<T>& av2 = t.node(ia).value;
        const Tensor<T>& bv2 = t.node(ib).value;
        const bool ga = t.node(ia).requires_grad, gb = t.node(ib).requires_grad;
        Tensor<T>* da = ga ? &t.grad_of(ia) : nullptr;
        Tensor<T>* db = gb ? &t.grad_of(ib) : nullptr;
        for (std::size_t i = 0; i < m; ++i) {
          if (na[i] < kMinNorm) continue;
          for (std::size_t j = 0; j < n; ++j) {
            if (nb[j] < kMinNorm || g(i, j) == T(0)) continue;
            const T gij = g(i, j), cij = c(i, j);
            // d cos / d a_i = b_j / (|a_i||b_j|) − cos · a_i / |a_i|², and symmetrically for b_j.
            for (std::size_t k = 0; k < d; ++k) {
              if (da) (*da)(i, k) += gij * (bv2(j, k) / (na[i] * nb[j]) - cij * av2(i, k) / (na[i] * na[i]));
              if (db) (*db)(j, k) += gij * (av2(i, k) / (na[i] * nb[j]) - cij * bv2(j, k) / (nb[j] * nb[j]));
            }
          }
        }
      });
}

template <typename T>
Var<T> soft_bce(const Var<T>& scores, const Tensor<T>& targets, T eps) {
  if (scores.shape() != targets.shape()) {
    throw DimensionError("soft_bce: scores " + shape_string(scores.shape()) + " vs targets " +
                         shape_string(targets.shape()));
  }
  const Tensor<T>& s = scores.value();
  const std::size_t count = s.size();
  T total = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const T c = std::clamp(s[k], eps, T(1) - eps);
    total -= targets[k] * std::log(c) + (T(1) - targets[k]) * std::log(T(1) - c);
  }
  const std::size_t is = scores.id();
  return scores.tape()->record(
      "soft_bce", Tensor<T>(Shape{1, 1}, total / static_cast<T>(count)), scores.requires_grad(),
      [=](Tape<T>& t, std::size_t self) {
        const T g = t.node(self).grad[0] / static_cast<T>(count);
        const Tensor<T>& sv = t.node(is).value;
        Tensor<T>& ds = t.grad_of(is);
        for (std::size_t k = 0; k < count; ++k) {
          const T c = sv[k];
          if (c < eps || c > T(1) - eps) continue;
          ds[k] += g * (c - targets[k]) / (c * (T(1) - c));
        }
      });
}

template <typename T>
Var<T> gru_sequence(const Var<T>& x_proj, const Var<T>& w_h, const Var<T>& b_h, bool reverse) {
  require_matrix(x_proj, "gru_sequence");
  require_matrix(w_h, "gru_sequence");
  const std::size_t h = w_h.rows();
  const std::size_t len = x_proj.rows();
  if (w_h.cols() != 3 * h || x_proj.cols() != 3 * h || b_h.shape() != Shape{1, 3 * h}) {
    throw DimensionError("gru_sequence: expected x_proj [T x " + std::to_string(3 * h) + "], w_h [" +
                         std::to_string(h) + " x " + std::to_string(3 * h) + "], b_h [1 x " + std::to_string(3 * h) +
                         "]; got " + shape_string(x_proj.shape()) + ", " + shape_string(w_h.shape()) + ", " +
                         shape_string(b_h.shape()));
  }

  // Per-step activations needed by the backward sweep, indexed by sequence row.
  struct Cache {
    std::vector<T> z, r, n, hh_n, h_prev;
  };
  auto cache = std::make_shared<Cache>();
  cache->z.resize(len * h);
  cache->r.resize(len * h);
  cache->n.resize(len * h);
  cache->hh_n.resize(len * h);
  cache->h_prev.resize(len * h);

  const Tensor<T>& xp = x_proj.value();
  const Tensor<T>& wv = w_h.value();
  const Tensor<T>& bv = b_h.value();
  Tensor<T> out = Tensor<T>::zeros(len, h);
  std::vector<T> state(h, T(0)), hh(3 * h);
  auto sig = [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); };

  for (std::size_t step = 0; step < len; ++step) {
    const std::size_t t = reverse ? len - 1 - step : step;
    for (std::size_t q = 0; q < 3 * h; ++q) hh[q] = bv[q];
    for (std::size_t p = 0; p < h; ++p) {
      const T sp = state[p];
      if (sp == T(0)) continue;
      const T* wrow = &wv(p, 0);
      for (std::size_t q = 0; q < 3 * h; ++q) hh[q] += sp * wrow[q];
    }
    const T* xrow = &xp(t, 0);
    for (std::size_t k = 0; k < h; ++k) {
      const std::size_t c = t * h + k;
      const T z = sig(xrow[k] + hh[k]);
      const T r = sig(xrow[h + k] + hh[h + k]);
      const T n = std::tanh(xrow[2 * h + k] + r * hh[2 * h + k]);
      cache->z[c] = z;
      cache->r[c] = r;
      cache->n[c] = n;
      cache->hh_n[c] = hh[2 * h + k];
      cache->h_prev[c] = state[k];
    }
    for (std::size_t k = 0; k < h; ++k) {
      const std::size_t c = t * h + k;
      state[k] = (T(1) - cache->z[c]) * state[k] + cache->z[c] * cache->n[c];
      out(t, k) = state[k];
    }
  }

  const std::size_t ix = x_proj.id(), iw = w_h.id(), ib = b_h.id();
  return x_proj.tape()->record(
      "gru_sequence", std::move(out), any_requires({x_proj, w_h, b_h}), [=](Tape<T>& tp, std::size_t self) {
        const Tensor<T>& g = tp.node(self).grad;
        const Tensor<T>& wv2 = tp.node(iw).value;
        const bool gx = tp.node(ix).requires_grad, gw = tp.node(iw).requires_grad, gb = tp.node(ib).requires_grad;
        Tensor<T>* dx = gx ? &tp.grad_of(ix) : nullptr;
        Tensor<T>* dw = gw ? &tp.grad_of(iw) : nullptr;
        Tensor<T>* db = gb ? &tp.grad_of(ib) : nullptr;
        std::vector<T> dh(h, T(0)), dhh(3 * h), da(3 * h);
        for (std::size_t step = len; step-- > 0;) {
          const std::size_t t = reverse ? len - 1 - step : step;
          for (std::size_t k = 0; k < h; ++k) dh[k] += g(t, k);
          for (std::size_t k = 0; k < h; ++k) {
            const std::size_t c = t * h + k;
            const T z = cache->z[c], r = cache->r[c], n = cache->n[c], hp = cache->h_prev[c];
            const T dn = dh[k] * z;
            const T dz = dh[k] * (n - hp);
            const T dan = dn * (T(1) - n * n);
            const T dr = dan * cache->hh_n[c];
            da[k] = dz * z * (T(1) - z);
            da[h + k] = dr * r * (T(1) - r);
            da[2 * h + k] = dan;
            dhh[k] = da[k];
            dhh[h + k] = da[h + k];
            dhh[2 * h + k] = dan * r;
            dh[k] *= (T(1) - z);
          }
          if (dx) {
            for (std::size_t q = 0; q < 3 * h; ++q) (*dx)(t, q) += da[q];
          }
          if (db) {
            for (std::size_t q = 0; q < 3 * h; ++q) (*db)[q] += dhh[q];
          }
          for (std::size_t p = 0; p < h; ++p) {
            const T hp = cache->h_prev[t * h + p];
            const T* wrow = &wv2(p, 0);
            T acc = 0;
            for (std::size_t q = 0; q < 3 * h; ++q) acc += dhh[q] * wrow[q];
            dh[p] += acc;
            if (dw && hp != T(0)) {
              T* dwrow = &(*dw)(p, 0);
              for (std::size_t q = 0; q < 3 * h; ++q) dwrow[q] += hp * dhh[q];
            }
          }
        }
      });
}

#define CSMGAN_INSTANTIATE_AUTODIFF(T)                                                            \
  template bool all_finite<T>(const Tensor<T>&);                                                  \
  template class Var<T>;                                                                          \
  template class Tape<T>;                                                                         \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                           \
  template Var<T> transpose(const Var<T>&);                                                       \
  template Var<T> add(const Var<T>&, const Var<T>&);                                              \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                              \
  template Var<T> scale(const Var<T>&, T);                                                        \
  template Var<T> add_scalar(const Var<T>&, T);                                                   \
  template Var<T> activation(const Var<T>&, Activation);                                          \
  template Var<T> softmax_rows(const Var<T>&);                                                    \
  template Var<T> softmax_cols(const Var<T>&);                                                    \
  template Var<T> conv1d(const Var<T>&, const Var<T>&, std::size_t, std::size_t);                 \
  template Var<T> conv1d_same(const Var<T>&, const Var<T>&);                                      \
  template Var<T> smooth_l1(const Var<T>&);                                                       \
  template Var<T> sum(const Var<T>&);                                                             \
  template Var<T> mean(const Var<T>&);                                                            \
  template Var<T> slice_rows(const Var<T>&, std::size_t, std::size_t);                            \
  template Var<T> slice_cols(const Var<T>&, std::size_t, std::size_t);                            \
  template Var<T> select_rows(const Var<T>&, const std::vector<std::size_t>&);                    \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                        \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                                        \
  template Var<T> reverse_rows(const Var<T>&);                                                    \
  template Var<T> maximum(const std::vector<Var<T>>&);                                            \
  template Var<T> cosine_similarity(const Var<T>&, const Var<T>&);                                \
  template Var<T> soft_bce(const Var<T>&, const Tensor<T>&, T);                                   \
  template Var<T> gru_sequence(const Var<T>&, const Var<T>&, const Var<T>&, bool);

CSMGAN_INSTANTIATE_AUTODIFF(float)
CSMGAN_INSTANTIATE_AUTODIFF(double)

}  // namespace csmgan
