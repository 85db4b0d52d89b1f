#include "lgseg/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <atomic>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace lgseg {

namespace {

thread_local std::vector<Tape*> tl_tape_stack;
thread_local GradSink* tl_sink = nullptr;

int64_t shape_product(const std::vector<int>& shape) {
  int64_t p = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
    p *= d;
  }
  return p;
}

std::string shape_to_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

[[noreturn]] void shape_error(const std::string& op, const std::vector<int>& a,
                              const std::vector<int>& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_to_str(a) +
                              " vs " + shape_to_str(b));
}

#ifndef NDEBUG
void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x))
      throw std::logic_error(std::string(op) + ": non-finite value in forward output");
  }
}
#endif

// Create an op result; records on the active tape only when some input
// required a gradient.
Tensor make_result(const char* op, std::vector<int> shape,
                   std::vector<double> values, bool inputs_need_grad) {
  auto d = std::make_shared<detail::TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
#ifndef NDEBUG
  check_finite(op, d->values);
#endif
  Tape* tape = Tape::active();
  if (tape && inputs_need_grad) {
    d->requires_grad = true;
    d->tape_id = tape->id();
  }
  return detail::wrap(std::move(d));
}

}  // namespace

namespace detail {

Tensor wrap(std::shared_ptr<TensorData> d) { return Tensor(std::move(d)); }

void push_node(const char* op, std::function<void()> fn) {
  Tape* tape = Tape::active();
  assert(tape != nullptr);
  tape->nodes_.push_back({op, std::move(fn)});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(std::vector<int> shape) {
  int64_t n = shape_product(shape);
  auto d = std::make_shared<detail::TensorData>();
  d->shape = std::move(shape);
  d->values.assign(n, 0.0);
  return detail::wrap(std::move(d));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  int64_t n = shape_product(shape);
  auto d = std::make_shared<detail::TensorData>();
  d->shape = std::move(shape);
  d->values.assign(n, value);
  return detail::wrap(std::move(d));
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
  int64_t n = shape_product(shape);
  if (n != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                " values for shape " + shape_to_str(shape));
  auto d = std::make_shared<detail::TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  return detail::wrap(std::move(d));
}

Tensor Tensor::param(std::vector<int> shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.d_->requires_grad = true;
  return t;
}

std::string Tensor::shape_str() const { return shape_to_str(d_->shape); }

// ---------------------------------------------------------------------------
// GradSink

void GradSink::add(detail::TensorData* t, const double* g, int64_t n) {
  auto& buf = store_[t];
  if (buf.empty()) buf.assign(t->values.size(), 0.0);
  for (int64_t i = 0; i < n; ++i) buf[i] += g[i];
}

void GradSink::merge_into_params() {
  for (auto& [t, buf] : store_) {
    if (t->grad.empty()) t->grad.assign(t->values.size(), 0.0);
    for (size_t i = 0; i < buf.size(); ++i) t->grad[i] += buf[i];
  }
}

const std::vector<double>* GradSink::find(const detail::TensorData* t) const {
  auto it = store_.find(const_cast<detail::TensorData*>(t));
  return it == store_.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------
// Tape

namespace {
std::atomic<uint64_t> g_tape_counter{1};
}  // namespace

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) { tl_tape_stack.push_back(this); }

Tape::~Tape() {
  assert(!tl_tape_stack.empty() && tl_tape_stack.back() == this);
  tl_tape_stack.pop_back();
}

Tape* Tape::active() {
  return tl_tape_stack.empty() ? nullptr : tl_tape_stack.back();
}

void Tape::backward(const Tensor& loss, GradSink* sink) {
  if (!loss.defined() || loss.data()->tape_id != id_)
    throw std::runtime_error("backward: loss tensor is detached from this tape");
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                loss.shape_str());
  if (consumed_)
    throw std::runtime_error("backward: tape was already walked; record a fresh tape");
  consumed_ = true;
  loss.data()->grad.assign(1, 1.0);
  tl_sink = sink;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  tl_sink = nullptr;
}

void accumulate_grad(const std::shared_ptr<detail::TensorData>& t,
                     const double* g, int64_t n) {
  if (!t->requires_grad) return;
  if (t->tape_id == 0 && tl_sink != nullptr) {
    tl_sink->add(t.get(), g, n);
    return;
  }
  if (t->grad.empty()) t->grad.assign(t->values.size(), 0.0);
  double* dst = t->grad.data();
  for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

const double* output_grad(const std::shared_ptr<detail::TensorData>& t) {
  return t->grad.empty() ? nullptr : t->grad.data();
}

// ---------------------------------------------------------------------------
// kernels

namespace kernels {

void matmul_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* __restrict Ai = A + static_cast<int64_t>(i) * k;
    double* __restrict Ci = C + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double a = Ai[p];
      const double* __restrict Bp = B + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) Ci[j] += a * Bp[j];
    }
  }
}

void matmul_abt_acc(const double* A, const double* B, double* C, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* __restrict Ai = A + static_cast<int64_t>(i) * n;
    double* __restrict Ci = C + static_cast<int64_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      const double* __restrict Bj = B + static_cast<int64_t>(j) * n;
      double s = 0.0;
      for (int p = 0; p < n; ++p) s += Ai[p] * Bj[p];
      Ci[j] += s;
    }
  }
}

void matmul_atb_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int p = 0; p < m; ++p) {
    const double* __restrict Ap = A + static_cast<int64_t>(p) * k;
    const double* __restrict Bp = B + static_cast<int64_t>(p) * n;
    for (int i = 0; i < k; ++i) {
      const double a = Ap[i];
      double* __restrict Ci = C + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) Ci[j] += a * Bp[j];
    }
  }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// ops

namespace {

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank)
    throw std::invalid_argument(std::string(op) + ": expected rank " +
                                std::to_string(rank) + ", got " + t.shape_str());
}

void append_node(const char* op, std::function<void()> fn) {
  detail::push_node(op, std::move(fn));
}

bool needs_grad(const Tensor& a) { return a.requires_grad(); }
bool needs_grad(const Tensor& a, const Tensor& b) {
  return a.requires_grad() || b.requires_grad();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) shape_error("matmul", a.shape(), b.shape());
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  kernels::matmul_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
  Tensor res = make_result("matmul", {m, n}, std::move(out), needs_grad(a, b));
  if (res.requires_grad()) {
    auto ad = a.handle(), bd = b.handle(), od = res.handle();
    append_node("matmul", [ad, bd, od, m, k, n]() {
      const double* g = output_grad(od);
      if (!g) return;
      if (ad->requires_grad) {
        std::vector<double> da(static_cast<size_t>(m) * k, 0.0);
        kernels::matmul_abt_acc(g, bd->values.data(), da.data(), m, n, k);
        accumulate_grad(ad, da.data(), da.size());
      }
      if (bd->requires_grad) {
        std::vector<double> db(static_cast<size_t>(k) * n, 0.0);
        kernels::matmul_atb_acc(ad->values.data(), g, db.data(), m, k, n);
        accumulate_grad(bd, db.data(), db.size());
      }
    });
  }
  return res;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n);
  const auto& v = a.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = v[static_cast<size_t>(i) * n + j];
  Tensor res = make_result("transpose", {n, m}, std::move(out), needs_grad(a));
  if (res.requires_grad()) {
    auto ad = a.handle(), od = res.handle();
    append_node("transpose", [ad, od, m, n]() {
      const double* g = output_grad(od);
      if (!g) return;
      std::vector<double> da(static_cast<size_t>(m) * n);
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < m; ++i) da[static_cast<size_t>(i) * n + j] = g[static_cast<size_t>(j) * m + i];
      accumulate_grad(ad, da.data(), da.size());
    });
  }
  return res;
}

namespace {

Tensor elementwise_binary(const char* op, const Tensor& a, const Tensor& b,
                          double (*fwd)(double, double), int mode) {
  // mode 0: add, 1: sub, 2: mul
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
  const int64_t n = a.size();
  std::vector<double> out(n);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
  Tensor res = make_result(op, a.shape(), std::move(out), needs_grad(a, b));
  if (res.requires_grad()) {
    auto ad = a.handle(), bd = b.handle(), od = res.handle();
    append_node(op, [ad, bd, od, n, mode]() {
      const double* g = output_grad(od);
      if (!g) return;
      std::vector<double> buf(n);
      if (ad->requires_grad) {
        if (mode == 2) {
          const double* bv = bd->values.data();
          for (int64_t i = 0; i < n; ++i) buf[i] = g[i] * bv[i];
          accumulate_grad(ad, buf.data(), n);
        } else {
          accumulate_grad(ad, g, n);
        }
      }
      if (bd->requires_grad) {
        if (mode == 2) {
          const double* av = ad->values.data();
          for (int64_t i = 0; i < n; ++i) buf[i] = g[i] * av[i];
          accumulate_grad(bd, buf.data(), n);
        } else if (mode == 1) {
          for (int64_t i = 0; i < n; ++i) buf[i] = -g[i];
          accumulate_grad(bd, buf.data(), n);
        } else {
          accumulate_grad(bd, g, n);
        }
      }
    });
  }
  return res;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary("add", a, b, [](double x, double y) { return x + y; }, 0);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary("sub", a, b, [](double x, double y) { return x - y; }, 1);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary("mul", a, b, [](double x, double y) { return x * y; }, 2);
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor scale(const Tensor& a, double c) {
  const int64_t n = a.size();
  std::vector<double> out(n);
  const double* av = a.values().data();
  for (int64_t i = 0; i < n; ++i) out[i] = av[i] * c;
  Tensor res = make_result("scale", a.shape(), std::move(out), needs_grad(a));
  if (res.requires_grad()) {
    auto ad = a.handle(), od = res.handle();
    append_node("scale", [ad, od, n, c]() {
      const double* g = output_grad(od);
      if (!g) return;
      std::vector<double> buf(n);
      for (int64_t i = 0; i < n; ++i) buf[i] = g[i] * c;
      accumulate_grad(ad, buf.data(), n);
    });
  }
  return res;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  require_rank(x, 2, "add_rowvec");
  const int m = x.dim(0), n = x.dim(1);
  if (v.size() != n) shape_error("add_rowvec", x.shape(), v.shape());
  std::vector<double> out(static_cast<size_t>(m) * n);
  const double* xv = x.values().data();
  const double* vv = v.values().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] = xv[static_cast<size_t>(i) * n + j] + vv[j];
  Tensor res = make_result("add_rowvec", x.shape(), std::move(out), needs_grad(x, v));
  if (res.requires_grad()) {
    auto xd = x.handle(), vd = v.handle(), od = res.handle();
    append_node("add_rowvec", [xd, vd, od, m, n]() {
      const double* g = output_grad(od);
      if (!g) return;
      if (xd->requires_grad) accumulate_grad(xd, g, static_cast<int64_t>(m) * n);
      if (vd->requires_grad) {
        std::vector<double> dv(n, 0.0);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) dv[j] += g[static_cast<size_t>(i) * n + j];
        accumulate_grad(vd, dv.data(), n);
      }
    });
  }
  return res;
}

namespace {

template <typename FwdFn, typename BwdFn>
Tensor elementwise_unary(const char* op, const Tensor& a, FwdFn fwd, BwdFn dfn) {
  // dfn(x, y) gives dy/dx from input x and output y
  const int64_t n = a.size();
  std::vector<double> out(n);
  const double* av = a.values().data();
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  Tensor res = make_result(op, a.shape(), std::move(out), needs_grad(a));
  if (res.requires_grad()) {
    auto ad = a.handle(), od = res.handle();
    append_node(op, [ad, od, n, dfn]() {
      const double* g = output_grad(od);
      if (!g) return;
      std::vector<double> buf(n);
      const double* xv = ad->values.data();
      const double* yv = od->values.data();
      for (int64_t i = 0; i < n; ++i) buf[i] = g[i] * dfn(xv[i], yv[i]);
      accumulate_grad(ad, buf.data(), n);
    });
  }
  return res;
}

constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

Tensor relu(const Tensor& x) {
  return elementwise_unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return elementwise_unary(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor sigmoid(const Tensor& x) {
  return elementwise_unary(
      "sigmoid", x,
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                     : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& x) {
  return elementwise_unary(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor log_op(const Tensor& x) {
  return elementwise_unary(
      "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

namespace {

// Decompose shape into (outer, n, inner) around `axis`.
void axis_decompose(const std::vector<int>& shape, int axis, int64_t& outer,
                    int& n, int64_t& inner) {
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw std::invalid_argument("axis " + std::to_string(axis) +
                                " out of range for shape " + shape_to_str(shape));
  outer = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  n = shape[axis];
  inner = 1;
  for (size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
}

Tensor softmax_impl(const Tensor& x, int axis, const std::vector<uint8_t>* keep) {
  int64_t outer, inner;
  int n;
  axis_decompose(x.shape(), axis, outer, n, inner);
  if (keep) {
    if (static_cast<int>(keep->size()) != n)
      throw std::invalid_argument("masked_softmax: mask length " +
                                  std::to_string(keep->size()) +
                                  " does not match axis size " + std::to_string(n));
    bool any = false;
    for (uint8_t k : *keep) any = any || (k != 0);
    if (!any) throw std::runtime_error("masked_softmax: fully masked slice is degenerate");
  }
  const double* xv = x.values().data();
  std::vector<double> out(x.size());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j) {
        if (keep && !(*keep)[j]) continue;
        mx = std::max(mx, xv[base + j * inner]);
      }
      double denom = 0.0;
      for (int j = 0; j < n; ++j) {
        if (keep && !(*keep)[j]) {
          out[base + j * inner] = 0.0;
          continue;
        }
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        denom += e;
      }
      for (int j = 0; j < n; ++j) {
        if (keep && !(*keep)[j]) continue;
        out[base + j * inner] /= denom;
      }
    }
  }
  const char* name = keep ? "masked_softmax" : "softmax";
  Tensor res = make_result(name, x.shape(), std::move(out), needs_grad(x));
  if (res.requires_grad()) {
    auto xd = x.handle(), od = res.handle();
    append_node(name, [xd, od, outer, n, inner]() {
      const double* g = output_grad(od);
      if (!g) return;
      const double* y = od->values.data();
      std::vector<double> dx(od->values.size());
      // dx = y * (g - sum(g*y)) per slice; masked outputs are exactly 0 so
      // they contribute nothing and receive nothing
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * n * inner + in;
          double dot = 0.0;
          for (int j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (int j = 0; j < n; ++j) {
            const int64_t idx = base + j * inner;
            dx[idx] = y[idx] * (g[idx] - dot);
          }
        }
      }
      accumulate_grad(xd, dx.data(), dx.size());
    });
  }
  return res;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) { return softmax_impl(x, axis, nullptr); }

Tensor masked_softmax(const Tensor& x, int axis, const std::vector<uint8_t>& keep) {
  return softmax_impl(x, axis, &keep);
}

Tensor concat(int axis, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  for (const Tensor& p : parts) require_rank(p, 2, "concat");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  const int fixed = parts[0].dim(1 - axis);
  int total = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.dim(1 - axis) != fixed) shape_error("concat", parts[0].shape(), p.shape());
    total += p.dim(axis);
    rg = rg || p.requires_grad();
  }
  std::vector<int> oshape = axis == 0 ? std::vector<int>{total, fixed}
                                      : std::vector<int>{fixed, total};
  std::vector<double> out(static_cast<size_t>(total) * fixed);
  if (axis == 0) {
    size_t off = 0;
    for (const Tensor& p : parts) {
      std::memcpy(out.data() + off, p.values().data(), p.size() * sizeof(double));
      off += p.size();
    }
  } else {
    int col = 0;
    for (const Tensor& p : parts) {
      const int pc = p.dim(1);
      for (int r = 0; r < fixed; ++r)
        std::memcpy(out.data() + static_cast<size_t>(r) * total + col,
                    p.values().data() + static_cast<size_t>(r) * pc,
                    pc * sizeof(double));
      col += pc;
    }
  }
  Tensor res = make_result("concat", std::move(oshape), std::move(out), rg);
  if (res.requires_grad()) {
    std::vector<std::shared_ptr<detail::TensorData>> hs;
    hs.reserve(parts.size());
    for (const Tensor& p : parts) hs.push_back(p.handle());
    auto od = res.handle();
    append_node("concat", [hs, od, axis, fixed, total]() {
      const double* g = output_grad(od);
      if (!g) return;
      if (axis == 0) {
        size_t off = 0;
        for (const auto& h : hs) {
          if (h->requires_grad) accumulate_grad(h, g + off, h->values.size());
          off += h->values.size();
        }
      } else {
        int col = 0;
        for (const auto& h : hs) {
          const int pc = h->shape[1];
          if (h->requires_grad) {
            std::vector<double> buf(h->values.size());
            for (int r = 0; r < fixed; ++r)
              std::memcpy(buf.data() + static_cast<size_t>(r) * pc,
                          g + static_cast<size_t>(r) * total + col, pc * sizeof(double));
            accumulate_grad(h, buf.data(), buf.size());
          }
          col += pc;
        }
      }
    });
  }
  return res;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
  require_rank(x, 2, "slice");
  if (axis != 0 && axis != 1) throw std::invalid_argument("slice: axis must be 0 or 1");
  const int m = x.dim(0), n = x.dim(1);
  const int bound = x.dim(axis);
  if (start < 0 || len <= 0 || start + len > bound)
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") out of bounds " +
                                std::to_string(bound));
  std::vector<int> oshape = axis == 0 ? std::vector<int>{len, n}
                                      : std::vector<int>{m, len};
  std::vector<double> out(static_cast<size_t>(oshape[0]) * oshape[1]);
  const double* xv = x.values().data();
  if (axis == 0) {
    std::memcpy(out.data(), xv + static_cast<size_t>(start) * n,
                static_cast<size_t>(len) * n * sizeof(double));
  } else {
    for (int r = 0; r < m; ++r)
      std::memcpy(out.data() + static_cast<size_t>(r) * len,
                  xv + static_cast<size_t>(r) * n + start, len * sizeof(double));
  }
  Tensor res = make_result("slice", std::move(oshape), std::move(out), needs_grad(x));
  if (res.requires_grad()) {
    auto xd = x.handle(), od = res.handle();
    append_node("slice", [xd, od, axis, start, len, m, n]() {
      const double* g = output_grad(od);
      if (!g) return;
      std::vector<double> dx(static_cast<size_t>(m) * n, 0.0);
      if (axis == 0) {
        std::memcpy(dx.data() + static_cast<size_t>(start) * n, g,
                    static_cast<size_t>(len) * n * sizeof(double));
      } else {
        for (int r = 0; r < m; ++r)
          std::memcpy(dx.data() + static_cast<size_t>(r) * n + start,
                      g + static_cast<size_t>(r) * len, len * sizeof(double));
      }
      accumulate_grad(xd, dx.data(), dx.size());
    });
  }
  return res;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (shape_product(shape) != x.size())
    shape_error("reshape", x.shape(), shape);
  Tensor res = make_result("reshape", std::move(shape), x.values(), needs_grad(x));
  if (res.requires_grad()) {
    auto xd = x.handle(), od = res.handle();
    append_node("reshape", [xd, od]() {
      const double* g = output_grad(od);
      if (!g) return;
      accumulate_grad(xd, g, static_cast<int64_t>(od->values.size()));
    });
  }
  return res;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor res = make_result("sum", {1}, {s}, needs_grad(x));
  if (res.requires_grad()) {
    auto xd = x.handle(), od = res.handle();
    append_node("sum", [xd, od]() {
      const double* g = output_grad(od);
      if (!g) return;
      std::vector<double> dx(xd->values.size(), g[0]);
      accumulate_grad(xd, dx.data(), dx.size());
    });
  }
  return res;
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor res = make_result("mean", {1}, {s / n}, needs_grad(x));
  if (res.requires_grad()) {
    auto xd = x.handle(), od = res.handle();
    append_node("mean", [xd, od, n]() {
      const double* g = output_grad(od);
      if (!g) return;
      std::vector<double> dx(xd->values.size(), g[0] / n);
      accumulate_grad(xd, dx.data(), dx.size());
    });
  }
  return res;
}

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  Tensor y = matmul(x, W);
  if (b.defined()) y = add_rowvec(y, b);
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.rank() < 1) throw std::invalid_argument("layer_norm: rank >= 1 required");
  const int n = x.shape().back();
  if (gamma.size() != n || beta.size() != n)
    throw std::invalid_argument("layer_norm: gamma/beta length " +
                                std::to_string(gamma.size()) + "/" +
                                std::to_string(beta.size()) + " for width " +
                                std::to_string(n));
  const int64_t rows = x.size() / n;
  const double* xv = x.values().data();
  const double* gv = gamma.values().data();
  const double* bv = beta.values().data();
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = xv + r * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int j = 0; j < n; ++j) {
      const double xh = (row[j] - mu) * is;
      (*xhat)[r * n + j] = xh;
      out[r * n + j] = gv[j] * xh + bv[j];
    }
  }
  Tensor res = make_result("layer_norm", x.shape(), std::move(out),
                           x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  if (res.requires_grad()) {
    auto xd = x.handle(), gd = gamma.handle(), bd = beta.handle(), od = res.handle();
    append_node("layer_norm", [xd, gd, bd, od, xhat, inv_std, rows, n]() {
      const double* g = output_grad(od);
      if (!g) return;
      const double* gv = gd->values.data();
      if (gd->requires_grad || bd->requires_grad) {
        std::vector<double> dgamma(n, 0.0), dbeta(n, 0.0);
        for (int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < n; ++j) {
            dgamma[j] += g[r * n + j] * (*xhat)[r * n + j];
            dbeta[j] += g[r * n + j];
          }
        if (gd->requires_grad) accumulate_grad(gd, dgamma.data(), n);
        if (bd->requires_grad) accumulate_grad(bd, dbeta.data(), n);
      }
      if (xd->requires_grad) {
        std::vector<double> dx(xd->values.size());
        for (int64_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat * xhat)
          for (int j = 0; j < n; ++j) {
            const double dxh = g[r * n + j] * gv[j];
            m1 += dxh;
            m2 += dxh * (*xhat)[r * n + j];
          }
          m1 /= n;
          m2 /= n;
          const double is = (*inv_std)[r];
          for (int j = 0; j < n; ++j) {
            const double dxh = g[r * n + j] * gv[j];
            dx[r * n + j] = is * (dxh - m1 - (*xhat)[r * n + j] * m2);
          }
        }
        accumulate_grad(xd, dx.data(), dx.size());
      }
    });
  }
  return res;
}

Tensor masked_mean_pool(const Tensor& x, const std::vector<uint8_t>& keep, int axis) {
  require_rank(x, 2, "masked_mean_pool");
  if (axis != 0 && axis != 1)
    throw std::invalid_argument("masked_mean_pool: axis must be 0 or 1");
  const int m = x.dim(0), n = x.dim(1);
  const int len = axis == 0 ? m : n;
  if (static_cast<int>(keep.size()) != len)
    throw std::invalid_argument("masked_mean_pool: mask length " +
                                std::to_string(keep.size()) + " for axis size " +
                                std::to_string(len));
  int cnt = 0;
  for (uint8_t k : keep) cnt += k ? 1 : 0;
  if (cnt == 0) throw std::runtime_error("masked_mean_pool: all positions masked");
  const double* xv = x.values().data();
  std::vector<int> oshape = axis == 0 ? std::vector<int>{1, n} : std::vector<int>{m, 1};
  std::vector<double> out(axis == 0 ? n : m, 0.0);
  if (axis == 0) {
    for (int r = 0; r < m; ++r) {
      if (!keep[r]) continue;
      for (int j = 0; j < n; ++j) out[j] += xv[static_cast<size_t>(r) * n + j];
    }
    for (int j = 0; j < n; ++j) out[j] /= cnt;
  } else {
    for (int r = 0; r < m; ++r) {
      double s = 0.0;
      for (int j = 0; j < n; ++j)
        if (keep[j]) s += xv[static_cast<size_t>(r) * n + j];
      out[r] = s / cnt;
    }
  }
  Tensor res = make_result("masked_mean_pool", std::move(oshape), std::move(out),
                           needs_grad(x));
  if (res.requires_grad()) {
    auto xd = x.handle(), od = res.handle();
    auto keep_copy = keep;
    append_node("masked_mean_pool", [xd, od, keep_copy, m, n, cnt, axis]() {
      const double* g = output_grad(od);
      if (!g) return;
      std::vector<double> dx(static_cast<size_t>(m) * n, 0.0);
      if (axis == 0) {
        for (int r = 0; r < m; ++r) {
          if (!keep_copy[r]) continue;
          for (int j = 0; j < n; ++j) dx[static_cast<size_t>(r) * n + j] = g[j] / cnt;
        }
      } else {
        for (int r = 0; r < m; ++r)
          for (int j = 0; j < n; ++j)
            if (keep_copy[j]) dx[static_cast<size_t>(r) * n + j] = g[r] / cnt;
      }
      accumulate_grad(xd, dx.data(), dx.size());
    });
  }
  return res;
}

Tensor zero_rows(const Tensor& x, const std::vector<uint8_t>& keep) {
  require_rank(x, 2, "zero_rows");
  const int m = x.dim(0), n = x.dim(1);
  if (static_cast<int>(keep.size()) != m)
    throw std::invalid_argument("zero_rows: mask length " + std::to_string(keep.size()) +
                                " for " + std::to_string(m) + " rows");
  std::vector<double> out(x.values());
  for (int r = 0; r < m; ++r)
    if (!keep[r]) std::fill_n(out.begin() + static_cast<size_t>(r) * n, n, 0.0);
  Tensor res = make_result("zero_rows", x.shape(), std::move(out), needs_grad(x));
  if (res.requires_grad()) {
    auto xd = x.handle(), od = res.handle();
    auto keep_copy = keep;
    append_node("zero_rows", [xd, od, keep_copy, m, n]() {
      const double* g = output_grad(od);
      if (!g) return;
      std::vector<double> dx(static_cast<size_t>(m) * n, 0.0);
      for (int r = 0; r < m; ++r)
        if (keep_copy[r])
          std::memcpy(dx.data() + static_cast<size_t>(r) * n,
                      g + static_cast<size_t>(r) * n, n * sizeof(double));
      accumulate_grad(xd, dx.data(), dx.size());
    });
  }
  return res;
}

namespace {

struct ResizeTap {
  int64_t src;
  double w;
};

// the four source taps of an output pixel under half-pixel center alignment
void bilinear_taps(int oy, int ox, int in_h, int in_w, int out_h, int out_w,
                   ResizeTap taps[4]) {
  double sy = (oy + 0.5) * (static_cast<double>(in_h) / out_h) - 0.5;
  double sx = (ox + 0.5) * (static_cast<double>(in_w) / out_w) - 0.5;
  sy = std::min(std::max(sy, 0.0), static_cast<double>(in_h - 1));
  sx = std::min(std::max(sx, 0.0), static_cast<double>(in_w - 1));
  const int y0 = static_cast<int>(sy);
  const int x0 = static_cast<int>(sx);
  const int y1 = std::min(y0 + 1, in_h - 1);
  const int x1 = std::min(x0 + 1, in_w - 1);
  const double fy = sy - y0;
  const double fx = sx - x0;
  taps[0] = {static_cast<int64_t>(y0) * in_w + x0, (1 - fy) * (1 - fx)};
  taps[1] = {static_cast<int64_t>(y0) * in_w + x1, (1 - fy) * fx};
  taps[2] = {static_cast<int64_t>(y1) * in_w + x0, fy * (1 - fx)};
  taps[3] = {static_cast<int64_t>(y1) * in_w + x1, fy * fx};
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int new_h, int new_w) {
  require_rank(x, 3, "bilinear_resize");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (new_h <= 0 || new_w <= 0)
    throw std::invalid_argument("bilinear_resize: target size must be positive");
  std::vector<double> out(static_cast<size_t>(new_h) * new_w * c, 0.0);
  const double* xv = x.values().data();
  ResizeTap taps[4];
  for (int oy = 0; oy < new_h; ++oy)
    for (int ox = 0; ox < new_w; ++ox) {
      bilinear_taps(oy, ox, h, w, new_h, new_w, taps);
      double* op = out.data() + (static_cast<size_t>(oy) * new_w + ox) * c;
      for (int t = 0; t < 4; ++t) {
        if (taps[t].w == 0.0) continue;
        const double* ip = xv + taps[t].src * c;
        for (int ch = 0; ch < c; ++ch) op[ch] += taps[t].w * ip[ch];
      }
    }
  Tensor res = make_result("bilinear_resize", {new_h, new_w, c}, std::move(out),
                           needs_grad(x));
  if (res.requires_grad()) {
    auto xd = x.handle(), od = res.handle();
    append_node("bilinear_resize", [xd, od, h, w, c, new_h, new_w]() {
      const double* g = output_grad(od);
      if (!g) return;
      std::vector<double> dx(static_cast<size_t>(h) * w * c, 0.0);
      ResizeTap taps[4];
      for (int oy = 0; oy < new_h; ++oy)
        for (int ox = 0; ox < new_w; ++ox) {
          bilinear_taps(oy, ox, h, w, new_h, new_w, taps);
          const double* gp = g + (static_cast<size_t>(oy) * new_w + ox) * c;
          for (int t = 0; t < 4; ++t) {
            if (taps[t].w == 0.0) continue;
            double* ip = dx.data() + taps[t].src * c;
            for (int ch = 0; ch < c; ++ch) ip[ch] += taps[t].w * gp[ch];
          }
        }
      accumulate_grad(xd, dx.data(), dx.size());
    });
  }
  return res;
}

Tensor merge_patches(const Tensor& x, int h, int w, int f) {
  require_rank(x, 2, "merge_patches");
  const int c = x.dim(1);
  if (x.dim(0) != h * w)
    throw std::invalid_argument("merge_patches: " + std::to_string(x.dim(0)) +
                                " rows for " + std::to_string(h) + "x" + std::to_string(w));
  if (f <= 0 || h % f != 0 || w % f != 0)
    throw std::invalid_argument("merge_patches: size " + std::to_string(h) + "x" +
                                std::to_string(w) + " not divisible by " + std::to_string(f));
  const int ho = h / f, wo = w / f, co = f * f * c;
  std::vector<double> out(static_cast<size_t>(ho) * wo * co);
  const double* xv = x.values().data();
  for (int y2 = 0; y2 < ho; ++y2)
    for (int x2 = 0; x2 < wo; ++x2) {
      double* op = out.data() + (static_cast<size_t>(y2) * wo + x2) * co;
      for (int dy = 0; dy < f; ++dy)
        for (int dx = 0; dx < f; ++dx) {
          const int64_t src = (static_cast<int64_t>(y2 * f + dy) * w + (x2 * f + dx)) * c;
          std::memcpy(op + (static_cast<size_t>(dy) * f + dx) * c, xv + src,
                      c * sizeof(double));
        }
    }
  Tensor res = make_result("merge_patches", {ho * wo, co}, std::move(out), needs_grad(x));
  if (res.requires_grad()) {
    auto xd = x.handle(), od = res.handle();
    append_node("merge_patches", [xd, od, h, w, c, f]() {
      const double* g = output_grad(od);
      if (!g) return;
      const int ho = h / f, wo = w / f, co = f * f * c;
      std::vector<double> dx(static_cast<size_t>(h) * w * c);
      for (int y2 = 0; y2 < ho; ++y2)
        for (int x2 = 0; x2 < wo; ++x2) {
          const double* gp = g + (static_cast<size_t>(y2) * wo + x2) * co;
          for (int dy = 0; dy < f; ++dy)
            for (int dxi = 0; dxi < f; ++dxi) {
              const int64_t dst = (static_cast<int64_t>(y2 * f + dy) * w + (x2 * f + dxi)) * c;
              std::memcpy(dx.data() + dst, gp + (static_cast<size_t>(dy) * f + dxi) * c,
                          c * sizeof(double));
            }
        }
      accumulate_grad(xd, dx.data(), dx.size());
    });
  }
  return res;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  require_rank(table, 2, "embedding_lookup");
  const int v = table.dim(0), c = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw std::invalid_argument("embedding_lookup: id " + std::to_string(id) +
                                  " out of range [0," + std::to_string(v) + ")");
  const int t = static_cast<int>(ids.size());
  std::vector<double> out(static_cast<size_t>(t) * c);
  const double* tv = table.values().data();
  for (int i = 0; i < t; ++i)
    std::memcpy(out.data() + static_cast<size_t>(i) * c,
                tv + static_cast<size_t>(ids[i]) * c, c * sizeof(double));
  Tensor res = make_result("embedding_lookup", {t, c}, std::move(out),
                           needs_grad(table));
  if (res.requires_grad()) {
    auto td = table.handle(), od = res.handle();
    auto ids_copy = ids;
    append_node("embedding_lookup", [td, od, ids_copy, v, c]() {
      const double* g = output_grad(od);
      if (!g) return;
      std::vector<double> dt(static_cast<size_t>(v) * c, 0.0);
      for (size_t i = 0; i < ids_copy.size(); ++i)
        for (int j = 0; j < c; ++j)
          dt[static_cast<size_t>(ids_copy[i]) * c + j] += g[i * c + j];
      accumulate_grad(td, dt.data(), dt.size());
    });
  }
  return res;
}

Tensor bce_with_logits_mean(const Tensor& logits, const std::vector<double>& targets) {
  if (static_cast<int64_t>(targets.size()) != logits.size())
    throw std::invalid_argument("bce_with_logits_mean: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(logits.size()) + " logits");
  const int64_t n = logits.size();
  const double* z = logits.values().data();
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    total += std::max(z[i], 0.0) - z[i] * targets[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  Tensor res = make_result("bce_with_logits_mean", {1}, {total / n},
                           needs_grad(logits));
  if (res.requires_grad()) {
    auto zd = logits.handle(), od = res.handle();
    auto y = targets;
    append_node("bce_with_logits_mean", [zd, od, y, n]() {
      const double* g = output_grad(od);
      if (!g) return;
      const double* z = zd->values.data();
      std::vector<double> dz(n);
      for (int64_t i = 0; i < n; ++i) {
        const double s = z[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-z[i]))
                                     : std::exp(z[i]) / (1.0 + std::exp(z[i]));
        dz[i] = g[0] * (s - y[i]) / n;
      }
      accumulate_grad(zd, dz.data(), n);
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// gradient checking

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
  if (!x.requires_grad())
    throw std::invalid_argument("grad_check: x must be a parameter leaf");
  std::vector<double> analytic;
  {
    x.zero_grad();
    Tape tape;
    Tensor loss = f(x);
    if (loss.size() != 1)
      throw std::invalid_argument("grad_check: f must be scalar-valued");
    tape.backward(loss);
    analytic = x.grad();
    if (analytic.empty()) analytic.assign(x.size(), 0.0);
  }
  double max_err = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) {
    const double orig = x.values()[i];
    x.values()[i] = orig + h;
    const double fp = f(x)[0];
    x.values()[i] = orig - h;
    const double fm = f(x)[0];
    x.values()[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    max_err = std::max(max_err, err);
  }
  x.zero_grad();
  return max_err;
}

double grad_check_params(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params,
                         const std::vector<std::pair<int, int64_t>>& coords,
                         double h) {
  for (const Tensor& p : params)
    if (!p.requires_grad())
      throw std::invalid_argument("grad_check_params: all tensors must be parameters");
  std::vector<std::vector<double>> analytic(params.size());
  {
    for (Tensor p : params) p.zero_grad();
    Tape tape;
    Tensor loss = f();
    if (loss.size() != 1)
      throw std::invalid_argument("grad_check_params: f must be scalar-valued");
    tape.backward(loss);
    for (size_t i = 0; i < params.size(); ++i) {
      analytic[i] = params[i].grad();
      if (analytic[i].empty()) analytic[i].assign(params[i].size(), 0.0);
    }
  }
  double max_err = 0.0;
  for (auto [pi, ei] : coords) {
    Tensor p = params[pi];
    const double orig = p.values()[ei];
    p.values()[ei] = orig + h;
    const double fp = f()[0];
    p.values()[ei] = orig - h;
    const double fm = f()[0];
    p.values()[ei] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double a = analytic[pi][ei];
    const double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
    max_err = std::max(max_err, err);
  }
  for (Tensor p : params) p.zero_grad();
  return max_err;
}

}  // namespace lgseg
