#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace lgseg {

class Tape;
class Tensor;

namespace detail {

struct TensorData {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;  // lazily allocated, same length as values
  bool requires_grad = false;
  uint64_t tape_id = 0;  // id of the tape that produced this tensor, 0 for leaves
};

Tensor wrap(std::shared_ptr<TensorData> d);
void push_node(const char* op, std::function<void()> fn);

}  // namespace detail

// Dense n-dimensional array of f64 in row-major order with an attached
// gradient slot. Copying a Tensor copies the handle, not the storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from(std::vector<int> shape, std::vector<double> values);
  // Trainable leaf: participates in gradient accumulation.
  static Tensor param(std::vector<int> shape, std::vector<double> values);

  bool defined() const { return d_ != nullptr; }
  const std::vector<int>& shape() const { return d_->shape; }
  int dim(int i) const { return d_->shape[i]; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(d_->values.size()); }

  const std::vector<double>& values() const { return d_->values; }
  std::vector<double>& values() { return d_->values; }
  const std::vector<double>& grad() const { return d_->grad; }

  double operator[](int64_t i) const { return d_->values[i]; }
  double at(int r, int c) const { return d_->values[int64_t(r) * d_->shape[1] + c]; }

  bool requires_grad() const { return d_->requires_grad; }
  void zero_grad() { d_->grad.assign(d_->values.size(), 0.0); }

  detail::TensorData* data() const { return d_.get(); }
  std::shared_ptr<detail::TensorData> handle() const { return d_; }

  std::string shape_str() const;

 private:
  friend Tensor detail::wrap(std::shared_ptr<detail::TensorData> d);
  explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<detail::TensorData> d_;
};

// Collects leaf gradients during backward instead of writing them into the
// parameter tensors; lets several samples run backward concurrently against
// shared parameters and be merged later in a fixed order.
class GradSink {
 public:
  void add(detail::TensorData* t, const double* g, int64_t n);
  // Accumulate this sink's content into the tensors' own grad slots.
  void merge_into_params();
  const std::vector<double>* find(const detail::TensorData* t) const;
  void clear() { store_.clear(); }

 private:
  std::unordered_map<detail::TensorData*, std::vector<double>> store_;
};

// Records the forward ops of one evaluation so backward() can replay them in
// reverse. A tape and the tensors it produced are confined to one thread;
// create one per forward pass.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Reverse-mode accumulation from a scalar loss. Leaf gradients go to
  // `sink` when given, otherwise into each leaf's grad slot. A tape can be
  // walked backward only once.
  void backward(const Tensor& loss, GradSink* sink = nullptr);

  size_t num_nodes() const { return nodes_.size(); }
  uint64_t id() const { return id_; }
  static Tape* active();

 private:
  friend void detail::push_node(const char* op, std::function<void()> fn);
  struct Node {
    const char* op;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  uint64_t id_;
  bool consumed_ = false;
};

// --- gradient routing used by op backward closures ---------------------
void accumulate_grad(const std::shared_ptr<detail::TensorData>& t,
                     const double* g, int64_t n);
// Returns null when no gradient flowed into t (its grad is unallocated).
const double* output_grad(const std::shared_ptr<detail::TensorData>& t);

// --- ops ----------------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard
Tensor scale(const Tensor& a, double c);
// x: m x n, v: vector of length n broadcast over rows
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor log_op(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);
// keep[i] != 0 marks a live position along `axis`; dropped positions get
// exactly 0 and live ones renormalize. Throws if everything is dropped.
Tensor masked_softmax(const Tensor& x, int axis, const std::vector<uint8_t>& keep);
Tensor concat(int axis, const std::vector<Tensor>& parts);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// y = x W + b with W: in x out, b: out (pass Tensor() for no bias)
Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);
// normalizes over the last axis
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
// 2-D x; mean over kept positions of `axis`, output keeps rank with that
// axis collapsed to 1
Tensor masked_mean_pool(const Tensor& x, const std::vector<uint8_t>& keep, int axis);
// zero out rows of a 2-D tensor where keep[r] == 0
Tensor zero_rows(const Tensor& x, const std::vector<uint8_t>& keep);
// x: (h, w, c); half-pixel center alignment, clamped to the border
Tensor bilinear_resize(const Tensor& x, int new_h, int new_w);
// x: (h*w) x c feature map; groups f x f blocks into one token of f*f*c
// channels, row-major over the coarse grid
Tensor merge_patches(const Tensor& x, int h, int w, int f);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
// numerically stable mean binary cross-entropy on logits;
// per element: max(z,0) - z*y + log1p(exp(-|z|))
Tensor bce_with_logits_mean(const Tensor& logits, const std::vector<double>& targets);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);

// --- verification helpers ------------------------------------------------
// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued deterministic f evaluated at leaf x.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double h = 1e-5);
// Same check against several parameter tensors at sampled coordinates.
// `coords` lists (tensor index, flat element index) pairs.
double grad_check_params(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params,
                         const std::vector<std::pair<int, int64_t>>& coords,
                         double h = 1e-5);

// raw kernels, exposed for reuse in backward paths and tests
namespace kernels {
// C(m,n) += A(m,k) B(k,n)
void matmul_acc(const double* A, const double* B, double* C, int m, int k, int n);
// C(m,k) += A(m,n) B(k,n)^T
void matmul_abt_acc(const double* A, const double* B, double* C, int m, int n, int k);
// C(k,n) += A(m,k)^T B(m,n)
void matmul_atb_acc(const double* A, const double* B, double* C, int m, int k, int n);
}  // namespace kernels

}  // namespace lgseg
