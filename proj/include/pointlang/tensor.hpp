#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pointlang/common.hpp"
#include "pointlang/rng.hpp"

namespace pointlang {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

// Dense row-major tensor of 64-bit floats. The payload is shared and treated
// as immutable once the producing operation returns; "mutation" means
// building a new tensor (the optimizer does exactly that). A tensor is
// tracked for autodiff when `node >= 0`, i.e. it was produced by (or
// registered as a leaf on) a Tape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double value);
  static Tensor from(Shape s, std::vector<double> data);
  static Tensor scalar(double value);
  static Tensor randn(Shape s, Rng& rng, double stddev);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int ndim() const { return int(shape_.size()); }
  int dim(int i) const { return shape_[size_t(i)]; }
  std::int64_t size() const { return data_ ? std::int64_t(data_->size()) : 0; }

  const std::vector<double>& vec() const { return *data_; }
  const double* ptr() const { return data_->data(); }
  double at(std::int64_t flat) const { return (*data_)[size_t(flat)]; }
  double at2(int r, int c) const {
    return (*data_)[size_t(r) * size_t(shape_[1]) + size_t(c)];
  }
  // Value of a one-element tensor.
  double item() const;

  bool requires_grad = false;
  int node = -1;

 private:
  friend class Tape;
  std::shared_ptr<const std::vector<double>> data_;
  Shape shape_;
};

// Result of Tape::backward. Gradients are retrievable for any tracked tensor
// that lay on the path from the watched leaves to the loss.
class Gradients {
 public:
  bool has(const Tensor& t) const;
  const std::vector<double>& wrt(const Tensor& t) const;

 private:
  friend class Tape;
  std::vector<std::shared_ptr<std::vector<double>>> by_node_;
};

// Reverse-mode autodiff tape. Operations record a node when any input is
// tracked; nodes are appended in execution order, which is already a
// topological order, and backward() walks them exactly once in reverse.
// Single-writer: one thread builds the graph (dense kernels may fan work out
// internally; each output element is owned by one worker and accumulated
// sequentially, so results are bit-identical for any thread count).
//
// Every operation validates shapes up front and checks its output for
// non-finite values (NaN/Inf anywhere is an error, not a value).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a leaf. The returned tensor shares the payload and carries the
  // tape node that gradient lookups key on.
  Tensor leaf(const Tensor& t);

  // Same data, not tracked. Gradient flow stops here.
  Tensor detach(const Tensor& t) const;

  // ---- primitives ----------------------------------------------------
  Tensor matmul(const Tensor& a, const Tensor& b);     // [M,K]x[K,N]
  Tensor add(const Tensor& a, const Tensor& b);        // broadcasting
  Tensor sub(const Tensor& a, const Tensor& b);        // broadcasting
  Tensor mul(const Tensor& a, const Tensor& b);        // broadcasting
  Tensor div(const Tensor& a, const Tensor& b);        // broadcasting
  Tensor scale(const Tensor& a, double c);
  Tensor transpose(const Tensor& a);                   // 2-D
  Tensor reshape(const Tensor& a, Shape s);
  Tensor concat(const std::vector<Tensor>& xs, int axis);
  Tensor slice(const Tensor& a, int axis, int begin, int end);
  Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
  Tensor gelu(const Tensor& a);                        // exact erf form
  Tensor softmax(const Tensor& a);                     // last axis
  // Last axis; population variance, eps=1e-5 added inside the square root.
  Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias);
  Tensor l2_normalize(const Tensor& a);                // last axis
  // mask is an untracked 0/1 tensor of identical shape; 1 selects `value`.
  Tensor masked_fill(const Tensor& a, const Tensor& mask, double value);
  // Multi-head scaled dot-product attention over row-major sequences:
  // q:[Lq,d] k,v:[Lk,d]; d split into `heads` contiguous column slices.
  // bias, when given, is an untracked additive [Lq,Lk] matrix shared by all
  // heads (0 / -1e9 masking convention).
  Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                   int heads, const Tensor* bias = nullptr);
  // logits [N,C]; targets in [0,C) or ignore_index to skip a row. Mean over
  // non-ignored rows of (logsumexp(row) - row[target]).
  Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                       int ignore_index = -100);
  Tensor mse(const Tensor& a, const Tensor& b);        // mean squared error
  Tensor mean(const Tensor& a);                        // all elements -> [1]
  Tensor sum(const Tensor& a);                         // all elements -> [1]
  Tensor mean_rows(const Tensor& a);                   // [N,C] -> [C]
  // [B*block, C] -> [B, C]; max over each block of consecutive rows, ties
  // resolved to the lowest row index.
  Tensor maxpool_rows(const Tensor& a, int block);

  // Gradient of a scalar loss wrt every tracked tensor on its path.
  // Accumulation order is fixed by node order: deterministic.
  Gradients backward(const Tensor& loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::function<void(const std::vector<double>&)> back;
    std::int64_t out_numel = 0;
  };

  // Records a node if any input is tracked; returns assigned node or -1.
  int record(Tensor& out, std::function<void(const std::vector<double>&)> fn);
  bool active(const Tensor& t) const { return t.node >= 0; }
  std::vector<double>* gacc(int node_id, std::int64_t numel);
  Tensor binary(const char* name, int op, const Tensor& a, const Tensor& b);

  std::vector<Node> nodes_;
  std::vector<std::shared_ptr<std::vector<double>>> grads_;  // live in backward
};

// Max relative error between reverse-mode and central-difference gradients
// of a scalar function at x:  max_i |g_ad[i] - g_cd[i]| / max(1, |g_cd[i]|).
// eps must lie in [1e-7, 1e-3].
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                  const Tensor& x, double eps);

}  // namespace pointlang
