#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "trunclab/rng.hpp"

namespace trunclab {

// Dense row-major f64 tensor, rank 1 or 2. All stored values must stay
// finite; ops that produce non-finite values raise numeric_error.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor vector1d(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  // Rank-2 accessors; rank-1 tensors behave as a single row.
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  void fill(double v);
  bool all_finite() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class Op : std::uint8_t {
  leaf,
  matmul,      // [m,k] x [k,n]
  matmul_nt,   // [m,k] x [n,k]^T
  add,         // same shape
  add_row,     // [m,n] + [n]
  add_const,   // + constant tensor (no grad through the constant)
  mul,         // Hadamard, same shape
  scale,       // * constant scalar
  gelu,        // exact erf form
  layer_norm,  // per row, with gain and bias parents
  softmax,     // per row
  log_softmax, // per row
  embed_rows,  // gather rows of [V,d] by token id
  per_token_nll, // fused log-softmax + negative pick; pads carry loss 0
  slice_cols,
  concat_cols,
  concat_vec,
  dot_const,   // <x, w> with constant w -> scalar
  sum,         // full reduce -> scalar
  custom,      // caller-supplied backward; used by tests to model wrong rules
};

const char* op_name(Op op);

// Append-only record of one forward computation. Construction order is the
// topological order; backward() walks it in reverse and visits each node
// exactly once. Single-threaded per tape.
class Tape {
 public:
  struct Node {
    Op op = Op::leaf;
    int p0 = -1, p1 = -1, p2 = -1;
    bool requires_grad = false;
    Tensor val;
    Tensor grad;  // allocated by backward(); same shape as val
    double c = 0.0;
    std::size_t i0 = 0, i1 = 0;
    std::vector<std::uint32_t> ids;
    std::vector<std::uint8_t> flags;
    std::vector<double> aux;
    std::function<void(Tape&, Node&)> custom_backward;
  };

  Var leaf(Tensor v, bool requires_grad = false);
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  Var add_row(Var a, Var r);
  Var add_const(Var a, const Tensor& c);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var gelu(Var a);
  Var layer_norm(Var x, Var gain, Var bias);
  Var softmax(Var a);
  Var log_softmax(Var a);
  Var embed_rows(Var table, const std::vector<std::uint32_t>& ids);
  Var per_token_nll(Var logits, const std::vector<std::uint32_t>& targets,
                    const std::vector<std::uint8_t>& pad_mask);
  Var slice_cols(Var a, std::size_t c0, std::size_t c1);
  Var concat_cols(Var a, Var b);
  Var concat_vec(Var a, Var b);
  Var dot_const(Var a, const std::vector<double>& w);
  Var sum(Var a);
  Var custom(std::vector<Var> parents, Tensor value,
             std::function<void(Tape&, Node&)> backward);

  // Root must be scalar. Gradients accumulate across fan-out; repeated
  // backward calls without zero_grad() keep accumulating.
  void backward(Var root);
  void zero_grad();

  const Tensor& value(Var v) const { return node(v).val; }
  const Tensor& grad(Var v) const;
  Tensor& mutable_grad(Var v) { return node_mut(v).grad; }
  bool has_grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  const Node& node(Var v) const;
  Node& node_mut(Var v);

 private:
  Var push(Node&& n);
  void check_finite(const Node& n) const;
  // Deque keeps node references stable while the tape grows.
  std::deque<Node> nodes_;
};

struct GradcheckReport {
  bool ok = false;
  double max_err = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // "input I coord J analytic A numeric N"
};

// Central finite differences against tape gradients. The error measure per
// coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
// max_coords_per_input == 0 checks every coordinate; otherwise a seeded
// subset of that size is checked per input.
GradcheckReport gradcheck(
    const std::function<Var(Tape&, const std::vector<Var>&)>& f,
    const std::vector<Tensor>& inputs, double h = 1e-6, double tol = 1e-4,
    std::size_t max_coords_per_input = 0, std::uint64_t subset_seed = 17);

}  // namespace trunclab
