#include "trunclab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "trunclab/errors.hpp"

namespace trunclab {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

// C += A(m,k) * B(k,n); all row-major. Loop order keeps the inner loop
// contiguous in both B and C so it vectorizes.
void gemm_nn_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A(m,k) * B(n,k)^T
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C += A(k,m)^T * B(k,n)
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

constexpr double kLayerNormEps = 1e-5;
const double kInvSqrt2 = 1.0 / std::sqrt(2.0);
const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * std::acos(-1.0));

void require(bool cond, const std::string& msg) {
  if (!cond) throw config_error(msg);
}

void check_shape(const std::vector<std::size_t>& shape) {
  require(shape.size() >= 1 && shape.size() <= 2, "Tensor: rank must be 1 or 2");
  for (std::size_t d : shape) require(d >= 1, "Tensor: zero-sized dimension");
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
  check_shape(shape_);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_numel(shape_))
    throw config_error("Tensor: data size does not match shape");
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::vector1d(std::vector<double> v) {
  std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::matmul_nt: return "matmul_nt";
    case Op::add: return "add";
    case Op::add_row: return "add_row";
    case Op::add_const: return "add_const";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::gelu: return "gelu";
    case Op::layer_norm: return "layer_norm";
    case Op::softmax: return "softmax";
    case Op::log_softmax: return "log_softmax";
    case Op::embed_rows: return "embed_rows";
    case Op::per_token_nll: return "per_token_nll";
    case Op::slice_cols: return "slice_cols";
    case Op::concat_cols: return "concat_cols";
    case Op::concat_vec: return "concat_vec";
    case Op::dot_const: return "dot_const";
    case Op::sum: return "sum";
    case Op::custom: return "custom";
  }
  return "?";
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw config_error("Tape: invalid Var");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Tape::Node& Tape::node_mut(Var v) {
  return const_cast<Node&>(static_cast<const Tape*>(this)->node(v));
}

void Tape::check_finite(const Node& n) const {
  if (!n.val.all_finite())
    throw numeric_error(std::string("Tape: non-finite value out of op ") + op_name(n.op));
}

Var Tape::push(Node&& n) {
  check_finite(n);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor v, bool requires_grad) {
  Node n;
  n.op = Op::leaf;
  n.requires_grad = requires_grad;
  n.val = std::move(v);
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& av = node(a).val;
  const Tensor& bv = node(b).val;
  require(av.rank() == 2 && bv.rank() == 2, "matmul: rank-2 operands required");
  require(av.cols() == bv.rows(), "matmul: inner dimensions disagree");
  Node n;
  n.op = Op::matmul;
  n.p0 = a.id;
  n.p1 = b.id;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.val = Tensor({av.rows(), bv.cols()});
  gemm_nn_acc(av.data(), bv.data(), n.val.data(), av.rows(), av.cols(), bv.cols());
  return push(std::move(n));
}

Var Tape::matmul_nt(Var a, Var b) {
  const Tensor& av = node(a).val;
  const Tensor& bv = node(b).val;
  require(av.rank() == 2 && bv.rank() == 2, "matmul_nt: rank-2 operands required");
  require(av.cols() == bv.cols(), "matmul_nt: inner dimensions disagree");
  Node n;
  n.op = Op::matmul_nt;
  n.p0 = a.id;
  n.p1 = b.id;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.val = Tensor({av.rows(), bv.rows()});
  gemm_nt_acc(av.data(), bv.data(), n.val.data(), av.rows(), av.cols(), bv.rows());
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Tensor& av = node(a).val;
  const Tensor& bv = node(b).val;
  require(av.same_shape(bv), "add: shape mismatch");
  Node n;
  n.op = Op::add;
  n.p0 = a.id;
  n.p1 = b.id;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.val = av;
  const double* bp = bv.data();
  double* out = n.val.data();
  for (std::size_t i = 0; i < n.val.size(); ++i) out[i] += bp[i];
  return push(std::move(n));
}

Var Tape::add_row(Var a, Var r) {
  const Tensor& av = node(a).val;
  const Tensor& rv = node(r).val;
  require(av.rank() == 2 && rv.rank() == 1 && rv.size() == av.cols(),
          "add_row: need [m,n] plus [n]");
  Node n;
  n.op = Op::add_row;
  n.p0 = a.id;
  n.p1 = r.id;
  n.requires_grad = node(a).requires_grad || node(r).requires_grad;
  n.val = av;
  double* out = n.val.data();
  const double* rp = rv.data();
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out[i * av.cols() + j] += rp[j];
  return push(std::move(n));
}

Var Tape::add_const(Var a, const Tensor& c) {
  const Tensor& av = node(a).val;
  require(av.same_shape(c), "add_const: shape mismatch");
  Node n;
  n.op = Op::add_const;
  n.p0 = a.id;
  n.requires_grad = node(a).requires_grad;
  n.val = av;
  double* out = n.val.data();
  const double* cp = c.data();
  for (std::size_t i = 0; i < n.val.size(); ++i) out[i] += cp[i];
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = node(a).val;
  const Tensor& bv = node(b).val;
  require(av.same_shape(bv), "mul: shape mismatch");
  Node n;
  n.op = Op::mul;
  n.p0 = a.id;
  n.p1 = b.id;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.val = av;
  double* out = n.val.data();
  const double* bp = bv.data();
  for (std::size_t i = 0; i < n.val.size(); ++i) out[i] *= bp[i];
  return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
  Node n;
  n.op = Op::scale;
  n.p0 = a.id;
  n.c = c;
  n.requires_grad = node(a).requires_grad;
  n.val = node(a).val;
  double* out = n.val.data();
  for (std::size_t i = 0; i < n.val.size(); ++i) out[i] *= c;
  return push(std::move(n));
}

Var Tape::gelu(Var a) {
  Node n;
  n.op = Op::gelu;
  n.p0 = a.id;
  n.requires_grad = node(a).requires_grad;
  n.val = node(a).val;
  double* out = n.val.data();
  for (std::size_t i = 0; i < n.val.size(); ++i) {
    double x = out[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  return push(std::move(n));
}

Var Tape::layer_norm(Var x, Var gain, Var bias) {
  const Tensor& xv = node(x).val;
  const Tensor& gv = node(gain).val;
  const Tensor& bv = node(bias).val;
  require(xv.rank() == 2, "layer_norm: rank-2 input required");
  require(gv.rank() == 1 && bv.rank() == 1 && gv.size() == xv.cols() &&
              bv.size() == xv.cols(),
          "layer_norm: gain/bias must match feature width");
  Node n;
  n.op = Op::layer_norm;
  n.p0 = x.id;
  n.p1 = gain.id;
  n.p2 = bias.id;
  n.requires_grad =
      node(x).requires_grad || node(gain).requires_grad || node(bias).requires_grad;
  n.val = Tensor({xv.rows(), xv.cols()});
  n.aux.resize(2 * xv.rows());
  const std::size_t m = xv.rows(), d = xv.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double t = row[j] - mu;
      var += t * t;
    }
    var /= static_cast<double>(d);
    double inv_sigma = 1.0 / std::sqrt(var + kLayerNormEps);
    n.aux[2 * i] = mu;
    n.aux[2 * i + 1] = inv_sigma;
    double* out = n.val.data() + i * d;
    for (std::size_t j = 0; j < d; ++j)
      out[j] = (row[j] - mu) * inv_sigma * gv[j] + bv[j];
  }
  return push(std::move(n));
}

Var Tape::softmax(Var a) {
  const Tensor& av = node(a).val;
  Node n;
  n.op = Op::softmax;
  n.p0 = a.id;
  n.requires_grad = node(a).requires_grad;
  n.val = av;
  const std::size_t m = av.rows(), d = av.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = n.val.data() + i * d;
    double mx = row[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    double inv = 1.0 / s;
    for (std::size_t j = 0; j < d; ++j) row[j] *= inv;
  }
  return push(std::move(n));
}

Var Tape::log_softmax(Var a) {
  const Tensor& av = node(a).val;
  Node n;
  n.op = Op::log_softmax;
  n.p0 = a.id;
  n.requires_grad = node(a).requires_grad;
  n.val = av;
  const std::size_t m = av.rows(), d = av.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = n.val.data() + i * d;
    double mx = row[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += std::exp(row[j] - mx);
    double lse = mx + std::log(s);
    for (std::size_t j = 0; j < d; ++j) row[j] -= lse;
  }
  return push(std::move(n));
}

Var Tape::embed_rows(Var table, const std::vector<std::uint32_t>& ids) {
  const Tensor& tv = node(table).val;
  require(tv.rank() == 2, "embed_rows: rank-2 table required");
  for (std::uint32_t id : ids)
    require(id < tv.rows(), "embed_rows: token id out of range");
  Node n;
  n.op = Op::embed_rows;
  n.p0 = table.id;
  n.requires_grad = node(table).requires_grad;
  n.ids = ids;
  n.val = Tensor({ids.size(), tv.cols()});
  const std::size_t d = tv.cols();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::memcpy(n.val.data() + i * d, tv.data() + ids[i] * d, d * sizeof(double));
  return push(std::move(n));
}

Var Tape::per_token_nll(Var logits, const std::vector<std::uint32_t>& targets,
                        const std::vector<std::uint8_t>& pad_mask) {
  const Tensor& lv = node(logits).val;
  require(lv.rank() == 2, "per_token_nll: rank-2 logits required");
  require(targets.size() == lv.rows(), "per_token_nll: one target per row required");
  require(pad_mask.size() == targets.size(),
          "per_token_nll: pad mask must match targets");
  const std::size_t t = lv.rows(), v = lv.cols();
  for (std::size_t i = 0; i < t; ++i)
    require(pad_mask[i] != 0 || targets[i] < v, "per_token_nll: target out of range");
  Node n;
  n.op = Op::per_token_nll;
  n.p0 = logits.id;
  n.requires_grad = node(logits).requires_grad;
  n.ids = targets;
  n.flags = pad_mask;
  n.aux.resize(2 * t);
  n.val = Tensor({t});
  for (std::size_t i = 0; i < t; ++i) {
    if (pad_mask[i]) {
      n.val[i] = 0.0;  // pad positions carry zero loss and no gradient
      continue;
    }
    const double* row = lv.data() + i * v;
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
    double lse = std::log(s);
    n.aux[2 * i] = mx;
    n.aux[2 * i + 1] = lse;
    n.val[i] = -(row[targets[i]] - mx - lse);
  }
  return push(std::move(n));
}

Var Tape::slice_cols(Var a, std::size_t c0, std::size_t c1) {
  const Tensor& av = node(a).val;
  require(av.rank() == 2 && c0 < c1 && c1 <= av.cols(), "slice_cols: bad bounds");
  Node n;
  n.op = Op::slice_cols;
  n.p0 = a.id;
  n.i0 = c0;
  n.i1 = c1;
  n.requires_grad = node(a).requires_grad;
  n.val = Tensor({av.rows(), c1 - c0});
  for (std::size_t i = 0; i < av.rows(); ++i)
    std::memcpy(n.val.data() + i * (c1 - c0), av.data() + i * av.cols() + c0,
                (c1 - c0) * sizeof(double));
  return push(std::move(n));
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& av = node(a).val;
  const Tensor& bv = node(b).val;
  require(av.rank() == 2 && bv.rank() == 2 && av.rows() == bv.rows(),
          "concat_cols: row counts disagree");
  Node n;
  n.op = Op::concat_cols;
  n.p0 = a.id;
  n.p1 = b.id;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  const std::size_t na = av.cols(), nb = bv.cols();
  n.val = Tensor({av.rows(), na + nb});
  for (std::size_t i = 0; i < av.rows(); ++i) {
    std::memcpy(n.val.data() + i * (na + nb), av.data() + i * na, na * sizeof(double));
    std::memcpy(n.val.data() + i * (na + nb) + na, bv.data() + i * nb,
                nb * sizeof(double));
  }
  return push(std::move(n));
}

Var Tape::concat_vec(Var a, Var b) {
  const Tensor& av = node(a).val;
  const Tensor& bv = node(b).val;
  require(av.rank() == 1 && bv.rank() == 1, "concat_vec: rank-1 operands required");
  Node n;
  n.op = Op::concat_vec;
  n.p0 = a.id;
  n.p1 = b.id;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  std::vector<double> out(av.size() + bv.size());
  std::memcpy(out.data(), av.data(), av.size() * sizeof(double));
  std::memcpy(out.data() + av.size(), bv.data(), bv.size() * sizeof(double));
  n.val = Tensor::vector1d(std::move(out));
  return push(std::move(n));
}

Var Tape::dot_const(Var a, const std::vector<double>& w) {
  const Tensor& av = node(a).val;
  require(av.rank() == 1 && av.size() == w.size(), "dot_const: length mismatch");
  Node n;
  n.op = Op::dot_const;
  n.p0 = a.id;
  n.requires_grad = node(a).requires_grad;
  n.aux = w;
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += av[i] * w[i];
  n.val = Tensor::scalar(acc);
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  const Tensor& av = node(a).val;
  Node n;
  n.op = Op::sum;
  n.p0 = a.id;
  n.requires_grad = node(a).requires_grad;
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i];
  n.val = Tensor::scalar(acc);
  return push(std::move(n));
}

Var Tape::custom(std::vector<Var> parents, Tensor value,
                 std::function<void(Tape&, Node&)> backward) {
  require(parents.size() <= 3, "custom: at most three parents");
  Node n;
  n.op = Op::custom;
  if (parents.size() > 0) n.p0 = parents[0].id;
  if (parents.size() > 1) n.p1 = parents[1].id;
  if (parents.size() > 2) n.p2 = parents[2].id;
  n.requires_grad = false;
  for (Var p : parents) n.requires_grad = n.requires_grad || node(p).requires_grad;
  n.val = std::move(value);
  n.custom_backward = std::move(backward);
  return push(std::move(n));
}

bool Tape::has_grad(Var v) const { return node(v).grad.size() == node(v).val.size(); }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() != n.val.size())
    throw config_error("Tape::grad: backward has not populated this node");
  return n.grad;
}

void Tape::zero_grad() {
  for (Node& n : nodes_)
    if (n.grad.size() > 0) n.grad.fill(0.0);
}

void Tape::backward(Var root) {
  Node& r = node_mut(root);
  if (r.val.size() != 1) throw config_error("Tape::backward: root must be scalar");
  if (!r.requires_grad)
    throw config_error("Tape::backward: root does not depend on any gradient leaf");
  const std::size_t root_id = static_cast<std::size_t>(root.id);
  for (std::size_t i = 0; i <= root_id; ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.grad.size() != n.val.size()) {
      n.grad = Tensor(n.val.shape());
    }
  }
  r.grad[0] += 1.0;

  for (std::size_t ii = root_id + 1; ii-- > 0;) {
    Node& n = nodes_[ii];
    if (!n.requires_grad || n.op == Op::leaf) continue;
    if (!n.grad.all_finite())
      throw numeric_error(std::string("Tape: non-finite gradient at op ") +
                          op_name(n.op));
    Node* a = n.p0 >= 0 ? &nodes_[static_cast<std::size_t>(n.p0)] : nullptr;
    Node* b = n.p1 >= 0 ? &nodes_[static_cast<std::size_t>(n.p1)] : nullptr;
    Node* c = n.p2 >= 0 ? &nodes_[static_cast<std::size_t>(n.p2)] : nullptr;
    auto wants = [](Node* p) { return p && p->requires_grad; };
    switch (n.op) {
      case Op::matmul: {
        const std::size_t m = a->val.rows(), k = a->val.cols(), q = b->val.cols();
        if (wants(a)) gemm_nt_acc(n.grad.data(), b->val.data(), a->grad.data(), m, q, k);
        if (wants(b)) gemm_tn_acc(a->val.data(), n.grad.data(), b->grad.data(), k, m, q);
        break;
      }
      case Op::matmul_nt: {
        const std::size_t m = a->val.rows(), k = a->val.cols(), q = b->val.rows();
        if (wants(a)) gemm_nn_acc(n.grad.data(), b->val.data(), a->grad.data(), m, q, k);
        if (wants(b)) gemm_tn_acc(n.grad.data(), a->val.data(), b->grad.data(), q, m, k);
        break;
      }
      case Op::add: {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          if (wants(a)) a->grad[i] += n.grad[i];
          if (wants(b)) b->grad[i] += n.grad[i];
        }
        break;
      }
      case Op::add_row: {
        const std::size_t m = n.val.rows(), d = n.val.cols();
        if (wants(a))
          for (std::size_t i = 0; i < m * d; ++i) a->grad[i] += n.grad[i];
        if (wants(b))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) b->grad[j] += n.grad[i * d + j];
        break;
      }
      case Op::add_const: {
        if (wants(a))
          for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i];
        break;
      }
      case Op::mul: {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          if (wants(a)) a->grad[i] += n.grad[i] * b->val[i];
          if (wants(b)) b->grad[i] += n.grad[i] * a->val[i];
        }
        break;
      }
      case Op::scale: {
        if (wants(a))
          for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.c * n.grad[i];
        break;
      }
      case Op::gelu: {
        if (wants(a))
          for (std::size_t i = 0; i < n.grad.size(); ++i) {
            double x = a->val[i];
            double phi_big = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double phi_small = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            a->grad[i] += n.grad[i] * (phi_big + x * phi_small);
          }
        break;
      }
      case Op::layer_norm: {
        const std::size_t m = n.val.rows(), d = n.val.cols();
        for (std::size_t i = 0; i < m; ++i) {
          const double mu = n.aux[2 * i];
          const double inv_sigma = n.aux[2 * i + 1];
          const double* xrow = a->val.data() + i * d;
          const double* dy = n.grad.data() + i * d;
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            double xhat = (xrow[j] - mu) * inv_sigma;
            double dxhat = dy[j] * b->val[j];
            s1 += dxhat;
            s2 += dxhat * xhat;
            if (wants(b)) b->grad[j] += dy[j] * xhat;
            if (wants(c)) c->grad[j] += dy[j];
          }
          if (wants(a)) {
            const double inv_d = 1.0 / static_cast<double>(d);
            double* dx = a->grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) {
              double xhat = (xrow[j] - mu) * inv_sigma;
              double dxhat = dy[j] * b->val[j];
              dx[j] += inv_sigma * (dxhat - s1 * inv_d - xhat * s2 * inv_d);
            }
          }
        }
        break;
      }
      case Op::softmax: {
        if (wants(a)) {
          const std::size_t m = n.val.rows(), d = n.val.cols();
          for (std::size_t i = 0; i < m; ++i) {
            const double* y = n.val.data() + i * d;
            const double* dy = n.grad.data() + i * d;
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += dy[j] * y[j];
            double* dx = a->grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dx[j] += y[j] * (dy[j] - s);
          }
        }
        break;
      }
      case Op::log_softmax: {
        if (wants(a)) {
          const std::size_t m = n.val.rows(), d = n.val.cols();
          for (std::size_t i = 0; i < m; ++i) {
            const double* y = n.val.data() + i * d;
            const double* dy = n.grad.data() + i * d;
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += dy[j];
            double* dx = a->grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dx[j] += dy[j] - std::exp(y[j]) * s;
          }
        }
        break;
      }
      case Op::embed_rows: {
        if (wants(a)) {
          const std::size_t d = n.val.cols();
          for (std::size_t i = 0; i < n.ids.size(); ++i) {
            double* dst = a->grad.data() + n.ids[i] * d;
            const double* src = n.grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
          }
        }
        break;
      }
      case Op::per_token_nll: {
        if (wants(a)) {
          const std::size_t t = a->val.rows(), v = a->val.cols();
          for (std::size_t i = 0; i < t; ++i) {
            if (n.flags[i]) continue;
            const double dl = n.grad[i];
            if (dl == 0.0) continue;
            const double mx = n.aux[2 * i], lse = n.aux[2 * i + 1];
            const double* row = a->val.data() + i * v;
            double* drow = a->grad.data() + i * v;
            for (std::size_t j = 0; j < v; ++j)
              drow[j] += dl * std::exp(row[j] - mx - lse);
            drow[n.ids[i]] -= dl;
          }
        }
        break;
      }
      case Op::slice_cols: {
        if (wants(a)) {
          const std::size_t m = n.val.rows(), w = n.i1 - n.i0, ac = a->val.cols();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
              a->grad[i * ac + n.i0 + j] += n.grad[i * w + j];
        }
        break;
      }
      case Op::concat_cols: {
        const std::size_t m = n.val.rows(), na = a->val.cols(), nb = b->val.cols();
        for (std::size_t i = 0; i < m; ++i) {
          if (wants(a))
            for (std::size_t j = 0; j < na; ++j)
              a->grad[i * na + j] += n.grad[i * (na + nb) + j];
          if (wants(b))
            for (std::size_t j = 0; j < nb; ++j)
              b->grad[i * nb + j] += n.grad[i * (na + nb) + na + j];
        }
        break;
      }
      case Op::concat_vec: {
        const std::size_t na = a->val.size();
        if (wants(a))
          for (std::size_t i = 0; i < na; ++i) a->grad[i] += n.grad[i];
        if (wants(b))
          for (std::size_t i = 0; i < b->val.size(); ++i)
            b->grad[i] += n.grad[na + i];
        break;
      }
      case Op::dot_const: {
        if (wants(a))
          for (std::size_t i = 0; i < a->val.size(); ++i)
            a->grad[i] += n.grad[0] * n.aux[i];
        break;
      }
      case Op::sum: {
        if (wants(a))
          for (std::size_t i = 0; i < a->val.size(); ++i) a->grad[i] += n.grad[0];
        break;
      }
      case Op::custom: {
        n.custom_backward(*this, n);
        break;
      }
      case Op::leaf:
        break;
    }
  }
}

namespace {

double eval_value(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                  const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t, true));
  Var out = f(tape, vars);
  const Tensor& v = tape.value(out);
  if (v.size() != 1) throw config_error("gradcheck: f must return a scalar");
  return v[0];
}

}  // namespace

GradcheckReport gradcheck(
    const std::function<Var(Tape&, const std::vector<Var>&)>& f,
    const std::vector<Tensor>& inputs, double h, double tol,
    std::size_t max_coords_per_input, std::uint64_t subset_seed) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t, true));
  Var out = f(tape, vars);
  tape.backward(out);

  GradcheckReport rep;
  Rng rng(subset_seed);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<std::size_t> coords;
    const std::size_t n = inputs[i].size();
    if (max_coords_per_input == 0 || n <= max_coords_per_input) {
      coords.resize(n);
      std::iota(coords.begin(), coords.end(), std::size_t{0});
    } else {
      for (std::size_t k = 0; k < max_coords_per_input; ++k)
        coords.push_back(static_cast<std::size_t>(rng.uniform_int(n)));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    const Tensor& g = tape.grad(vars[i]);
    for (std::size_t c : coords) {
      std::vector<Tensor> bumped = inputs;
      bumped[i][c] = inputs[i][c] + h;
      double up = eval_value(f, bumped);
      bumped[i][c] = inputs[i][c] - h;
      double dn = eval_value(f, bumped);
      double numeric = (up - dn) / (2.0 * h);
      double analytic = g[c];
      double err = std::abs(analytic - numeric) /
                   std::max({1.0, std::abs(analytic), std::abs(numeric)});
      ++rep.coords_checked;
      if (err > rep.max_err) {
        rep.max_err = err;
        std::ostringstream os;
        os << "input " << i << " coord " << c << " analytic " << analytic
           << " numeric " << numeric;
        rep.worst = os.str();
      }
    }
  }
  rep.ok = rep.max_err <= tol;
  return rep;
}

}  // namespace trunclab
