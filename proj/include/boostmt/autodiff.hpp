#pragma once

// Tape-based reverse-mode differentiation. A Graph is built for one loss
// evaluation, differentiated once, then discarded.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "boostmt/errors.hpp"
#include "boostmt/tensor.hpp"

namespace boostmt {

// Named tensors with insertion-ordered iteration. Copying is a deep snapshot.
class ParamStore {
 public:
  void insert(std::string name, Tensor value) {
    if (find(name)) throw ContractError("duplicate parameter '" + name + "'");
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
  }

  bool contains(const std::string& name) const { return find(name).has_value(); }

  const Tensor& at(const std::string& name) const { return values_[index_of(name)]; }
  Tensor& at(const std::string& name) { return values_[index_of(name)]; }

  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }
  Tensor& value(std::size_t i) { return values_[i]; }
  const std::vector<std::string>& names() const { return names_; }

  ParamStore snapshot() const { return *this; }

  // Same names and shapes, all zeros.
  ParamStore zeros_like() const {
    ParamStore z;
    for (std::size_t i = 0; i < size(); ++i) z.insert(names_[i], Tensor(values_[i].shape()));
    return z;
  }

  // this += alpha * x, matched by name. Every name in x must exist here.
  void axpy(double alpha, const ParamStore& x) {
    for (std::size_t i = 0; i < x.size(); ++i) kernels::axpy(alpha, x.value(i), at(x.name(i)));
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  // Largest |a - b| over all coordinates; stores must have matching layout.
  friend double max_abs_diff(const ParamStore& a, const ParamStore& b) {
    if (a.names_ != b.names_) throw ContractError("max_abs_diff: parameter names differ");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      auto x = a.values_[i].data();
      auto y = b.values_[i].data();
      if (x.size() != y.size()) throw DimensionError("max_abs_diff: shapes differ for " + a.names_[i]);
      for (std::size_t j = 0; j < x.size(); ++j) m = std::max(m, std::abs(x[j] - y[j]));
    }
    return m;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    return std::nullopt;
  }
  std::size_t index_of(const std::string& name) const {
    auto i = find(name);
    if (!i) throw ContractError("unknown parameter '" + name + "'");
    return *i;
  }

  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

using GradientMap = ParamStore;

using NodeId = std::size_t;

enum class Op {
  Constant,
  Parameter,
  MatMul,
  Transpose,
  BiasAdd,
  Relu,
  Add,
  Sub,
  Mul,
  Scale,
  Neg,
  Abs,
  Sqrt,
  Sum,
  Mean,
  SumRows,
  MaxRows,
  Dot,
  L2NormalizeRows,
  LogSoftmaxRows,
  Pick,
  GatherRows,
  Reshape,
};

class Graph {
 public:
  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    Tensor value;
    double coef = 0.0;                 // Scale factor, normalization epsilon
    std::vector<std::size_t> indices;  // Pick/GatherRows indices, MaxRows argmax
    std::string name;                  // Parameter leaves only
  };

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }

  NodeId constant(Tensor t) { return push(Op::Constant, {}, std::move(t)); }

  // Leaf whose gradient is reported by backward() under `name`.
  NodeId parameter(std::string name, Tensor t) {
    for (NodeId p : params_)
      if (nodes_[p].name == name) throw ContractError("parameter '" + name + "' bound twice");
    NodeId id = push(Op::Parameter, {}, std::move(t));
    nodes_[id].name = std::move(name);
    params_.push_back(id);
    return id;
  }

  NodeId matmul(NodeId a, NodeId b) {
    return push(Op::MatMul, {a, b}, kernels::matmul(value(a), value(b)));
  }

  NodeId transpose(NodeId a) { return push(Op::Transpose, {a}, kernels::transpose(value(a))); }

  // x[m×n] + b[n] broadcast over rows.
  NodeId bias_add(NodeId x, NodeId b) {
    const Tensor& xv = value(x);
    const Tensor& bv = value(b);
    kernels::require_matrix(xv, "bias_add");
    if (bv.size() != xv.cols()) {
      throw DimensionError("bias_add: bias " + shape_string(bv.shape()) + " vs input " +
                           shape_string(xv.shape()));
    }
    Tensor out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r) {
      auto row = out.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
    }
    return push(Op::BiasAdd, {x, b}, std::move(out));
  }

  NodeId relu(NodeId a) {
    Tensor out = value(a);
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return push(Op::Relu, {a}, std::move(out));
  }

  NodeId add(NodeId a, NodeId b) { return binary(Op::Add, a, b, [](double x, double y) { return x + y; }); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b, [](double x, double y) { return x - y; }); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b, [](double x, double y) { return x * y; }); }

  NodeId scale(NodeId a, double c) {
    Tensor out = value(a);
    for (double& v : out.data()) v *= c;
    NodeId id = push(Op::Scale, {a}, std::move(out));
    nodes_[id].coef = c;
    return id;
  }

  NodeId neg(NodeId a) {
    Tensor out = value(a);
    for (double& v : out.data()) v = -v;
    return push(Op::Neg, {a}, std::move(out));
  }

  NodeId abs(NodeId a) {
    Tensor out = value(a);
    for (double& v : out.data()) v = std::abs(v);
    return push(Op::Abs, {a}, std::move(out));
  }

  // Elementwise square root of a non-negative input. The derivative at 0 is
  // taken as 0 so collapsed distances stay finite.
  NodeId sqrt(NodeId a) {
    Tensor out = value(a);
    for (double& v : out.data()) {
      if (v < 0.0) throw ContractError("sqrt of negative value");
      v = std::sqrt(v);
    }
    return push(Op::Sqrt, {a}, std::move(out));
  }

  NodeId sum(NodeId a) {
    double s = 0.0;
    for (double v : value(a).data()) s += v;
    return push(Op::Sum, {a}, Tensor::scalar(s));
  }

  NodeId mean(NodeId a) {
    double s = 0.0;
    for (double v : value(a).data()) s += v;
    return push(Op::Mean, {a}, Tensor::scalar(s / static_cast<double>(value(a).size())));
  }

  // [m×n] -> [m]
  NodeId sum_rows(NodeId a) {
    const Tensor& x = value(a);
    Tensor out({x.rows()});
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double s = 0.0;
      for (double v : x.row(r)) s += v;
      out[r] = s;
    }
    return push(Op::SumRows, {a}, std::move(out));
  }

  // [m×n] -> [m]; gradient routed to the first maximal entry of each row.
  NodeId max_rows(NodeId a) {
    const Tensor& x = value(a);
    Tensor out({x.rows()});
    std::vector<std::size_t> arg(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto row = x.row(r);
      arg[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      out[r] = row[arg[r]];
    }
    NodeId id = push(Op::MaxRows, {a}, std::move(out));
    nodes_[id].indices = std::move(arg);
    return id;
  }

  NodeId dot(NodeId a, NodeId b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    if (x.size() != y.size()) {
      throw DimensionError("dot: " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
    }
    return push(Op::Dot, {a, b}, Tensor::scalar(kernels::dot(x.data(), y.data())));
  }

  // Each row divided by its Euclidean norm (a rank-1 input is one row).
  NodeId l2_normalize(NodeId a, double eps = 1e-12) {
    Tensor out = value(a);
    for (std::size_t r = 0; r < out.rows(); ++r) {
      auto row = out.row(r);
      const double n = kernels::norm2(row);
      if (!(n > eps)) {
        throw DegenerateVectorError("l2_normalize: row " + std::to_string(r) + " has norm " +
                                    std::to_string(n));
      }
      for (double& v : row) v /= n;
    }
    NodeId id = push(Op::L2NormalizeRows, {a}, std::move(out));
    nodes_[id].coef = eps;
    return id;
  }

  // Row-wise log softmax with the max shift.
  NodeId log_softmax(NodeId a) {
    Tensor out = value(a);
    for (std::size_t r = 0; r < out.rows(); ++r) {
      auto row = out.row(r);
      const double mx = *std::max_element(row.begin(), row.end());
      double s = 0.0;
      for (double v : row) s += std::exp(v - mx);
      const double lse = mx + std::log(s);
      for (double& v : row) v -= lse;
    }
    return push(Op::LogSoftmaxRows, {a}, std::move(out));
  }

  // out[r] = x[r, idx[r]]
  NodeId pick(NodeId a, std::vector<std::size_t> idx) {
    const Tensor& x = value(a);
    if (idx.size() != x.rows()) throw DimensionError("pick: one index per row required");
    Tensor out({x.rows()});
    for (std::size_t r = 0; r < x.rows(); ++r) {
      if (idx[r] >= x.cols()) {
        throw ContractError("pick: index " + std::to_string(idx[r]) + " out of range " +
                            std::to_string(x.cols()));
      }
      out[r] = x(r, idx[r]);
    }
    NodeId id = push(Op::Pick, {a}, std::move(out));
    nodes_[id].indices = std::move(idx);
    return id;
  }

  // out row i = x row idx[i]
  NodeId gather_rows(NodeId a, std::vector<std::size_t> idx) {
    const Tensor& x = value(a);
    kernels::require_matrix(x, "gather_rows");
    Tensor out({idx.size(), x.cols()});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= x.rows()) throw ContractError("gather_rows: row index out of range");
      std::copy(x.row(idx[i]).begin(), x.row(idx[i]).end(), out.row(i).begin());
    }
    NodeId id = push(Op::GatherRows, {a}, std::move(out));
    nodes_[id].indices = std::move(idx);
    return id;
  }

  NodeId reshape(NodeId a, Shape shape) {
    return push(Op::Reshape, {a}, value(a).reshaped(std::move(shape)));
  }

  // d root / d parameter for every parameter leaf, in binding order. Leaves
  // the root does not depend on get zero gradients.
  GradientMap backward(NodeId root) {
    if (backward_done_) throw ContractError("backward already run on this graph");
    if (!value(root).is_scalar()) {
      throw ContractError("backward root must be scalar, got " + shape_string(value(root).shape()));
    }
    backward_done_ = true;

    std::vector<Tensor> grads(nodes_.size());
    grads[root] = Tensor(value(root).shape(), 1.0);
    for (NodeId id = root + 1; id-- > 0;) {
      if (grads[id].empty()) continue;
      propagate(id, grads);
    }

    GradientMap out;
    for (NodeId p : params_) {
      Tensor g = grads[p].empty() ? Tensor(nodes_[p].value.shape()) : std::move(grads[p]);
      out.insert(nodes_[p].name, std::move(g));
    }
    return out;
  }

 private:
  NodeId push(Op op, std::vector<NodeId> inputs, Tensor value) {
    for (NodeId in : inputs)
      if (in >= nodes_.size()) throw ContractError("node input refers to a later node");
    nodes_.push_back(Node{op, std::move(inputs), std::move(value), 0.0, {}, {}});
    return nodes_.size() - 1;
  }

  template <typename F>
  NodeId binary(Op op, NodeId a, NodeId b, F f) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    if (x.shape() != y.shape()) {
      throw DimensionError("elementwise op: " + shape_string(x.shape()) + " vs " +
                           shape_string(y.shape()));
    }
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
    return push(op, {a, b}, std::move(out));
  }

  static void accumulate(std::vector<Tensor>& grads, NodeId id, const Shape& shape,
                         const Tensor& g) {
    if (grads[id].empty()) {
      grads[id] = g.shape() == shape ? g : g.reshaped(shape);
      return;
    }
    auto dst = grads[id].data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  void propagate(NodeId id, std::vector<Tensor>& grads) {
    const Node& n = nodes_[id];
    const Tensor g = grads[id];
    auto in_shape = [&](std::size_t k) -> const Shape& { return nodes_[n.inputs[k]].value.shape(); };
    auto in_value = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
    auto send = [&](std::size_t k, const Tensor& t) { accumulate(grads, n.inputs[k], in_shape(k), t); };

    switch (n.op) {
      case Op::Constant:
      case Op::Parameter:
        break;
      case Op::MatMul:
        send(0, kernels::matmul_nt(g, in_value(1)));
        send(1, kernels::matmul_tn(in_value(0), g));
        break;
      case Op::Transpose:
        send(0, kernels::transpose(g));
        break;
      case Op::BiasAdd: {
        send(0, g);
        Tensor gb(in_shape(1));
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto row = g.row(r);
          for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
        }
        send(1, gb);
        break;
      }
      case Op::Relu: {
        Tensor d = g;
        const Tensor& x = in_value(0);
        for (std::size_t i = 0; i < d.size(); ++i)
          if (!(x[i] > 0.0)) d[i] = 0.0;
        send(0, d);
        break;
      }
      case Op::Add:
        send(0, g);
        send(1, g);
        break;
      case Op::Sub: {
        send(0, g);
        Tensor d = g;
        for (double& v : d.data()) v = -v;
        send(1, d);
        break;
      }
      case Op::Mul: {
        Tensor da = g, db = g;
        const Tensor& x = in_value(0);
        const Tensor& y = in_value(1);
        for (std::size_t i = 0; i < g.size(); ++i) {
          da[i] *= y[i];
          db[i] *= x[i];
        }
        send(0, da);
        send(1, db);
        break;
      }
      case Op::Scale: {
        Tensor d = g;
        for (double& v : d.data()) v *= n.coef;
        send(0, d);
        break;
      }
      case Op::Neg: {
        Tensor d = g;
        for (double& v : d.data()) v = -v;
        send(0, d);
        break;
      }
      case Op::Abs: {
        Tensor d = g;
        const Tensor& x = in_value(0);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
        send(0, d);
        break;
      }
      case Op::Sqrt: {
        Tensor d = g;
        for (std::size_t i = 0; i < d.size(); ++i) {
          const double y = n.value[i];
          d[i] = y > 0.0 ? d[i] / (2.0 * y) : 0.0;
        }
        send(0, d);
        break;
      }
      case Op::Sum:
        send(0, Tensor(in_shape(0), g.item()));
        break;
      case Op::Mean:
        send(0, Tensor(in_shape(0), g.item() / static_cast<double>(in_value(0).size())));
        break;
      case Op::SumRows: {
        const Tensor& x = in_value(0);
        Tensor d(x.shape());
        for (std::size_t r = 0; r < x.rows(); ++r)
          for (double& v : d.row(r)) v = g[r];
        send(0, d);
        break;
      }
      case Op::MaxRows: {
        const Tensor& x = in_value(0);
        Tensor d(x.shape());
        for (std::size_t r = 0; r < x.rows(); ++r) d(r, n.indices[r]) = g[r];
        send(0, d);
        break;
      }
      case Op::Dot: {
        const double s = g.item();
        Tensor da = in_value(1), db = in_value(0);
        for (double& v : da.data()) v *= s;
        for (double& v : db.data()) v *= s;
        send(0, da);
        send(1, db);
        break;
      }
      case Op::L2NormalizeRows: {
        // dx = (g - y (y·g)) / ||x||
        const Tensor& x = in_value(0);
        const Tensor& y = n.value;
        Tensor d(x.shape());
        for (std::size_t r = 0; r < x.rows(); ++r) {
          const double norm = kernels::norm2(x.row(r));
          const double yg = kernels::dot(y.row(r), g.row(r));
          auto yr = y.row(r);
          auto gr = g.row(r);
          auto dr = d.row(r);
          for (std::size_t c = 0; c < dr.size(); ++c) dr[c] = (gr[c] - yr[c] * yg) / norm;
        }
        send(0, d);
        break;
      }
      case Op::LogSoftmaxRows: {
        // dx = g - softmax * sum(g)
        const Tensor& y = n.value;
        Tensor d(y.shape());
        for (std::size_t r = 0; r < y.rows(); ++r) {
          auto gr = g.row(r);
          double gs = 0.0;
          for (double v : gr) gs += v;
          auto yr = y.row(r);
          auto dr = d.row(r);
          for (std::size_t c = 0; c < dr.size(); ++c) dr[c] = gr[c] - std::exp(yr[c]) * gs;
        }
        send(0, d);
        break;
      }
      case Op::Pick: {
        const Tensor& x = in_value(0);
        Tensor d(x.shape());
        for (std::size_t r = 0; r < x.rows(); ++r) d(r, n.indices[r]) = g[r];
        send(0, d);
        break;
      }
      case Op::GatherRows: {
        const Tensor& x = in_value(0);
        Tensor d(x.shape());
        for (std::size_t i = 0; i < n.indices.size(); ++i) {
          auto src = g.row(i);
          auto dst = d.row(n.indices[i]);
          for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        }
        send(0, d);
        break;
      }
      case Op::Reshape:
        send(0, g);
        break;
    }
  }

  std::vector<Node> nodes_;
  std::vector<NodeId> params_;
  bool backward_done_ = false;
};

}  // namespace boostmt
