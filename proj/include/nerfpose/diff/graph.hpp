#pragma once

#include "nerfpose/diff/tensor.hpp"

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace nerfpose::diff {

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Op : uint8_t {
  Leaf,
  Constant,
  Param,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Scale,
  MatMul,
  Transpose,
  Reshape,
  ConcatCols,
  ConcatRows,
  SliceCols,
  RepeatRows,
  Relu,
  Softplus,
  Sigmoid,
  Exp,
  Cos,
  Sqrt,
  Sum,
  Mean,
  RowSum,
  ColSum,
  Linear,
  PosEnc,
  VolumeWeights,
  Cross3,
  Conv2d,
  AvgPool2,
  GlobalAvgPool,
  RayPoints,
  VolumeBlend,
};

const char* op_name(Op op);

enum class Act : uint8_t { Identity, Relu, Softplus, Sigmoid };

/// How the second operand of a binary elementwise op is expanded.
enum class Bcast : uint8_t { Same, ScalarB, RowB, ColB };

template <typename T>
class Graph;

/// Handle to one node of a Graph. Cheap to copy.
template <typename T>
struct Value {
  Graph<T>* graph = nullptr;
  int id = -1;
  bool valid() const { return graph != nullptr && id >= 0; }
};

/// A recorded forward computation: a DAG of primitive ops in creation order
/// (which is always a topological order), each node holding its output value.
/// Supports replay on new leaf bindings and reverse-mode backpropagation
/// seeded at one scalar or at several nodes with explicit cotangents.
template <typename T>
class Graph {
 public:
  struct Node {
    Op op = Op::Leaf;
    Act act = Act::Identity;
    Bcast bcast = Bcast::Same;
    bool requires_grad = false;
    std::vector<int> inputs;
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    std::string name;           // param name or debug label
    // op attributes
    int64_t i0 = 0, i1 = 0, i2 = 0, i3 = 0;
    T s0 = T(0), s1 = T(0);
    std::vector<int64_t> dims;  // reshape target, etc.
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  const Tensor<T>& value(Value<T> v) const { return nodes_[check(v)].value; }
  const Tensor<T>& grad(Value<T> v) const { return nodes_[check(v)].grad; }
  bool has_grad(Value<T> v) const { return nodes_[check(v)].has_grad; }

  // ---- leaves ------------------------------------------------------------

  Value<T> leaf(Tensor<T> v, std::string name = "", bool requires_grad = false) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    n.name = std::move(name);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Value<T> constant(Tensor<T> v, std::string name = "") {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(v);
    n.name = std::move(name);
    return push(std::move(n));
  }

  Value<T> scalar(T v) { return constant(Tensor<T>::scalar(v)); }

  /// Trainable parameter leaf; `name` keys the gradient map.
  Value<T> param(Tensor<T> v, std::string name) {
    Node n;
    n.op = Op::Param;
    n.value = std::move(v);
    n.name = std::move(name);
    n.requires_grad = true;
    return push(std::move(n));
  }

  /// Rebind a leaf value for replay; shape must match the recorded one.
  void bind(Value<T> v, Tensor<T> t) {
    Node& n = nodes_[check(v)];
    if (n.op != Op::Leaf) throw std::logic_error("bind: node is not a leaf");
    if (n.value.shape != t.shape)
      throw ShapeError("bind: shape " + t.shape_str() + " does not match recorded " +
                       n.value.shape_str());
    n.value = std::move(t);
  }

  /// Re-run every recorded op in order on current leaf values.
  void replay() {
    for (size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op != Op::Leaf && nodes_[i].op != Op::Constant && nodes_[i].op != Op::Param)
        eval(static_cast<int>(i));
  }

  // ---- elementwise and structural ops -------------------------------------

  Value<T> add(Value<T> a, Value<T> b) { return binary(Op::Add, a, b); }
  Value<T> sub(Value<T> a, Value<T> b) { return binary(Op::Sub, a, b); }
  Value<T> mul(Value<T> a, Value<T> b) { return binary(Op::Mul, a, b); }
  Value<T> div(Value<T> a, Value<T> b) { return binary(Op::Div, a, b); }

  Value<T> neg(Value<T> a) { return unary(Op::Neg, a); }
  Value<T> relu(Value<T> a) { return unary(Op::Relu, a); }
  Value<T> softplus(Value<T> a) { return unary(Op::Softplus, a); }
  Value<T> sigmoid(Value<T> a) { return unary(Op::Sigmoid, a); }
  Value<T> exp(Value<T> a) { return unary(Op::Exp, a); }
  Value<T> cos(Value<T> a) { return unary(Op::Cos, a); }
  Value<T> sqrt(Value<T> a) { return unary(Op::Sqrt, a); }

  /// y = alpha * x + beta, elementwise with compile-time constants.
  Value<T> scale(Value<T> a, T alpha, T beta = T(0)) {
    Node n = make(Op::Scale, {a});
    n.s0 = alpha;
    n.s1 = beta;
    return push_eval(std::move(n));
  }

  Value<T> matmul(Value<T> a, Value<T> b) {
    const Node& na = nodes_[check(a)];
    const Node& nb = nodes_[check(b)];
    if (na.value.cols() != nb.value.rows())
      throw ShapeError(std::string("matmul: inner dimensions disagree, ") +
                       na.value.shape_str() + " vs " + nb.value.shape_str() + where(a, b));
    return push_eval(make(Op::MatMul, {a, b}));
  }

  Value<T> transpose(Value<T> a) { return push_eval(make(Op::Transpose, {a})); }

  Value<T> reshape(Value<T> a, std::vector<int64_t> shape) {
    if (Tensor<T>::count(shape) != nodes_[check(a)].value.numel())
      throw ShapeError("reshape: element count mismatch" + where(a));
    Node n = make(Op::Reshape, {a});
    n.dims = std::move(shape);
    return push_eval(std::move(n));
  }

  Value<T> concat_cols(std::span<const Value<T>> parts) { return concat(Op::ConcatCols, parts); }
  Value<T> concat_cols(std::initializer_list<Value<T>> parts) {
    return concat(Op::ConcatCols, std::span<const Value<T>>(parts.begin(), parts.size()));
  }
  Value<T> concat_rows(std::span<const Value<T>> parts) { return concat(Op::ConcatRows, parts); }
  Value<T> concat_rows(std::initializer_list<Value<T>> parts) {
    return concat(Op::ConcatRows, std::span<const Value<T>>(parts.begin(), parts.size()));
  }

  Value<T> slice_cols(Value<T> a, int64_t j0, int64_t j1) {
    const Node& na = nodes_[check(a)];
    if (j0 < 0 || j1 > na.value.cols() || j0 >= j1)
      throw ShapeError("slice_cols: range out of bounds" + where(a));
    Node n = make(Op::SliceCols, {a});
    n.i0 = j0;
    n.i1 = j1;
    return push_eval(std::move(n));
  }

  /// Each row repeated `k` consecutive times: [M,N] -> [M*k, N].
  Value<T> repeat_rows(Value<T> a, int64_t k) {
    Node n = make(Op::RepeatRows, {a});
    n.i0 = k;
    return push_eval(std::move(n));
  }

  Value<T> sum(Value<T> a) { return push_eval(make(Op::Sum, {a})); }
  Value<T> mean(Value<T> a) { return push_eval(make(Op::Mean, {a})); }
  Value<T> row_sum(Value<T> a) { return push_eval(make(Op::RowSum, {a})); }
  Value<T> col_sum(Value<T> a) { return push_eval(make(Op::ColSum, {a})); }

  // ---- fused network ops ---------------------------------------------------

  /// y = act(x @ w + bias? + inject?) storing only the activated output.
  /// `inject` is a [1,N] row broadcast onto every output row.
  Value<T> linear(Value<T> x, Value<T> w, Value<T> bias, Value<T> inject, Act act) {
    const Node& nx = nodes_[check(x)];
    const Node& nw = nodes_[check(w)];
    if (nx.value.cols() != nw.value.rows())
      throw ShapeError(std::string("linear: input cols ") + nx.value.shape_str() +
                       " vs weight rows " + nw.value.shape_str() + where(x, w));
    Node n = make(Op::Linear, {x, w});
    if (bias.valid()) {
      require_row(bias, nw.value.cols(), "linear bias");
      n.inputs.push_back(check(bias));
      n.requires_grad = n.requires_grad || nodes_[check(bias)].requires_grad;
      n.i1 = 1;
    }
    if (inject.valid()) {
      require_row(inject, nw.value.cols(), "linear inject");
      n.inputs.push_back(check(inject));
      n.requires_grad = n.requires_grad || nodes_[check(inject)].requires_grad;
      n.i2 = 1;
    }
    n.act = act;
    return push_eval(std::move(n));
  }
  Value<T> linear(Value<T> x, Value<T> w, Value<T> bias, Act act) {
    return linear(x, w, bias, Value<T>{}, act);
  }

  /// Octave-major cosine embedding: out[:, 3j+i] = cos(2^j * pi * x[:, i]).
  Value<T> positional_encode(Value<T> x, int64_t octaves) {
    const Node& nx = nodes_[check(x)];
    if (octaves < 1) throw ShapeError("positional_encode: octaves must be >= 1");
    if (nx.value.rank() != 2)
      throw ShapeError("positional_encode: expected rank-2 input" + where(x));
    Node n = make(Op::PosEnc, {x});
    n.i0 = octaves;
    return push_eval(std::move(n));
  }

  /// Volume rendering weights from per-sample optical depths s = sigma*delta,
  /// one ray per row: w_i = T_i * (1 - exp(-s_i)), T_i = exp(-sum_{j<i} s_j).
  Value<T> volume_weights(Value<T> s) {
    const Node& ns = nodes_[check(s)];
    if (ns.value.rank() != 2) throw ShapeError("volume_weights: expected [rays, samples]" + where(s));
    return push_eval(make(Op::VolumeWeights, {s}));
  }

  /// Row-wise cross product of [M,3] tensors.
  Value<T> cross3(Value<T> a, Value<T> b) {
    const Node& na = nodes_[check(a)];
    const Node& nb = nodes_[check(b)];
    if (na.value.cols() != 3 || !na.value.same_shape(nb.value))
      throw ShapeError("cross3: expects matching [M,3] inputs" + where(a, b));
    return push_eval(make(Op::Cross3, {a, b}));
  }

  /// 2-D convolution on a [Cin,H,W] tensor with weight [Cout, Cin*k*k],
  /// square kernel, zero padding, fused activation.
  Value<T> conv2d(Value<T> x, Value<T> w, Value<T> bias, int64_t kernel, int64_t stride,
                  int64_t pad, Act act) {
    const Node& nx = nodes_[check(x)];
    const Node& nw = nodes_[check(w)];
    if (nx.value.rank() != 3) throw ShapeError("conv2d: input must be [C,H,W]" + where(x));
    const int64_t cin = nx.value.shape[0], h = nx.value.shape[1], wd = nx.value.shape[2];
    if (nw.value.rank() != 2 || nw.value.shape[1] != cin * kernel * kernel)
      throw ShapeError("conv2d: weight must be [Cout, Cin*k*k], got " + nw.value.shape_str() +
                       where(x, w));
    if (h + 2 * pad < kernel || wd + 2 * pad < kernel)
      throw ShapeError("conv2d: input smaller than kernel" + where(x));
    Node n = make(Op::Conv2d, {x, w});
    if (bias.valid()) {
      require_row(bias, nw.value.shape[0], "conv2d bias");
      n.inputs.push_back(check(bias));
      n.requires_grad = n.requires_grad || nodes_[check(bias)].requires_grad;
      n.i3 = 1;
    }
    n.i0 = kernel;
    n.i1 = stride;
    n.i2 = pad;
    n.act = act;
    return push_eval(std::move(n));
  }

  Value<T> avg_pool2(Value<T> x) {
    const Node& nx = nodes_[check(x)];
    if (nx.value.rank() != 3 || nx.value.shape[1] % 2 || nx.value.shape[2] % 2)
      throw ShapeError("avg_pool2: input must be [C,H,W] with even H,W" + where(x));
    return push_eval(make(Op::AvgPool2, {x}));
  }

  /// [C,H,W] -> [1,C] channel means.
  Value<T> global_avg_pool(Value<T> x) {
    const Node& nx = nodes_[check(x)];
    if (nx.value.rank() != 3) throw ShapeError("global_avg_pool: input must be [C,H,W]" + where(x));
    return push_eval(make(Op::GlobalAvgPool, {x}));
  }

  /// Per-sample positions along rays: out[r*S+s, :] = center + t[r*S+s] * dir[r, :].
  /// `dir` is [R,3], `center` [1,3], `t` [R*S,1].
  Value<T> ray_points(Value<T> dir, Value<T> center, Value<T> t, int64_t samples) {
    const Node& nd = nodes_[check(dir)];
    const Node& nt = nodes_[check(t)];
    if (nd.value.cols() != 3) throw ShapeError("ray_points: dir must be [R,3]" + where(dir));
    require_row(center, 3, "ray_points center");
    if (nt.value.rows() != nd.value.rows() * samples || nt.value.cols() != 1)
      throw ShapeError("ray_points: t must be [R*S,1]" + where(t));
    Node n = make(Op::RayPoints, {dir, center, t});
    n.i0 = samples;
    return push_eval(std::move(n));
  }

  /// Composite per-sample colors over a background:
  /// out[r, 0:3] = sum_s w[r,s]*rgb[r*S+s,:] + (1 - sum_s w[r,s])*bg,
  /// out[r, 3]   = sum_s w[r,s]  (accumulated opacity).
  Value<T> volume_blend(Value<T> w, Value<T> rgb, Value<T> background) {
    const Node& nw = nodes_[check(w)];
    const Node& nc = nodes_[check(rgb)];
    if (nc.value.cols() != 3 || nc.value.rows() != nw.value.rows() * nw.value.cols())
      throw ShapeError("volume_blend: rgb must be [R*S,3] matching w [R,S]" + where(w, rgb));
    require_row(background, 3, "volume_blend background");
    return push_eval(make(Op::VolumeBlend, {w, rgb, background}));
  }

  // ---- autodiff ------------------------------------------------------------

  struct Seed {
    Value<T> v;
    Tensor<T> cotangent;
  };

  /// Reverse pass from a scalar node, seeding with 1.
  void backward(Value<T> loss) {
    if (!nodes_[check(loss)].value.is_scalar())
      throw std::invalid_argument("backward: seed node is not scalar");
    Seed s{loss, Tensor<T>::scalar(T(1))};
    backward(std::span<const Seed>(&s, 1));
  }

  /// Reverse pass accumulating several seeds in one sweep.
  void backward(std::span<const Seed> seeds) {
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor<T>();
    }
    int highest = -1;
    for (const Seed& s : seeds) {
      Node& n = nodes_[check(s.v)];
      if (n.value.shape != s.cotangent.shape)
        throw ShapeError("backward: cotangent shape " + s.cotangent.shape_str() +
                         " does not match node value " + n.value.shape_str());
      accumulate(s.v.id, s.cotangent);
      highest = std::max(highest, s.v.id);
    }
    for (int i = highest; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.has_grad || !n.requires_grad) continue;
      propagate(i);
    }
  }

  /// Gradients keyed by parameter name; parameters recorded but unreachable
  /// from the seeds map to zero tensors.
  std::map<std::string, Tensor<T>> param_grads() const {
    std::map<std::string, Tensor<T>> out;
    for (const Node& n : nodes_) {
      if (n.op != Op::Param) continue;
      auto it = out.find(n.name);
      if (it == out.end()) {
        out.emplace(n.name, n.has_grad ? n.grad : Tensor<T>::zeros(n.value.shape));
      } else if (n.has_grad) {
        it->second.arr() += n.grad.arr();
      }
    }
    return out;
  }

  /// True when `v`'s computation consumes `leaf` (directly or transitively).
  bool depends_on(Value<T> v, Value<T> leaf) const {
    std::vector<char> seen(nodes_.size(), 0);
    std::vector<int> stack{check(v)};
    const int target = check(leaf);
    while (!stack.empty()) {
      int id = stack.back();
      stack.pop_back();
      if (id == target) return true;
      if (seen[static_cast<size_t>(id)]) continue;
      seen[static_cast<size_t>(id)] = 1;
      for (int in : nodes_[static_cast<size_t>(id)].inputs) stack.push_back(in);
    }
    return false;
  }

 private:
  std::vector<Node> nodes_;

  int check(Value<T> v) const {
    if (v.graph != this || v.id < 0 || v.id >= size())
      throw std::logic_error("Value does not belong to this graph");
    return v.id;
  }

  std::string where(Value<T> a, Value<T> b = Value<T>{}) const {
    std::string s = " (input node #" + std::to_string(a.id);
    if (!nodes_[static_cast<size_t>(a.id)].name.empty())
      s += " '" + nodes_[static_cast<size_t>(a.id)].name + "'";
    if (b.valid()) s += ", #" + std::to_string(b.id);
    return s + ")";
  }

  void require_row(Value<T> v, int64_t n, const char* what) {
    const Node& node = nodes_[check(v)];
    if (node.value.rows() != 1 || node.value.cols() != n)
      throw ShapeError(std::string(what) + ": expected [1," + std::to_string(n) + "], got " +
                       node.value.shape_str() + where(v));
  }

  Node make(Op op, std::initializer_list<Value<T>> inputs) {
    Node n;
    n.op = op;
    for (Value<T> v : inputs) {
      n.inputs.push_back(check(v));
      n.requires_grad = n.requires_grad || nodes_[static_cast<size_t>(v.id)].requires_grad;
    }
    return n;
  }

  Value<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return Value<T>{this, size() - 1};
  }

  Value<T> push_eval(Node n) {
    Value<T> v = push(std::move(n));
    eval(v.id);
    return v;
  }

  Value<T> unary(Op op, Value<T> a) { return push_eval(make(op, {a})); }

  Value<T> binary(Op op, Value<T> a, Value<T> b) {
    const Tensor<T>& ta = nodes_[check(a)].value;
    const Tensor<T>& tb = nodes_[check(b)].value;
    Node n = make(op, {a, b});
    if (ta.same_shape(tb)) {
      n.bcast = Bcast::Same;
    } else if (tb.is_scalar()) {
      n.bcast = Bcast::ScalarB;
    } else if (ta.rank() == 2 && tb.rows() == 1 && tb.cols() == ta.cols()) {
      n.bcast = Bcast::RowB;
    } else if (ta.rank() == 2 && tb.rank() == 2 && tb.shape[1] == 1 && tb.shape[0] == ta.shape[0]) {
      n.bcast = Bcast::ColB;
    } else {
      throw ShapeError(std::string(op_name(op)) + ": cannot broadcast " + tb.shape_str() +
                       " onto " + ta.shape_str() + where(a, b));
    }
    return push_eval(std::move(n));
  }

  Value<T> concat(Op op, std::span<const Value<T>> parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    Node n;
    n.op = op;
    const Tensor<T>& first = nodes_[check(parts[0])].value;
    for (Value<T> v : parts) {
      const Tensor<T>& t = nodes_[check(v)].value;
      if (op == Op::ConcatCols ? t.rows() != first.rows() : t.cols() != first.cols())
        throw ShapeError("concat: inconsistent shapes " + first.shape_str() + " vs " +
                         t.shape_str() + where(v));
      n.inputs.push_back(check(v));
      n.requires_grad = n.requires_grad || nodes_[static_cast<size_t>(v.id)].requires_grad;
    }
    return push_eval(std::move(n));
  }

  // ---- forward evaluation --------------------------------------------------

  const Tensor<T>& in(const Node& n, int i) const {
    return nodes_[static_cast<size_t>(n.inputs[static_cast<size_t>(i)])].value;
  }

  static void apply_act(Act act, Tensor<T>& t) {
    switch (act) {
      case Act::Identity:
        return;
      case Act::Relu:
        t.arr() = t.arr().max(T(0));
        return;
      case Act::Softplus:
        // log1p(exp(x)) with the linear tail made explicit for large x
        t.arr() = (t.arr() > T(30)).select(t.arr(), (T(1) + t.arr().min(T(30)).exp()).log());
        return;
      case Act::Sigmoid:
        t.arr() = t.arr().logistic();
        return;
    }
  }

  /// d(act)/d(pre) expressed through the activated output y.
  static Eigen::Array<T, Eigen::Dynamic, 1> act_deriv(Act act, const Tensor<T>& y) {
    switch (act) {
      case Act::Identity:
        return Eigen::Array<T, Eigen::Dynamic, 1>::Ones(y.numel());
      case Act::Relu:
        return (y.arr() > T(0)).template cast<T>();
      case Act::Softplus:
        return T(1) - (-y.arr()).exp();
      case Act::Sigmoid:
        return y.arr() * (T(1) - y.arr());
    }
    return {};
  }

  void eval(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    switch (n.op) {
      case Op::Leaf:
      case Op::Constant:
      case Op::Param:
        return;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div:
        eval_binary(n);
        return;
      case Op::Neg:
        n.value = in(n, 0);
        n.value.arr() = -n.value.arr();
        return;
      case Op::Scale:
        n.value = in(n, 0);
        n.value.arr() = n.s0 * n.value.arr() + n.s1;
        return;
      case Op::MatMul: {
        const Tensor<T>& a = in(n, 0);
        const Tensor<T>& b = in(n, 1);
        n.value = Tensor<T>({a.rows(), b.cols()});
        n.value.mat().noalias() = a.mat() * b.mat();
        return;
      }
      case Op::Transpose: {
        const Tensor<T>& a = in(n, 0);
        n.value = Tensor<T>({a.cols(), a.rows()});
        n.value.mat() = a.mat().transpose();
        return;
      }
      case Op::Reshape:
        n.value = in(n, 0);
        n.value.shape = n.dims;
        return;
      case Op::ConcatCols: {
        int64_t rows = in(n, 0).rows(), cols = 0;
        for (size_t i = 0; i < n.inputs.size(); ++i) cols += in(n, static_cast<int>(i)).cols();
        n.value = Tensor<T>({rows, cols});
        int64_t j = 0;
        for (size_t i = 0; i < n.inputs.size(); ++i) {
          const Tensor<T>& t = in(n, static_cast<int>(i));
          n.value.mat().middleCols(j, t.cols()) = t.mat();
          j += t.cols();
        }
        return;
      }
      case Op::ConcatRows: {
        int64_t cols = in(n, 0).cols(), rows = 0;
        for (size_t i = 0; i < n.inputs.size(); ++i) rows += in(n, static_cast<int>(i)).rows();
        n.value = Tensor<T>({rows, cols});
        int64_t r = 0;
        for (size_t i = 0; i < n.inputs.size(); ++i) {
          const Tensor<T>& t = in(n, static_cast<int>(i));
          n.value.mat().middleRows(r, t.rows()) = t.mat();
          r += t.rows();
        }
        return;
      }
      case Op::SliceCols: {
        const Tensor<T>& a = in(n, 0);
        n.value = Tensor<T>({a.rows(), n.i1 - n.i0});
        n.value.mat() = a.mat().middleCols(n.i0, n.i1 - n.i0);
        return;
      }
      case Op::RepeatRows: {
        const Tensor<T>& a = in(n, 0);
        const int64_t k = n.i0;
        n.value = Tensor<T>({a.rows() * k, a.cols()});
        for (int64_t r = 0; r < a.rows(); ++r)
          n.value.mat().middleRows(r * k, k).rowwise() = a.mat().row(r);
        return;
      }
      case Op::Relu:
        n.value = in(n, 0);
        apply_act(Act::Relu, n.value);
        return;
      case Op::Softplus:
        n.value = in(n, 0);
        apply_act(Act::Softplus, n.value);
        return;
      case Op::Sigmoid:
        n.value = in(n, 0);
        apply_act(Act::Sigmoid, n.value);
        return;
      case Op::Exp:
        n.value = in(n, 0);
        n.value.arr() = n.value.arr().exp();
        return;
      case Op::Cos:
        n.value = in(n, 0);
        n.value.arr() = n.value.arr().cos();
        return;
      case Op::Sqrt:
        n.value = in(n, 0);
        n.value.arr() = n.value.arr().sqrt();
        return;
      case Op::Sum:
        n.value = Tensor<T>::scalar(in(n, 0).arr().sum());
        return;
      case Op::Mean:
        n.value = Tensor<T>::scalar(in(n, 0).arr().mean());
        return;
      case Op::RowSum: {
        const Tensor<T>& a = in(n, 0);
        n.value = Tensor<T>({a.rows(), 1});
        n.value.mat().col(0) = a.mat().rowwise().sum();
        return;
      }
      case Op::ColSum: {
        const Tensor<T>& a = in(n, 0);
        n.value = Tensor<T>({1, a.cols()});
        n.value.mat().row(0) = a.mat().colwise().sum();
        return;
      }
      case Op::Linear: {
        const Tensor<T>& x = in(n, 0);
        const Tensor<T>& w = in(n, 1);
        n.value = Tensor<T>({x.rows(), w.cols()});
        n.value.mat().noalias() = x.mat() * w.mat();
        int next = 2;
        if (n.i1) n.value.mat().rowwise() += in(n, next++).mat().row(0);
        if (n.i2) n.value.mat().rowwise() += in(n, next++).mat().row(0);
        apply_act(n.act, n.value);
        return;
      }
      case Op::PosEnc: {
        const Tensor<T>& x = in(n, 0);
        const int64_t c = x.cols(), k = n.i0;
        n.value = Tensor<T>({x.rows(), c * k});
        for (int64_t j = 0; j < k; ++j) {
          const T f = static_cast<T>(std::ldexp(M_PI, static_cast<int>(j)));
          n.value.mat().middleCols(j * c, c) = (x.mat() * f).array().cos();
        }
        return;
      }
      case Op::VolumeWeights: {
        const Tensor<T>& s = in(n, 0);
        const int64_t rays = s.rows(), ns = s.cols();
        n.value = Tensor<T>({rays, ns});
        for (int64_t r = 0; r < rays; ++r) {
          T trans = T(1);
          for (int64_t i = 0; i < ns; ++i) {
            const T e = std::exp(-s[r * ns + i]);
            n.value[r * ns + i] = trans * (T(1) - e);
            trans *= e;
          }
        }
        return;
      }
      case Op::Cross3: {
        const Tensor<T>& a = in(n, 0);
        const Tensor<T>& b = in(n, 1);
        n.value = Tensor<T>(a.shape);
        for (int64_t r = 0; r < a.rows(); ++r) {
          const T* u = &a.data[static_cast<size_t>(3 * r)];
          const T* v = &b.data[static_cast<size_t>(3 * r)];
          T* o = &n.value.data[static_cast<size_t>(3 * r)];
          o[0] = u[1] * v[2] - u[2] * v[1];
          o[1] = u[2] * v[0] - u[0] * v[2];
          o[2] = u[0] * v[1] - u[1] * v[0];
        }
        return;
      }
      case Op::Conv2d:
        eval_conv(n);
        return;
      case Op::AvgPool2: {
        const Tensor<T>& x = in(n, 0);
        const int64_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
        n.value = Tensor<T>({c, h / 2, w / 2});
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t y = 0; y < h / 2; ++y)
            for (int64_t xx = 0; xx < w / 2; ++xx)
              n.value.at3(ch, y, xx) =
                  (x.at3(ch, 2 * y, 2 * xx) + x.at3(ch, 2 * y, 2 * xx + 1) +
                   x.at3(ch, 2 * y + 1, 2 * xx) + x.at3(ch, 2 * y + 1, 2 * xx + 1)) /
                  T(4);
        return;
      }
      case Op::GlobalAvgPool: {
        const Tensor<T>& x = in(n, 0);
        const int64_t c = x.shape[0], hw = x.shape[1] * x.shape[2];
        n.value = Tensor<T>({1, c});
        for (int64_t ch = 0; ch < c; ++ch) {
          typename Tensor<T>::ConstArrMap plane(&x.data[static_cast<size_t>(ch * hw)], hw);
          n.value[ch] = plane.mean();
        }
        return;
      }
      case Op::RayPoints: {
        const Tensor<T>& dir = in(n, 0);
        const Tensor<T>& center = in(n, 1);
        const Tensor<T>& t = in(n, 2);
        const int64_t rays = dir.rows(), s = n.i0;
        n.value = Tensor<T>({rays * s, 3});
        for (int64_t r = 0; r < rays; ++r) {
          const T* d = &dir.data[static_cast<size_t>(3 * r)];
          for (int64_t i = 0; i < s; ++i) {
            const int64_t m = r * s + i;
            const T tv = t[m];
            n.value[3 * m + 0] = center[0] + tv * d[0];
            n.value[3 * m + 1] = center[1] + tv * d[1];
            n.value[3 * m + 2] = center[2] + tv * d[2];
          }
        }
        return;
      }
      case Op::VolumeBlend: {
        const Tensor<T>& w = in(n, 0);
        const Tensor<T>& rgb = in(n, 1);
        const Tensor<T>& bg = in(n, 2);
        const int64_t rays = w.rows(), s = w.cols();
        n.value = Tensor<T>({rays, 4});
        for (int64_t r = 0; r < rays; ++r) {
          T acc[4] = {T(0), T(0), T(0), T(0)};
          for (int64_t i = 0; i < s; ++i) {
            const int64_t m = r * s + i;
            const T wv = w[m];
            acc[0] += wv * rgb[3 * m + 0];
            acc[1] += wv * rgb[3 * m + 1];
            acc[2] += wv * rgb[3 * m + 2];
            acc[3] += wv;
          }
          n.value[4 * r + 0] = acc[0] + (T(1) - acc[3]) * bg[0];
          n.value[4 * r + 1] = acc[1] + (T(1) - acc[3]) * bg[1];
          n.value[4 * r + 2] = acc[2] + (T(1) - acc[3]) * bg[2];
          n.value[4 * r + 3] = acc[3];
        }
        return;
      }
    }
  }

  void eval_binary(Node& n) {
    const Tensor<T>& a = in(n, 0);
    const Tensor<T>& b = in(n, 1);
    n.value = a;
    switch (n.bcast) {
      case Bcast::Same:
        switch (n.op) {
          case Op::Add: n.value.arr() += b.arr(); break;
          case Op::Sub: n.value.arr() -= b.arr(); break;
          case Op::Mul: n.value.arr() *= b.arr(); break;
          default: n.value.arr() /= b.arr(); break;
        }
        return;
      case Bcast::ScalarB: {
        const T s = b[0];
        switch (n.op) {
          case Op::Add: n.value.arr() += s; break;
          case Op::Sub: n.value.arr() -= s; break;
          case Op::Mul: n.value.arr() *= s; break;
          default: n.value.arr() /= s; break;
        }
        return;
      }
      case Bcast::RowB: {
        auto out = n.value.mat();
        switch (n.op) {
          case Op::Add: out.rowwise() += b.mat().row(0); break;
          case Op::Sub: out.rowwise() -= b.mat().row(0); break;
          case Op::Mul: out.array().rowwise() *= b.mat().row(0).array(); break;
          default: out.array().rowwise() /= b.mat().row(0).array(); break;
        }
        return;
      }
      case Bcast::ColB: {
        auto out = n.value.mat();
        switch (n.op) {
          case Op::Add: out.colwise() += b.mat().col(0); break;
          case Op::Sub: out.colwise() -= b.mat().col(0); break;
          case Op::Mul: out.array().colwise() *= b.mat().col(0).array(); break;
          default: out.array().colwise() /= b.mat().col(0).array(); break;
        }
        return;
      }
    }
  }

  static int64_t conv_out(int64_t size, int64_t k, int64_t stride, int64_t pad) {
    return (size + 2 * pad - k) / stride + 1;
  }

  /// cols[(c*k+di)*k+dj, oy*ow+ox] = x[c, oy*s+di-p, ox*s+dj-p] (zero outside).
  static Tensor<T> im2col(const Tensor<T>& x, int64_t k, int64_t stride, int64_t pad) {
    const int64_t cin = x.shape[0], h = x.shape[1], w = x.shape[2];
    const int64_t oh = conv_out(h, k, stride, pad), ow = conv_out(w, k, stride, pad);
    Tensor<T> cols({cin * k * k, oh * ow});
    for (int64_t c = 0; c < cin; ++c)
      for (int64_t di = 0; di < k; ++di)
        for (int64_t dj = 0; dj < k; ++dj) {
          T* dst = &cols.data[static_cast<size_t>(((c * k + di) * k + dj) * oh * ow)];
          for (int64_t oy = 0; oy < oh; ++oy) {
            const int64_t iy = oy * stride + di - pad;
            for (int64_t ox = 0; ox < ow; ++ox) {
              const int64_t ix = ox * stride + dj - pad;
              dst[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                      ? x.at3(c, iy, ix)
                                      : T(0);
            }
          }
        }
    return cols;
  }

  static void col2im(const Tensor<T>& cols, Tensor<T>& dx, int64_t k, int64_t stride,
                     int64_t pad) {
    const int64_t cin = dx.shape[0], h = dx.shape[1], w = dx.shape[2];
    const int64_t oh = conv_out(h, k, stride, pad), ow = conv_out(w, k, stride, pad);
    for (int64_t c = 0; c < cin; ++c)
      for (int64_t di = 0; di < k; ++di)
        for (int64_t dj = 0; dj < k; ++dj) {
          const T* src = &cols.data[static_cast<size_t>(((c * k + di) * k + dj) * oh * ow)];
          for (int64_t oy = 0; oy < oh; ++oy) {
            const int64_t iy = oy * stride + di - pad;
            if (iy < 0 || iy >= h) continue;
            for (int64_t ox = 0; ox < ow; ++ox) {
              const int64_t ix = ox * stride + dj - pad;
              if (ix >= 0 && ix < w) dx.at3(c, iy, ix) += src[oy * ow + ox];
            }
          }
        }
  }

  void eval_conv(Node& n) {
    const Tensor<T>& x = in(n, 0);
    const Tensor<T>& w = in(n, 1);
    const int64_t k = n.i0, stride = n.i1, pad = n.i2;
    const int64_t cout = w.shape[0];
    const int64_t oh = conv_out(x.shape[1], k, stride, pad);
    const int64_t ow = conv_out(x.shape[2], k, stride, pad);
    Tensor<T> cols = im2col(x, k, stride, pad);
    n.value = Tensor<T>({cout, oh, ow});
    typename Tensor<T>::MatMap out2d(n.value.data.data(), cout, oh * ow);
    out2d.noalias() = w.mat() * cols.mat();
    if (n.i3) out2d.colwise() += in(n, 2).mat().row(0).transpose();
    apply_act(n.act, n.value);
  }

  // ---- reverse pass --------------------------------------------------------

  void accumulate(int id, const Tensor<T>& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad.arr() += g.arr();
    }
  }

  /// Reduce a full-shaped gradient down to operand b's broadcast shape.
  Tensor<T> reduce_bcast(const Tensor<T>& g, Bcast bc, const Tensor<T>& b_like) const {
    switch (bc) {
      case Bcast::Same:
        return g;
      case Bcast::ScalarB: {
        Tensor<T> r(b_like.shape);
        r[0] = g.arr().sum();
        return r;
      }
      case Bcast::RowB: {
        Tensor<T> r(b_like.shape);
        r.mat().row(0) = g.mat().colwise().sum();
        return r;
      }
      case Bcast::ColB: {
        Tensor<T> r(b_like.shape);
        r.mat().col(0) = g.mat().rowwise().sum();
        return r;
      }
    }
    return g;
  }

  /// Expand operand b's value to a's full shape (for Mul/Div backward).
  Tensor<T> expand_bcast(const Tensor<T>& b, Bcast bc, const Tensor<T>& a_like) const {
    if (bc == Bcast::Same) return b;
    Tensor<T> r(a_like.shape);
    switch (bc) {
      case Bcast::ScalarB:
        r.arr() = b[0];
        break;
      case Bcast::RowB:
        r.mat().rowwise() = b.mat().row(0);
        break;
      case Bcast::ColB:
        r.mat().colwise() = b.mat().col(0);
        break;
      default:
        break;
    }
    return r;
  }

  void propagate(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    const Tensor<T>& g = n.grad;
    auto req = [&](int i) {
      return nodes_[static_cast<size_t>(n.inputs[static_cast<size_t>(i)])].requires_grad;
    };
    switch (n.op) {
      case Op::Leaf:
      case Op::Constant:
      case Op::Param:
        return;
      case Op::Add: {
        if (req(0)) accumulate(n.inputs[0], g);
        if (req(1)) accumulate(n.inputs[1], reduce_bcast(g, n.bcast, in(n, 1)));
        return;
      }
      case Op::Sub: {
        if (req(0)) accumulate(n.inputs[0], g);
        if (req(1)) {
          Tensor<T> r = reduce_bcast(g, n.bcast, in(n, 1));
          r.arr() = -r.arr();
          accumulate(n.inputs[1], r);
        }
        return;
      }
      case Op::Mul: {
        if (req(0)) {
          Tensor<T> da = expand_bcast(in(n, 1), n.bcast, in(n, 0));
          da.arr() *= g.arr();
          accumulate(n.inputs[0], da);
        }
        if (req(1)) {
          Tensor<T> full = g;
          full.arr() *= in(n, 0).arr();
          accumulate(n.inputs[1], reduce_bcast(full, n.bcast, in(n, 1)));
        }
        return;
      }
      case Op::Div: {
        Tensor<T> binv = expand_bcast(in(n, 1), n.bcast, in(n, 0));
        binv.arr() = T(1) / binv.arr();
        if (req(0)) {
          Tensor<T> da = binv;
          da.arr() *= g.arr();
          accumulate(n.inputs[0], da);
        }
        if (req(1)) {
          Tensor<T> full = g;
          full.arr() *= -n.value.arr() * binv.arr();
          accumulate(n.inputs[1], reduce_bcast(full, n.bcast, in(n, 1)));
        }
        return;
      }
      case Op::Neg: {
        Tensor<T> da = g;
        da.arr() = -da.arr();
        accumulate(n.inputs[0], da);
        return;
      }
      case Op::Scale: {
        Tensor<T> da = g;
        da.arr() *= n.s0;
        accumulate(n.inputs[0], da);
        return;
      }
      case Op::MatMul: {
        const Tensor<T>& a = in(n, 0);
        const Tensor<T>& b = in(n, 1);
        if (req(0)) {
          Tensor<T> da({a.rows(), a.cols()});
          da.mat().noalias() = g.mat() * b.mat().transpose();
          accumulate(n.inputs[0], da);
        }
        if (req(1)) {
          Tensor<T> db({b.rows(), b.cols()});
          db.mat().noalias() = a.mat().transpose() * g.mat();
          accumulate(n.inputs[1], db);
        }
        return;
      }
      case Op::Transpose: {
        Tensor<T> da({g.cols(), g.rows()});
        da.mat() = g.mat().transpose();
        accumulate(n.inputs[0], da);
        return;
      }
      case Op::Reshape: {
        Tensor<T> da = g;
        da.shape = in(n, 0).shape;
        accumulate(n.inputs[0], da);
        return;
      }
      case Op::ConcatCols: {
        int64_t j = 0;
        for (size_t i = 0; i < n.inputs.size(); ++i) {
          const Tensor<T>& t = in(n, static_cast<int>(i));
          if (req(static_cast<int>(i))) {
            Tensor<T> part(t.shape);
            part.mat() = g.mat().middleCols(j, t.cols());
            accumulate(n.inputs[i], part);
          }
          j += t.cols();
        }
        return;
      }
      case Op::ConcatRows: {
        int64_t r = 0;
        for (size_t i = 0; i < n.inputs.size(); ++i) {
          const Tensor<T>& t = in(n, static_cast<int>(i));
          if (req(static_cast<int>(i))) {
            Tensor<T> part(t.shape);
            part.mat() = g.mat().middleRows(r, t.rows());
            accumulate(n.inputs[i], part);
          }
          r += t.rows();
        }
        return;
      }
      case Op::SliceCols: {
        const Tensor<T>& a = in(n, 0);
        Tensor<T> da = Tensor<T>::zeros(a.shape);
        da.mat().middleCols(n.i0, n.i1 - n.i0) = g.mat();
        accumulate(n.inputs[0], da);
        return;
      }
      case Op::RepeatRows: {
        const Tensor<T>& a = in(n, 0);
        const int64_t k = n.i0;
        Tensor<T> da({a.rows(), a.cols()});
        for (int64_t r = 0; r < a.rows(); ++r)
          da.mat().row(r) = g.mat().middleRows(r * k, k).colwise().sum();
        accumulate(n.inputs[0], da);
        return;
      }
      case Op::Relu:
      case Op::Softplus:
      case Op::Sigmoid: {
        const Act act = n.op == Op::Relu ? Act::Relu
                        : n.op == Op::Softplus ? Act::Softplus
                                               : Act::Sigmoid;
        Tensor<T> da = g;
        da.arr() *= act_deriv(act, n.value);
        accumulate(n.inputs[0], da);
        return;
      }
      case Op::Exp: {
        Tensor<T> da = g;
        da.arr() *= n.value.arr();
        accumulate(n.inputs[0], da);
        return;
      }
      case Op::Cos: {
        Tensor<T> da = g;
        da.arr() *= -in(n, 0).arr().sin();
        accumulate(n.inputs[0], da);
        return;
      }
      case Op::Sqrt: {
        Tensor<T> da = g;
        da.arr() *= T(0.5) / n.value.arr();
        accumulate(n.inputs[0], da);
        return;
      }
      case Op::Sum:
      case Op::Mean: {
        const Tensor<T>& a = in(n, 0);
        const T w = n.op == Op::Sum ? T(1) : T(1) / static_cast<T>(a.numel());
        Tensor<T> da(a.shape);
        da.arr() = g[0] * w;
        accumulate(n.inputs[0], da);
        return;
      }
      case Op::RowSum: {
        const Tensor<T>& a = in(n, 0);
        Tensor<T> da(a.shape);
        da.mat().colwise() = g.mat().col(0);
        accumulate(n.inputs[0], da);
        return;
      }
      case Op::ColSum: {
        const Tensor<T>& a = in(n, 0);
        Tensor<T> da(a.shape);
        da.mat().rowwise() = g.mat().row(0);
        accumulate(n.inputs[0], da);
        return;
      }
      case Op::Linear: {
        const Tensor<T>& x = in(n, 0);
        const Tensor<T>& w = in(n, 1);
        Tensor<T> dpre = g;
        dpre.arr() *= act_deriv(n.act, n.value);
        if (req(0)) {
          Tensor<T> dx({x.rows(), x.cols()});
          dx.mat().noalias() = dpre.mat() * w.mat().transpose();
          accumulate(n.inputs[0], dx);
        }
        if (req(1)) {
          Tensor<T> dw({w.rows(), w.cols()});
          dw.mat().noalias() = x.mat().transpose() * dpre.mat();
          accumulate(n.inputs[1], dw);
        }
        int next = 2;
        if (n.i1) {
          if (req(next)) {
            Tensor<T> db({1, w.cols()});
            db.mat().row(0) = dpre.mat().colwise().sum();
            accumulate(n.inputs[static_cast<size_t>(next)], db);
          }
          ++next;
        }
        if (n.i2 && req(next)) {
          Tensor<T> dj({1, w.cols()});
          dj.mat().row(0) = dpre.mat().colwise().sum();
          accumulate(n.inputs[static_cast<size_t>(next)], dj);
        }
        return;
      }
      case Op::PosEnc: {
        const Tensor<T>& x = in(n, 0);
        const int64_t c = x.cols(), k = n.i0;
        Tensor<T> dx = Tensor<T>::zeros(x.shape);
        for (int64_t j = 0; j < k; ++j) {
          const T f = static_cast<T>(std::ldexp(M_PI, static_cast<int>(j)));
          dx.mat().array() -= (x.mat() * f).array().sin() * f *
                              g.mat().middleCols(j * c, c).array();
        }
        accumulate(n.inputs[0], dx);
        return;
      }
      case Op::VolumeWeights: {
        const Tensor<T>& s = in(n, 0);
        const Tensor<T>& w = n.value;
        const int64_t rays = s.rows(), ns = s.cols();
        Tensor<T> ds(s.shape);
        std::vector<T> trans(static_cast<size_t>(ns) + 1);
        for (int64_t r = 0; r < rays; ++r) {
          trans[0] = T(1);
          for (int64_t i = 0; i < ns; ++i)
            trans[static_cast<size_t>(i) + 1] = trans[static_cast<size_t>(i)] - w[r * ns + i];
          T acc = T(0);  // sum_{i>j} w_i g_i
          for (int64_t j = ns - 1; j >= 0; --j) {
            const T gj = g[r * ns + j];
            ds[r * ns + j] = trans[static_cast<size_t>(j) + 1] * gj - acc;
            acc += w[r * ns + j] * gj;
          }
        }
        accumulate(n.inputs[0], ds);
        return;
      }
      case Op::Cross3: {
        const Tensor<T>& a = in(n, 0);
        const Tensor<T>& b = in(n, 1);
        Tensor<T> da(a.shape), db(b.shape);
        for (int64_t r = 0; r < a.rows(); ++r) {
          const T* u = &a.data[static_cast<size_t>(3 * r)];
          const T* v = &b.data[static_cast<size_t>(3 * r)];
          const T* gg = &g.data[static_cast<size_t>(3 * r)];
          // d/da (a x b) applied to g is b x g; d/db is g x a
          da[3 * r + 0] = v[1] * gg[2] - v[2] * gg[1];
          da[3 * r + 1] = v[2] * gg[0] - v[0] * gg[2];
          da[3 * r + 2] = v[0] * gg[1] - v[1] * gg[0];
          db[3 * r + 0] = gg[1] * u[2] - gg[2] * u[1];
          db[3 * r + 1] = gg[2] * u[0] - gg[0] * u[2];
          db[3 * r + 2] = gg[0] * u[1] - gg[1] * u[0];
        }
        if (req(0)) accumulate(n.inputs[0], da);
        if (req(1)) accumulate(n.inputs[1], db);
        return;
      }
      case Op::Conv2d: {
        const Tensor<T>& x = in(n, 0);
        const Tensor<T>& w = in(n, 1);
        const int64_t k = n.i0, stride = n.i1, pad = n.i2;
        const int64_t cout = w.shape[0];
        const int64_t ohw = n.value.shape[1] * n.value.shape[2];
        Tensor<T> dpre = g;
        dpre.arr() *= act_deriv(n.act, n.value);
        typename Tensor<T>::ConstMatMap dpre2d(dpre.data.data(), cout, ohw);
        if (req(1)) {
          Tensor<T> cols = im2col(x, k, stride, pad);
          Tensor<T> dw({w.shape[0], w.shape[1]});
          dw.mat().noalias() = dpre2d * cols.mat().transpose();
          accumulate(n.inputs[1], dw);
        }
        if (n.i3 && req(2)) {
          Tensor<T> db({1, cout});
          db.mat().row(0) = dpre2d.rowwise().sum().transpose();
          accumulate(n.inputs[2], db);
        }
        if (req(0)) {
          Tensor<T> dcols({w.shape[1], ohw});
          dcols.mat().noalias() = w.mat().transpose() * dpre2d;
          Tensor<T> dx = Tensor<T>::zeros(x.shape);
          col2im(dcols, dx, k, stride, pad);
          accumulate(n.inputs[0], dx);
        }
        return;
      }
      case Op::AvgPool2: {
        const Tensor<T>& x = in(n, 0);
        Tensor<T> dx(x.shape);
        const int64_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < w; ++xx)
              dx.at3(ch, y, xx) = g.at3(ch, y / 2, xx / 2) / T(4);
        accumulate(n.inputs[0], dx);
        return;
      }
      case Op::GlobalAvgPool: {
        const Tensor<T>& x = in(n, 0);
        const int64_t c = x.shape[0], hw = x.shape[1] * x.shape[2];
        Tensor<T> dx(x.shape);
        for (int64_t ch = 0; ch < c; ++ch) {
          typename Tensor<T>::ArrMap plane(&dx.data[static_cast<size_t>(ch * hw)], hw);
          plane = g[ch] / static_cast<T>(hw);
        }
        accumulate(n.inputs[0], dx);
        return;
      }
      case Op::RayPoints: {
        const Tensor<T>& dir = in(n, 0);
        const Tensor<T>& t = in(n, 2);
        const int64_t rays = dir.rows(), s = n.i0;
        if (req(0)) {
          Tensor<T> dd(dir.shape);
          for (int64_t r = 0; r < rays; ++r) {
            T acc[3] = {T(0), T(0), T(0)};
            for (int64_t i = 0; i < s; ++i) {
              const int64_t m = r * s + i;
              acc[0] += t[m] * g[3 * m + 0];
              acc[1] += t[m] * g[3 * m + 1];
              acc[2] += t[m] * g[3 * m + 2];
            }
            dd[3 * r + 0] = acc[0];
            dd[3 * r + 1] = acc[1];
            dd[3 * r + 2] = acc[2];
          }
          accumulate(n.inputs[0], dd);
        }
        if (req(1)) {
          Tensor<T> dc({1, 3});
          dc.mat().row(0) = g.mat().colwise().sum();
          accumulate(n.inputs[1], dc);
        }
        if (req(2)) {
          Tensor<T> dt(t.shape);
          for (int64_t r = 0; r < rays; ++r) {
            const T* d = &dir.data[static_cast<size_t>(3 * r)];
            for (int64_t i = 0; i < s; ++i) {
              const int64_t m = r * s + i;
              dt[m] = d[0] * g[3 * m + 0] + d[1] * g[3 * m + 1] + d[2] * g[3 * m + 2];
            }
          }
          accumulate(n.inputs[2], dt);
        }
        return;
      }
      case Op::VolumeBlend: {
        const Tensor<T>& w = in(n, 0);
        const Tensor<T>& rgb = in(n, 1);
        const Tensor<T>& bg = in(n, 2);
        const int64_t rays = w.rows(), s = w.cols();
        Tensor<T> dw, drgb;
        const bool want_w = req(0), want_rgb = req(1);
        if (want_w) dw = Tensor<T>(w.shape);
        if (want_rgb) drgb = Tensor<T>(rgb.shape);
        for (int64_t r = 0; r < rays; ++r) {
          const T* gr = &g.data[static_cast<size_t>(4 * r)];
          for (int64_t i = 0; i < s; ++i) {
            const int64_t m = r * s + i;
            if (want_w)
              dw[m] = gr[0] * (rgb[3 * m + 0] - bg[0]) + gr[1] * (rgb[3 * m + 1] - bg[1]) +
                      gr[2] * (rgb[3 * m + 2] - bg[2]) + gr[3];
            if (want_rgb) {
              drgb[3 * m + 0] = w[m] * gr[0];
              drgb[3 * m + 1] = w[m] * gr[1];
              drgb[3 * m + 2] = w[m] * gr[2];
            }
          }
        }
        if (want_w) accumulate(n.inputs[0], dw);
        if (want_rgb) accumulate(n.inputs[1], drgb);
        if (req(2)) {
          Tensor<T> dbg({1, 3});
          for (int c = 0; c < 3; ++c) {
            T acc = T(0);
            for (int64_t r = 0; r < rays; ++r) {
              T wsum = T(0);
              for (int64_t i = 0; i < s; ++i) wsum += w[r * s + i];
              acc += (T(1) - wsum) * g[4 * r + c];
            }
            dbg[c] = acc;
          }
          accumulate(n.inputs[2], dbg);
        }
        return;
      }
    }
  }
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "const";
    case Op::Param: return "param";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Scale: return "scale";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Reshape: return "reshape";
    case Op::ConcatCols: return "concat_cols";
    case Op::ConcatRows: return "concat_rows";
    case Op::SliceCols: return "slice_cols";
    case Op::RepeatRows: return "repeat_rows";
    case Op::Relu: return "relu";
    case Op::Softplus: return "softplus";
    case Op::Sigmoid: return "sigmoid";
    case Op::Exp: return "exp";
    case Op::Cos: return "cos";
    case Op::Sqrt: return "sqrt";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::RowSum: return "row_sum";
    case Op::ColSum: return "col_sum";
    case Op::Linear: return "linear";
    case Op::PosEnc: return "pos_enc";
    case Op::VolumeWeights: return "volume_weights";
    case Op::Cross3: return "cross3";
    case Op::Conv2d: return "conv2d";
    case Op::AvgPool2: return "avg_pool2";
    case Op::GlobalAvgPool: return "global_avg_pool";
    case Op::RayPoints: return "ray_points";
    case Op::VolumeBlend: return "volume_blend";
  }
  return "?";
}

}  // namespace nerfpose::diff
