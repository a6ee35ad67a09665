#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tinysense/numerics/tensor.hpp"

namespace tinysense::numerics {

/// A named trainable tensor. Graphs reference parameters by address, so a
/// Parameter must outlive every Graph it is registered on.
struct Parameter {
  std::string name;
  Tensor value;
};

/// Uniform init in +-1/sqrt(fan_in).
Parameter make_parameter(std::string name, Shape shape, std::size_t fan_in, std::mt19937_64& rng);

using GradientMap = std::unordered_map<const Parameter*, Tensor>;

class Graph;

/// Handle to a node recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const;
};

/// Tape of operations for reverse-mode differentiation. Nodes are appended in
/// execution order, which is a topological order by construction.
///
/// Not thread-safe; one Graph per thread.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// With grad disabled, ops record values only (inference mode).
  void set_grad_enabled(bool enabled) noexcept { grad_enabled_ = enabled; }
  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var constant(Tensor value);
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  /// Runs the backward pass from a scalar loss. Returns d loss / d p for every
  /// parameter reachable from the loss; shared subexpressions accumulate.
  GradientMap backward(Var loss);

  /// Gradient of the last backward() w.r.t. an arbitrary node (zeros if the
  /// node did not receive any gradient).
  Tensor grad(Var v) const;

  // -- used by op implementations --
  Var record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn fn);
  bool needs_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  const Tensor& node_value(std::uint32_t id) const { return nodes_[id].value; }
  const Tensor& grad_of(std::uint32_t id) const { return grads_[id]; }
  /// Accumulation buffer for a node, zero-initialised on first touch.
  Tensor& grad_buffer(std::uint32_t id);
  std::uint32_t input(std::uint32_t self, std::size_t k) const { return nodes_[self].inputs[k]; }

 private:
  struct Node {
    Tensor value;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<bool> has_grad_;
  bool grad_enabled_ = true;
};

// Elementwise binary ops. `b` may either match `a` or equal a trailing suffix
// of a's shape, in which case it is broadcast over the leading axes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

Var scale(Var a, double factor);
Var add_scalar(Var a, double c);

Var matmul(Var a, Var b);      // [m,k] x [k,n]
Var transpose(Var a);          // [m,n] -> [n,m]
Var reshape(Var a, Shape shape);

/// 2-D convolution over channel-last maps: x [H,W,Cin], w [kh,kw,Cin,Cout].
/// Zero padding `pad` on every side. Output [Ho,Wo,Cout].
Var conv2d(Var x, Var w, std::size_t stride, std::size_t pad);
/// Adjoint of conv2d: x [H,W,Cin], w [kh,kw,Cin,Cout] ->
/// [(H-1)*stride - 2*pad + kh, (W-1)*stride - 2*pad + kw, Cout].
Var conv_transpose2d(Var x, Var w, std::size_t stride, std::size_t pad);

Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var sigmoid(Var a);
Var log(Var a);
Var square(Var a);
/// Gradient passes only where lo < a < hi.
Var clamp(Var a, double lo, double hi);

Var softmax(Var a);      // over the last axis
Var log_softmax(Var a);  // over the last axis
/// Normalises each row of a 2-D tensor to zero mean / unit variance (no affine).
Var layer_norm(Var a, double eps = 1e-5);

Var sum(Var a);
Var mean(Var a);

/// Forward value of z_q; backward is the identity into z and nothing into z_q.
Var straight_through(Var z, Var z_q);
Var stop_gradient(Var a);

/// Rows of a 2-D table selected by index; backward scatter-adds.
Var gather_rows(Var table, std::span<const std::size_t> rows);
Var concat_rows(Var a, Var b);

/// Scaled dot-product attention applied independently to consecutive groups
/// of `group` rows: q,k,v [B*group, d] -> [B*group, d].
Var grouped_attention(Var q, Var k, Var v, std::size_t group);

}  // namespace tinysense::numerics
