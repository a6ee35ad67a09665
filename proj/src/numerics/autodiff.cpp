#include "tinysense/numerics/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tinysense::numerics {

Parameter make_parameter(std::string name, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = dist(rng);
  return Parameter{std::move(name), std::move(t)};
}

const Tensor& Var::value() const { return graph->value(*this); }
const Shape& Var::shape() const { return graph->value(*this).shape(); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, false});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, nullptr, &p, grad_enabled_});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn fn) {
  bool wants = false;
  if (grad_enabled_) {
    for (auto in : inputs) wants = wants || nodes_[in].requires_grad;
  }
  Node node{std::move(value), {}, nullptr, nullptr, wants};
  if (wants) {
    node.inputs = std::move(inputs);
    node.backward = std::move(fn);
  }
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Graph::grad_buffer(std::uint32_t id) {
  if (!has_grad_[id]) {
    grads_[id] = Tensor(nodes_[id].value.shape(), 0.0);
    has_grad_[id] = true;
  }
  return grads_[id];
}

GradientMap Graph::backward(Var loss) {
  if (loss.graph != this) throw std::invalid_argument("backward: loss belongs to another graph");
  const Tensor& lv = nodes_.at(loss.id).value;
  if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got shape " + to_string(lv.shape()));

  grads_.assign(nodes_.size(), Tensor{});
  has_grad_.assign(nodes_.size(), false);
  grad_buffer(loss.id)[0] = 1.0;

  GradientMap result;
  for (std::int64_t i = loss.id; i >= 0; --i) {
    const auto id = static_cast<std::uint32_t>(i);
    if (!has_grad_[id] || !nodes_[id].requires_grad) continue;
    Node& node = nodes_[id];
    if (node.backward) {
      node.backward(*this, id);
    } else if (node.param != nullptr) {
      auto [it, inserted] = result.try_emplace(node.param, grads_[id]);
      if (!inserted) {
        auto dst = it->second.values();
        auto src = grads_[id].values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }
  return result;
}

Tensor Graph::grad(Var v) const {
  if (v.id < has_grad_.size() && has_grad_[v.id]) return grads_[v.id];
  return Tensor(nodes_.at(v.id).value.shape(), 0.0);
}

namespace {

Graph& graph_of(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) throw std::invalid_argument("operands belong to different graphs");
  return *a.graph;
}

// Size of the broadcast inner block when b's shape is a trailing suffix of a's.
std::size_t broadcast_inner(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return element_count(a);
  if (b.size() <= a.size() && std::equal(b.rbegin(), b.rend(), a.rbegin())) return element_count(b);
  if (element_count(b) == 1 && b.size() == 1) return 1;
  shape_mismatch(op, a, b);
}

template <class Forward, class GradA, class GradB>
Var binary(const char* op, Var a, Var b, Forward f, GradA ga, GradB gb) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t inner = broadcast_inner(op, av.shape(), bv.shape());
  Tensor out(av.shape());
  const std::size_t n = av.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i % inner]);
  return g.record(std::move(out), {a.id, b.id}, [inner, ga, gb](Graph& gr, std::uint32_t self) {
    const auto ia = gr.input(self, 0);
    const auto ib = gr.input(self, 1);
    const Tensor& go = gr.grad_of(self);
    const Tensor& x = gr.node_value(ia);
    const Tensor& y = gr.node_value(ib);
    if (gr.needs_grad(ia)) {
      Tensor& gxa = gr.grad_buffer(ia);
      for (std::size_t i = 0; i < go.size(); ++i) gxa[i] += ga(go[i], x[i], y[i % inner]);
    }
    if (gr.needs_grad(ib)) {
      Tensor& gxb = gr.grad_buffer(ib);
      for (std::size_t i = 0; i < go.size(); ++i) gxb[i % inner] += gb(go[i], x[i], y[i % inner]);
    }
  });
}

template <class Forward, class Deriv>
Var unary(Var a, Forward f, Deriv d) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return g.record(std::move(out), {a.id}, [d](Graph& gr, std::uint32_t self) {
    const auto ia = gr.input(self, 0);
    const Tensor& go = gr.grad_of(self);
    const Tensor& x = gr.node_value(ia);
    const Tensor& y = gr.node_value(self);
    Tensor& gx = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * d(x[i], y[i]);
  });
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
  }
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Var scale(Var a, double factor) {
  return unary(
      a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double c) {
  return unary(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) shape_mismatch("matmul", A.shape(), B.shape());
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return g.record(std::move(out), {a.id, b.id}, [m, k, n](Graph& gr, std::uint32_t self) {
    const auto ia = gr.input(self, 0);
    const auto ib = gr.input(self, 1);
    const Tensor& G = gr.grad_of(self);
    const Tensor& A = gr.node_value(ia);
    const Tensor& B = gr.node_value(ib);
    if (gr.needs_grad(ia)) {
      Tensor& gA = gr.grad_buffer(ia);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B.data() + p * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          gA[i * k + p] += s;
        }
      }
    }
    if (gr.needs_grad(ib)) {
      Tensor& gB = gr.grad_buffer(ib);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          double* gbrow = gB.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  require_rank("transpose", A, 2);
  const std::size_t m = A.dim(0), n = A.dim(1);
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return a.graph->record(std::move(out), {a.id}, [m, n](Graph& gr, std::uint32_t self) {
    const auto ia = gr.input(self, 0);
    const Tensor& G = gr.grad_of(self);
    Tensor& gA = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gA[i * n + j] += G[j * m + i];
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.graph->record(std::move(out), {a.id}, [](Graph& gr, std::uint32_t self) {
    const auto ia = gr.input(self, 0);
    const Tensor& G = gr.grad_of(self);
    Tensor& gA = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < G.size(); ++i) gA[i] += G[i];
  });
}

namespace {

struct ConvGeometry {
  std::size_t h, w, cin, kh, kw, cout, stride, pad, ho, wo;
};

void check_conv_args(const char* op, const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  if (x.rank() != 3 || w.rank() != 4 || x.dim(2) != w.dim(2)) shape_mismatch(op, x.shape(), w.shape());
  if (stride != 1 && stride != 2) throw std::invalid_argument(std::string(op) + ": stride must be 1 or 2");
  if (w.dim(0) > 4 || w.dim(1) > 4) throw std::invalid_argument(std::string(op) + ": kernel extent must be <= 4");
  if (pad >= w.dim(0) || pad >= w.dim(1)) throw std::invalid_argument(std::string(op) + ": padding must be < kernel");
}

// Visits every (output cell, kernel tap, input cell) triple of a strided
// convolution. `visit(in_offset, out_offset, tap)` receives flat cell indices.
template <class Visit>
void for_each_tap(const ConvGeometry& c, Visit visit) {
  for (std::size_t oy = 0; oy < c.ho; ++oy) {
    for (std::size_t ox = 0; ox < c.wo; ++ox) {
      for (std::size_t ky = 0; ky < c.kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * c.stride + ky) - static_cast<std::ptrdiff_t>(c.pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(c.h)) continue;
        for (std::size_t kx = 0; kx < c.kw; ++kx) {
          const std::ptrdiff_t ix =
              static_cast<std::ptrdiff_t>(ox * c.stride + kx) - static_cast<std::ptrdiff_t>(c.pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(c.w)) continue;
          visit(static_cast<std::size_t>(iy) * c.w + static_cast<std::size_t>(ix), oy * c.wo + ox, ky * c.kw + kx);
        }
      }
    }
  }
}

// Shared kernel for conv and transposed conv: `small` is the side indexed by
// output cells of the forward conv, `large` the side indexed by input cells.
// Forward conv: large = x, small = out. Transposed conv: large = out, small = x.
void accumulate_small(const ConvGeometry& c, const double* large, const double* w, double* small) {
  for_each_tap(c, [&](std::size_t li, std::size_t si, std::size_t tap) {
    const double* lp = large + li * c.cin;
    const double* wp = w + tap * c.cin * c.cout;
    double* sp = small + si * c.cout;
    for (std::size_t ci = 0; ci < c.cin; ++ci) {
      const double lv = lp[ci];
      const double* wrow = wp + ci * c.cout;
      for (std::size_t co = 0; co < c.cout; ++co) sp[co] += lv * wrow[co];
    }
  });
}

void accumulate_large(const ConvGeometry& c, const double* small, const double* w, double* large) {
  for_each_tap(c, [&](std::size_t li, std::size_t si, std::size_t tap) {
    double* lp = large + li * c.cin;
    const double* wp = w + tap * c.cin * c.cout;
    const double* sp = small + si * c.cout;
    for (std::size_t ci = 0; ci < c.cin; ++ci) {
      const double* wrow = wp + ci * c.cout;
      double s = 0.0;
      for (std::size_t co = 0; co < c.cout; ++co) s += sp[co] * wrow[co];
      lp[ci] += s;
    }
  });
}

void accumulate_weight(const ConvGeometry& c, const double* large, const double* small, double* gw) {
  for_each_tap(c, [&](std::size_t li, std::size_t si, std::size_t tap) {
    const double* lp = large + li * c.cin;
    double* wp = gw + tap * c.cin * c.cout;
    const double* sp = small + si * c.cout;
    for (std::size_t ci = 0; ci < c.cin; ++ci) {
      const double lv = lp[ci];
      double* wrow = wp + ci * c.cout;
      for (std::size_t co = 0; co < c.cout; ++co) wrow[co] += lv * sp[co];
    }
  });
}

}  // namespace

Var conv2d(Var x, Var w, std::size_t stride, std::size_t pad) {
  Graph& g = graph_of(x, w);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  check_conv_args("conv2d", X, W, stride, pad);
  ConvGeometry c{X.dim(0), X.dim(1), X.dim(2), W.dim(0), W.dim(1), W.dim(3), stride, pad, 0, 0};
  if (c.h + 2 * pad < c.kh || c.w + 2 * pad < c.kw) shape_mismatch("conv2d", X.shape(), W.shape());
  c.ho = (c.h + 2 * pad - c.kh) / stride + 1;
  c.wo = (c.w + 2 * pad - c.kw) / stride + 1;
  Tensor out(Shape{c.ho, c.wo, c.cout});
  accumulate_small(c, X.data(), W.data(), out.data());
  return g.record(std::move(out), {x.id, w.id}, [c](Graph& gr, std::uint32_t self) {
    const auto ix = gr.input(self, 0);
    const auto iw = gr.input(self, 1);
    const Tensor& G = gr.grad_of(self);
    if (gr.needs_grad(ix)) accumulate_large(c, G.data(), gr.node_value(iw).data(), gr.grad_buffer(ix).data());
    if (gr.needs_grad(iw)) accumulate_weight(c, gr.node_value(ix).data(), G.data(), gr.grad_buffer(iw).data());
  });
}

Var conv_transpose2d(Var x, Var w, std::size_t stride, std::size_t pad) {
  Graph& g = graph_of(x, w);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  check_conv_args("conv_transpose2d", X, W, stride, pad);
  // Geometry of the forward conv that this op is the adjoint of: its "large"
  // side is our output, its "small" side is our input.
  const std::size_t hi = X.dim(0), wi = X.dim(1);
  if ((hi - 1) * stride + W.dim(0) <= 2 * pad || (wi - 1) * stride + W.dim(1) <= 2 * pad) {
    shape_mismatch("conv_transpose2d", X.shape(), W.shape());
  }
  const std::size_t ho = (hi - 1) * stride + W.dim(0) - 2 * pad;
  const std::size_t wo = (wi - 1) * stride + W.dim(1) - 2 * pad;
  // In the adjoint, channel roles swap: forward-conv cin is our cout.
  ConvGeometry c{ho, wo, W.dim(3), W.dim(0), W.dim(1), W.dim(2), stride, pad, hi, wi};
  // Reinterpret W [kh,kw,Cin,Cout] as the forward conv's [kh,kw,Cout,Cin]
  // by transposing the last two axes once.
  std::vector<double> wt(W.size());
  const std::size_t taps = c.kh * c.kw;
  for (std::size_t t = 0; t < taps; ++t)
    for (std::size_t a = 0; a < c.cout; ++a)
      for (std::size_t b = 0; b < c.cin; ++b) wt[(t * c.cin + b) * c.cout + a] = W[(t * c.cout + a) * c.cin + b];
  Tensor out(Shape{ho, wo, c.cin});
  accumulate_large(c, X.data(), wt.data(), out.data());
  return g.record(std::move(out), {x.id, w.id}, [c, taps, wt = std::move(wt)](Graph& gr, std::uint32_t self) {
    const auto ix = gr.input(self, 0);
    const auto iw = gr.input(self, 1);
    const Tensor& G = gr.grad_of(self);
    if (gr.needs_grad(ix)) accumulate_small(c, G.data(), wt.data(), gr.grad_buffer(ix).data());
    if (gr.needs_grad(iw)) {
      std::vector<double> gwt(wt.size(), 0.0);
      accumulate_weight(c, G.data(), gr.node_value(ix).data(), gwt.data());
      Tensor& gW = gr.grad_buffer(iw);
      for (std::size_t t = 0; t < taps; ++t)
        for (std::size_t a = 0; a < c.cout; ++a)
          for (std::size_t b = 0; b < c.cin; ++b) gW[(t * c.cout + a) * c.cin + b] += gwt[(t * c.cin + b) * c.cout + a];
    }
  });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var log(Var a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var softmax(Var a) {
  const Tensor& A = a.value();
  const std::size_t n = A.shape().back();
  const std::size_t rows = A.size() / n;
  Tensor out(A.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = A.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= s;
  }
  return a.graph->record(std::move(out), {a.id}, [n, rows](Graph& gr, std::uint32_t self) {
    const auto ia = gr.input(self, 0);
    const Tensor& G = gr.grad_of(self);
    const Tensor& Y = gr.node_value(self);
    Tensor& gA = gr.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = G.data() + r * n;
      const double* y = Y.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) gA[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Var log_softmax(Var a) {
  const Tensor& A = a.value();
  const std::size_t n = A.shape().back();
  const std::size_t rows = A.size() / n;
  Tensor out(A.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = A.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lse;
  }
  return a.graph->record(std::move(out), {a.id}, [n, rows](Graph& gr, std::uint32_t self) {
    const auto ia = gr.input(self, 0);
    const Tensor& G = gr.grad_of(self);
    const Tensor& Y = gr.node_value(self);
    Tensor& gA = gr.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = G.data() + r * n;
      const double* y = Y.data() + r * n;
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[j];
      for (std::size_t j = 0; j < n; ++j) gA[r * n + j] += g[j] - std::exp(y[j]) * gs;
    }
  });
}

Var layer_norm(Var a, double eps) {
  const Tensor& A = a.value();
  const std::size_t n = A.shape().back();
  const std::size_t rows = A.size() / n;
  Tensor out(A.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = A.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = (x[j] - mu) * inv_std[r];
  }
  return a.graph->record(std::move(out), {a.id},
                         [n, rows, inv_std = std::move(inv_std)](Graph& gr, std::uint32_t self) {
                           const auto ia = gr.input(self, 0);
                           const Tensor& G = gr.grad_of(self);
                           const Tensor& Y = gr.node_value(self);
                           Tensor& gA = gr.grad_buffer(ia);
                           const double dn = static_cast<double>(n);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* g = G.data() + r * n;
                             const double* y = Y.data() + r * n;
                             double gm = 0.0, gy = 0.0;
                             for (std::size_t j = 0; j < n; ++j) {
                               gm += g[j];
                               gy += g[j] * y[j];
                             }
                             gm /= dn;
                             gy /= dn;
                             for (std::size_t j = 0; j < n; ++j) gA[r * n + j] += inv_std[r] * (g[j] - gm - y[j] * gy);
                           }
                         });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return a.graph->record(Tensor::scalar(s), {a.id}, [](Graph& gr, std::uint32_t self) {
    const auto ia = gr.input(self, 0);
    const double g = gr.grad_of(self)[0];
    for (auto& v : gr.grad_buffer(ia).values()) v += g;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return a.graph->record(Tensor::scalar(s / n), {a.id}, [n](Graph& gr, std::uint32_t self) {
    const auto ia = gr.input(self, 0);
    const double g = gr.grad_of(self)[0] / n;
    for (auto& v : gr.grad_buffer(ia).values()) v += g;
  });
}

Var straight_through(Var z, Var z_q) {
  Graph& g = graph_of(z, z_q);
  if (z.shape() != z_q.shape()) shape_mismatch("straight_through", z.shape(), z_q.shape());
  return g.record(z_q.value(), {z.id}, [](Graph& gr, std::uint32_t self) {
    const auto iz = gr.input(self, 0);
    const Tensor& G = gr.grad_of(self);
    Tensor& gz = gr.grad_buffer(iz);
    for (std::size_t i = 0; i < G.size(); ++i) gz[i] += G[i];
  });
}

Var stop_gradient(Var a) { return a.graph->constant(a.value()); }

Var gather_rows(Var table, std::span<const std::size_t> rows) {
  const Tensor& T = table.value();
  require_rank("gather_rows", T, 2);
  const std::size_t d = T.dim(1);
  Tensor out(Shape{rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= T.dim(0)) throw std::out_of_range("gather_rows: row index out of range");
    std::copy_n(T.data() + rows[r] * d, d, out.data() + r * d);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return table.graph->record(std::move(out), {table.id}, [d, idx = std::move(idx)](Graph& gr, std::uint32_t self) {
    const auto it = gr.input(self, 0);
    const Tensor& G = gr.grad_of(self);
    Tensor& gT = gr.grad_buffer(it);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) gT[idx[r] * d + j] += G[r * d + j];
  });
}

Var concat_rows(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(1)) shape_mismatch("concat_rows", A.shape(), B.shape());
  Tensor out(Shape{A.dim(0) + B.dim(0), A.dim(1)});
  std::copy(A.storage().begin(), A.storage().end(), out.storage().begin());
  std::copy(B.storage().begin(), B.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(A.size()));
  const std::size_t split = A.size();
  return g.record(std::move(out), {a.id, b.id}, [split](Graph& gr, std::uint32_t self) {
    const auto ia = gr.input(self, 0);
    const auto ib = gr.input(self, 1);
    const Tensor& G = gr.grad_of(self);
    if (gr.needs_grad(ia)) {
      Tensor& gA = gr.grad_buffer(ia);
      for (std::size_t i = 0; i < split; ++i) gA[i] += G[i];
    }
    if (gr.needs_grad(ib)) {
      Tensor& gB = gr.grad_buffer(ib);
      for (std::size_t i = split; i < G.size(); ++i) gB[i - split] += G[i];
    }
  });
}

Var grouped_attention(Var q, Var k, Var v, std::size_t group) {
  Graph& g = graph_of(q, k);
  graph_of(q, v);
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  if (Q.rank() != 2 || Q.shape() != K.shape() || Q.shape() != V.shape()) {
    shape_mismatch("grouped_attention", Q.shape(), K.shape());
  }
  if (group == 0 || Q.dim(0) % group != 0) {
    throw ShapeError("grouped_attention: row count " + std::to_string(Q.dim(0)) + " not a multiple of group " +
                     std::to_string(group));
  }
  const std::size_t d = Q.dim(1);
  const std::size_t groups = Q.dim(0) / group;
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> attn(groups * group * group);
  Tensor out(Q.shape());
  for (std::size_t b = 0; b < groups; ++b) {
    const double* qb = Q.data() + b * group * d;
    const double* kb = K.data() + b * group * d;
    const double* vb = V.data() + b * group * d;
    double* ab = attn.data() + b * group * group;
    double* ob = out.data() + b * group * d;
    for (std::size_t i = 0; i < group; ++i) {
      double mx = -1e300;
      for (std::size_t j = 0; j < group; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) s += qb[i * d + t] * kb[j * d + t];
        ab[i * group + j] = s * inv;
        mx = std::max(mx, ab[i * group + j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < group; ++j) z += (ab[i * group + j] = std::exp(ab[i * group + j] - mx));
      for (std::size_t j = 0; j < group; ++j) {
        ab[i * group + j] /= z;
        for (std::size_t t = 0; t < d; ++t) ob[i * d + t] += ab[i * group + j] * vb[j * d + t];
      }
    }
  }
  return g.record(std::move(out), {q.id, k.id, v.id},
                  [d, group, groups, inv, attn = std::move(attn)](Graph& gr, std::uint32_t self) {
                    const auto iq = gr.input(self, 0);
                    const auto ik = gr.input(self, 1);
                    const auto iv = gr.input(self, 2);
                    const Tensor& G = gr.grad_of(self);
                    const Tensor& Q = gr.node_value(iq);
                    const Tensor& K = gr.node_value(ik);
                    const Tensor& V = gr.node_value(iv);
                    Tensor* gQ = gr.needs_grad(iq) ? &gr.grad_buffer(iq) : nullptr;
                    Tensor* gK = gr.needs_grad(ik) ? &gr.grad_buffer(ik) : nullptr;
                    Tensor* gV = gr.needs_grad(iv) ? &gr.grad_buffer(iv) : nullptr;
                    std::vector<double> ds(group * group);
                    for (std::size_t b = 0; b < groups; ++b) {
                      const std::size_t off = b * group * d;
                      const double* ab = attn.data() + b * group * group;
                      const double* gb = G.data() + off;
                      for (std::size_t i = 0; i < group; ++i) {
                        double rowdot = 0.0;
                        for (std::size_t j = 0; j < group; ++j) {
                          double da = 0.0;
                          for (std::size_t t = 0; t < d; ++t) da += gb[i * d + t] * V[off + j * d + t];
                          ds[i * group + j] = da;
                          rowdot += da * ab[i * group + j];
                        }
                        for (std::size_t j = 0; j < group; ++j) {
                          ds[i * group + j] = ab[i * group + j] * (ds[i * group + j] - rowdot) * inv;
                        }
                      }
                      for (std::size_t i = 0; i < group; ++i) {
                        for (std::size_t j = 0; j < group; ++j) {
                          const double a = ab[i * group + j];
                          const double s = ds[i * group + j];
                          for (std::size_t t = 0; t < d; ++t) {
                            if (gV) (*gV)[off + j * d + t] += a * gb[i * d + t];
                            if (gQ) (*gQ)[off + i * d + t] += s * K[off + j * d + t];
                            if (gK) (*gK)[off + j * d + t] += s * Q[off + i * d + t];
                          }
                        }
                      }
                    }
                  });
}

}  // namespace tinysense::numerics
