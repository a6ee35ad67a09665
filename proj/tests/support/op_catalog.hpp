#pragma once

// Randomised gradient-check cases, one generator per differentiable op. Each
// case projects the op output onto fixed random weights so every output
// element contributes to the scalar loss.

#include <random>
#include <string>
#include <vector>

#include "support/gradcheck.hpp"
#include "tinysense/numerics/autodiff.hpp"

namespace tinysense::testing {

namespace nx = tinysense::numerics;

struct OpCase {
  std::vector<Parameter> params;
  LossBuilder build;
};

struct OpGenerator {
  std::string name;
  std::function<OpCase(std::mt19937_64&)> make;
};

inline nx::Tensor random_tensor(nx::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  nx::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

inline std::size_t rand_dim(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Weighted sum of an op's output so the loss is sensitive to every element.
inline Var project(Var out, std::mt19937_64& rng) {
  auto w = out.graph->constant(random_tensor(out.shape(), rng));
  return nx::sum(nx::mul(out, w));
}

inline Parameter rp(const char* name, nx::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return Parameter{name, random_tensor(std::move(shape), rng, lo, hi)};
}

// The builders capture a seed rather than an RNG so that the projection
// weights are identical across every forward evaluation.
template <class F>
LossBuilder projected(std::uint64_t seed, F f) {
  return [seed, f](Graph& g, const std::vector<Var>& v) {
    std::mt19937_64 rng(seed);
    return project(f(g, v), rng);
  };
}

inline std::vector<OpGenerator> op_catalog() {
  std::vector<OpGenerator> ops;
  auto unary_case = [](const char* name, auto fn, double lo = -1.0, double hi = 1.0) {
    return OpGenerator{name, [=](std::mt19937_64& rng) {
                         nx::Shape s{rand_dim(rng, 1, 4), rand_dim(rng, 1, 5)};
                         OpCase c{{rp("a", s, rng, lo, hi)}, {}};
                         c.build = projected(rng(), [fn](Graph&, const std::vector<Var>& v) { return fn(v[0]); });
                         return c;
                       }};
  };
  auto binary_case = [](const char* name, auto fn, bool broadcast) {
    return OpGenerator{name, [=](std::mt19937_64& rng) {
                         nx::Shape s{rand_dim(rng, 1, 4), rand_dim(rng, 1, 5)};
                         nx::Shape sb = broadcast ? nx::Shape{s[1]} : s;
                         OpCase c{{rp("a", s, rng), rp("b", sb, rng)}, {}};
                         c.build = projected(rng(), [fn](Graph&, const std::vector<Var>& v) { return fn(v[0], v[1]); });
                         return c;
                       }};
  };

  ops.push_back(binary_case("add", [](Var a, Var b) { return nx::add(a, b); }, false));
  ops.push_back(binary_case("add_broadcast", [](Var a, Var b) { return nx::add(a, b); }, true));
  ops.push_back(binary_case("sub", [](Var a, Var b) { return nx::sub(a, b); }, false));
  ops.push_back(binary_case("mul", [](Var a, Var b) { return nx::mul(a, b); }, false));
  ops.push_back(binary_case("mul_broadcast", [](Var a, Var b) { return nx::mul(a, b); }, true));
  ops.push_back(unary_case("scale", [](Var a) { return nx::scale(a, -1.7); }));
  ops.push_back(unary_case("add_scalar", [](Var a) { return nx::add_scalar(a, 0.3); }));
  ops.push_back(unary_case("transpose", [](Var a) { return nx::transpose(a); }));
  ops.push_back(unary_case("reshape", [](Var a) { return nx::reshape(a, {a.value().size()}); }));
  ops.push_back(unary_case("relu", [](Var a) { return nx::relu(a); }));
  ops.push_back(unary_case("leaky_relu", [](Var a) { return nx::leaky_relu(a, 0.2); }));
  ops.push_back(unary_case("sigmoid", [](Var a) { return nx::sigmoid(a); }, -3.0, 3.0));
  ops.push_back(unary_case("log", [](Var a) { return nx::log(a); }, 0.2, 2.0));
  ops.push_back(unary_case("square", [](Var a) { return nx::square(a); }));
  ops.push_back(unary_case("clamp", [](Var a) { return nx::clamp(a, -0.5, 0.5); }));
  ops.push_back(unary_case("softmax", [](Var a) { return nx::softmax(a); }, -2.0, 2.0));
  ops.push_back(unary_case("log_softmax", [](Var a) { return nx::log_softmax(a); }, -2.0, 2.0));
  ops.push_back(OpGenerator{"layer_norm", [](std::mt19937_64& rng) {
                              nx::Shape s{rand_dim(rng, 1, 4), rand_dim(rng, 2, 6)};
                              OpCase c{{rp("a", s, rng)}, {}};
                              c.build = projected(rng(), [](Graph&, const std::vector<Var>& v) { return nx::layer_norm(v[0]); });
                              return c;
                            }});
  ops.push_back(unary_case("sum", [](Var a) { return nx::sum(a); }));
  ops.push_back(unary_case("mean", [](Var a) { return nx::mean(a); }));

  ops.push_back(OpGenerator{"matmul", [](std::mt19937_64& rng) {
                              const auto m = rand_dim(rng, 1, 4), k = rand_dim(rng, 1, 4), n = rand_dim(rng, 1, 4);
                              OpCase c{{rp("a", {m, k}, rng), rp("b", {k, n}, rng)}, {}};
                              c.build = projected(rng(), [](Graph&, const std::vector<Var>& v) { return nx::matmul(v[0], v[1]); });
                              return c;
                            }});

  auto conv_case = [](const char* name, bool transposed) {
    return OpGenerator{name, [=](std::mt19937_64& rng) {
                         const std::size_t stride = rand_dim(rng, 1, 2);
                         const std::size_t k = rand_dim(rng, stride, 4);
                         const std::size_t pad = rand_dim(rng, 0, k - 1);
                         const std::size_t h = rand_dim(rng, std::max<std::size_t>(k, 2), 6);
                         const std::size_t w = rand_dim(rng, std::max<std::size_t>(k, 2), 6);
                         const std::size_t cin = rand_dim(rng, 1, 3), cout = rand_dim(rng, 1, 3);
                         OpCase c{{rp("x", {h, w, cin}, rng), rp("w", {k, k, cin, cout}, rng)}, {}};
                         c.build = projected(rng(), [=](Graph&, const std::vector<Var>& v) {
                           return transposed ? nx::conv_transpose2d(v[0], v[1], stride, pad)
                                             : nx::conv2d(v[0], v[1], stride, pad);
                         });
                         return c;
                       }};
  };
  ops.push_back(conv_case("conv2d", false));
  ops.push_back(conv_case("conv_transpose2d", true));

  ops.push_back(OpGenerator{"straight_through", [](std::mt19937_64& rng) {
                              nx::Shape s{rand_dim(rng, 1, 4), rand_dim(rng, 1, 5)};
                              OpCase c{{rp("z", s, rng)}, {}};
                              // Quantisation treated as identity: z_q carries z's value.
                              c.build = projected(rng(), [](Graph&, const std::vector<Var>& v) {
                                return nx::straight_through(v[0], nx::stop_gradient(v[0]));
                              });
                              return c;
                            }});
  ops.push_back(OpGenerator{"gather_rows", [](std::mt19937_64& rng) {
                              const auto rows = rand_dim(rng, 1, 5), d = rand_dim(rng, 1, 4);
                              std::vector<std::size_t> idx(rand_dim(rng, 1, 7));
                              for (auto& i : idx) i = rand_dim(rng, 0, rows - 1);
                              OpCase c{{rp("t", {rows, d}, rng)}, {}};
                              c.build = projected(rng(), [idx](Graph&, const std::vector<Var>& v) {
                                return nx::gather_rows(v[0], idx);
                              });
                              return c;
                            }});
  ops.push_back(OpGenerator{"concat_rows", [](std::mt19937_64& rng) {
                              const auto d = rand_dim(rng, 1, 4);
                              OpCase c{{rp("a", {rand_dim(rng, 1, 3), d}, rng), rp("b", {rand_dim(rng, 1, 3), d}, rng)}, {}};
                              c.build = projected(rng(), [](Graph&, const std::vector<Var>& v) { return nx::concat_rows(v[0], v[1]); });
                              return c;
                            }});
  ops.push_back(OpGenerator{"grouped_attention", [](std::mt19937_64& rng) {
                              const auto group = rand_dim(rng, 1, 4), groups = rand_dim(rng, 1, 3), d = rand_dim(rng, 1, 4);
                              nx::Shape s{group * groups, d};
                              OpCase c{{rp("q", s, rng), rp("k", s, rng), rp("v", s, rng)}, {}};
                              c.build = projected(rng(), [group](Graph&, const std::vector<Var>& v) {
                                return nx::grouped_attention(v[0], v[1], v[2], group);
                              });
                              return c;
                            }});
  return ops;
}

}  // namespace tinysense::testing
