#pragma once

#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "tinysense/numerics/autodiff.hpp"

namespace tinysense::numerics {

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& param)
      : std::runtime_error("non-finite gradient for parameter '" + param + "'"), param_(param) {}
  const std::string& parameter() const noexcept { return param_; }

 private:
  std::string param_;
};

/// First-order optimizer over a fixed parameter set. Parameters absent from
/// the gradient map are left untouched (their state does not advance).
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::span<Parameter* const> params, const GradientMap& grads) = 0;
};

/// p <- p - lr * v,  v <- momentum * v + g.
class SgdMomentum final : public Optimizer {
 public:
  SgdMomentum(double lr, double momentum);
  void step(std::span<Parameter* const> params, const GradientMap& grads) override;

 private:
  double lr_;
  double momentum_;
  std::unordered_map<const Parameter*, Tensor> velocity_;
};

class Adam final : public Optimizer {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<Parameter* const> params, const GradientMap& grads) override;

 private:
  struct State {
    Tensor m, v;
    long t = 0;
  };
  double lr_, beta1_, beta2_, eps_;
  std::unordered_map<const Parameter*, State> state_;
};

enum class OptimizerKind { sgd, adam };

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr, double momentum);

}  // namespace tinysense::numerics
