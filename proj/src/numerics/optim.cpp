#include "tinysense/numerics/optim.hpp"

#include <cmath>

namespace tinysense::numerics {

namespace {
const Tensor* find_grad(const GradientMap& grads, const Parameter* p) {
  auto it = grads.find(p);
  if (it == grads.end()) return nullptr;
  if (it->second.shape() != p->value.shape()) shape_mismatch("optimizer", p->value.shape(), it->second.shape());
  if (!it->second.all_finite()) throw NonFiniteGradient(p->name);
  return &it->second;
}
}  // namespace

SgdMomentum::SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  if (!(lr > 0.0)) throw std::invalid_argument("sgd: learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("sgd: momentum must be in [0,1)");
}

void SgdMomentum::step(std::span<Parameter* const> params, const GradientMap& grads) {
  // Validate everything first so a bad gradient leaves all parameters intact.
  for (Parameter* p : params) find_grad(grads, p);
  for (Parameter* p : params) {
    const Tensor* g = find_grad(grads, p);
    if (!g) continue;
    auto [it, fresh] = velocity_.try_emplace(p, Tensor(p->value.shape(), 0.0));
    Tensor& v = it->second;
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = momentum_ * v[i] + (*g)[i];
      p->value[i] -= lr_ * v[i];
    }
  }
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam: learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("adam: betas must be in [0,1)");
  }
}

void Adam::step(std::span<Parameter* const> params, const GradientMap& grads) {
  for (Parameter* p : params) find_grad(grads, p);
  for (Parameter* p : params) {
    const Tensor* g = find_grad(grads, p);
    if (!g) continue;
    auto [it, fresh] = state_.try_emplace(p, State{Tensor(p->value.shape(), 0.0), Tensor(p->value.shape(), 0.0), 0});
    State& s = it->second;
    ++s.t;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
    for (std::size_t i = 0; i < s.m.size(); ++i) {
      s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * (*g)[i];
      s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * (*g)[i] * (*g)[i];
      p->value[i] -= lr_ * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr, double momentum) {
  if (kind == OptimizerKind::adam) return std::make_unique<Adam>(lr, momentum);
  return std::make_unique<SgdMomentum>(lr, momentum);
}

}  // namespace tinysense::numerics
