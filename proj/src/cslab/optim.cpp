#include "cslab/optim.hpp"

#include <cmath>

namespace cslab {

Sgd::Sgd(std::vector<Tensor> params, double learning_rate, double momentum,
         double weight_decay)
    : params_(std::move(params)), lr_(learning_rate), momentum_(momentum),
      weight_decay_(weight_decay) {
  if (!(lr_ > 0.0)) throw InvalidArgument("Sgd: learning rate must be positive");
  if (!(momentum_ >= 0.0 && momentum_ < 1.0))
    throw InvalidArgument("Sgd: momentum must be in [0, 1)");
  if (weight_decay_ < 0.0) throw InvalidArgument("Sgd: weight decay must be >= 0");
  velocity_.reserve(params_.size());
  for (const auto& p : params_) {
    if (!p.is_leaf() || !p.requires_grad())
      throw InvalidArgument("Sgd: parameters must be leaves with requires_grad");
    velocity_.emplace_back(p.size(), 0.0);
  }
}

void Sgd::set_learning_rate(double lr) {
  if (!(lr > 0.0)) throw InvalidArgument("Sgd: learning rate must be positive");
  lr_ = lr;
}

void Sgd::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) throw InvalidArgument("Sgd::step: parameter missing gradient");
    const auto g = p.grad();
    auto pv = p.mutable_data();
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = momentum_ * v[i] + (g[i] + weight_decay_ * pv[i]);
      pv[i] -= lr_ * v[i];
      if (!std::isfinite(pv[i])) throw NumericError("Sgd::step: non-finite parameter update");
    }
  }
  zero_grad();
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace cslab
