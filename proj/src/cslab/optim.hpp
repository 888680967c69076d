#pragma once

#include <vector>

#include "cslab/tensor.hpp"

namespace cslab {

// SGD with momentum and weight decay:
//   v <- momentum * v + (g + weight_decay * p)
//   p <- p - lr * v
// Gradients are cleared after each step.
class Sgd {
public:
  Sgd(std::vector<Tensor> params, double learning_rate, double momentum = 0.9,
      double weight_decay = 0.0);

  void step();
  void zero_grad();

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr);
  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
  double weight_decay_;
};

}  // namespace cslab
