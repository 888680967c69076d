#pragma once

// Finite-difference gradient checks for every differentiable op, shared by
// the unit tests and the acceptance suite.

#include <string>
#include <utility>
#include <vector>

#include "cslab/gradcheck.hpp"
#include "cslab/rng.hpp"
#include "cslab/tensor.hpp"

namespace testsupport {

struct OpCheck {
  std::string name;
  double max_rel_error;
};

// Checks the gradient of `f` w.r.t. a leaf filled with draws from
// uniform(lo, hi) offset away from kinks.
inline double check_op(const std::function<cslab::Tensor(const cslab::Tensor&)>& f,
                       const cslab::Shape& shape, cslab::Rng& rng,
                       double lo = -1.0, double hi = 1.0) {
  cslab::Tensor x = cslab::Tensor::uniform(shape, lo, hi, rng);
  auto report = cslab::finite_difference_check(f, x, 1e-6, 1.0);
  return report.max_rel_error;
}

inline std::vector<OpCheck> run_all_op_gradchecks(std::uint64_t seed) {
  using namespace cslab;
  Rng rng(seed);
  std::vector<OpCheck> out;
  auto record = [&](const char* name, double err) { out.push_back({name, err}); };

  {  // add / sub / mul / div with broadcasting
    Tensor b = Tensor::uniform({3}, 0.5, 1.5, rng, true);
    record("add", check_op([&](const Tensor& x) { return sum(add(x, b)); }, {2, 4, 3}, rng));
    record("sub", check_op([&](const Tensor& x) { return sum(sub(x, b)); }, {2, 4, 3}, rng));
    record("mul", check_op([&](const Tensor& x) { return sum(mul(x, b)); }, {2, 4, 3}, rng));
    record("div", check_op([&](const Tensor& x) { return sum(div(x, b)); }, {2, 4, 3}, rng, 0.5, 1.5));
    // gradient w.r.t. the broadcast side
    Tensor a = Tensor::uniform({2, 4, 3}, 0.5, 1.5, rng);
    record("div_rhs", check_op([&](const Tensor& x) { return sum(div(a, x)); }, {3}, rng, 0.5, 1.5));
  }
  record("scalar_mul", check_op([](const Tensor& x) { return sum(scalar_mul(x, 1.7)); }, {5}, rng));
  record("scalar_add", check_op([](const Tensor& x) { return sum(scalar_add(x, -0.3)); }, {5}, rng));
  // keep values away from the relu kink
  record("relu_pos", check_op([](const Tensor& x) { return sum(relu(x)); }, {6}, rng, 0.2, 1.0));
  record("relu_neg", check_op([](const Tensor& x) { return sum(relu(x)); }, {6}, rng, -1.0, -0.2));
  record("reshape", check_op([](const Tensor& x) { return sum(mul(reshape(x, {6}), reshape(x, {6}))); }, {2, 3}, rng));
  {
    Tensor b = Tensor::uniform({4, 3}, -1.0, 1.0, rng, true);
    record("matmul", check_op([&](const Tensor& x) { return sum(matmul(x, b)); }, {2, 4}, rng));
    Tensor a = Tensor::uniform({2, 4}, -1.0, 1.0, rng);
    record("matmul_rhs", check_op([&](const Tensor& x) { return sum(matmul(a, x)); }, {4, 3}, rng));
  }
  {
    Tensor w = Tensor::uniform({3, 2, 3, 3}, -0.5, 0.5, rng, true);
    auto by_x = [&](const Tensor& x) { return sum(conv2d(x, w, 1, 1)); };
    record("conv2d_x", check_op(by_x, {2, 2, 5, 5}, rng));
    Tensor x0 = Tensor::uniform({2, 2, 5, 5}, -1.0, 1.0, rng);
    auto by_w = [&](const Tensor& w2) { return sum(conv2d(x0, w2, 2, 0)); };
    record("conv2d_w_stride2", check_op(by_w, {3, 2, 3, 3}, rng));
  }
  record("avgpool2d", check_op([](const Tensor& x) { return sum(avgpool2d(x, 2)); }, {1, 2, 4, 4}, rng));
  record("maxpool2d", check_op([](const Tensor& x) { return sum(maxpool2d(x, 2)); }, {1, 2, 4, 4}, rng));
  record("spatial_mean", check_op([](const Tensor& x) { return sum(spatial_mean(x)); }, {2, 3, 4, 4}, rng));
  record("sum", check_op([](const Tensor& x) { return sum(mul(x, x)); }, {7}, rng));
  record("mean", check_op([](const Tensor& x) { return mean(mul(x, x)); }, {7}, rng));
  record("sum_axis0", check_op([](const Tensor& x) { return sum(mul(sum_axis0(x), sum_axis0(x))); }, {3, 4}, rng));
  record("max_axis0", check_op([](const Tensor& x) { return sum(max_axis0(x)); }, {3, 4}, rng));
  {
    Tensor gamma = Tensor::uniform({3}, 0.5, 1.5, rng, true);
    Tensor beta = Tensor::uniform({3}, -0.5, 0.5, rng, true);
    auto run_bn = [&](const Tensor& x, bool training) {
      BatchNormBuffers buf{std::vector<double>(3, 0.1), std::vector<double>(3, 0.9)};
      return sum(mul(batchnorm(x, gamma, beta, buf, training), Tensor::full(x.shape(), 0.5)));
    };
    record("batchnorm_train_x",
           check_op([&](const Tensor& x) { return run_bn(x, true); }, {4, 3, 2, 2}, rng));
    record("batchnorm_eval_x",
           check_op([&](const Tensor& x) { return run_bn(x, false); }, {4, 3, 2, 2}, rng));
    Tensor x0 = Tensor::uniform({4, 3, 2, 2}, -1.0, 1.0, rng);
    record("batchnorm_gamma", check_op(
        [&](const Tensor& g) {
          BatchNormBuffers buf{std::vector<double>(3, 0.1), std::vector<double>(3, 0.9)};
          return sum(batchnorm(x0, g, beta, buf, true));
        }, {3}, rng, 0.5, 1.5));
    record("batchnorm_beta", check_op(
        [&](const Tensor& b) {
          BatchNormBuffers buf{std::vector<double>(3, 0.1), std::vector<double>(3, 0.9)};
          return sum(mul(batchnorm(x0, gamma, b, buf, true), Tensor::full(x0.shape(), 0.3)));
        }, {3}, rng));
    record("batchnorm_rank2", check_op(
        [&](const Tensor& x) {
          BatchNormBuffers buf{std::vector<double>(3, 0.0), std::vector<double>(3, 1.0)};
          return sum(mul(batchnorm(x, gamma, beta, buf, true), Tensor::full(x.shape(), 0.7)));
        }, {5, 3}, rng));
  }
  {
    std::vector<int> labels = {0, 2, 1};
    record("softmax_cross_entropy",
           check_op([&](const Tensor& x) { return softmax_cross_entropy(x, labels); }, {3, 4}, rng));
  }
  return out;
}

}  // namespace testsupport
