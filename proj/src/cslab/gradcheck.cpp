#include "cslab/gradcheck.hpp"

#include <cmath>

namespace cslab {

GradCheckReport finite_difference_check(
    const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
    double step, double tol, const std::vector<std::size_t>& indices) {
  if (!(step > 0.0)) throw InvalidArgument("finite_difference_check: step must be positive");

  Tensor probe = x.detached_copy(/*requires_grad=*/true);
  Tensor out = f(probe);
  if (out.size() != 1)
    throw ShapeError("finite_difference_check: f must be scalar-valued");
  if (!std::isfinite(out.item()))
    throw NumericError("finite_difference_check: non-finite f(x)");
  backward(out);
  std::vector<double> analytic(probe.grad().begin(), probe.grad().end());

  std::vector<std::size_t> todo = indices;
  if (todo.empty()) {
    todo.resize(probe.size());
    for (std::size_t i = 0; i < todo.size(); ++i) todo[i] = i;
  }

  Tensor nudged = x.detached_copy(/*requires_grad=*/false);
  auto nd = nudged.mutable_data();
  GradCheckReport report;
  for (std::size_t i : todo) {
    if (i >= nd.size()) throw InvalidArgument("finite_difference_check: index out of range");
    const double saved = nd[i];
    nd[i] = saved + step;
    const double f_plus = f(nudged).item();
    nd[i] = saved - step;
    const double f_minus = f(nudged).item();
    nd[i] = saved;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
      throw NumericError("finite_difference_check: non-finite f at probe point");
    const double numeric = (f_plus - f_minus) / (2.0 * step);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
      report.analytic_at_worst = a;
      report.numeric_at_worst = numeric;
    }
  }
  report.pass = report.max_rel_error <= tol;
  return report;
}

}  // namespace cslab
