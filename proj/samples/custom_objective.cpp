// Build a differentiable objective on the tape and check its gradient.
#include "gpda/gpda.hpp"

#include <cstdio>

int main() {
  using namespace gpda;

  ParamVector params;
  params.add_segment("w", 1, 3);
  params.values()[0] = 0.5;
  params.values()[1] = -1.0;
  params.values()[2] = 2.0;

  Matrix X(4, 3);
  X << 1, 0, 2, 0, 1, 1, 3, 1, 0, 1, 1, 1;

  // logistic loss sum_i log(1 + exp(-x_i . w)), written as logsumexp over [0, -x_i . w]
  auto objective = [&](Tape& t) {
    Var margins = ops::matmul_nt(t.constant(X), t.param("w"));
    Var pairs = ops::matmul(ops::scale(margins, -1.0), t.constant(Matrix(Eigen::RowVector2d(0, 1))));
    return ops::sum(ops::group_logsumexp(pairs, 2));
  };

  auto [value, grad] = value_and_grad(objective, params);
  const Gradient fd = finite_diff_grad(objective, params, 1e-5);
  std::printf("loss %.6f\n", value);
  for (std::size_t i = 0; i < grad.size(); ++i) std::printf("  dw%zu  tape % .8f  fd % .8f\n", i, grad[i], fd[i]);
  std::printf("relative error %.2e\n", relative_error(grad.values(), fd.values()));
}
