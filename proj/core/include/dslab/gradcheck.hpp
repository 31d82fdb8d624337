#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dslab/rng.hpp"
#include "dslab/tensor.hpp"

namespace dslab {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // human-readable location of the worst element
  bool ok(double tol) const { return max_rel_err <= tol; }
};

// Compares reverse-mode gradients of scalar s = sum_i c_i * fn(inputs)_i
// against central finite differences, for every element of every input that
// requires grad. The coefficients c are drawn from rng, so the upstream
// gradient is non-uniform and sign-mixed; a uniform seed would let certain
// transposition bugs cancel out.
GradCheckResult check_gradients(
    const std::function<Tensor(const std::vector<Tensor>&)>& fn,
    std::vector<Tensor> inputs, Rng& rng, double eps = 1e-4,
    double tol = 1e-4);

struct GradCheckCase {
  std::string name;
  std::function<GradCheckResult(Rng&)> run;  // builds inputs and checks
};

// Covers every differentiable op plus small composites (an MLP chain, a
// concat-growth block, a residual block with projection shortcut).
const std::vector<GradCheckCase>& standard_gradcheck_cases();

// Random helpers shared by the checks.
Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0);
// Magnitudes in [margin, 1] with random signs; keeps inputs away from the
// relu kink where finite differences are invalid.
Tensor random_tensor_away_from_zero(Shape shape, Rng& rng, double margin = 0.05);

}  // namespace dslab
