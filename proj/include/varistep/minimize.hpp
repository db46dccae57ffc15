// Deterministic limited-memory quasi-Newton descent for the per-step
// incremental problems. The objective may return +infinity outside its
// feasible set (the line search treats such probes as failed and backtracks),
// so hard constraints enter through the objective itself.
#pragma once

#include <functional>
#include <vector>

#include "varistep/common.hpp"

namespace varistep {

// f(x, grad): returns the objective value; when grad != nullptr the point is
// guaranteed feasible (finite value) and *grad must be filled (same size as x).
using Objective = std::function<double(const std::vector<double>&, std::vector<double>*)>;

struct MinimizeOptions {
  int max_iters = 500;
  double grad_tol = 1e-8;   // converged when max |g_i| <= grad_tol
  int history = 10;         // quasi-Newton memory
  double armijo_c1 = 1e-4;
  int max_halvings = 60;
  double step0 = 1.0;
};

struct MinimizeReport {
  int iters = 0;
  int evals = 0;
  double f0 = 0;         // objective at entry
  double f1 = 0;         // objective at exit
  double grad_norm = 0;  // max-norm of the gradient at exit
  bool converged = false;
  bool stalled = false;  // line search exhausted after progress was made
};

// Minimizes in place. Throws ValidationError for an infeasible start and
// LineSearchStall if the very first line search fails (no descent possible).
MinimizeReport minimize_lbfgs(const Objective& f, std::vector<double>& x,
                              const MinimizeOptions& opt = {});

}  // namespace varistep
