#include "varistep/minimize.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace varistep {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_abs(const std::vector<double>& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

struct Pair {
  std::vector<double> s, y;
  double rho;  // 1 / (s.y)
};

}  // namespace

MinimizeReport minimize_lbfgs(const Objective& f, std::vector<double>& x,
                              const MinimizeOptions& opt) {
  const std::size_t n = x.size();
  MinimizeReport rep;
  std::vector<double> g(n, 0.0);
  double fx = f(x, &g);
  ++rep.evals;
  if (!is_finite(fx)) throw ValidationError("minimize: objective not finite at the start point");
  rep.f0 = fx;
  std::deque<Pair> mem;
  double gamma = 1.0;
  std::vector<double> d(n), xt(n), gnew(n);
  int plateau = 0;  // consecutive steps whose decrease is below roundoff

  for (int it = 0; it < opt.max_iters; ++it) {
    rep.grad_norm = max_abs(g);
    if (rep.grad_norm <= opt.grad_tol) {
      rep.converged = true;
      break;
    }
    // Two-loop recursion: d = -H g.
    d = g;
    std::vector<double> alpha(mem.size());
    for (std::size_t k = mem.size(); k-- > 0;) {
      alpha[k] = mem[k].rho * dot(mem[k].s, d);
      for (std::size_t i = 0; i < n; ++i) d[i] -= alpha[k] * mem[k].y[i];
    }
    for (double& v : d) v *= gamma;
    for (std::size_t k = 0; k < mem.size(); ++k) {
      const double beta = mem[k].rho * dot(mem[k].y, d);
      for (std::size_t i = 0; i < n; ++i) d[i] += (alpha[k] - beta) * mem[k].s[i];
    }
    for (double& v : d) v = -v;
    double gd = dot(g, d);
    // Safeguard: fall back to steepest descent if the direction degraded.
    const double dn = std::sqrt(dot(d, d)), gn = std::sqrt(dot(g, g));
    if (!(gd < -1e-12 * dn * gn)) {
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
      gd = -gn * gn;
      mem.clear();
      gamma = 1.0;
    }
    // Backtracking line search with rejection of infeasible (+inf) probes.
    double t = opt.step0;
    double ft = kInf;
    bool ok = false;
    for (int h = 0; h < opt.max_halvings; ++h) {
      for (std::size_t i = 0; i < n; ++i) xt[i] = x[i] + t * d[i];
      ft = f(xt, nullptr);
      ++rep.evals;
      if (is_finite(ft) && ft <= fx + opt.armijo_c1 * t * gd) {
        ok = true;
        break;
      }
      t *= 0.5;
    }
    if (!ok) {
      if (it == 0) throw LineSearchStall("minimize: no admissible step from the start point");
      rep.stalled = true;
      break;
    }
    // Accept; refresh gradient and curvature memory.
    std::fill(gnew.begin(), gnew.end(), 0.0);
    const double fnew = f(xt, &gnew);
    ++rep.evals;
    if (!is_finite(fnew)) throw NonFiniteGradient("minimize: accepted point lost feasibility");
    Pair p;
    p.s.resize(n);
    p.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      p.s[i] = xt[i] - x[i];
      p.y[i] = gnew[i] - g[i];
    }
    const double sy = dot(p.s, p.y);
    const double sn = std::sqrt(dot(p.s, p.s)), yn = std::sqrt(dot(p.y, p.y));
    if (sy > 1e-12 * sn * yn && yn > 0.0) {
      p.rho = 1.0 / sy;
      gamma = sy / (yn * yn);
      mem.push_back(std::move(p));
      if (static_cast<int>(mem.size()) > opt.history) mem.pop_front();
    }
    const double decrease = fx - fnew;
    x = xt;
    fx = fnew;
    g = gnew;
    ++rep.iters;
    rep.grad_norm = max_abs(g);
    if (rep.grad_norm <= opt.grad_tol) {
      rep.converged = true;
      break;
    }
    // Objective differences at the roundoff floor: no further numerical
    // progress is possible, treat as converged.
    plateau = (decrease <= 1e-14 * (std::abs(fx) + 1.0)) ? plateau + 1 : 0;
    if (plateau >= 2) {
      rep.converged = true;
      break;
    }
  }
  rep.f1 = fx;
  return rep;
}

}  // namespace varistep
