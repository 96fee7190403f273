#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "duo/error.hpp"

namespace duo::quad {

struct Result {
  double value = 0.0;
  double error_estimate = 0.0;
  std::size_t evaluations = 0;
  bool converged = true;
};

struct Options {
  double rel_tol = 1e-8;
  double abs_floor = 0.0;
  std::size_t initial_panels = 32;
  int max_depth = 40;
};

/// Adaptive Simpson on [a, b].
///
/// A composite Simpson pass over `initial_panels` panels estimates the L1 norm
/// of f; the absolute target is rel_tol * L1 (floored at abs_floor) and is
/// split across panels by width. A panel is accepted when |S2 - S1| <= 15 tol,
/// and contributes the Richardson-corrected S2 + (S2 - S1) / 15.
template <class F>
Result adaptive_simpson(F&& f, double a, double b, const Options& opt = {}) {
  struct Panel {
    double a, m, b, fa, fm, fb, whole, tol;
    int depth;
  };

  Result out;
  const std::size_t n0 = opt.initial_panels == 0 ? 1 : opt.initial_panels;
  const double width = (b - a) / static_cast<double>(n0);

  std::vector<double> nodes(2 * n0 + 1);
  for (std::size_t i = 0; i <= 2 * n0; ++i) {
    const double x = (i == 2 * n0) ? b : a + 0.5 * width * static_cast<double>(i);
    nodes[i] = f(x);
  }
  out.evaluations = nodes.size();

  double l1 = 0.0;
  for (std::size_t p = 0; p < n0; ++p) {
    l1 += width / 6.0 * (std::fabs(nodes[2 * p]) + 4.0 * std::fabs(nodes[2 * p + 1]) + std::fabs(nodes[2 * p + 2]));
  }
  const double target = std::fmax(opt.rel_tol * l1, opt.abs_floor);

  std::vector<Panel> stack;
  stack.reserve(128);
  for (std::size_t p = 0; p < n0; ++p) {
    const double pa = a + width * static_cast<double>(p);
    const double pb = (p + 1 == n0) ? b : pa + width;
    const double fa = nodes[2 * p], fm = nodes[2 * p + 1], fb = nodes[2 * p + 2];
    stack.push_back({pa, 0.5 * (pa + pb), pb, fa, fm, fb, (pb - pa) / 6.0 * (fa + 4.0 * fm + fb),
                     target / static_cast<double>(n0), 0});
  }

  while (!stack.empty()) {
    const Panel p = stack.back();
    stack.pop_back();
    const double lm = 0.5 * (p.a + p.m);
    const double rm = 0.5 * (p.m + p.b);
    const double flm = f(lm);
    const double frm = f(rm);
    out.evaluations += 2;
    const double left = (p.m - p.a) / 6.0 * (p.fa + 4.0 * flm + p.fm);
    const double right = (p.b - p.m) / 6.0 * (p.fm + 4.0 * frm + p.fb);
    const double refined = left + right;
    const double diff = refined - p.whole;
    if (std::fabs(diff) <= 15.0 * p.tol || p.depth >= opt.max_depth || !std::isfinite(diff)) {
      if (p.depth >= opt.max_depth && std::fabs(diff) > 15.0 * p.tol) out.converged = false;
      out.value += refined + diff / 15.0;
      out.error_estimate += std::fabs(diff) / 15.0;
      continue;
    }
    stack.push_back({p.a, lm, p.m, p.fa, flm, p.fm, left, 0.5 * p.tol, p.depth + 1});
    stack.push_back({p.m, rm, p.b, p.fm, frm, p.fb, right, 0.5 * p.tol, p.depth + 1});
  }
  if (!std::isfinite(out.value)) out.converged = false;
  return out;
}

/// adaptive_simpson that throws NumericError instead of returning an
/// unconverged result.
template <class F>
double integrate(F&& f, double a, double b, const Options& opt, const char* what) {
  Result r = adaptive_simpson(f, a, b, opt);
  if (!r.converged) throw NumericError(what, r.error_estimate);
  return r.value;
}

}  // namespace duo::quad
