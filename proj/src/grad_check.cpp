#include "partsmamba/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace partsmamba {

namespace {

double evaluate(const Objective& f) {
  Tape tape(false);
  Var out = f(tape);
  if (out.value().numel() != 1) throw ShapeError("grad_check objective must be scalar");
  return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const Objective& f, std::vector<Param*> params, double eps, double tol,
                           double denom_floor) {
  GradCheckReport report;

  std::vector<Tensor> analytic;
  try {
    Tape tape;
    Var out = f(tape);
    tape.backward(out);
    for (Param* p : params) analytic.push_back(tape.grad(tape.param(*p)));
  } catch (const NumericError& e) {
    std::string names;
    for (Param* p : params) names += (names.empty() ? "" : ", ") + p->name;
    report.failure = std::string("non-finite objective at the unperturbed point (") + names +
                     "): " + e.what();
    if (!params.empty()) report.worst_param = params.front()->name;
    return report;
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double orig = p.value[i];
      double plus = 0.0, minus = 0.0;
      try {
        p.value[i] = orig + eps;
        plus = evaluate(f);
        p.value[i] = orig - eps;
        minus = evaluate(f);
      } catch (const NumericError& e) {
        p.value[i] = orig;
        report.failure = "non-finite objective perturbing " + p.name + ": " + e.what();
        report.worst_param = p.name;
        report.worst_index = i;
        return report;
      }
      p.value[i] = orig;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        report.failure = "non-finite objective perturbing " + p.name;
        report.worst_param = p.name;
        report.worst_index = i;
        return report;
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), denom_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_index = i;
      }
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace partsmamba
