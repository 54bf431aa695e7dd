#include "gradlab/gradcheck.hpp"

#include <cmath>

namespace gradlab::check {

double scale_aware_rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

namespace {

double eval_at(const ad::ProgramFn& f, ad::ParamMap& params, const ad::ParamMap& inputs,
               const std::string& name, std::size_t index, double value) {
  double saved = params.at(name)[index];
  params.at(name)[index] = value;
  double out = ad::eval_value(f, params, inputs);
  params.at(name)[index] = saved;
  return out;
}

}  // namespace

ad::Gradient finite_difference_gradient(const ad::ProgramFn& f, const ad::ParamMap& params,
                                        const ad::ParamMap& inputs, double h) {
  ad::ParamMap work = params;
  ad::Gradient g;
  for (const auto& [name, t] : params) {
    Tensor dt = Tensor::zeros(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
      double x = t[i];
      double fp = eval_at(f, work, inputs, name, i, x + h);
      double fm = eval_at(f, work, inputs, name, i, x - h);
      dt[i] = (fp - fm) / (2.0 * h);
    }
    g.by_parameter.emplace(name, std::move(dt));
  }
  return g;
}

GradcheckResult gradcheck(const ad::ProgramFn& f, const ad::ParamMap& params,
                          const ad::ParamMap& inputs, double h, double tol, double kink_tol) {
  ad::Gradient analytic = ad::grad(f, params, inputs);
  ad::ParamMap work = params;
  double f0 = ad::eval_value(f, params, inputs);

  GradcheckResult result;
  result.passed = true;
  for (const auto& [name, t] : params) {
    const Tensor& a = analytic.by_parameter.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      double x = t[i];
      double fp = eval_at(f, work, inputs, name, i, x + h);
      double fm = eval_at(f, work, inputs, name, i, x - h);
      double fwd = (fp - f0) / h;
      double bwd = (f0 - fm) / h;

      CoordinateCheck c;
      c.param = name;
      c.index = i;
      c.analytic = a[i];
      c.numeric = (fp - fm) / (2.0 * h);
      if (scale_aware_rel_err(fwd, bwd) > kink_tol) {
        c.skipped_kink = true;
        result.skipped_kinks += 1;
      } else {
        c.rel_err = scale_aware_rel_err(c.analytic, c.numeric);
        result.max_rel_err = std::max(result.max_rel_err, c.rel_err);
        result.checked += 1;
        if (c.rel_err >= tol) result.passed = false;
      }
      result.coordinates.push_back(std::move(c));
    }
  }
  return result;
}

}  // namespace gradlab::check
