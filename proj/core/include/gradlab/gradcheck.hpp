#pragma once

#include <string>
#include <vector>

#include "gradlab/autodiff.hpp"

namespace gradlab::check {

/// |a-b| / max(1, |a|, |b|).
double scale_aware_rel_err(double a, double b);

/// Central finite differences (step h) over every parameter coordinate.
ad::Gradient finite_difference_gradient(const ad::ProgramFn& f, const ad::ParamMap& params,
                                        const ad::ParamMap& inputs, double h);

struct CoordinateCheck {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
  bool skipped_kink = false;
};

struct GradcheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  bool passed = false;
  std::vector<CoordinateCheck> coordinates;
};

/// Compares reverse-mode gradients against central differences coordinate by
/// coordinate. A coordinate whose one-sided slopes disagree by more than
/// kink_tol (relative) sits next to a kink and is excluded rather than
/// allowed to fail spuriously.
GradcheckResult gradcheck(const ad::ProgramFn& f, const ad::ParamMap& params,
                          const ad::ParamMap& inputs, double h, double tol,
                          double kink_tol = 1e-3);

}  // namespace gradlab::check
