#pragma once

#include "dualbound/estimand.hpp"

namespace dualbound {

/// P(Y1 <= y1_star, Y0 <= y0_star): joint-tail CDF (Linear, Scalar).
EstimandSpec make_fh_cdf(double y0_star, double y1_star);

/// Var(Y1 - Y0): Generalized with f = (y1-y0)^2, z_w = y_w,
/// h(a,b,c) = a - (b-c)^2.
EstimandSpec make_var_ite();

/// P(Y1 - Y0 < t): the ITE CDF at a fixed point (Linear, Scalar).
EstimandSpec make_makarov_cdf(double t);

/// Selection-adjusted mean contrast E[Y1 - Y0 | S0 = 1] ("trimming bounds").
/// With the monotone-selection constraint the denominator E[S0] is identified
/// and the spec is Generalized with h(a,.,c) = a/c; without it the estimand
/// routes through the Quasilinear machinery.
EstimandSpec make_lee(bool monotone);

/// E[max(Y1 - Y0, 0)] (Linear, Scalar).
EstimandSpec make_positive_effect();

/// P(Y1=1, Y0=0) / P(Y0=0) for binary outcomes: Generalized with z0 = y0 and
/// h(a,.,c) = a / (1 - c).
EstimandSpec make_persuasion();

/// E[Y1 - Y0 | Y0 <= threshold]: Quasilinear with the family
/// f_c(y0,y1) = (y1 - y0 - c) 1{y0 <= threshold}.
EstimandSpec make_conditional_effect(double threshold);

/// The alpha_q quantile of Y1 - Y0: Quasilinear with the family
/// f_c(y0,y1) = alpha_q - 1{y1 - y0 < c}.
EstimandSpec make_ite_quantile(double alpha_q);

/// Construction-time sanity probes: Generalized h nondecreasing in its first
/// argument on a coarse grid; Compound cost inert in y on the s=0 stratum.
/// Throws std::invalid_argument on violation.
void validate_estimand(const EstimandSpec& spec);

}  // namespace dualbound
