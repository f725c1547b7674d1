#include "dualbound/estimand_library.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dualbound {

namespace {

// Wrap a plain pair cost into the covariate-taking signature.
std::function<double(const OutcomePoint&, const OutcomePoint&, const Eigen::VectorXd&)> pair_cost(
    std::function<double(const OutcomePoint&, const OutcomePoint&)> f) {
  return [f = std::move(f)](const OutcomePoint& y0, const OutcomePoint& y1,
                            const Eigen::VectorXd&) { return f(y0, y1); };
}

}  // namespace

void validate_estimand(const EstimandSpec& spec) {
  if (!spec.cost_fn && spec.kind != EstimandSpec::Kind::Quasilinear)
    throw std::invalid_argument("validate_estimand: missing cost function");
  if (spec.kind == EstimandSpec::Kind::Generalized) {
    if (!spec.h || !spec.grad_h)
      throw std::invalid_argument("validate_estimand: Generalized kind needs h and grad_h");
    // h must be nondecreasing in its first argument: coarse finite-difference
    // probe over a grid of plausible (beta, kappa1, kappa0) values.
    for (double b : {-2.0, -0.5, 0.0, 0.7, 2.0})
      for (double k1 : {-1.0, 0.0, 0.8})
        for (double k0 : {-1.0, 0.1, 0.8}) {
          double step = 1e-4;
          double lo, hi;
          try {
            lo = spec.h(b - step, k1, k0);
            hi = spec.h(b + step, k1, k0);
          } catch (const std::exception&) {
            continue;  // outside the map's domain; skip the probe point
          }
          if (hi < lo - 1e-10) {
            std::ostringstream msg;
            msg << "validate_estimand: h decreases in beta near (" << b << "," << k1 << "," << k0
                << ")";
            throw std::invalid_argument(msg.str());
          }
        }
  }
  if (spec.outcome_shape == EstimandSpec::OutcomeShape::Compound && spec.cost_fn) {
    // The unselected stratum's y placeholder must be inert in the cost on
    // every constraint-feasible cell (cells that violate a constraint carry
    // no mass in the true coupling, so the placeholder there is immaterial).
    Eigen::VectorXd x = Eigen::VectorXd::Zero(0);
    auto feasible = [&](const OutcomePoint& y0, const OutcomePoint& y1) {
      for (const auto& cf : spec.constraints)
        if (cf.evaluator(y0, y1) != 0.0) return false;
      return true;
    };
    for (double ya : {-1.0, 0.0, 2.5})
      for (double yb : {-0.3, 1.7})
        for (int so : {0, 1}) {
          OutcomePoint other = OutcomePoint::with_selection(ya, so);
          OutcomePoint p0 = OutcomePoint::with_selection(0.0, 0);
          OutcomePoint p1 = OutcomePoint::with_selection(yb, 0);
          if (feasible(p0, other) && feasible(p1, other) &&
              std::abs(spec.cost_fn(p0, other, x) - spec.cost_fn(p1, other, x)) > 1e-12)
            throw std::invalid_argument(
                "validate_estimand: cost must be constant in y within the s=0 stratum");
          if (feasible(other, p0) && feasible(other, p1) &&
              std::abs(spec.cost_fn(other, p0, x) - spec.cost_fn(other, p1, x)) > 1e-12)
            throw std::invalid_argument(
                "validate_estimand: cost must be constant in y within the s=0 stratum");
        }
  }
}

EstimandSpec make_fh_cdf(double y0_star, double y1_star) {
  if (!std::isfinite(y0_star) || !std::isfinite(y1_star))
    throw std::invalid_argument("make_fh_cdf: thresholds must be finite");
  EstimandSpec spec;
  spec.label = "fh_cdf";
  spec.cost_fn = pair_cost([y0_star, y1_star](const OutcomePoint& y0, const OutcomePoint& y1) {
    return (y1.y <= y1_star && y0.y <= y0_star) ? 1.0 : 0.0;
  });
  validate_estimand(spec);
  return spec;
}

EstimandSpec make_var_ite() {
  EstimandSpec spec;
  spec.label = "var_ite";
  spec.kind = EstimandSpec::Kind::Generalized;
  spec.cost_fn = pair_cost([](const OutcomePoint& y0, const OutcomePoint& y1) {
    double d = y1.y - y0.y;
    return d * d;
  });
  spec.h = [](double a, double b, double c) { return a - (b - c) * (b - c); };
  spec.grad_h = [](double, double b, double c) {
    return Eigen::Vector3d(1.0, -2.0 * (b - c), 2.0 * (b - c));
  };
  spec.z0 = [](const OutcomePoint& y, const Eigen::VectorXd&) { return y.y; };
  spec.z1 = [](const OutcomePoint& y, const Eigen::VectorXd&) { return y.y; };
  spec.uses_z0 = spec.uses_z1 = true;
  validate_estimand(spec);
  return spec;
}

EstimandSpec make_makarov_cdf(double t) {
  if (!std::isfinite(t)) throw std::invalid_argument("make_makarov_cdf: t must be finite");
  EstimandSpec spec;
  spec.label = "makarov_cdf";
  spec.cost_fn = pair_cost([t](const OutcomePoint& y0, const OutcomePoint& y1) {
    return (y1.y - y0.y < t) ? 1.0 : 0.0;
  });
  validate_estimand(spec);
  return spec;
}

EstimandSpec make_lee(bool monotone) {
  EstimandSpec spec;
  spec.label = monotone ? "lee_monotone" : "lee";
  spec.outcome_shape = EstimandSpec::OutcomeShape::Compound;
  auto f = [](const OutcomePoint& y0, const OutcomePoint& y1) {
    return (y1.y - y0.y) * (y0.s == 1 ? 1.0 : 0.0);
  };
  spec.cost_fn = pair_cost(f);
  if (monotone) {
    spec.kind = EstimandSpec::Kind::Generalized;
    spec.constraints.push_back({[](const OutcomePoint& y0, const OutcomePoint& y1) {
                                  return (y0.s > y1.s) ? 1.0 : 0.0;
                                },
                                "monotone_selection"});
    spec.h = [](double a, double, double c) {
      if (!(c > 1e-10)) throw std::runtime_error("lee: selection probability is degenerate");
      return a / c;
    };
    spec.grad_h = [](double a, double, double c) {
      if (!(c > 1e-10)) throw std::runtime_error("lee: selection probability is degenerate");
      return Eigen::Vector3d(1.0 / c, 0.0, -a / (c * c));
    };
    spec.z0 = [](const OutcomePoint& y, const Eigen::VectorXd&) {
      return y.s == 1 ? 1.0 : 0.0;
    };
    spec.uses_z0 = true;
  } else {
    // Without monotonicity the conditioning event is {S1 = S0 = 1}, so the
    // family member is f_c = (y1 - y0 - c) 1{s1 = s0 = 1}; theta <= c iff the
    // lower bound on E[f_c] is <= 0.
    spec.kind = EstimandSpec::Kind::Quasilinear;
    spec.cost_fn = pair_cost([](const OutcomePoint& y0, const OutcomePoint& y1) {
      return (y1.y - y0.y) * ((y0.s == 1 && y1.s == 1) ? 1.0 : 0.0);
    });
    spec.family = [](double c) {
      EstimandSpec member;
      member.label = "lee_family";
      member.outcome_shape = EstimandSpec::OutcomeShape::Compound;
      member.cost_fn = pair_cost([c](const OutcomePoint& y0, const OutcomePoint& y1) {
        return (y1.y - y0.y - c) * ((y0.s == 1 && y1.s == 1) ? 1.0 : 0.0);
      });
      validate_estimand(member);
      return member;
    };
  }
  validate_estimand(spec);
  return spec;
}

EstimandSpec make_positive_effect() {
  EstimandSpec spec;
  spec.label = "positive_effect";
  spec.cost_fn = pair_cost([](const OutcomePoint& y0, const OutcomePoint& y1) {
    return std::max(y1.y - y0.y, 0.0);
  });
  validate_estimand(spec);
  return spec;
}

EstimandSpec make_persuasion() {
  EstimandSpec spec;
  spec.label = "persuasion";
  spec.kind = EstimandSpec::Kind::Generalized;
  spec.cost_fn = pair_cost([](const OutcomePoint& y0, const OutcomePoint& y1) {
    return (y1.y == 1.0 && y0.y == 0.0) ? 1.0 : 0.0;
  });
  spec.h = [](double a, double, double c) {
    if (1.0 - c < 1e-8)
      throw std::runtime_error("persuasion: P(Y0 = 0) is degenerate (denominator near zero)");
    return a / (1.0 - c);
  };
  spec.grad_h = [](double a, double, double c) {
    if (1.0 - c < 1e-8)
      throw std::runtime_error("persuasion: P(Y0 = 0) is degenerate (denominator near zero)");
    double d = 1.0 - c;
    return Eigen::Vector3d(1.0 / d, 0.0, a / (d * d));
  };
  spec.z0 = [](const OutcomePoint& y, const Eigen::VectorXd&) { return y.y; };
  spec.uses_z0 = true;
  validate_estimand(spec);
  return spec;
}

EstimandSpec make_conditional_effect(double threshold) {
  if (!std::isfinite(threshold))
    throw std::invalid_argument("make_conditional_effect: threshold must be finite");
  EstimandSpec spec;
  spec.label = "conditional_effect";
  spec.kind = EstimandSpec::Kind::Quasilinear;
  spec.family = [threshold](double c) {
    EstimandSpec member;
    member.label = "conditional_effect_family";
    member.cost_fn = pair_cost([threshold, c](const OutcomePoint& y0, const OutcomePoint& y1) {
      return y0.y <= threshold ? (y1.y - y0.y - c) : 0.0;
    });
    return member;
  };
  validate_estimand(spec);
  return spec;
}

EstimandSpec make_ite_quantile(double alpha_q) {
  if (!(alpha_q > 0.0 && alpha_q < 1.0))
    throw std::invalid_argument("make_ite_quantile: alpha_q must be in (0,1)");
  EstimandSpec spec;
  spec.label = "ite_quantile";
  spec.kind = EstimandSpec::Kind::Quasilinear;
  spec.family = [alpha_q](double c) {
    EstimandSpec member;
    member.label = "ite_quantile_family";
    member.cost_fn = pair_cost([alpha_q, c](const OutcomePoint& y0, const OutcomePoint& y1) {
      return alpha_q - ((y1.y - y0.y < c) ? 1.0 : 0.0);
    });
    return member;
  };
  validate_estimand(spec);
  return spec;
}

}  // namespace dualbound
