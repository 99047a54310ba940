#pragma once

#include "mlmatvamp/denoisers.hpp"

namespace mlmv::detail {

struct LayerEstimate {
  Mat z_mean;     // empty when want_z is false
  Mat u_mean;
  Mat jac_plus;   // average d z_mean / d target
  Mat jac_minus;  // average d u_mean / d r_plus
};

// Posterior means of (z, u) under N(u; r_plus, gamma_plus^{-1}) p(z | u) times
// N(z; target, gamma_minus^{-1}). gamma_minus == nullptr pins z to target and
// only u is estimated.
LayerEstimate nonlinear_mmse_core(const NonlinearLayer& layer, const Mat& target, const Mat* gamma_minus,
                                const Mat& r_plus, const Mat& gamma_plus, bool want_z, const QuadratureCfg& cfg);

// Joint mode of the same density; the jacobians come from the inverse Hessian at the mode.
LayerEstimate nonlinear_map_core(const NonlinearLayer& layer, const Mat& target, const Mat* gamma_minus,
                                 const Mat& r_plus, const Mat& gamma_plus, bool want_z, const NewtonCfg& cfg,
                                 int threads);

}  // namespace mlmv::detail
