#pragma once

#include "rksa/autodiff.hpp"

namespace rksa::msn {

/// Multivariate skew-normal parameters: location, per-coordinate scale,
/// correlation and shape. Covariance is diag(omega) psi diag(omega).
struct Params {
  Vector xi;
  Vector omega;
  Matrix psi;
  Vector alpha;
};

/// A draw together with the noise that produced it.
struct Sample {
  Vector z;
  double y0 = 0.0;
  Vector y;  // correlated normal, y ~ N(0, psi)
};

double normal_pdf(double x);
double normal_cdf(double x);

/// 2 phi_k(x; xi, Sigma) Phi(alpha^T omega^{-1} (x - xi)). Throws
/// NumericalError for a singular covariance.
double density(const Vector& x, const Params& params);

/// alpha / sqrt(1 + alpha^2).
double delta(double alpha);
Vector delta(const Vector& alpha);

/// Reparameterized draw: z_j = xi_j + omega_j (delta_j |y0| + sqrt(1 - delta_j^2) y_j)
/// with a single shared y0 ~ N(0, 1) and y = chol(psi) e, e ~ N(0, I).
Sample sample(const Params& params, Rng& rng);
/// The same map evaluated on caller-provided noise.
Sample sample_from_noise(const Params& params, double y0, const Vector& standard_normal);

/// E[z] = xi + omega delta sqrt(2/pi).
Vector mean_shift(const Params& params);

/// Independent noise for a stack of per-row distributions: row q uses
/// y0(q) and the standard-normal row e.row(q).
struct RowNoise {
  Vector y0;
  Matrix e;
};

RowNoise draw_row_noise(Index rows, Index cols, Rng& rng);

/// Row-wise reparameterization of a stack of distributions sharing one
/// Cholesky factor. Row q of `chol_psi` times e.row(q) gives the correlated
/// noise; for keys j <= q this only touches the leading (q+1) block, i.e. the
/// factor of the visible sub-correlation.
ad::Var reparameterize(const ad::Var& xi, const ad::Var& omega, const ad::Var& alpha,
                       const ad::Var& chol_psi, const RowNoise& noise);

/// Row-wise analytic mean, differentiable.
ad::Var mean_shift(const ad::Var& xi, const ad::Var& omega, const ad::Var& alpha);

}  // namespace rksa::msn
