#include "rksa/msn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rksa::msn {

namespace {

void check(const Params& p) {
  const Index n = p.xi.size();
  if (p.omega.size() != n || p.alpha.size() != n || p.psi.rows() != n || p.psi.cols() != n) {
    throw ConfigError("msn: parameter dimensions disagree");
  }
}

}  // namespace

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double density(const Vector& x, const Params& params) {
  check(params);
  const Index k = params.xi.size();
  if (x.size() != k) throw ConfigError("msn density: point dimension mismatch");
  const Matrix sigma = params.omega.asDiagonal() * params.psi * params.omega.asDiagonal();
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success || (llt.matrixL().toDenseMatrix().diagonal().array() <= 0.0).any()) {
    throw NumericalError("msn density: covariance is singular");
  }
  const Vector r = x - params.xi;
  const Vector whitened = llt.matrixL().solve(r);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double log_phi =
      -0.5 * (static_cast<double>(k) * std::log(2.0 * std::numbers::pi) + log_det + whitened.squaredNorm());
  const double skew_arg = params.alpha.dot(r.cwiseQuotient(params.omega));
  return 2.0 * std::exp(log_phi) * normal_cdf(skew_arg);
}

double delta(double alpha) {
  const double bound = std::nextafter(1.0, 0.0);
  return std::clamp(alpha / std::sqrt(1.0 + alpha * alpha), -bound, bound);
}

Vector delta(const Vector& alpha) { return alpha.unaryExpr([](double a) { return delta(a); }); }

Sample sample_from_noise(const Params& params, double y0, const Vector& standard_normal) {
  check(params);
  Eigen::LLT<Matrix> llt(params.psi);
  if (llt.info() != Eigen::Success) throw NumericalError("msn sample: correlation is not positive definite");
  Sample s;
  s.y0 = y0;
  s.y = llt.matrixL() * standard_normal;
  const Vector d = delta(params.alpha);
  const Vector z_hat = d * std::abs(y0) + (1.0 - d.array().square()).sqrt().matrix().cwiseProduct(s.y);
  s.z = params.xi + params.omega.cwiseProduct(z_hat);
  return s;
}

Sample sample(const Params& params, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double y0 = normal(rng);
  Vector e(params.xi.size());
  for (Index i = 0; i < e.size(); ++i) e(i) = normal(rng);
  return sample_from_noise(params, y0, e);
}

Vector mean_shift(const Params& params) {
  check(params);
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return params.xi + c * params.omega.cwiseProduct(delta(params.alpha));
}

RowNoise draw_row_noise(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  RowNoise noise;
  noise.y0.resize(rows);
  noise.e.resize(rows, cols);
  for (Index q = 0; q < rows; ++q) {
    noise.y0(q) = normal(rng);
    for (Index j = 0; j < cols; ++j) noise.e(q, j) = normal(rng);
  }
  return noise;
}

ad::Var reparameterize(const ad::Var& xi, const ad::Var& omega, const ad::Var& alpha,
                       const ad::Var& chol_psi, const RowNoise& noise) {
  const Index n = xi.rows();
  const Index m = xi.cols();
  if (noise.e.rows() != n || noise.e.cols() != m || noise.y0.size() != n) {
    throw ConfigError("msn reparameterize: noise shape mismatch");
  }
  // Y(q, j) = sum_k L(j, k) e(q, k)
  const ad::Var y = ad::matmul(ad::constant(noise.e), ad::transpose(chol_psi));
  const Matrix abs_y0 = noise.y0.cwiseAbs().replicate(1, m);
  // delta |y0| + sqrt(1 - delta^2) y == (alpha |y0| + y) / sqrt(1 + alpha^2)
  const ad::Var numer = ad::add(ad::hadamard(alpha, ad::constant(abs_y0)), y);
  const ad::Var z_hat = ad::hadamard(numer, ad::inv_sqrt1p_square(alpha));
  return ad::add(xi, ad::hadamard(omega, z_hat));
}

ad::Var mean_shift(const ad::Var& xi, const ad::Var& omega, const ad::Var& alpha) {
  const ad::Var d = ad::hadamard(alpha, ad::inv_sqrt1p_square(alpha));
  return ad::add(xi, ad::scale(ad::hadamard(omega, d), std::sqrt(2.0 / std::numbers::pi)));
}

}  // namespace rksa::msn
