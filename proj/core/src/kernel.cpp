#include "rksa/kernel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace rksa {

KernelSet KernelSet::parse(std::string_view spec) {
  KernelSet set{false, false, false};
  std::string token;
  auto flush = [&] {
    if (token.empty()) throw ConfigError("kernel set '" + std::string(spec) + "' has an empty term");
    if (token == "C") {
      set.counting = true;
    } else if (token == "I") {
      set.item = true;
    } else if (token == "U") {
      set.user = true;
    } else {
      throw ConfigError("unknown kernel '" + token + "' (expected C, I or U)");
    }
    token.clear();
  };
  for (char ch : spec) {
    if (ch == '+') {
      flush();
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      token.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return set;
}

std::string KernelSet::to_string() const {
  std::string out;
  auto append = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += name;
  };
  append(counting, "C");
  append(item, "I");
  append(user, "U");
  return out;
}

ItemKernelVariant parse_item_variant(std::string_view name) {
  if (name == "linear") return ItemKernelVariant::Linear;
  if (name == "rbf") return ItemKernelVariant::Rbf;
  throw ConfigError("unknown item kernel variant '" + std::string(name) + "'");
}

std::string to_string(ItemKernelVariant variant) {
  return variant == ItemKernelVariant::Linear ? "linear" : "rbf";
}

KernelWeights init_kernel_weights(Index dim, Rng& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
  std::normal_distribution<double> dist(0.0, stddev);
  auto draw = [&](Index r, Index c) {
    Matrix m(r, c);
    for (Index j = 0; j < c; ++j) {
      for (Index i = 0; i < r; ++i) m(i, j) = dist(rng);
    }
    return m;
  };
  KernelWeights w;
  w.omega_query = ad::parameter(draw(dim, dim));
  w.omega_key = ad::parameter(draw(dim, dim));
  w.user_modulation = ad::parameter(draw(dim, dim));
  w.mixture_weight = ad::parameter(draw(dim, 3) * 0.1);
  w.mixture_bias = ad::parameter(Matrix::Zero(1, 3));
  return w;
}

double softplus(double x) {
  const double y = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return std::max(y, std::numeric_limits<double>::min());
}

double counting_kernel(ItemId i, ItemId j, const CoocStats& cooc, double omega_i, double omega_j) {
  if (i == kPaddingItem || j == kPaddingItem) return 0.0;
  if (i == j) return omega_i * omega_j;
  const auto pi = static_cast<double>(cooc.item_count(i));
  const auto pj = static_cast<double>(cooc.item_count(j));
  if (pi <= 0.0 || pj <= 0.0) return 0.0;
  const auto pij = static_cast<double>(cooc.pair_count(i, j));
  return omega_i * omega_j * pij * pij / (pi * pj);
}

double item_kernel(const Vector& x_i, const Vector& x_j, double omega_i, double omega_j,
                   ItemKernelVariant variant) {
  const double base = variant == ItemKernelVariant::Linear ? x_i.dot(x_j) : std::exp(-(x_i - x_j).squaredNorm());
  return omega_i * omega_j * base;
}

double user_kernel(const Vector& x_i, const Vector& x_j, const Vector& modulation, double omega_i,
                   double omega_j) {
  return omega_i * omega_j * modulation.cwiseProduct(x_i).dot(modulation.cwiseProduct(x_j));
}

ad::Var omega_matrix(const ad::Var& x, const KernelWeights& weights) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  const ad::Var q = ad::matmul(x, weights.omega_query);
  const ad::Var k = ad::matmul(x, weights.omega_key);
  return ad::softplus(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_d));
}

ad::Var variance_omega(const ad::Var& x, Index query, const KernelWeights& weights) {
  if (query < 0 || query >= x.rows()) throw ConfigError("variance_omega: query row out of range");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  const ad::Var q = ad::matmul(ad::slice(x, query, 0, 1, x.cols()), weights.omega_query);
  const ad::Var k = ad::matmul(x, weights.omega_key);
  return ad::softplus(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_d));
}

ad::Var mixture(const ad::Var& user, const KernelWeights& weights, const KernelSet& active) {
  if (active.empty()) throw ConfigError("mixture: no active kernel");
  const ad::Var logits = ad::add(ad::matmul(user, weights.mixture_weight), weights.mixture_bias);
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask(1, 3);
  mask << active.counting, active.item, active.user;
  return ad::masked_softmax(logits, mask);
}

Matrix counting_gram(std::span<const ItemId> items, const CoocStats& cooc) {
  const auto n = static_cast<Index>(items.size());
  Matrix k = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) {
      const double v = counting_kernel(items[static_cast<std::size_t>(i)], items[static_cast<std::size_t>(j)], cooc, 1.0, 1.0);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

ad::Var item_gram(const ad::Var& x_normalized, ItemKernelVariant variant) {
  const ad::Var dots = ad::matmul(x_normalized, ad::transpose(x_normalized));
  if (variant == ItemKernelVariant::Linear) return dots;
  // Unit rows: ||a - b||^2 = 2 - 2 a.b.
  return ad::exp(ad::add_scalar(ad::scale(dots, 2.0), -2.0));
}

ad::Var user_gram(const ad::Var& x_normalized, const ad::Var& user, const KernelWeights& weights) {
  const ad::Var modulation = ad::matmul(user, ad::transpose(weights.user_modulation));
  const ad::Var modulated = ad::mul_row(x_normalized, modulation);
  return ad::matmul(modulated, ad::transpose(modulated));
}

CorrelationOutput correlation_matrix(const ad::Var& x, const Matrix& counting_base, const ad::Var& user,
                                     const KernelWeights& weights, const KernelConfig& config,
                                     const Vector* omega) {
  const Index n = x.rows();
  const KernelSet& active = config.active;
  CorrelationOutput out;
  out.mixture = mixture(user, weights, active);

  ad::Var x_normalized;
  if (active.item || active.user) x_normalized = ad::row_normalize(x);

  ad::Var mixed;
  auto accumulate = [&](const ad::Var& gram, Index column) {
    const ad::Var weighted = ad::scale_by(gram, ad::slice(out.mixture, 0, column, 1, 1));
    mixed = mixed.defined() ? ad::add(mixed, weighted) : weighted;
  };
  if (active.counting) {
    if (counting_base.rows() != n || counting_base.cols() != n) {
      throw ConfigError("correlation_matrix: counting window does not match the sequence length");
    }
    accumulate(ad::constant(counting_base), 0);
  }
  if (active.item) accumulate(item_gram(x_normalized, config.item_variant), 1);
  if (active.user) accumulate(user_gram(x_normalized, user, weights), 2);

  mixed = ad::scale(ad::add(mixed, ad::transpose(mixed)), 0.5);

  if (omega != nullptr) out.gram = mixed.value().cwiseProduct(*omega * omega->transpose());

  const double eps = config.jitter;
  const ad::Var normalized = ad::clamp_off_diagonal(ad::correlation_normalize(mixed), 1.0 - eps);
  out.psi_unjittered = normalized.value();
  const ad::Var jittered = ad::add(normalized, ad::constant(Matrix::Identity(n, n) * eps));
  out.psi = ad::scale(jittered, 1.0 / (1.0 + eps));
  return out;
}

}  // namespace rksa
