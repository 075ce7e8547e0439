#pragma once

#include <span>
#include <string>
#include <string_view>

#include "rksa/autodiff.hpp"
#include "rksa/corpus.hpp"

namespace rksa {

/// Which relation kernels take part in the mixture.
struct KernelSet {
  bool counting = true;
  bool item = true;
  bool user = true;

  /// Parses "C", "I", "U", "C+I", "C+I+U", ... (order free, case insensitive).
  static KernelSet parse(std::string_view spec);
  std::string to_string() const;
  bool empty() const { return !counting && !item && !user; }
  friend bool operator==(const KernelSet&, const KernelSet&) = default;
};

enum class ItemKernelVariant { Linear, Rbf };

ItemKernelVariant parse_item_variant(std::string_view name);
std::string to_string(ItemKernelVariant variant);

struct KernelConfig {
  KernelSet active;
  ItemKernelVariant item_variant = ItemKernelVariant::Linear;
  double jitter = 1e-5;
};

/// Per-head kernel parameters: the variance head, the user modulation and
/// the mixture head (columns ordered counting, item, user).
struct KernelWeights {
  ad::Var omega_query;      // [d, d]
  ad::Var omega_key;        // [d, d]
  ad::Var user_modulation;  // [d, d]
  ad::Var mixture_weight;   // [d, 3]
  ad::Var mixture_bias;     // [1, 3]
};

KernelWeights init_kernel_weights(Index dim, Rng& rng);

double softplus(double x);

// Scalar kernels, mostly for checking and inspection.
double counting_kernel(ItemId i, ItemId j, const CoocStats& cooc, double omega_i, double omega_j);
double item_kernel(const Vector& x_i, const Vector& x_j, double omega_i, double omega_j,
                   ItemKernelVariant variant);
double user_kernel(const Vector& x_i, const Vector& x_j, const Vector& modulation, double omega_i,
                   double omega_j);

/// Row q holds the scale vector of the distribution for query position q:
/// softplus((x_q W_q) . (x_i W_k) / sqrt(d)).
ad::Var omega_matrix(const ad::Var& x, const KernelWeights& weights);
/// One query row of omega_matrix, [1, n].
ad::Var variance_omega(const ad::Var& x, Index query, const KernelWeights& weights);

/// Softmax over the active kernels of u W_u + b_u; inactive entries are 0.
ad::Var mixture(const ad::Var& user, const KernelWeights& weights, const KernelSet& active);

/// Unit-scale counting Gram P_ij^2 / (P_i P_j) over sequence positions, with
/// an exact unit diagonal for every real item.
Matrix counting_gram(std::span<const ItemId> items, const CoocStats& cooc);
/// Unit-scale item Gram over normalized rows.
ad::Var item_gram(const ad::Var& x_normalized, ItemKernelVariant variant);
/// Unit-scale user Gram: (m ⊙ x_i) . (m ⊙ x_j) with m = W_s u.
ad::Var user_gram(const ad::Var& x_normalized, const ad::Var& user, const KernelWeights& weights);

struct CorrelationOutput {
  ad::Var psi;      // final correlation (normalized, clamped, jittered)
  ad::Var mixture;  // [1, 3]
  Matrix gram;      // omega_i omega_j * mixed unit-scale kernel (empty without omega)
  Matrix psi_unjittered;
};

/// Mixed kernel divided by omega_i omega_j, normalized to a unit diagonal,
/// off-diagonals clamped to ±(1 - jitter), then (psi + jitter I) / (1 + jitter).
/// Because every kernel carries the factor omega_i omega_j, the result does
/// not depend on omega; `omega` only feeds the reported gram.
CorrelationOutput correlation_matrix(const ad::Var& x, const Matrix& counting_base, const ad::Var& user,
                                     const KernelWeights& weights, const KernelConfig& config,
                                     const Vector* omega = nullptr);

}  // namespace rksa
