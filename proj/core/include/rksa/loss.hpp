#pragma once

#include <span>
#include <vector>

#include "rksa/autodiff.hpp"

namespace rksa {

inline constexpr double kDefaultRankWeight = 0.001;

/// Binary cross-entropy with negative sampling, averaged over positions:
/// -(1/m) sum_t [log sigma(s_t+) + sum_k log(1 - sigma(s_tk-))].
/// `positive` is [m, 1], `negative` is [m, k].
ad::Var prediction_loss(const ad::Var& positive, const ad::Var& negative);

/// Target permutation: positions by descending count, ties by ascending index.
std::vector<Index> cooccurrence_order(const Vector& counts);

/// ListMLE loss of the correlation row under the co-occurrence ranking.
/// Lists shorter than 2 contribute 0.
ad::Var cooc_rank_loss(const ad::Var& psi_row, const Vector& counts);

struct LossReport {
  double l_z = 0.0;
  double l_rank = 0.0;
  double total = 0.0;
  double lambda_r = kDefaultRankWeight;

  bool finite() const;
};

/// total = l_z + lambda_r * l_rank.
LossReport total_loss(double l_z, double l_rank, double lambda_r);
ad::Var total_loss(const ad::Var& l_z, const ad::Var& l_rank, double lambda_r);

}  // namespace rksa
