#include "rksa/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rksa {

ad::Var prediction_loss(const ad::Var& positive, const ad::Var& negative) {
  if (positive.cols() != 1 || negative.rows() != positive.rows()) {
    throw ConfigError("prediction_loss: expected [m,1] positives and [m,k] negatives");
  }
  const Index m = positive.rows();
  if (m == 0) return ad::constant(0.0);
  const ad::Var pos_term = ad::sum(ad::log_sigmoid(positive));
  // log(1 - sigma(s)) = log sigma(-s)
  const ad::Var neg_term = ad::sum(ad::log_sigmoid(ad::scale(negative, -1.0)));
  return ad::scale(ad::add(pos_term, neg_term), -1.0 / static_cast<double>(m));
}

std::vector<Index> cooccurrence_order(const Vector& counts) {
  std::vector<Index> order(static_cast<std::size_t>(counts.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return counts(a) > counts(b); });
  return order;
}

ad::Var cooc_rank_loss(const ad::Var& psi_row, const Vector& counts) {
  if (psi_row.rows() != 1 || psi_row.cols() != counts.size()) {
    throw ConfigError("cooc_rank_loss: row and counts disagree in length");
  }
  if (counts.size() < 2) return ad::constant(0.0);
  const std::vector<Index> order = cooccurrence_order(counts);
  return ad::listmle(psi_row, order);
}

bool LossReport::finite() const {
  return std::isfinite(l_z) && std::isfinite(l_rank) && std::isfinite(total);
}

LossReport total_loss(double l_z, double l_rank, double lambda_r) {
  return {l_z, l_rank, l_z + lambda_r * l_rank, lambda_r};
}

ad::Var total_loss(const ad::Var& l_z, const ad::Var& l_rank, double lambda_r) {
  if (lambda_r == 0.0) return l_z;
  return ad::add(l_z, ad::scale(l_rank, lambda_r));
}

}  // namespace rksa
