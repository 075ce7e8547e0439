#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rksa/train.hpp"

namespace rksa {

struct GradCheckConfig {
  std::size_t dim = 8;
  std::size_t seq_len = 5;
  std::size_t blocks = 1;
  std::size_t heads = 1;
  std::size_t num_items = 12;
  std::size_t num_negatives = 2;
  double lambda_r = 1.0;
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error.
  double floor = 1e-6;
  std::uint64_t seed = 7;
  AttentionOptions attention;
  /// Zero every tensor outside the embeddings (norm gains stay at one).
  bool zero_init = false;
  /// Adds 1e-2 to entry (0, 0) of the named tensor's analytic gradient.
  std::optional<std::string> corrupt_tensor;
  /// Restrict checking to entries per tensor (0 = all).
  std::size_t max_entries = 0;
};

struct TensorReport {
  std::string name;
  std::string group;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<TensorReport> tensors;
  double max_rel_error = 0.0;
  double loss = 0.0;
  bool passed = true;
  std::vector<std::string> failures;
};

/// Compares the tape gradient of the full training loss (prediction loss
/// plus rank loss, stochastic path, dropout off) against central finite
/// differences on a tiny synthetic model. The reparameterization noise is
/// frozen by replaying the same engine state for every loss evaluation.
GradCheckReport grad_check(const GradCheckConfig& config);

}  // namespace rksa
