#pragma once

#include <map>
#include <span>
#include <vector>

#include "rksa/model.hpp"

namespace rksa {

/// 1 + number of candidates whose score is >= the target's (the target
/// itself excluded): ties count against the target.
int rank_target(std::span<const double> scores, std::size_t target_index);

double hit_at_k(std::span<const int> ranks, int k);
double ndcg_at_k(std::span<const int> ranks, int k);

enum class SplitPart { Valid, Test };

struct EvalOptions {
  AttentionMode mode = AttentionMode::EvalLocation;
  std::uint64_t seed = 0;
  std::size_t num_negatives = 100;
  std::vector<int> cutoffs = {1, 5, 10};
  /// Draws averaged per user in EvalStochastic mode.
  std::size_t stochastic_samples = 1;
  /// Rank against every item outside the user's history instead of sampled negatives.
  bool full_catalog = false;
  /// Evaluate only the first N users (0 = all).
  std::size_t max_users = 0;
  std::size_t frequency_buckets = 10;
};

struct EvalMetrics {
  std::map<int, double> hit;
  std::map<int, double> ndcg;
  std::vector<UserId> users;
  std::vector<ItemId> targets;
  std::vector<int> ranks;
  /// Bucket 0 holds the least frequent targets.
  std::map<int, double> frequency_buckets;
  std::size_t num_candidates = 0;
};

/// Mean rank per target-frequency bucket; targets are sorted by training
/// occurrence count and split into `buckets` groups of (nearly) equal size.
std::map<int, double> frequency_buckets(std::span<const int> ranks, std::span<const ItemId> targets,
                                        const CoocStats& cooc, std::size_t buckets);

/// Ranks each held-out target among sampled negatives that avoid the user's
/// whole history. Negatives are a pure function of (seed, user).
EvalMetrics evaluate(const Model& model, const SplitDataset& split, const CoocStats& cooc, SplitPart part,
                     const EvalOptions& options);

}  // namespace rksa
