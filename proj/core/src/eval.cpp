#include "rksa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rksa {

int rank_target(std::span<const double> scores, std::size_t target_index) {
  if (target_index >= scores.size()) throw ConfigError("rank_target: target index out of range");
  const double target = scores[target_index];
  int rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i != target_index && scores[i] >= target) ++rank;
  }
  return rank;
}

double hit_at_k(std::span<const int> ranks, int k) {
  if (ranks.empty()) return 0.0;
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](int r) { return r <= k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double ndcg_at_k(std::span<const int> ranks, int k) {
  if (ranks.empty()) return 0.0;
  double total = 0.0;
  for (int r : ranks) {
    if (r <= k) total += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  }
  return total / static_cast<double>(ranks.size());
}

std::map<int, double> frequency_buckets(std::span<const int> ranks, std::span<const ItemId> targets,
                                        const CoocStats& cooc, std::size_t buckets) {
  std::map<int, double> out;
  if (ranks.empty() || buckets == 0) return out;
  std::vector<std::size_t> order(ranks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cooc.item_count(targets[a]) < cooc.item_count(targets[b]);
  });
  const std::size_t n = order.size();
  for (std::size_t b = 0; b < buckets; ++b) {
    const std::size_t lo = b * n / buckets;
    const std::size_t hi = (b + 1) * n / buckets;
    if (hi <= lo) continue;
    double total = 0.0;
    for (std::size_t i = lo; i < hi; ++i) total += ranks[order[i]];
    out[static_cast<int>(b)] = total / static_cast<double>(hi - lo);
  }
  return out;
}

EvalMetrics evaluate(const Model& model, const SplitDataset& split, const CoocStats& cooc, SplitPart part,
                     const EvalOptions& options) {
  const auto& cases = part == SplitPart::Valid ? split.valid : split.test;
  const std::size_t count = options.max_users == 0 ? cases.size() : std::min(options.max_users, cases.size());
  ad::NoGradGuard no_grad;
  EvalMetrics metrics;
  const std::size_t num_items = split.num_items();
  for (std::size_t i = 0; i < count; ++i) {
    const HeldOut& held = cases[i];
    const std::vector<ItemId> history = split.history(i);
    std::seed_seq seq{static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(options.seed >> 32),
                      static_cast<std::uint32_t>(held.user), static_cast<std::uint32_t>(part)};
    Rng rng(seq);

    std::vector<ItemId> candidates{held.target};
    if (options.full_catalog) {
      std::vector<ItemId> blocked = history;
      std::sort(blocked.begin(), blocked.end());
      for (std::size_t item = 1; item <= num_items; ++item) {
        if (!std::binary_search(blocked.begin(), blocked.end(), static_cast<ItemId>(item))) {
          candidates.push_back(static_cast<ItemId>(item));
        }
      }
    } else {
      const auto negatives = sample_negatives(history, num_items, options.num_negatives, rng);
      candidates.insert(candidates.end(), negatives.begin(), negatives.end());
    }

    const std::size_t draws =
        options.mode == AttentionMode::EvalStochastic ? std::max<std::size_t>(options.stochastic_samples, 1) : 1;
    RowVector scores = RowVector::Zero(static_cast<Index>(candidates.size()));
    for (std::size_t s = 0; s < draws; ++s) {
      const ForwardOutput out = forward(model, held.user, held.prefix, cooc, options.mode, false, rng);
      const Index last = out.hidden.rows() - 1;
      const ad::Var row = ad::slice(out.hidden, last, 0, 1, out.hidden.cols());
      scores += relevance_scores(row, model.tables().item, candidates).value().row(0);
    }
    std::vector<double> flat(scores.data(), scores.data() + scores.size());
    metrics.users.push_back(held.user);
    metrics.targets.push_back(held.target);
    metrics.ranks.push_back(rank_target(flat, 0));
    metrics.num_candidates = std::max(metrics.num_candidates, candidates.size());
  }
  for (int k : options.cutoffs) {
    metrics.hit[k] = hit_at_k(metrics.ranks, k);
    metrics.ndcg[k] = ndcg_at_k(metrics.ranks, k);
  }
  metrics.frequency_buckets = frequency_buckets(metrics.ranks, metrics.targets, cooc, options.frequency_buckets);
  return metrics;
}

}  // namespace rksa
