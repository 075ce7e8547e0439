#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "rksa/eval.hpp"

using namespace rksa;

namespace {

Model small_model(const SplitDataset& split, std::uint64_t seed) {
  ModelConfig config;
  config.num_items = split.num_items();
  config.num_users = split.num_users();
  config.max_len = 8;
  config.dim = 8;
  Rng rng(seed);
  return Model::create(config, rng);
}

}  // namespace

TEST(RankTarget, Examples) {
  std::vector<double> scores(101, 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = -static_cast<double>(i);
  EXPECT_EQ(rank_target(scores, 0), 1);
  EXPECT_EQ(rank_target(scores, 100), 101);
  scores[7] = 0.0;
  EXPECT_EQ(rank_target(scores, 0), 2);
  EXPECT_EQ(rank_target(scores, 7), 2);
  EXPECT_THROW(rank_target(scores, 101), ConfigError);
}

TEST(Metrics, Examples) {
  const std::vector<int> ones(5, 1);
  EXPECT_EQ(hit_at_k(ones, 10), 1.0);
  EXPECT_EQ(ndcg_at_k(ones, 10), 1.0);
  const std::vector<int> two = {2};
  EXPECT_NEAR(ndcg_at_k(two, 10), 0.6309, 1e-4);
  EXPECT_NEAR(ndcg_at_k(two, 10), 1.0 / std::log2(3.0), 1e-15);
  const std::vector<int> eleven = {11};
  EXPECT_EQ(hit_at_k(eleven, 10), 0.0);
  EXPECT_EQ(ndcg_at_k(eleven, 10), 0.0);
  EXPECT_EQ(hit_at_k(std::vector<int>{}, 10), 0.0);
}

TEST(Metrics, MonotoneInCutoffAndBounded) {
  Rng rng(1);
  std::uniform_int_distribution<int> rank(1, 101);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> ranks(20);
    for (int& r : ranks) r = rank(rng);
    double prev_hit = 0.0, prev_ndcg = 0.0;
    for (int k = 1; k <= 101; ++k) {
      const double h = hit_at_k(ranks, k);
      const double n = ndcg_at_k(ranks, k);
      EXPECT_GE(h, prev_hit);
      EXPECT_GE(n, prev_ndcg);
      EXPECT_LE(n, h + 1e-15);
      EXPECT_GE(n, 0.0);
      EXPECT_LE(h, 1.0);
      prev_hit = h;
      prev_ndcg = n;
    }
    EXPECT_EQ(hit_at_k(ranks, 101), 1.0);
  }
}

TEST(Metrics, MatchBruteForceOnSmallCandidateSets) {
  Rng rng(2);
  std::uniform_int_distribution<int> size(1, 6);
  std::uniform_int_distribution<int> level(0, 3);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = size(rng);
    std::vector<double> scores(static_cast<std::size_t>(n));
    for (double& s : scores) s = level(rng);
    std::uniform_int_distribution<int> pick(0, n - 1);
    const auto target = static_cast<std::size_t>(pick(rng));
    const int r = rank_target(scores, target);
    EXPECT_EQ(r, oracle::sorted_rank(scores, target));
    const std::vector<int> ranks = {r};
    for (int k = 1; k <= 6; ++k) {
      EXPECT_DOUBLE_EQ(hit_at_k(ranks, k), oracle::hit(ranks, k));
      EXPECT_NEAR(ndcg_at_k(ranks, k), oracle::ndcg(ranks, k), 1e-15);
    }
  }
}

TEST(Metrics, UniformScoresGiveKOver101) {
  Rng rng(3);
  std::uniform_real_distribution<double> uniform;
  std::vector<int> ranks;
  const int users = 4000;
  for (int u = 0; u < users; ++u) {
    std::vector<double> scores(101);
    for (double& s : scores) s = uniform(rng);
    ranks.push_back(rank_target(scores, 0));
  }
  for (int k : {1, 5, 10, 50}) {
    const double p = k / 101.0;
    const double se = std::sqrt(p * (1.0 - p) / users);
    EXPECT_NEAR(hit_at_k(ranks, k), p, 3.0 * se) << k;
  }
}

TEST(FrequencyBuckets, SortsByTrainingCount) {
  CoocStats cooc(4);
  cooc.set_item_count(1, 10);
  cooc.set_item_count(2, 1);
  cooc.set_item_count(3, 5);
  cooc.set_item_count(4, 7);
  const std::vector<int> ranks = {1, 50, 20, 10};
  const std::vector<ItemId> targets = {1, 2, 3, 4};
  const auto two = frequency_buckets(ranks, targets, cooc, 2);
  ASSERT_EQ(two.size(), 2U);
  EXPECT_DOUBLE_EQ(two.at(0), 35.0);
  EXPECT_DOUBLE_EQ(two.at(1), 5.5);
  const auto many = frequency_buckets(ranks, targets, cooc, 10);
  EXPECT_EQ(many.size(), 4U);
  EXPECT_TRUE(frequency_buckets({}, {}, cooc, 10).empty());
}

TEST(Evaluate, DeterministicForSeedAndCandidateCount) {
  const SplitDataset split = fixture::random_split(40, 150, 4, 9, 5);
  const CoocStats cooc = build_cooc(split);
  const Model model = small_model(split, 6);
  EvalOptions options;
  options.seed = 3;
  const EvalMetrics a = evaluate(model, split, cooc, SplitPart::Test, options);
  const EvalMetrics b = evaluate(model, split, cooc, SplitPart::Test, options);
  EXPECT_EQ(a.ranks, b.ranks);
  EXPECT_EQ(a.hit, b.hit);
  EXPECT_EQ(a.ndcg, b.ndcg);
  EXPECT_EQ(a.num_candidates, 101U);
  EXPECT_EQ(a.users.size(), 40U);
  for (int r : a.ranks) {
    EXPECT_GE(r, 1);
    EXPECT_LE(r, 101);
  }
  options.seed = 4;
  const EvalMetrics c = evaluate(model, split, cooc, SplitPart::Test, options);
  EXPECT_NE(a.ranks, c.ranks);
}

TEST(Evaluate, ModesAndLimits) {
  const SplitDataset split = fixture::random_split(12, 150, 4, 9, 7);
  const CoocStats cooc = build_cooc(split);
  const Model model = small_model(split, 8);
  EvalOptions options;
  options.max_users = 5;
  options.cutoffs = {1, 101};
  const EvalMetrics limited = evaluate(model, split, cooc, SplitPart::Valid, options);
  EXPECT_EQ(limited.ranks.size(), 5U);
  EXPECT_EQ(limited.hit.at(101), 1.0);

  options.full_catalog = true;
  const EvalMetrics full = evaluate(model, split, cooc, SplitPart::Valid, options);
  for (std::size_t i = 0; i < full.users.size(); ++i) EXPECT_LE(full.ranks[i], 150);
  EXPECT_GT(full.num_candidates, 101U);

  options.full_catalog = false;
  for (AttentionMode mode : {AttentionMode::EvalMeanShift, AttentionMode::EvalStochastic}) {
    options.mode = mode;
    options.stochastic_samples = 3;
    const EvalMetrics m = evaluate(model, split, cooc, SplitPart::Valid, options);
    const EvalMetrics again = evaluate(model, split, cooc, SplitPart::Valid, options);
    EXPECT_EQ(m.ranks, again.ranks);
  }
}

TEST(Evaluate, NegativesAvoidHistory) {
  const SplitDataset split = fixture::random_split(10, 105, 4, 4, 9);
  const CoocStats cooc = build_cooc(split);
  const Model model = small_model(split, 10);
  EvalOptions options;
  options.full_catalog = true;
  const EvalMetrics full = evaluate(model, split, cooc, SplitPart::Test, options);
  EXPECT_EQ(full.num_candidates, 102U);
  options.full_catalog = false;
  options.num_negatives = 102;
  EXPECT_THROW(evaluate(model, split, cooc, SplitPart::Test, options), DataError);
}
