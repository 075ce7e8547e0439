#pragma once

#include <random>
#include <vector>

#include "rksa/corpus.hpp"
#include "rksa/model.hpp"

namespace fixture {

inline rksa::IdMaps identity_ids(std::size_t users, std::size_t items) {
  rksa::IdMaps ids;
  for (std::size_t u = 0; u < users; ++u) ids.user_raw.push_back(static_cast<std::int64_t>(u));
  for (std::size_t i = 0; i <= items; ++i) ids.item_raw.push_back(static_cast<std::int64_t>(i));
  return ids;
}

/// Users with uniformly random item sequences (items drawn without
/// replacement) of length in [min_len, max_len].
inline std::vector<rksa::UserSequence> random_sequences(std::size_t users, std::size_t items, std::size_t min_len,
                                                        std::size_t max_len, std::uint64_t seed) {
  rksa::Rng rng(seed);
  std::uniform_int_distribution<std::size_t> length(min_len, max_len);
  std::vector<rksa::ItemId> pool(items);
  for (std::size_t i = 0; i < items; ++i) pool[i] = static_cast<rksa::ItemId>(i + 1);
  std::vector<rksa::UserSequence> out;
  for (std::size_t u = 0; u < users; ++u) {
    const std::size_t n = length(rng);
    for (std::size_t k = 0; k < n; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, items - 1);
      std::swap(pool[k], pool[pick(rng)]);
    }
    out.push_back({static_cast<rksa::UserId>(u), std::vector<rksa::ItemId>(pool.begin(), pool.begin() + n)});
  }
  return out;
}

inline rksa::SplitDataset random_split(std::size_t users, std::size_t items, std::size_t min_len,
                                       std::size_t max_len, std::uint64_t seed) {
  const auto sequences = random_sequences(users, items, min_len, max_len, seed);
  return rksa::split_leave_one_out(sequences, identity_ids(users, items));
}

/// Every user walks the same cyclic order from a random start, so the next
/// item is a deterministic function of the current one.
inline rksa::SplitDataset cyclic_split(std::size_t users, std::size_t items, std::size_t len, std::uint64_t seed) {
  rksa::Rng rng(seed);
  std::uniform_int_distribution<std::size_t> start(0, items - 1);
  std::vector<rksa::UserSequence> sequences;
  for (std::size_t u = 0; u < users; ++u) {
    const std::size_t s = start(rng);
    rksa::UserSequence seq{static_cast<rksa::UserId>(u), {}};
    for (std::size_t t = 0; t < len; ++t) seq.items.push_back(static_cast<rksa::ItemId>((s + t) % items + 1));
    sequences.push_back(std::move(seq));
  }
  return rksa::split_leave_one_out(sequences, identity_ids(users, items));
}

/// One user whose whole sequence 1..len is training data (no held-out part).
inline rksa::SplitDataset single_sequence_split(std::size_t len) {
  rksa::SplitDataset split;
  split.ids = identity_ids(1, len);
  rksa::UserSequence seq{0, {}};
  for (std::size_t i = 1; i <= len; ++i) seq.items.push_back(static_cast<rksa::ItemId>(i));
  split.train.push_back(std::move(seq));
  return split;
}

/// Next-item Hit@1 over the full catalog at every position of the training
/// input layout: one forward on items[0..n-2], row t must rank items[t+1] first.
inline double training_hit_at_1(const rksa::Model& model, const rksa::UserSequence& seq, const rksa::CoocStats& cooc) {
  rksa::Rng rng(0);
  const std::span<const rksa::ItemId> inputs(seq.items.data(), seq.items.size() - 1);
  const rksa::ForwardOutput out =
      rksa::forward(model, seq.user, inputs, cooc, rksa::AttentionMode::EvalLocation, false, rng);
  const rksa::Index n = out.hidden.rows();
  const std::size_t offset = inputs.size() - static_cast<std::size_t>(n);
  int hits = 0;
  for (rksa::Index t = 0; t < n; ++t) {
    const rksa::ad::Var row = rksa::ad::slice(out.hidden, t, 0, 1, out.hidden.cols());
    const rksa::Matrix scores = rksa::relevance_scores(row, model.tables().item).value();
    rksa::Index best = 0;
    scores.row(0).maxCoeff(&best);
    hits += static_cast<rksa::ItemId>(best + 1) == seq.items[offset + static_cast<std::size_t>(t) + 1] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace fixture
