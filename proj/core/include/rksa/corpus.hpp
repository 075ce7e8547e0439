#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <unordered_map>
#include <vector>

#include "rksa/types.hpp"

namespace rksa {

/// Dense <-> raw id translation. Items are 1-based (0 is padding), users 0-based.
struct IdMaps {
  std::vector<std::int64_t> user_raw;  // dense user -> raw id
  std::vector<std::int64_t> item_raw;  // dense item -> raw id; entry 0 is the padding slot

  std::size_t num_users() const { return user_raw.size(); }
  std::size_t num_items() const { return item_raw.empty() ? 0 : item_raw.size() - 1; }
};

struct Interaction {
  UserId user;
  ItemId item;
};

/// Interactions in file order with densely re-indexed ids.
struct InteractionLog {
  std::vector<Interaction> records;
  IdMaps ids;

  std::size_t num_users() const { return ids.num_users(); }
  std::size_t num_items() const { return ids.num_items(); }
};

/// Reads whitespace-separated "user item" lines. Blank lines are ignored.
/// Throws ParseError (with line number) on malformed lines and DataError on
/// an empty input.
InteractionLog parse_interactions(std::istream& in);
InteractionLog load_interactions(const std::filesystem::path& path);

struct UserSequence {
  UserId user = 0;
  std::vector<ItemId> items;
};

struct SequenceSet {
  std::vector<UserSequence> sequences;
  std::size_t dropped_users = 0;  // fewer than kMinSequenceLength actions
};

inline constexpr std::size_t kMinSequenceLength = 3;

/// Chronological tail of every user's actions, at most `max_len` long.
SequenceSet build_sequences(const InteractionLog& log, std::size_t max_len);

struct HeldOut {
  UserId user = 0;
  std::vector<ItemId> prefix;
  ItemId target = kPaddingItem;
};

/// Leave-one-out split: last item is the test target, second-to-last the
/// validation target, everything before that is training data.
struct SplitDataset {
  std::vector<UserSequence> train;
  std::vector<HeldOut> valid;
  std::vector<HeldOut> test;
  IdMaps ids;

  std::size_t num_users() const { return ids.num_users(); }
  std::size_t num_items() const { return ids.num_items(); }

  /// Every item the user interacted with (train items plus both targets).
  std::vector<ItemId> history(std::size_t index) const;
};

SplitDataset split_leave_one_out(std::span<const UserSequence> sequences, IdMaps ids);

/// Global occurrence and per-user pair co-occurrence counts.
class CoocStats {
 public:
  CoocStats() = default;
  explicit CoocStats(std::size_t num_items);

  /// Counts one user's sequence: every item occurrence increments its count,
  /// every unordered pair of distinct items present increments the pair once.
  void add_user(std::span<const ItemId> items);
  /// Pure addition; merging is order independent.
  void merge(const CoocStats& other);

  std::size_t num_items() const { return item_counts_.empty() ? 0 : item_counts_.size() - 1; }
  std::int64_t item_count(ItemId item) const;
  /// Symmetric. A pair of identical items reports item_count (perfect
  /// self co-occurrence).
  std::int64_t pair_count(ItemId a, ItemId b) const;
  std::size_t num_pairs() const { return pairs_.size(); }

  /// Dense counts over sequence positions; padding rows/columns are zero.
  Matrix window(std::span<const ItemId> items) const;

  const std::vector<std::int64_t>& item_counts() const { return item_counts_; }
  /// (a, b, count) with a < b, sorted for deterministic output.
  std::vector<std::tuple<ItemId, ItemId, std::int64_t>> sorted_pairs() const;
  void set_pair(ItemId a, ItemId b, std::int64_t count);
  void set_item_count(ItemId item, std::int64_t count);

 private:
  static std::uint64_t key(ItemId a, ItemId b);

  std::vector<std::int64_t> item_counts_;  // index 0 unused (padding)
  std::unordered_map<std::uint64_t, std::int64_t> pairs_;
};

/// Co-occurrence over the training portions only.
CoocStats build_cooc(const SplitDataset& split);

/// k distinct items drawn uniformly from [1, num_items] minus `excluded`.
/// Throws DataError when fewer than k items remain.
std::vector<ItemId> sample_negatives(std::span<const ItemId> excluded, std::size_t num_items,
                                     std::size_t k, Rng& rng);

enum class NegativeExclusion {
  History,  // exclude everything the user interacted with
  Target,   // exclude only the positive item at that position
};

/// Left-padded training batch. Row-major [batch, max_len] layouts.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t max_len = 0;
  std::size_t num_negatives = 0;
  std::vector<UserId> users;
  std::vector<ItemId> item_ids;
  std::vector<ItemId> targets;
  std::vector<ItemId> negatives;  // [batch, max_len, num_negatives]
  std::vector<bool> pad_mask;     // true where a real item sits

  ItemId item(std::size_t b, std::size_t t) const { return item_ids[b * max_len + t]; }
  ItemId target(std::size_t b, std::size_t t) const { return targets[b * max_len + t]; }
  ItemId negative(std::size_t b, std::size_t t, std::size_t k) const {
    return negatives[(b * max_len + t) * num_negatives + k];
  }
  bool valid(std::size_t b, std::size_t t) const { return pad_mask[b * max_len + t]; }
  /// The unpadded window of row b.
  std::vector<ItemId> row_items(std::size_t b) const;
};

struct BatchOptions {
  std::size_t batch_size = 128;
  std::size_t max_len = 50;
  std::size_t num_negatives = 1;
  NegativeExclusion exclusion = NegativeExclusion::History;
};

/// One epoch of shuffled batches over the training sequences with at least
/// one next-item target. Deterministic for a given rng state.
std::vector<Batch> make_batches(const SplitDataset& split, const BatchOptions& options, Rng& rng);

/// Dataset statistics comparable to a corpus summary table.
struct CorpusStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t actions = 0;
  double actions_per_user = 0.0;
  double actions_per_item = 0.0;
};

CorpusStats corpus_stats(std::span<const UserSequence> sequences, std::size_t num_items);

inline constexpr int kDatasetFormatVersion = 1;

/// JSON-lines serialization with a header line carrying the format version
/// and id maps.
void save_split(const SplitDataset& split, const std::filesystem::path& path);
SplitDataset load_split(const std::filesystem::path& path);
void save_cooc(const CoocStats& cooc, const std::filesystem::path& path);
CoocStats load_cooc(const std::filesystem::path& path);

}  // namespace rksa
