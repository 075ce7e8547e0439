#include "rksa/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace rksa {

using nlohmann::json;

InteractionLog parse_interactions(std::istream& in) {
  InteractionLog log;
  std::unordered_map<std::int64_t, UserId> user_index;
  std::unordered_map<std::int64_t, ItemId> item_index;
  log.ids.item_raw.push_back(0);

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::int64_t user = 0;
    std::int64_t item = 0;
    std::string extra;
    if (!(fields >> user)) throw ParseError("expected \"user item\"", line_no);
    if (!(fields >> item)) throw ParseError("missing item id", line_no);
    if (fields >> extra) throw ParseError("unexpected trailing field '" + extra + "'", line_no);

    auto [uit, new_user] = user_index.try_emplace(user, static_cast<UserId>(log.ids.user_raw.size()));
    if (new_user) log.ids.user_raw.push_back(user);
    auto [iit, new_item] = item_index.try_emplace(item, static_cast<ItemId>(log.ids.item_raw.size()));
    if (new_item) log.ids.item_raw.push_back(item);
    log.records.push_back({uit->second, iit->second});
  }
  if (log.records.empty()) throw DataError("interaction input is empty");
  return log;
}

InteractionLog load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction file " + path.string());
  return parse_interactions(in);
}

SequenceSet build_sequences(const InteractionLog& log, std::size_t max_len) {
  if (max_len < kMinSequenceLength) throw ConfigError("max_len must be at least 3");
  std::vector<std::vector<ItemId>> per_user(log.num_users());
  // Records are chronological per user; stable order keeps file-order ties.
  for (const auto& r : log.records) per_user[static_cast<std::size_t>(r.user)].push_back(r.item);

  SequenceSet out;
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    auto& items = per_user[u];
    if (items.size() < kMinSequenceLength) {
      ++out.dropped_users;
      continue;
    }
    const std::size_t start = items.size() > max_len ? items.size() - max_len : 0;
    out.sequences.push_back({static_cast<UserId>(u), {items.begin() + static_cast<std::ptrdiff_t>(start), items.end()}});
  }
  if (out.sequences.empty()) throw DataError("no user has at least 3 interactions");
  return out;
}

std::vector<ItemId> SplitDataset::history(std::size_t index) const {
  std::vector<ItemId> items = train[index].items;
  if (index < valid.size()) items.push_back(valid[index].target);
  if (index < test.size()) items.push_back(test[index].target);
  return items;
}

SplitDataset split_leave_one_out(std::span<const UserSequence> sequences, IdMaps ids) {
  SplitDataset split;
  split.ids = std::move(ids);
  split.train.reserve(sequences.size());
  split.valid.reserve(sequences.size());
  split.test.reserve(sequences.size());
  for (const auto& seq : sequences) {
    const auto& items = seq.items;
    if (items.size() < kMinSequenceLength) {
      throw DataError("sequence for user " + std::to_string(seq.user) + " is shorter than 3");
    }
    const auto n = items.size();
    std::vector<ItemId> train_items(items.begin(), items.end() - 2);
    std::vector<ItemId> valid_prefix = train_items;
    std::vector<ItemId> test_prefix(items.begin(), items.end() - 1);
    split.train.push_back({seq.user, std::move(train_items)});
    split.valid.push_back({seq.user, std::move(valid_prefix), items[n - 2]});
    split.test.push_back({seq.user, std::move(test_prefix), items[n - 1]});
  }
  return split;
}

CoocStats::CoocStats(std::size_t num_items) : item_counts_(num_items + 1, 0) {}

std::uint64_t CoocStats::key(ItemId a, ItemId b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

void CoocStats::add_user(std::span<const ItemId> items) {
  std::vector<ItemId> distinct;
  distinct.reserve(items.size());
  for (ItemId item : items) {
    if (item == kPaddingItem) continue;
    if (static_cast<std::size_t>(item) >= item_counts_.size()) {
      throw ConfigError("cooc: item id " + std::to_string(item) + " out of range");
    }
    ++item_counts_[static_cast<std::size_t>(item)];
    distinct.push_back(item);
  }
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  for (std::size_t a = 0; a < distinct.size(); ++a) {
    for (std::size_t b = a + 1; b < distinct.size(); ++b) ++pairs_[key(distinct[a], distinct[b])];
  }
}

void CoocStats::merge(const CoocStats& other) {
  if (other.item_counts_.size() > item_counts_.size()) item_counts_.resize(other.item_counts_.size(), 0);
  for (std::size_t i = 0; i < other.item_counts_.size(); ++i) item_counts_[i] += other.item_counts_[i];
  for (const auto& [k, c] : other.pairs_) pairs_[k] += c;
}

std::int64_t CoocStats::item_count(ItemId item) const {
  if (item <= kPaddingItem || static_cast<std::size_t>(item) >= item_counts_.size()) return 0;
  return item_counts_[static_cast<std::size_t>(item)];
}

std::int64_t CoocStats::pair_count(ItemId a, ItemId b) const {
  if (a == kPaddingItem || b == kPaddingItem) return 0;
  if (a == b) return item_count(a);
  auto it = pairs_.find(key(a, b));
  return it == pairs_.end() ? 0 : it->second;
}

Matrix CoocStats::window(std::span<const ItemId> items) const {
  const auto n = static_cast<Index>(items.size());
  Matrix c = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) {
      const auto v = static_cast<double>(pair_count(items[static_cast<std::size_t>(i)], items[static_cast<std::size_t>(j)]));
      c(i, j) = v;
      c(j, i) = v;
    }
  }
  return c;
}

std::vector<std::tuple<ItemId, ItemId, std::int64_t>> CoocStats::sorted_pairs() const {
  std::vector<std::tuple<ItemId, ItemId, std::int64_t>> out;
  out.reserve(pairs_.size());
  for (const auto& [k, c] : pairs_) {
    out.emplace_back(static_cast<ItemId>(k >> 32), static_cast<ItemId>(k & 0xffffffffu), c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void CoocStats::set_pair(ItemId a, ItemId b, std::int64_t count) {
  if (a == b) throw ConfigError("cooc: pair of identical items");
  pairs_[key(a, b)] = count;
}

void CoocStats::set_item_count(ItemId item, std::int64_t count) {
  if (item <= kPaddingItem || static_cast<std::size_t>(item) >= item_counts_.size()) {
    throw ConfigError("cooc: item id out of range");
  }
  item_counts_[static_cast<std::size_t>(item)] = count;
}

CoocStats build_cooc(const SplitDataset& split) {
  if (split.train.empty()) throw DataError("cooc: empty training split");
  CoocStats stats(split.num_items());
  for (const auto& seq : split.train) stats.add_user(seq.items);
  return stats;
}

std::vector<ItemId> sample_negatives(std::span<const ItemId> excluded, std::size_t num_items,
                                     std::size_t k, Rng& rng) {
  std::vector<ItemId> blocked(excluded.begin(), excluded.end());
  std::sort(blocked.begin(), blocked.end());
  blocked.erase(std::unique(blocked.begin(), blocked.end()), blocked.end());
  std::size_t blocked_real = 0;
  for (ItemId b : blocked) blocked_real += (b >= 1 && static_cast<std::size_t>(b) <= num_items) ? 1 : 0;
  const std::size_t available = num_items - blocked_real;
  if (available < k) {
    throw DataError("cannot draw " + std::to_string(k) + " negatives from " +
                    std::to_string(available) + " available items");
  }

  std::vector<ItemId> out;
  out.reserve(k);
  if (available <= 4 * k) {
    // Dense case: enumerate the candidates and take a partial shuffle.
    std::vector<ItemId> pool;
    pool.reserve(available);
    for (std::size_t i = 1; i <= num_items; ++i) {
      const auto item = static_cast<ItemId>(i);
      if (!std::binary_search(blocked.begin(), blocked.end(), item)) pool.push_back(item);
    }
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      out.push_back(pool[i]);
    }
    return out;
  }
  std::uniform_int_distribution<ItemId> pick(1, static_cast<ItemId>(num_items));
  std::unordered_set<ItemId> chosen;
  while (out.size() < k) {
    const ItemId item = pick(rng);
    if (std::binary_search(blocked.begin(), blocked.end(), item)) continue;
    if (!chosen.insert(item).second) continue;
    out.push_back(item);
  }
  return out;
}

std::vector<ItemId> Batch::row_items(std::size_t b) const {
  std::vector<ItemId> out;
  for (std::size_t t = 0; t < max_len; ++t) {
    if (valid(b, t)) out.push_back(item(b, t));
  }
  return out;
}

std::vector<Batch> make_batches(const SplitDataset& split, const BatchOptions& options, Rng& rng) {
  if (options.batch_size == 0 || options.max_len == 0) throw ConfigError("batch_size and max_len must be positive");
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    if (split.train[i].items.size() >= 2) order.push_back(i);
  }
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Batch> batches;
  const std::size_t len = options.max_len;
  const std::size_t k = options.num_negatives;
  for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
    const std::size_t count = std::min(options.batch_size, order.size() - start);
    Batch batch;
    batch.batch_size = count;
    batch.max_len = len;
    batch.num_negatives = k;
    batch.users.resize(count);
    batch.item_ids.assign(count * len, kPaddingItem);
    batch.targets.assign(count * len, kPaddingItem);
    batch.negatives.assign(count * len * k, kPaddingItem);
    batch.pad_mask.assign(count * len, false);
    for (std::size_t b = 0; b < count; ++b) {
      const std::size_t index = order[start + b];
      const auto& items = split.train[index].items;
      batch.users[b] = split.train[index].user;
      // Inputs are items[0..n-2], targets items[1..n-1], both right-aligned.
      const std::size_t steps = std::min(items.size() - 1, len);
      const std::size_t first = items.size() - 1 - steps;
      const std::vector<ItemId> history = split.history(index);
      for (std::size_t s = 0; s < steps; ++s) {
        const std::size_t t = len - steps + s;
        const ItemId input = items[first + s];
        const ItemId target = items[first + s + 1];
        batch.item_ids[b * len + t] = input;
        batch.targets[b * len + t] = target;
        batch.pad_mask[b * len + t] = true;
        const ItemId only_target[] = {target};
        const std::span<const ItemId> excluded =
            options.exclusion == NegativeExclusion::History ? std::span<const ItemId>(history)
                                                            : std::span<const ItemId>(only_target);
        const auto negs = sample_negatives(excluded, split.num_items(), k, rng);
        std::copy(negs.begin(), negs.end(), batch.negatives.begin() + static_cast<std::ptrdiff_t>((b * len + t) * k));
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

CorpusStats corpus_stats(std::span<const UserSequence> sequences, std::size_t num_items) {
  CorpusStats stats;
  stats.users = sequences.size();
  std::set<ItemId> seen;
  for (const auto& s : sequences) {
    stats.actions += s.items.size();
    seen.insert(s.items.begin(), s.items.end());
  }
  stats.items = num_items == 0 ? seen.size() : num_items;
  if (stats.users > 0) stats.actions_per_user = static_cast<double>(stats.actions) / static_cast<double>(stats.users);
  if (stats.items > 0) stats.actions_per_item = static_cast<double>(stats.actions) / static_cast<double>(stats.items);
  return stats;
}

namespace {

json header(const char* kind, const IdMaps* ids) {
  json h{{"kind", kind}, {"format_version", kDatasetFormatVersion}};
  if (ids != nullptr) {
    h["user_ids"] = ids->user_raw;
    h["item_ids"] = std::vector<std::int64_t>(ids->item_raw.begin() + 1, ids->item_raw.end());
  }
  return h;
}

json read_header(std::istream& in, const std::string& kind, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  json h;
  try {
    h = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": bad header: " + e.what());
  }
  if (h.value("kind", std::string{}) != kind) throw DataError(path.string() + ": not a " + kind + " file");
  const int version = h.value("format_version", -1);
  if (version != kDatasetFormatVersion) {
    throw DataError(path.string() + ": format version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kDatasetFormatVersion) + ")");
  }
  return h;
}

}  // namespace

void save_split(const SplitDataset& split, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << header("rksa-split", &split.ids).dump() << '\n';
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    json rec{{"user", split.train[i].user}, {"train", split.train[i].items}};
    if (i < split.valid.size()) rec["valid"] = split.valid[i].target;
    if (i < split.test.size()) rec["test"] = split.test[i].target;
    out << rec.dump() << '\n';
  }
}

SplitDataset load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  const json h = read_header(in, "rksa-split", path);
  SplitDataset split;
  split.ids.user_raw = h.at("user_ids").get<std::vector<std::int64_t>>();
  split.ids.item_raw = {0};
  for (auto v : h.at("item_ids").get<std::vector<std::int64_t>>()) split.ids.item_raw.push_back(v);

  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json rec = json::parse(line);
      const auto user = rec.at("user").get<UserId>();
      auto items = rec.at("train").get<std::vector<ItemId>>();
      const ItemId valid = rec.at("valid").get<ItemId>();
      const ItemId test = rec.at("test").get<ItemId>();
      std::vector<ItemId> test_prefix = items;
      test_prefix.push_back(valid);
      split.valid.push_back({user, items, valid});
      split.test.push_back({user, std::move(test_prefix), test});
      split.train.push_back({user, std::move(items)});
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad split record: ") + e.what(), line_no);
    }
  }
  return split;
}

void save_cooc(const CoocStats& cooc, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  json h = header("rksa-cooc", nullptr);
  h["num_items"] = cooc.num_items();
  h["item_count"] = std::vector<std::int64_t>(cooc.item_counts().begin() + 1, cooc.item_counts().end());
  out << h.dump() << '\n';
  for (const auto& [a, b, c] : cooc.sorted_pairs()) out << json::array({a, b, c}).dump() << '\n';
}

CoocStats load_cooc(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  const json h = read_header(in, "rksa-cooc", path);
  CoocStats cooc(h.at("num_items").get<std::size_t>());
  const auto counts = h.at("item_count").get<std::vector<std::int64_t>>();
  for (std::size_t i = 0; i < counts.size(); ++i) cooc.set_item_count(static_cast<ItemId>(i + 1), counts[i]);
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json rec = json::parse(line);
      cooc.set_pair(rec.at(0).get<ItemId>(), rec.at(1).get<ItemId>(), rec.at(2).get<std::int64_t>());
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad pair record: ") + e.what(), line_no);
    }
  }
  return cooc;
}

}  // namespace rksa
