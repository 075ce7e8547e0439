#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <unordered_map>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rksa/grad_check.hpp"
#include "rksa/run_config.hpp"
#include "rksa/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rksa;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

constexpr const char* kOutputRootEnv = "RKSA_OUTPUT_ROOT";
constexpr const char* kSplitFile = "split.jsonl";
constexpr const char* kCoocFile = "cooc.jsonl";
constexpr const char* kCheckpointFile = "model.ckpt";

/// Relative artifact paths live under $RKSA_OUTPUT_ROOT when it is set.
fs::path artifact_path(const fs::path& p) {
  const char* root = std::getenv(kOutputRootEnv);
  if (p.is_absolute() || root == nullptr || *root == '\0') return p;
  return fs::path(root) / p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(10);
  return out;
}

struct Prepared {
  SplitDataset split;
  CoocStats cooc;
};

Prepared load_prepared(const fs::path& dir) {
  return {load_split(dir / kSplitFile), load_cooc(dir / kCoocFile)};
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string token;
  while (std::getline(in, token, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + token + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("no seeds given");
  return seeds;
}

double mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

json log_json(const LogRecord& r) {
  return {{"epoch", r.epoch},
          {"step", r.step},
          {"l_z", r.l_z},
          {"l_rank", r.l_rank},
          {"total", r.total},
          {"lr", r.lr},
          {"val_hit10", r.val_hit10 ? json(*r.val_hit10) : json()},
          {"val_ndcg10", r.val_ndcg10 ? json(*r.val_ndcg10) : json()}};
}

// ---------------------------------------------------------------- prepare

struct PrepareArgs {
  std::string input;
  std::string out;
  std::string dataset = "dataset";
  std::size_t max_len = 50;
};

int cmd_prepare(const PrepareArgs& args) {
  const InteractionLog log = load_interactions(args.input);
  const SequenceSet sequences = build_sequences(log, args.max_len);
  const SplitDataset split = split_leave_one_out(sequences.sequences, log.ids);
  const CoocStats cooc = build_cooc(split);

  const fs::path out = artifact_path(args.out);
  fs::create_directories(out);
  save_split(split, out / kSplitFile);
  save_cooc(cooc, out / kCoocFile);

  const CorpusStats stats = corpus_stats(sequences.sequences, split.num_items());
  std::cout << std::left << std::setw(16) << "dataset" << std::right << std::setw(9) << "users" << std::setw(9)
            << "items" << std::setw(11) << "actions" << std::setw(14) << "actions/user" << std::setw(14)
            << "actions/item" << '\n';
  std::cout << std::left << std::setw(16) << args.dataset << std::right << std::setw(9) << stats.users << std::setw(9)
            << stats.items << std::setw(11) << stats.actions << std::fixed << std::setprecision(2) << std::setw(14)
            << stats.actions_per_user << std::setw(14) << stats.actions_per_item << '\n';
  std::cout << "dropped users (< 3 actions): " << sequences.dropped_users << '\n';
  std::cout << "wrote " << (out / kSplitFile).string() << " and " << (out / kCoocFile).string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string dataset;
  bool baseline = false;
  std::optional<std::string> kernel;
  std::optional<std::string> item_kernel;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, max_steps, dim, blocks, heads, batch_size, max_len, eval_every, patience;
  std::optional<std::size_t> eval_max_users, eval_negatives;
  std::optional<double> lr, lambda_r, dropout;
  bool quiet = false;
};

RunConfig resolve_train_config(const TrainArgs& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  TrainConfig& t = rc.train;
  if (a.seed) t.seed = *a.seed;
  if (a.epochs) t.max_epochs = *a.epochs;
  if (a.max_steps) t.max_steps = *a.max_steps;
  if (a.dim) t.dim = *a.dim;
  if (a.blocks) t.blocks = *a.blocks;
  if (a.heads) t.heads = *a.heads;
  if (a.batch_size) t.batch_size = *a.batch_size;
  if (a.max_len) t.max_len = *a.max_len;
  if (a.eval_every) t.eval_every = *a.eval_every;
  if (a.patience) t.patience = *a.patience;
  if (a.eval_max_users) t.eval_max_users = *a.eval_max_users;
  if (a.eval_negatives) t.k_neg_eval = *a.eval_negatives;
  if (a.lr) t.lr = *a.lr;
  if (a.lambda_r) t.lambda_r = *a.lambda_r;
  if (a.dropout) t.dropout = *a.dropout;
  if (a.kernel) t.attention.kernel.active = KernelSet::parse(*a.kernel);
  if (a.item_kernel) t.attention.kernel.item_variant = parse_item_variant(*a.item_kernel);
  if (a.baseline) {
    t.attention.stochastic = false;
    t.lambda_r = 0.0;
  }
  if (!a.data.empty()) rc.data_dir = a.data;
  if (!a.out.empty()) rc.output_dir = a.out;
  if (!a.dataset.empty()) rc.dataset_name = a.dataset;
  if (rc.data_dir.empty()) throw ConfigError("train needs --data or data_dir in the config");
  if (rc.output_dir.empty()) rc.output_dir = fs::path("runs") / rc.dataset_name;
  t.validate();
  return rc;
}

int cmd_train(const TrainArgs& args) {
  const RunConfig rc = resolve_train_config(args);
  const Prepared data = load_prepared(artifact_path(rc.data_dir));
  const fs::path out = artifact_path(rc.output_dir);
  fs::create_directories(out);
  write_text(out / "config.json", to_json(rc) + "\n");

  std::ofstream log(out / "train_log.jsonl", std::ios::trunc);
  if (!log) throw DataError("cannot write " + (out / "train_log.jsonl").string());
  const TrainResult result = train(rc.train, data.split, data.cooc, [&](const LogRecord& r) {
    const std::string line = log_json(r).dump();
    log << line << '\n' << std::flush;
    if (!args.quiet) std::cout << line << '\n';
  });
  save_checkpoint(result.best, out / kCheckpointFile);

  std::cout << "steps " << result.steps << ", best epoch " << result.best.epoch;
  if (result.best.best_val_hit10) std::cout << ", val Hit@10 " << *result.best.best_val_hit10;
  if (result.early_stopped) std::cout << " (early stop)";
  std::cout << "\ncheckpoint " << (out / kCheckpointFile).string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string dataset = "dataset";
  std::string seeds = "0";
  std::optional<std::string> mode;
  std::string part = "test";
  std::optional<std::size_t> negatives;
  std::size_t samples = 1;
  std::size_t max_users = 0;
  bool full_catalog = false;
};

json metrics_json(const std::string& dataset, const std::string& mode, std::uint64_t seed, const EvalMetrics& m) {
  return {{"dataset", dataset},
          {"mode", mode},
          {"seed", seed},
          {"hit", {{"5", m.hit.at(5)}, {"10", m.hit.at(10)}}},
          {"ndcg", {{"5", m.ndcg.at(5)}, {"10", m.ndcg.at(10)}}},
          {"n_users", m.ranks.size()}};
}

int cmd_eval(const EvalArgs& args) {
  const fs::path ckpt_path = artifact_path(args.checkpoint);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Prepared data = load_prepared(artifact_path(args.data));
  if (ckpt.model.config().num_items != data.split.num_items()) {
    throw DataError("checkpoint was trained on " + std::to_string(ckpt.model.config().num_items) +
                    " items but the dataset has " + std::to_string(data.split.num_items()));
  }
  SplitPart part = SplitPart::Test;
  if (args.part == "valid") {
    part = SplitPart::Valid;
  } else if (args.part != "test") {
    throw ConfigError("--part must be 'test' or 'valid'");
  }

  EvalOptions options;
  options.mode = args.mode ? parse_attention_mode(*args.mode) : ckpt.config.eval_mode;
  options.num_negatives = args.negatives.value_or(ckpt.config.k_neg_eval);
  options.cutoffs = {1, 5, 10};
  options.stochastic_samples = args.samples;
  options.max_users = args.max_users;
  options.full_catalog = args.full_catalog;
  const std::string mode = to_string(options.mode);

  const fs::path out = args.out.empty() ? ckpt_path.parent_path() : artifact_path(args.out);
  fs::create_directories(out);

  json runs = json::array();
  std::map<std::string, std::vector<double>> series;
  for (std::uint64_t seed : parse_seeds(args.seeds)) {
    options.seed = seed;
    const EvalMetrics m = evaluate(ckpt.model, data.split, data.cooc, part, options);
    const json record = metrics_json(args.dataset, mode, seed, m);
    std::cout << record.dump() << '\n';
    runs.push_back(record);
    for (int k : {5, 10}) {
      series["hit@" + std::to_string(k)].push_back(m.hit.at(k));
      series["ndcg@" + std::to_string(k)].push_back(m.ndcg.at(k));
    }
    std::ofstream csv = open_csv(out / ("ranks_seed" + std::to_string(seed) + ".csv"));
    csv << "user,target,rank\n";
    for (std::size_t i = 0; i < m.ranks.size(); ++i) {
      csv << data.split.ids.user_raw[static_cast<std::size_t>(m.users[i])] << ','
          << data.split.ids.item_raw[static_cast<std::size_t>(m.targets[i])] << ',' << m.ranks[i] << '\n';
    }
  }

  json aggregate = {{"dataset", args.dataset}, {"mode", mode}, {"part", args.part}, {"seeds", runs.size()}};
  for (const auto& [name, values] : series) {
    aggregate[name] = {{"mean", mean(values)}, {"sd", stddev(values)}};
    std::cout << std::fixed << std::setprecision(4) << name << ' ' << mean(values) << " ± " << stddev(values)
              << '\n';
  }
  write_text(out / "metrics.json", json{{"runs", runs}, {"aggregate", aggregate}}.dump(2) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradCheckArgs {
  GradCheckConfig config;
  std::optional<std::string> corrupt;
  std::optional<std::string> kernel;
  std::string out;
};

int cmd_gradcheck(GradCheckArgs args) {
  if (args.corrupt) args.config.corrupt_tensor = *args.corrupt;
  if (args.kernel) args.config.attention.kernel.active = KernelSet::parse(*args.kernel);
  const GradCheckReport report = grad_check(args.config);

  std::cout << std::left << std::setw(32) << "tensor" << std::setw(12) << "group" << std::right << std::setw(8)
            << "entries" << std::setw(14) << "max_rel" << std::setw(14) << "max_abs" << "  status\n";
  json tensors = json::array();
  for (const auto& t : report.tensors) {
    std::cout << std::left << std::setw(32) << t.name << std::setw(12) << t.group << std::right << std::setw(8)
              << t.entries << std::scientific << std::setprecision(3) << std::setw(14) << t.max_rel_error
              << std::setw(14) << t.max_abs_error << "  " << (t.passed ? "ok" : "FAIL") << '\n';
    tensors.push_back({{"name", t.name},
                       {"group", t.group},
                       {"entries", t.entries},
                       {"max_rel_error", t.max_rel_error},
                       {"max_abs_error", t.max_abs_error},
                       {"passed", t.passed}});
  }
  std::cout << "loss " << report.loss << ", max relative error " << report.max_rel_error << " (tolerance "
            << args.config.tolerance << "): " << (report.passed ? "PASS" : "FAIL") << '\n';
  for (const auto& f : report.failures) std::cerr << "failure: " << f << '\n';
  if (!args.out.empty()) {
    const fs::path out = artifact_path(args.out);
    fs::create_directories(out);
    write_text(out / "gradcheck.json", json{{"passed", report.passed},
                                            {"loss", report.loss},
                                            {"max_rel_error", report.max_rel_error},
                                            {"tensors", tensors}}
                                               .dump(2) +
                                           "\n");
  }
  return report.passed ? kExitOk : kExitNumerical;
}

// ---------------------------------------------------------------- inspect

struct InspectArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::optional<std::int64_t> user;
  std::optional<std::string> items;
  std::optional<std::size_t> negatives;
};

struct Subject {
  UserId user = -1;
  std::vector<ItemId> items;
};

Subject inspect_subject(const InspectArgs& args, const SplitDataset& split) {
  if (args.user.has_value() == args.items.has_value()) throw ConfigError("inspect needs exactly one of --user or --items");
  Subject s;
  if (args.user) {
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      const HeldOut& h = split.test[i];
      if (split.ids.user_raw[static_cast<std::size_t>(h.user)] == *args.user) {
        s.user = h.user;
        s.items = h.prefix;
        return s;
      }
    }
    throw DataError("unknown user id " + std::to_string(*args.user));
  }
  std::unordered_map<std::int64_t, ItemId> dense;
  for (std::size_t i = 1; i < split.ids.item_raw.size(); ++i) dense[split.ids.item_raw[i]] = static_cast<ItemId>(i);
  std::stringstream in(*args.items);
  std::string token;
  while (std::getline(in, token, ',')) {
    std::int64_t raw = 0;
    try {
      std::size_t used = 0;
      raw = std::stoll(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ConfigError("bad item id '" + token + "'");
    }
    const auto it = dense.find(raw);
    if (it == dense.end()) throw DataError("unknown item id " + token);
    s.items.push_back(it->second);
  }
  if (s.items.empty()) throw ConfigError("--items is empty");
  return s;
}

int cmd_inspect(const InspectArgs& args) {
  const Checkpoint ckpt = load_checkpoint(artifact_path(args.checkpoint));
  const Prepared data = load_prepared(artifact_path(args.data));
  const SplitDataset& split = data.split;
  if (ckpt.model.config().num_items != split.num_items()) throw DataError("checkpoint and dataset disagree on items");
  Subject subject = inspect_subject(args, split);
  const std::size_t max_len = ckpt.model.config().max_len;
  if (subject.items.size() > max_len) subject.items.erase(subject.items.begin(), subject.items.end() - static_cast<std::ptrdiff_t>(max_len));

  const fs::path out = artifact_path(args.out.empty() ? std::string("inspect") : args.out);
  fs::create_directories(out);
  auto raw_item = [&](ItemId i) { return split.ids.item_raw[static_cast<std::size_t>(i)]; };

  Rng rng(0);
  ForwardTrace trace;
  forward(ckpt.model, subject.user, subject.items, data.cooc, AttentionMode::EvalLocation, false, rng, &trace);
  const auto n = static_cast<Index>(subject.items.size());
  const Matrix window = data.cooc.window(subject.items);

  for (std::size_t b = 0; b < trace.blocks.size(); ++b) {
    for (std::size_t h = 0; h < trace.blocks[b].size(); ++h) {
      const HeadTrace& t = trace.blocks[b][h];
      const std::string suffix = "_b" + std::to_string(b) + "_h" + std::to_string(h) + ".csv";
      auto write_header = [&](std::ofstream& csv, const char* first) {
        csv << first;
        for (ItemId i : subject.items) csv << ',' << raw_item(i);
        csv << '\n';
      };
      if (t.psi.size() > 0) {
        std::ofstream csv = open_csv(out / ("correlation" + suffix));
        write_header(csv, "item");
        for (Index i = 0; i < n; ++i) {
          csv << raw_item(subject.items[static_cast<std::size_t>(i)]);
          for (Index j = 0; j < n; ++j) csv << ',' << t.psi(i, j);
          csv << '\n';
        }
      }
      std::ofstream csv = open_csv(out / ("attention" + suffix));
      write_header(csv, "query");
      for (Index q = 0; q < n; ++q) {
        csv << raw_item(subject.items[static_cast<std::size_t>(q)]);
        for (Index j = 0; j < n; ++j) csv << ',' << t.weights(q, j);
        csv << '\n';
      }
      csv << "cooccurs_with_last";
      for (Index j = 0; j < n; ++j) csv << ',' << (j != n - 1 && window(j, n - 1) > 0.0 ? 1 : 0);
      csv << '\n';
    }
  }

  {
    // Mixture weights averaged over every user embedding.
    std::ofstream csv = open_csv(out / "kernel_weights.csv");
    csv << "block,head,counting,item,user\n";
    const auto& blocks = ckpt.model.blocks();
    const auto active = ckpt.model.config().attention.kernel.active;
    const Index users = ckpt.model.tables().num_users();
    ad::NoGradGuard guard;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      for (std::size_t h = 0; h < blocks[b].heads.size(); ++h) {
        RowVector total = RowVector::Zero(3);
        for (Index u = 0; u < users; ++u) {
          total += mixture(lookup_user(ckpt.model.tables(), static_cast<UserId>(u)), blocks[b].heads[h].kernel, active)
                       .value()
                       .row(0);
        }
        total /= static_cast<double>(std::max<Index>(users, 1));
        csv << b << ',' << h << ',' << total(0) << ',' << total(1) << ',' << total(2) << '\n';
      }
    }
  }

  {
    std::ofstream csv = open_csv(out / "item_embeddings.csv");
    const Matrix& e = ckpt.model.tables().item.value();
    csv << "item";
    for (Index k = 0; k < e.cols(); ++k) csv << ",e" << k;
    csv << '\n';
    for (Index i = 1; i < e.rows(); ++i) {
      csv << raw_item(static_cast<ItemId>(i));
      for (Index k = 0; k < e.cols(); ++k) csv << ',' << e(i, k);
      csv << '\n';
    }
  }

  {
    EvalOptions options;
    options.mode = AttentionMode::EvalLocation;
    options.num_negatives = args.negatives.value_or(ckpt.config.k_neg_eval);
    const EvalMetrics m = evaluate(ckpt.model, split, data.cooc, SplitPart::Test, options);
    std::ofstream csv = open_csv(out / "frequency_ranks.csv");
    csv << "bucket,mean_rank\n";
    for (const auto& [bucket, rank] : m.frequency_buckets) csv << bucket << ',' << rank << '\n';
  }

  std::cout << "wrote inspection CSVs for a sequence of " << n << " items to " << out.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RKSA sequential recommender"};
  app.require_subcommand(1);
  app.footer(std::string("Relative output paths are resolved under $") + kOutputRootEnv + " when it is set.");

  PrepareArgs prepare;
  auto* p = app.add_subcommand("prepare", "Split a raw 'user item' log and count co-occurrences");
  p->add_option("--input", prepare.input, "Raw interaction file")->required();
  p->add_option("--out", prepare.out, "Output directory for split.jsonl and cooc.jsonl")->required();
  p->add_option("--dataset", prepare.dataset, "Name shown in the statistics table");
  p->add_option("--max-len", prepare.max_len, "Keep each user's latest N actions")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model and write a checkpoint plus JSON-lines log");
  t->add_option("--config", tr.config, "JSON run config (flags override it)");
  t->add_option("--data", tr.data, "Directory written by 'prepare'");
  t->add_option("--out", tr.out, "Run directory");
  t->add_option("--dataset", tr.dataset, "Dataset name");
  t->add_flag("--baseline", tr.baseline, "Deterministic location-only attention (no skew-normal logits)");
  t->add_option("--kernel", tr.kernel, "Active kernels, e.g. C, C+I, C+I+U");
  t->add_option("--item-kernel", tr.item_kernel, "linear or rbf");
  t->add_option("--seed", tr.seed);
  t->add_option("--epochs", tr.epochs, "Maximum epochs");
  t->add_option("--max-steps", tr.max_steps, "Stop after N optimizer steps");
  t->add_option("--dim", tr.dim);
  t->add_option("--blocks", tr.blocks);
  t->add_option("--heads", tr.heads);
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--max-len", tr.max_len);
  t->add_option("--eval-every", tr.eval_every);
  t->add_option("--patience", tr.patience);
  t->add_option("--eval-max-users", tr.eval_max_users);
  t->add_option("--eval-negatives", tr.eval_negatives, "Sampled negatives for validation");
  t->add_option("--lr", tr.lr);
  t->add_option("--lambda-r", tr.lambda_r);
  t->add_option("--dropout", tr.dropout);
  t->add_flag("--quiet", tr.quiet, "Only write the log file");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Rank held-out targets against sampled negatives");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data, "Directory written by 'prepare'")->required();
  e->add_option("--out", ev.out, "Where metrics.json and ranks CSVs go (default: next to the checkpoint)");
  e->add_option("--dataset", ev.dataset);
  e->add_option("--seeds", ev.seeds, "Comma-separated evaluation seeds")->capture_default_str();
  e->add_option("--mode", ev.mode, "eval_location, eval_mean_shift or eval_stochastic");
  e->add_option("--part", ev.part, "test or valid")->capture_default_str();
  e->add_option("--negatives", ev.negatives, "Sampled negatives per user");
  e->add_option("--samples", ev.samples, "Draws averaged per user in eval_stochastic mode");
  e->add_option("--max-users", ev.max_users, "Evaluate only the first N users");
  e->add_flag("--full-catalog", ev.full_catalog, "Rank against every item outside the history");

  GradCheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Compare tape gradients with central finite differences");
  g->add_option("--dim", gc.config.dim)->capture_default_str();
  g->add_option("--seq-len", gc.config.seq_len)->capture_default_str();
  g->add_option("--blocks", gc.config.blocks)->capture_default_str();
  g->add_option("--heads", gc.config.heads)->capture_default_str();
  g->add_option("--items", gc.config.num_items)->capture_default_str();
  g->add_option("--negatives", gc.config.num_negatives)->capture_default_str();
  g->add_option("--lambda-r", gc.config.lambda_r)->capture_default_str();
  g->add_option("--step", gc.config.step)->capture_default_str();
  g->add_option("--tolerance", gc.config.tolerance)->capture_default_str();
  g->add_option("--seed", gc.config.seed)->capture_default_str();
  g->add_option("--max-entries", gc.config.max_entries, "Entries checked per tensor (0 = all)");
  g->add_flag("--zero-init", gc.config.zero_init, "Zero every non-embedding tensor");
  g->add_option("--corrupt", gc.corrupt, "Perturb this tensor's analytic gradient (harness self-test)");
  g->add_option("--kernel", gc.kernel, "Active kernels");
  g->add_option("--out", gc.out, "Directory for gradcheck.json");

  InspectArgs in;
  auto* i = app.add_subcommand("inspect", "Export correlation, kernel-weight, attention and embedding CSVs");
  i->add_option("--checkpoint", in.checkpoint)->required();
  i->add_option("--data", in.data)->required();
  i->add_option("--out", in.out, "Output directory (default: inspect)");
  i->add_option("--user", in.user, "Raw user id; uses the user's test prefix");
  i->add_option("--items", in.items, "Comma-separated raw item ids of a synthetic sequence");
  i->add_option("--negatives", in.negatives, "Negatives for the frequency breakdown");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (p->parsed()) return cmd_prepare(prepare);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (g->parsed()) return cmd_gradcheck(gc);
    if (i->parsed()) return cmd_inspect(in);
  } catch (const ConfigError& err) {
    std::cerr << "rksa: " << err.what() << '\n';
    return kExitUsage;
  } catch (const DataError& err) {
    std::cerr << "rksa: " << err.what() << '\n';
    return kExitData;
  } catch (const NumericalError& err) {
    std::cerr << "rksa: numerical failure: " << err.what() << '\n';
    return kExitNumerical;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "rksa: " << err.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
