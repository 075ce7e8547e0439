#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fixtures.hpp"
#include "rksa/grad_check.hpp"
#include "rksa/run_config.hpp"
#include "rksa/train.hpp"

using namespace rksa;

namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "rksa_test_train";
  fs::create_directories(dir);
  return dir / name;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.batch_size = 8;
  c.dim = 8;
  c.blocks = 1;
  c.max_len = 8;
  c.max_epochs = 4;
  c.eval_every = 2;
  c.k_neg_eval = 20;
  c.seed = 5;
  return c;
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(TrainConfig, Defaults) {
  const TrainConfig c;
  EXPECT_EQ(c.batch_size, 128U);
  EXPECT_EQ(c.dim, 64U);
  EXPECT_EQ(c.blocks, 2U);
  EXPECT_EQ(c.heads, 1U);
  EXPECT_EQ(c.dropout, 0.5);
  EXPECT_EQ(c.lr, 0.001);
  EXPECT_EQ(c.lambda_r, 0.001);
  EXPECT_EQ(c.max_len, 50U);
  EXPECT_EQ(c.k_neg_train, 1U);
  EXPECT_EQ(c.k_neg_eval, 100U);
  EXPECT_NO_THROW(c.validate());
}

TEST(TrainConfig, ValidateRejects) {
  auto expect_bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  expect_bad([](TrainConfig& c) { c.batch_size = 0; });
  expect_bad([](TrainConfig& c) { c.dim = 0; });
  expect_bad([](TrainConfig& c) { c.heads = 3; });
  expect_bad([](TrainConfig& c) { c.dropout = 1.0; });
  expect_bad([](TrainConfig& c) { c.dropout = -0.1; });
  expect_bad([](TrainConfig& c) { c.lr = 0.0; });
  expect_bad([](TrainConfig& c) { c.lambda_r = -1.0; });
  expect_bad([](TrainConfig& c) { c.max_len = 2; });
  expect_bad([](TrainConfig& c) { c.eval_every = 0; });
  expect_bad([](TrainConfig& c) { c.lr_decay_factor = 0.0; });
  expect_bad([](TrainConfig& c) { c.attention.kernel.active = KernelSet{false, false, false}; });
  expect_bad([](TrainConfig& c) { c.attention.kernel.jitter = 0.0; });
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<NamedParameter> params = {{"w", "test", ad::parameter((Matrix(1, 3) << 1.0, -2.0, 0.5).finished())}};
  params[0].var.mutable_grad() = (Matrix(1, 3) << 0.3, -4.0, 0.0).finished();
  Adam adam(0.9, 0.999, 1e-8);
  adam.step(params, 0.01);
  const Matrix& w = params[0].var.value();
  EXPECT_NEAR(w(0, 0), 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(w(0, 1), -2.0 + 0.01 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_EQ(w(0, 2), 0.5);
  EXPECT_EQ(adam.steps(), 1U);
  EXPECT_NEAR(adam.first_moments()[0](0, 1), -0.4, 1e-15);
  EXPECT_NEAR(adam.second_moments()[0](0, 1), 0.016, 1e-15);
}

TEST(Adam, SecondStepUsesBiasCorrection) {
  std::vector<NamedParameter> params = {{"w", "test", ad::parameter(Matrix::Zero(1, 1))}};
  Adam adam(0.9, 0.999, 0.0);
  params[0].var.mutable_grad() = Matrix::Constant(1, 1, 1.0);
  adam.step(params, 1.0);
  params[0].var.mutable_grad() = Matrix::Constant(1, 1, 3.0);
  adam.step(params, 1.0);
  const double m = 0.9 * 0.1 + 0.1 * 3.0;
  const double v = 0.999 * 0.001 + 0.001 * 9.0;
  const double m_hat = m / (1.0 - 0.81);
  const double v_hat = v / (1.0 - 0.999 * 0.999);
  EXPECT_NEAR(params[0].var.value()(0, 0), -1.0 - m_hat / std::sqrt(v_hat), 1e-12);
}

TEST(ClipGradients, RescalesGlobalNorm) {
  std::vector<NamedParameter> params = {{"a", "t", ad::parameter(Matrix::Zero(1, 2))},
                                        {"b", "t", ad::parameter(Matrix::Zero(1, 1))}};
  params[0].var.mutable_grad() = (Matrix(1, 2) << 6.0, 0.0).finished();
  params[1].var.mutable_grad() = Matrix::Constant(1, 1, 8.0);
  EXPECT_DOUBLE_EQ(clip_gradients(params, 5.0), 10.0);
  EXPECT_DOUBLE_EQ(params[0].var.grad()(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(params[1].var.grad()(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(clip_gradients(params, 50.0), 5.0);
  EXPECT_DOUBLE_EQ(params[1].var.grad()(0, 0), 4.0);
}

TEST(BatchLoss, ReportMatchesWeights) {
  const SplitDataset split = fixture::random_split(6, 30, 5, 8, 2);
  const CoocStats cooc = build_cooc(split);
  Rng rng(3);
  const Model model = Model::create(model_config(tiny_config(), split.num_items(), split.num_users()), rng);
  BatchOptions options;
  options.batch_size = 6;
  options.max_len = 8;
  const std::vector<Batch> batches = make_batches(split, options, rng);
  ASSERT_EQ(batches.size(), 1U);
  Rng a(4), b(4);
  const BatchLoss with = batch_loss(model, batches[0], cooc, 0.5, AttentionMode::TrainStochastic, false, a);
  const BatchLoss without = batch_loss(model, batches[0], cooc, 0.0, AttentionMode::TrainStochastic, false, b);
  EXPECT_NEAR(with.report.total, with.report.l_z + 0.5 * with.report.l_rank, 1e-12);
  EXPECT_NEAR(with.total.scalar(), with.report.total, 1e-12);
  EXPECT_NEAR(with.report.l_z, without.report.l_z, 1e-12);
  EXPECT_GT(with.report.l_rank, 0.0);
  EXPECT_EQ(without.report.total, without.report.l_z);
  std::size_t positions = 0;
  for (const auto& seq : split.train) positions += seq.items.size() - 1;
  EXPECT_EQ(with.positions, positions);
}

TEST(Train, SameSeedSameLog) {
  const SplitDataset split = fixture::random_split(24, 40, 5, 10, 6);
  const CoocStats cooc = build_cooc(split);
  const TrainResult a = train(tiny_config(), split, cooc);
  const TrainResult b = train(tiny_config(), split, cooc);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].total, b.log[i].total);
    EXPECT_EQ(a.log[i].l_rank, b.log[i].l_rank);
    EXPECT_EQ(a.log[i].val_hit10, b.log[i].val_hit10);
  }
  TrainConfig other = tiny_config();
  other.seed = 6;
  const TrainResult c = train(other, split, cooc);
  EXPECT_NE(a.log.front().total, c.log.front().total);
}

TEST(Train, LogRecordsAndSink) {
  const SplitDataset split = fixture::random_split(24, 40, 5, 10, 7);
  const CoocStats cooc = build_cooc(split);
  std::vector<LogRecord> seen;
  const TrainResult r = train(tiny_config(), split, cooc, [&](const LogRecord& rec) { seen.push_back(rec); });
  ASSERT_EQ(seen.size(), r.log.size());
  for (const LogRecord& rec : r.log) {
    EXPECT_TRUE(std::isfinite(rec.total));
    EXPECT_EQ(rec.val_hit10.has_value(), rec.epoch % 2 == 0);
  }
  EXPECT_EQ(r.steps, 4U * 3U);
  EXPECT_TRUE(r.best.best_val_hit10.has_value());
}

TEST(Train, MaxStepsStopsMidEpoch) {
  const SplitDataset split = fixture::random_split(24, 40, 5, 10, 7);
  const CoocStats cooc = build_cooc(split);
  TrainConfig c = tiny_config();
  c.max_steps = 5;
  const TrainResult r = train(c, split, cooc);
  EXPECT_EQ(r.steps, 5U);
  EXPECT_EQ(r.log.size(), 2U);
}

TEST(Train, PatienceZeroStopsAtFirstStall) {
  const SplitDataset split = fixture::random_split(30, 60, 5, 10, 8);
  const CoocStats cooc = build_cooc(split);
  TrainConfig c = tiny_config();
  c.eval_every = 1;
  c.patience = 0;
  c.max_epochs = 60;
  const TrainResult r = train(c, split, cooc);
  ASSERT_TRUE(r.early_stopped);
  double best = -1.0;
  for (std::size_t i = 0; i + 1 < r.log.size(); ++i) {
    ASSERT_TRUE(r.log[i].val_hit10.has_value());
    EXPECT_GT(*r.log[i].val_hit10, best);
    best = *r.log[i].val_hit10;
  }
  EXPECT_LE(*r.log.back().val_hit10, best);
  EXPECT_EQ(r.best.best_val_hit10, best);
}

TEST(Train, StallDecaysLearningRate) {
  const SplitDataset split = fixture::random_split(30, 60, 5, 10, 8);
  const CoocStats cooc = build_cooc(split);
  TrainConfig c = tiny_config();
  c.eval_every = 1;
  c.patience = 3;
  c.max_epochs = 60;
  const TrainResult r = train(c, split, cooc);
  double best = -1.0;
  for (std::size_t i = 0; i + 1 < r.log.size(); ++i) {
    const bool improved = *r.log[i].val_hit10 > best;
    best = std::max(best, *r.log[i].val_hit10);
    EXPECT_DOUBLE_EQ(r.log[i + 1].lr, improved ? r.log[i].lr : r.log[i].lr * 0.5);
  }
}

TEST(Train, PaddingRowStaysZero) {
  const SplitDataset split = fixture::random_split(24, 40, 3, 12, 9);
  const CoocStats cooc = build_cooc(split);
  TrainConfig c = tiny_config();
  c.max_len = 5;
  const TrainResult r = train(c, split, cooc);
  EXPECT_EQ(r.best.model.tables().item.value().row(0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Train, OverfitsSingleSequence) {
  const SplitDataset split = fixture::single_sequence_split(10);
  const CoocStats cooc = build_cooc(split);
  TrainConfig c;
  c.batch_size = 1;
  c.max_len = 10;
  c.max_epochs = 500;
  c.max_steps = 500;
  c.eval_every = 1000;
  c.negative_exclusion = NegativeExclusion::Target;
  const TrainResult r = train(c, split, cooc);
  EXPECT_EQ(r.steps, 500U);
  EXPECT_EQ(fixture::training_hit_at_1(r.best.model, split.train[0], cooc), 1.0);
}

TEST(Train, NoiseFreeOverfitLossIsMonotone) {
  const SplitDataset split = fixture::single_sequence_split(10);
  const CoocStats cooc = build_cooc(split);
  TrainConfig c;
  c.batch_size = 1;
  c.max_len = 10;
  c.max_epochs = 500;
  c.max_steps = 500;
  c.eval_every = 1000;
  c.dropout = 0.0;
  c.k_neg_train = 9;
  c.negative_exclusion = NegativeExclusion::Target;
  const TrainResult r = train(c, split, cooc);
  std::vector<double> smoothed;
  for (std::size_t i = 5; i + 10 <= r.log.size(); i += 10) {
    double s = 0.0;
    for (std::size_t j = i; j < i + 10; ++j) s += r.log[j].total;
    smoothed.push_back(s / 10.0);
  }
  ASSERT_GE(smoothed.size(), 40U);
  for (std::size_t i = 1; i < smoothed.size(); ++i) EXPECT_LE(smoothed[i], smoothed[i - 1]) << i;
}

TEST(Checkpoint, RoundTripGivesIdenticalEvaluation) {
  const SplitDataset split = fixture::random_split(24, 40, 5, 10, 10);
  const CoocStats cooc = build_cooc(split);
  const TrainResult r = train(tiny_config(), split, cooc);
  const fs::path path = temp_path("roundtrip.ckpt");
  save_checkpoint(r.best, path);
  const Checkpoint loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.epoch, r.best.epoch);
  EXPECT_EQ(loaded.adam_steps, r.best.adam_steps);
  EXPECT_EQ(loaded.rng_state, r.best.rng_state);
  EXPECT_EQ(loaded.best_val_hit10, r.best.best_val_hit10);
  EXPECT_EQ(config_hash(loaded.config), config_hash(r.best.config));
  const auto before = r.best.model.parameters();
  const auto after = loaded.model.parameters();
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(before[i].name, after[i].name);
    EXPECT_TRUE(before[i].var.value() == after[i].var.value()) << before[i].name;
  }
  ASSERT_EQ(loaded.adam_m.size(), before.size());
  EXPECT_TRUE(loaded.adam_v.back() == r.best.adam_v.back());

  EvalOptions options;
  options.seed = 1;
  options.num_negatives = 20;
  const EvalMetrics a = evaluate(r.best.model, split, cooc, SplitPart::Test, options);
  const EvalMetrics b = evaluate(loaded.model, split, cooc, SplitPart::Test, options);
  EXPECT_EQ(a.ranks, b.ranks);
  EXPECT_EQ(a.hit, b.hit);
  EXPECT_EQ(a.ndcg, b.ndcg);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  const SplitDataset split = fixture::random_split(12, 30, 5, 8, 11);
  const CoocStats cooc = build_cooc(split);
  TrainConfig c = tiny_config();
  c.max_epochs = 1;
  const TrainResult r = train(c, split, cooc);
  const fs::path good = temp_path("good.ckpt");
  save_checkpoint(r.best, good);
  const std::vector<char> bytes = read_bytes(good);

  const fs::path truncated = temp_path("truncated.ckpt");
  write_bytes(truncated, std::vector<char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2)));
  EXPECT_THROW(load_checkpoint(truncated), DataError);

  std::vector<char> versioned = bytes;
  versioned[8] = static_cast<char>(kCheckpointVersion + 1);
  const fs::path future = temp_path("future.ckpt");
  write_bytes(future, versioned);
  try {
    load_checkpoint(future);
    FAIL() << "version mismatch accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("incompatible format version"), std::string::npos);
  }

  std::vector<char> magic = bytes;
  magic[0] = 'X';
  const fs::path bad_magic = temp_path("magic.ckpt");
  write_bytes(bad_magic, magic);
  EXPECT_THROW(load_checkpoint(bad_magic), DataError);

  EXPECT_THROW(load_checkpoint(temp_path("missing.ckpt")), DataError);
}

TEST(GradCheck, DefaultModelPassesWithFullCoverage) {
  const GradCheckReport report = grad_check(GradCheckConfig{});
  EXPECT_TRUE(report.passed) << (report.failures.empty() ? "" : report.failures.front());
  EXPECT_LT(report.max_rel_error, 1e-4);
  EXPECT_TRUE(std::isfinite(report.loss));
  std::set<std::string> groups;
  for (const auto& t : report.tensors) {
    EXPECT_GT(t.entries, 0U) << t.name;
    groups.insert(t.group);
  }
  for (const char* g : {"embeddings", "attention", "location", "omega", "shape", "kernel", "mixture", "ffn", "norm"}) {
    EXPECT_TRUE(groups.count(g)) << g;
  }
  Rng rng(0);
  ModelConfig mc;
  mc.num_items = 12;
  mc.num_users = 5;
  mc.max_len = 5;
  mc.dim = 8;
  mc.blocks = 1;
  EXPECT_EQ(report.tensors.size(), Model::create(mc, rng).parameters().size());
}

TEST(GradCheck, ZeroInitPasses) {
  GradCheckConfig config;
  config.zero_init = true;
  EXPECT_TRUE(grad_check(config).passed);
}

TEST(GradCheck, TwoBlocksTwoHeadsPass) {
  GradCheckConfig config;
  config.blocks = 2;
  config.heads = 2;
  config.max_entries = 12;
  const GradCheckReport report = grad_check(config);
  EXPECT_TRUE(report.passed) << (report.failures.empty() ? "" : report.failures.front());
}

TEST(GradCheck, CorruptedGradientFails) {
  GradCheckConfig config;
  config.corrupt_tensor = "block0.head0.shape_key";
  config.max_entries = 4;
  const GradCheckReport report = grad_check(config);
  EXPECT_FALSE(report.passed);
  ASSERT_FALSE(report.failures.empty());
  EXPECT_NE(report.failures.front().find("block0.head0.shape_key"), std::string::npos);
}
