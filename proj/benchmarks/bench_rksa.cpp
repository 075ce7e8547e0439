#include <benchmark/benchmark.h>

#include <random>

#include "rksa/kernel.hpp"
#include "rksa/train.hpp"

using namespace rksa;

namespace {

SplitDataset synthetic_split(std::size_t users, std::size_t items, std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> start(0, items - 1);
  IdMaps ids;
  for (std::size_t u = 0; u < users; ++u) ids.user_raw.push_back(static_cast<std::int64_t>(u));
  for (std::size_t i = 0; i <= items; ++i) ids.item_raw.push_back(static_cast<std::int64_t>(i));
  std::vector<UserSequence> sequences;
  for (std::size_t u = 0; u < users; ++u) {
    UserSequence seq{static_cast<UserId>(u), {}};
    const std::size_t s = start(rng);
    for (std::size_t t = 0; t < len; ++t) seq.items.push_back(static_cast<ItemId>((s + 7 * t) % items + 1));
    sequences.push_back(std::move(seq));
  }
  return split_leave_one_out(sequences, ids);
}

Model bench_model(const SplitDataset& split, std::size_t max_len) {
  ModelConfig config;
  config.num_items = split.num_items();
  config.num_users = split.num_users();
  config.max_len = max_len;
  Rng rng(1);
  return Model::create(config, rng);
}

}  // namespace

static void BM_Forward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto mode = static_cast<AttentionMode>(state.range(1));
  const SplitDataset split = synthetic_split(64, 900, n + 2, 3);
  const CoocStats cooc = build_cooc(split);
  const Model model = bench_model(split, n);
  Rng rng(2);
  ad::NoGradGuard guard;
  for (auto _ : state) {
    const ForwardOutput out = forward(model, 0, split.train[0].items, cooc, mode, false, rng);
    benchmark::DoNotOptimize(out.hidden.value().data());
  }
  state.SetLabel(to_string(mode));
}
BENCHMARK(BM_Forward)
    ->ArgsProduct({{10, 25, 50},
                   {static_cast<int>(AttentionMode::EvalLocation), static_cast<int>(AttentionMode::TrainStochastic)}})
    ->Unit(benchmark::kMicrosecond);

static void BM_CorrelationCholesky(benchmark::State& state) {
  const Index n = state.range(0);
  const Index d = 50;
  Rng rng(4);
  std::normal_distribution<double> normal;
  Matrix x(n, d);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  const SplitDataset split = synthetic_split(64, 900, static_cast<std::size_t>(n) + 2, 5);
  const CoocStats cooc = build_cooc(split);
  const Matrix counting = counting_gram(split.train[0].items, cooc);
  Matrix u(1, d);
  for (Index i = 0; i < d; ++i) u(0, i) = normal(rng);
  const KernelWeights w = init_kernel_weights(d, rng);
  const KernelConfig config;
  ad::NoGradGuard guard;
  for (auto _ : state) {
    const CorrelationOutput out = correlation_matrix(ad::constant(x), counting, ad::constant(u), w, config);
    Eigen::LLT<Matrix> llt(out.psi.value());
    benchmark::DoNotOptimize(llt.matrixLLT().data());
  }
}
BENCHMARK(BM_CorrelationCholesky)->Arg(10)->Arg(25)->Arg(50)->Unit(benchmark::kMicrosecond);

static void BM_TrainingStep(benchmark::State& state) {
  const auto batch_size = static_cast<std::size_t>(state.range(0));
  const SplitDataset split = synthetic_split(256, 900, 52, 6);
  const CoocStats cooc = build_cooc(split);
  const Model model = bench_model(split, 50);
  Rng rng(7);
  BatchOptions options;
  options.batch_size = batch_size;
  const std::vector<Batch> batches = make_batches(split, options, rng);
  auto params = model.parameters();
  for (auto _ : state) {
    for (auto& p : params) p.var.zero_grad();
    const BatchLoss loss = batch_loss(model, batches.front(), cooc, 0.001, AttentionMode::TrainStochastic, true, rng);
    ad::backward(loss.total);
    benchmark::DoNotOptimize(loss.report.total);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch_size));
}
BENCHMARK(BM_TrainingStep)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
