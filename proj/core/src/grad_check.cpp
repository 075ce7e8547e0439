#include "rksa/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rksa {

namespace {

struct Fixture {
  Model model;
  CoocStats cooc;
  Batch batch;
};

Fixture make_fixture(const GradCheckConfig& config) {
  if (config.num_items < config.seq_len + config.num_negatives + 1) {
    throw ConfigError("grad_check: catalog too small for the sequence and negatives");
  }
  Rng rng(config.seed);
  ModelConfig mc;
  mc.num_items = config.num_items;
  mc.num_users = 2;
  mc.max_len = config.seq_len;
  mc.dim = config.dim;
  mc.blocks = config.blocks;
  mc.heads = config.heads;
  mc.dropout = 0.0;
  mc.attention = config.attention;
  Fixture f{Model::create(mc, rng), CoocStats(config.num_items), Batch{}};

  if (config.zero_init) {
    for (auto& p : f.model.parameters()) {
      if (p.group == "embeddings") continue;
      const bool gain = p.name.ends_with("_gain");
      p.var.mutable_value().setConstant(gain ? 1.0 : 0.0);
    }
  }

  // A permutation gives distinct items; a few overlapping histories give
  // varied co-occurrence counts for the rank loss.
  std::vector<ItemId> perm(config.num_items);
  std::iota(perm.begin(), perm.end(), 1);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::vector<ItemId> seq(perm.begin(), perm.begin() + static_cast<long>(config.seq_len + 1));
  f.cooc.add_user(seq);
  for (std::size_t u = 0; u < 4; ++u) {
    std::vector<ItemId> other;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if ((i + u) % 3 != 0) other.push_back(seq[i]);
    }
    other.push_back(perm[config.seq_len + 1 + u % (config.num_items - config.seq_len - 1)]);
    f.cooc.add_user(other);
  }

  Batch& b = f.batch;
  b.batch_size = 1;
  b.max_len = config.seq_len;
  b.num_negatives = config.num_negatives;
  b.users = {1};
  for (std::size_t t = 0; t < config.seq_len; ++t) {
    b.item_ids.push_back(seq[t]);
    b.targets.push_back(seq[t + 1]);
    b.pad_mask.push_back(true);
    const auto negs = sample_negatives(seq, config.num_items, config.num_negatives, rng);
    b.negatives.insert(b.negatives.end(), negs.begin(), negs.end());
  }
  return f;
}

}  // namespace

GradCheckReport grad_check(const GradCheckConfig& config) {
  Fixture f = make_fixture(config);
  const std::uint64_t noise_seed = config.seed ^ 0x9e3779b97f4a7c15ULL;

  auto evaluate = [&](bool with_grad) {
    Rng rng(noise_seed);
    if (!with_grad) {
      ad::NoGradGuard guard;
      return batch_loss(f.model, f.batch, f.cooc, config.lambda_r, AttentionMode::TrainStochastic, false, rng)
          .total.scalar();
    }
    f.model.zero_grad();
    BatchLoss loss = batch_loss(f.model, f.batch, f.cooc, config.lambda_r, AttentionMode::TrainStochastic, false, rng);
    ad::backward(loss.total);
    return loss.total.scalar();
  };

  GradCheckReport report;
  report.loss = evaluate(true);
  std::vector<NamedParameter> params = f.model.parameters();
  std::vector<Matrix> analytic;
  for (const auto& p : params) {
    analytic.push_back(p.var.grad().size() == 0 ? Matrix::Zero(p.var.rows(), p.var.cols()) : p.var.grad());
    if (config.corrupt_tensor && p.name == *config.corrupt_tensor) analytic.back()(0, 0) += 1e-2;
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    NamedParameter& p = params[i];
    TensorReport tr;
    tr.name = p.name;
    tr.group = p.group;
    Matrix& value = p.var.mutable_value();
    const Index total = value.size();
    const Index limit = config.max_entries == 0 ? total : std::min<Index>(total, static_cast<Index>(config.max_entries));
    for (Index k = 0; k < limit; ++k) {
      double& w = value.data()[k];
      const double saved = w;
      w = saved + config.step;
      const double plus = evaluate(false);
      w = saved - config.step;
      const double minus = evaluate(false);
      w = saved;
      const double numeric = (plus - minus) / (2.0 * config.step);
      const double a = analytic[i].data()[k];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), config.floor});
      tr.max_abs_error = std::max(tr.max_abs_error, abs_err);
      tr.max_rel_error = std::max(tr.max_rel_error, rel);
      ++tr.entries;
    }
    tr.passed = tr.max_rel_error < config.tolerance;
    if (!tr.passed) {
      report.passed = false;
      report.failures.push_back(tr.name);
    }
    report.max_rel_error = std::max(report.max_rel_error, tr.max_rel_error);
    report.tensors.push_back(std::move(tr));
  }
  return report;
}

}  // namespace rksa
