#include "rksa/train.hpp"

#include <cmath>
#include <sstream>

namespace rksa {

void TrainConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(batch_size, "batch_size");
  positive(dim, "dim");
  positive(blocks, "blocks");
  positive(heads, "heads");
  positive(max_len, "max_len");
  positive(k_neg_train, "k_neg_train");
  positive(k_neg_eval, "k_neg_eval");
  positive(max_epochs, "max_epochs");
  positive(eval_every, "eval_every");
  if (dim % heads != 0) throw ConfigError("dim must be divisible by heads");
  if (max_len < kMinSequenceLength) throw ConfigError("max_len must be at least 3");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(lambda_r >= 0.0)) throw ConfigError("lambda_r must be non-negative");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) throw ConfigError("lr_decay_factor must lie in (0, 1]");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (attention.kernel.active.empty()) throw ConfigError("at least one kernel must be active");
  if (!(attention.kernel.jitter > 0.0 && attention.kernel.jitter < 0.5)) throw ConfigError("jitter must lie in (0, 0.5)");
}

ModelConfig model_config(const TrainConfig& config, std::size_t num_items, std::size_t num_users) {
  ModelConfig mc;
  mc.num_items = num_items;
  mc.num_users = num_users;
  mc.max_len = config.max_len;
  mc.dim = config.dim;
  mc.blocks = config.blocks;
  mc.heads = config.heads;
  mc.dropout = config.dropout;
  mc.attention = config.attention;
  return mc;
}

void Adam::step(std::vector<NamedParameter>& params, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
      v_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
    }
  }
  if (m_.size() != params.size()) throw ConfigError("adam: parameter list changed between steps");
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = params[i].var.grad();
    if (g.size() == 0) continue;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseAbs2();
    const Matrix update = (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + eps_);
    params[i].var.mutable_value() -= lr * update;
  }
}

void Adam::restore(std::uint64_t steps, std::vector<Matrix> m, std::vector<Matrix> v) {
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

double clip_gradients(std::vector<NamedParameter>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.var.grad().size() != 0) sq += p.var.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (p.var.grad().size() != 0) p.var.mutable_grad() *= factor;
    }
  }
  return norm;
}

BatchLoss batch_loss(const Model& model, const Batch& batch, const CoocStats& cooc, double lambda_r,
                     AttentionMode mode, bool training, Rng& rng) {
  const ad::Var& items = model.tables().item;
  std::size_t total_positions = 0;
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    for (std::size_t t = 0; t < batch.max_len; ++t) total_positions += batch.valid(b, t) ? 1 : 0;
  }
  if (total_positions == 0) throw ConfigError("batch_loss: batch has no valid positions");

  std::vector<ad::Var> z_terms;
  std::vector<ad::Var> rank_terms;
  std::size_t rank_lists = 0;
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    std::vector<ItemId> inputs;
    std::vector<Index> positives;
    std::vector<std::vector<Index>> negatives(batch.num_negatives);
    for (std::size_t t = 0; t < batch.max_len; ++t) {
      if (!batch.valid(b, t)) continue;
      inputs.push_back(batch.item(b, t));
      positives.push_back(batch.target(b, t));
      for (std::size_t k = 0; k < batch.num_negatives; ++k) negatives[k].push_back(batch.negative(b, t, k));
    }
    if (inputs.empty()) continue;
    const ForwardOutput out = forward(model, batch.users[b], inputs, cooc, mode, training, rng);
    const Index n = out.hidden.rows();
    const Index d = out.hidden.cols();
    const ad::Var ones = ad::constant(Matrix::Ones(d, 1));

    auto row_dots = [&](std::span<const Index> ids) {
      return ad::matmul(ad::hadamard(out.hidden, ad::gather_rows(items, ids)), ones);
    };
    const ad::Var pos = row_dots(positives);
    std::vector<ad::Var> neg_cols;
    for (const auto& ids : negatives) neg_cols.push_back(row_dots(ids));
    const ad::Var neg = neg_cols.size() == 1 ? neg_cols.front() : ad::concat_cols(neg_cols);
    const double weight = static_cast<double>(n) / static_cast<double>(total_positions);
    z_terms.push_back(ad::scale(prediction_loss(pos, neg), weight));

    if (lambda_r > 0.0) {
      ++rank_lists;
      if (n >= 3) {
        const Vector counts = out.context.cooc_window.col(n - 1).head(n - 1);
        for (const auto& psi : out.psi) {
          const ad::Var row = ad::slice(psi, n - 1, 0, 1, n - 1);
          rank_terms.push_back(ad::scale(cooc_rank_loss(row, counts), 1.0 / static_cast<double>(out.psi.size())));
        }
      }
    }
  }

  BatchLoss result;
  result.positions = total_positions;
  ad::Var l_z = z_terms.size() == 1 ? z_terms.front() : ad::sum(ad::concat_rows(z_terms));
  ad::Var l_rank = ad::constant(0.0);
  if (!rank_terms.empty() && rank_lists > 0) {
    l_rank = ad::scale(ad::sum(ad::concat_rows(rank_terms)), 1.0 / static_cast<double>(rank_lists));
  }
  result.total = total_loss(l_z, l_rank, lambda_r);
  result.report = total_loss(l_z.scalar(), l_rank.scalar(), lambda_r);
  return result;
}

namespace {

std::string describe_batch(const Batch& batch) {
  std::ostringstream out;
  out << "batch of " << batch.batch_size << " sequences; users:";
  for (UserId u : batch.users) out << ' ' << u;
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    out << "\n  user " << batch.users[b] << " items:";
    for (ItemId item : batch.row_items(b)) out << ' ' << item;
  }
  return out.str();
}

std::string rng_state(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

}  // namespace

TrainResult train(const TrainConfig& config, const SplitDataset& split, const CoocStats& cooc, const LogSink& sink) {
  config.validate();
  Rng rng(config.seed);
  Model model = Model::create(model_config(config, split.num_items(), split.num_users()), rng);
  Adam adam(config.adam_beta1, config.adam_beta2, config.adam_eps);
  std::vector<NamedParameter> params = model.parameters();

  BatchOptions batching;
  batching.batch_size = config.batch_size;
  batching.max_len = config.max_len;
  batching.num_negatives = config.k_neg_train;
  batching.exclusion = config.negative_exclusion;

  EvalOptions eval_options;
  eval_options.mode = config.eval_mode;
  eval_options.seed = config.seed;
  eval_options.num_negatives = config.k_neg_eval;
  eval_options.cutoffs = {10};
  eval_options.max_users = config.eval_max_users;

  TrainResult result;
  double lr = config.lr;
  std::optional<double> best_hit;
  std::size_t stalls = 0;
  std::size_t step = 0;
  bool stop = false;
  Checkpoint best;
  bool have_best = false;

  auto snapshot = [&](std::size_t epoch) {
    Checkpoint c;
    c.config = config;
    c.model = model.clone();
    c.adam_steps = adam.steps();
    c.adam_m = adam.first_moments();
    c.adam_v = adam.second_moments();
    c.epoch = epoch;
    c.rng_state = rng_state(rng);
    c.best_val_hit10 = best_hit;
    return c;
  };

  std::size_t epoch = 0;
  for (epoch = 1; epoch <= config.max_epochs && !stop; ++epoch) {
    const std::vector<Batch> batches = make_batches(split, batching, rng);
    if (batches.empty()) throw DataError("no training sequence has a next-item target");
    double sum_z = 0.0;
    double sum_rank = 0.0;
    double sum_total = 0.0;
    std::size_t counted = 0;
    for (const Batch& batch : batches) {
      model.zero_grad();
      const BatchLoss loss = batch_loss(model, batch, cooc, config.lambda_r, AttentionMode::TrainStochastic, true, rng);
      if (!loss.report.finite()) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step + 1) + " (l_z=" + std::to_string(loss.report.l_z) +
                             ", l_rank=" + std::to_string(loss.report.l_rank) + ")\n" + describe_batch(batch));
      }
      ad::backward(loss.total);
      project_padding(model.tables());
      clip_gradients(params, config.clip_norm);
      adam.step(params, lr);
      project_padding(model.tables());
      ++step;
      sum_z += loss.report.l_z;
      sum_rank += loss.report.l_rank;
      sum_total += loss.report.total;
      ++counted;
      if (config.max_steps != 0 && step >= config.max_steps) {
        stop = true;
        break;
      }
    }
    LogRecord record;
    record.epoch = epoch;
    record.step = step;
    record.l_z = sum_z / static_cast<double>(counted);
    record.l_rank = sum_rank / static_cast<double>(counted);
    record.total = sum_total / static_cast<double>(counted);
    record.lr = lr;

    if (epoch % config.eval_every == 0 && !split.valid.empty()) {
      const EvalMetrics metrics = evaluate(model, split, cooc, SplitPart::Valid, eval_options);
      const double hit = metrics.hit.at(10);
      record.val_hit10 = hit;
      record.val_ndcg10 = metrics.ndcg.at(10);
      if (!best_hit || hit > *best_hit) {
        best_hit = hit;
        stalls = 0;
        best = snapshot(epoch);
        have_best = true;
      } else {
        ++stalls;
        lr *= config.lr_decay_factor;
        if (stalls > config.patience) {
          stop = true;
          result.early_stopped = true;
        }
      }
    }
    result.log.push_back(record);
    if (sink) sink(record);
  }
  result.steps = step;
  result.best = have_best ? std::move(best) : snapshot(epoch - 1);
  return result;
}

}  // namespace rksa
