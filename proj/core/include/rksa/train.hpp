#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rksa/corpus.hpp"
#include "rksa/eval.hpp"
#include "rksa/loss.hpp"
#include "rksa/model.hpp"

namespace rksa {

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t dim = 64;
  std::size_t blocks = 2;
  std::size_t heads = 1;
  double dropout = 0.5;
  double lr = 0.001;
  double lambda_r = kDefaultRankWeight;
  std::size_t max_len = 50;
  std::size_t k_neg_train = 1;
  std::size_t k_neg_eval = 100;
  std::size_t max_epochs = 200;
  /// Extra non-improving evaluations tolerated before stopping.
  std::size_t patience = 5;
  std::uint64_t seed = 42;
  double lr_decay_factor = 0.5;
  std::size_t eval_every = 5;
  /// Stop after this many optimizer steps (0 = no limit).
  std::size_t max_steps = 0;
  double clip_norm = 5.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  NegativeExclusion negative_exclusion = NegativeExclusion::History;
  AttentionOptions attention;
  AttentionMode eval_mode = AttentionMode::EvalLocation;
  /// Validation users per evaluation (0 = all).
  std::size_t eval_max_users = 0;

  /// Throws ConfigError on non-positive sizes, dropout outside [0, 1) etc.
  void validate() const;
};

ModelConfig model_config(const TrainConfig& config, std::size_t num_items, std::size_t num_users);

/// Adam with bias correction, one moment pair per parameter tensor.
class Adam {
 public:
  Adam() = default;
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<NamedParameter>& params, double lr);

  std::uint64_t steps() const { return steps_; }
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void restore(std::uint64_t steps, std::vector<Matrix> m, std::vector<Matrix> v);

 private:
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::uint64_t steps_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_gradients(std::vector<NamedParameter>& params, double max_norm);

struct BatchLoss {
  ad::Var total;
  LossReport report;
  std::size_t positions = 0;
};

/// Prediction loss over every valid position of the batch plus the
/// co-occurrence ranking loss on the final query row of each sequence,
/// averaged over sequences, blocks and heads.
BatchLoss batch_loss(const Model& model, const Batch& batch, const CoocStats& cooc, double lambda_r,
                     AttentionMode mode, bool training, Rng& rng);

struct LogRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double l_z = 0.0;
  double l_rank = 0.0;
  double total = 0.0;
  double lr = 0.0;
  std::optional<double> val_hit10;
  std::optional<double> val_ndcg10;
};

struct Checkpoint {
  TrainConfig config;
  Model model;
  std::uint64_t adam_steps = 0;
  std::vector<Matrix> adam_m;
  std::vector<Matrix> adam_v;
  std::size_t epoch = 0;
  std::string rng_state;
  std::optional<double> best_val_hit10;
};

struct TrainResult {
  Checkpoint best;
  std::vector<LogRecord> log;
  std::size_t steps = 0;
  bool early_stopped = false;
};

using LogSink = std::function<void(const LogRecord&)>;

/// Batched stochastic training with Adam, validation Hit@10 every
/// `eval_every` epochs, learning-rate decay on stalls and early stopping.
/// Returns the best-validation snapshot (the final one if never evaluated).
/// Throws NumericalError on a non-finite loss.
TrainResult train(const TrainConfig& config, const SplitDataset& split, const CoocStats& cooc,
                  const LogSink& sink = {});

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
/// Throws DataError for truncated/corrupt files and on a version mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rksa
