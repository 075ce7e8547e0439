#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rksa/attention.hpp"
#include "rksa/embed.hpp"

namespace rksa {

struct ModelConfig {
  std::size_t num_items = 0;
  std::size_t num_users = 0;
  std::size_t max_len = 50;
  std::size_t dim = 64;
  std::size_t blocks = 2;
  std::size_t heads = 1;
  double dropout = 0.5;
  double norm_eps = 1e-8;
  AttentionOptions attention;
};

struct NamedParameter {
  std::string name;
  std::string group;  // embeddings, attention, location, omega, shape, kernel, mixture, ffn, norm
  ad::Var var;
};

/// Embeddings plus a stack of RKSA blocks; the output layer reuses the item table.
class Model {
 public:
  static Model create(const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  EmbeddingTables& tables() { return tables_; }
  const EmbeddingTables& tables() const { return tables_; }
  std::vector<BlockParams>& blocks() { return blocks_; }
  const std::vector<BlockParams>& blocks() const { return blocks_; }

  /// Stable order; names are unique and used by checkpoints.
  std::vector<NamedParameter> parameters() const;
  void zero_grad();
  /// Deep copy with independent parameter storage.
  Model clone() const;

 private:
  using Visitor = std::function<void(const std::string& name, const char* group, ad::Var& var)>;
  void visit(const Visitor& fn);

  ModelConfig config_;
  EmbeddingTables tables_;
  std::vector<BlockParams> blocks_;
};

struct ForwardTrace {
  std::vector<std::vector<HeadTrace>> blocks;  // [block][head]
};

struct ForwardOutput {
  ad::Var hidden;            // [n, d]
  std::vector<ad::Var> psi;  // per block and head, when built
  std::vector<ad::Var> mixture;
  SequenceContext context;
};

/// Runs the block stack over the trailing max_len items of `items`.
/// A negative user id uses an all-zero user vector (synthetic sequences).
/// Dropout is active only when `training` is true.
ForwardOutput forward(const Model& model, UserId user, std::span<const ItemId> items, const CoocStats& cooc,
                      AttentionMode mode, bool training, Rng& rng, ForwardTrace* trace = nullptr);

}  // namespace rksa
