#include "rksa/model.hpp"

namespace rksa {

Model Model::create(const ModelConfig& config, Rng& rng) {
  if (config.num_items == 0) throw ConfigError("model needs at least one item");
  if (config.blocks == 0) throw ConfigError("model needs at least one block");
  if (config.dropout < 0.0 || config.dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  Model model;
  model.config_ = config;
  model.tables_ = init_tables(config.num_items, config.max_len, std::max<std::size_t>(config.num_users, 1),
                              config.dim, rng);
  for (std::size_t b = 0; b < config.blocks; ++b) {
    model.blocks_.push_back(init_block(static_cast<Index>(config.dim), static_cast<Index>(config.heads), rng));
  }
  return model;
}

void Model::visit(const Visitor& fn) {
  fn("item_embedding", "embeddings", tables_.item);
  fn("positional_embedding", "embeddings", tables_.positional);
  fn("user_embedding", "embeddings", tables_.user);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    auto& block = blocks_[b];
    const std::string prefix = "block" + std::to_string(b) + ".";
    for (std::size_t h = 0; h < block.heads.size(); ++h) {
      auto& head = block.heads[h];
      const std::string hp = prefix + "head" + std::to_string(h) + ".";
      fn(hp + "value", "attention", head.value);
      fn(hp + "location_query", "location", head.location_query);
      fn(hp + "location_key", "location", head.location_key);
      fn(hp + "shape_query", "shape", head.shape_query);
      fn(hp + "shape_key", "shape", head.shape_key);
      fn(hp + "omega_query", "omega", head.kernel.omega_query);
      fn(hp + "omega_key", "omega", head.kernel.omega_key);
      fn(hp + "user_modulation", "kernel", head.kernel.user_modulation);
      fn(hp + "mixture_weight", "mixture", head.kernel.mixture_weight);
      fn(hp + "mixture_bias", "mixture", head.kernel.mixture_bias);
    }
    fn(prefix + "output", "attention", block.output);
    fn(prefix + "ffn_w1", "ffn", block.ffn_w1);
    fn(prefix + "ffn_b1", "ffn", block.ffn_b1);
    fn(prefix + "ffn_w2", "ffn", block.ffn_w2);
    fn(prefix + "ffn_b2", "ffn", block.ffn_b2);
    fn(prefix + "norm1_gain", "norm", block.norm1_gain);
    fn(prefix + "norm1_bias", "norm", block.norm1_bias);
    fn(prefix + "norm2_gain", "norm", block.norm2_gain);
    fn(prefix + "norm2_bias", "norm", block.norm2_bias);
  }
}

std::vector<NamedParameter> Model::parameters() const {
  std::vector<NamedParameter> out;
  // visit() only hands out handles; the shared nodes are not modified here.
  const_cast<Model*>(this)->visit(
      [&](const std::string& name, const char* group, ad::Var& var) { out.push_back({name, group, var}); });
  return out;
}

Model Model::clone() const {
  Model copy = *this;
  copy.visit([](const std::string&, const char*, ad::Var& var) { var = ad::parameter(var.value()); });
  return copy;
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.var.zero_grad();
}

namespace {

ad::Var dropout(const ad::Var& x, double rate, Rng& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  const double inv_keep = 1.0 / (1.0 - rate);
  for (Index j = 0; j < mask.cols(); ++j) {
    for (Index i = 0; i < mask.rows(); ++i) mask(i, j) = keep(rng) ? inv_keep : 0.0;
  }
  return ad::hadamard(x, ad::constant(std::move(mask)));
}

}  // namespace

ForwardOutput forward(const Model& model, UserId user, std::span<const ItemId> items, const CoocStats& cooc,
                      AttentionMode mode, bool training, Rng& rng, ForwardTrace* trace) {
  const ModelConfig& config = model.config();
  if (items.empty()) throw ConfigError("forward: empty sequence");
  if (items.size() > config.max_len) items = items.last(config.max_len);
  const auto n = static_cast<Index>(items.size());

  ad::Var user_row = user >= 0 ? lookup_user(model.tables(), user)
                               : ad::constant(Matrix::Zero(1, static_cast<Index>(config.dim)));
  ForwardOutput out;
  out.context = make_context(items, cooc, user_row);
  // Right-aligned positions: the most recent item always sits at max_len - 1.
  ad::Var x = build_inputs(model.tables(), items, static_cast<Index>(config.max_len) - n);

  const bool use_dropout = training && config.dropout > 0.0;
  if (trace != nullptr) trace->blocks.assign(model.blocks().size(), {});
  for (std::size_t b = 0; b < model.blocks().size(); ++b) {
    const BlockParams& block = model.blocks()[b];
    std::vector<HeadTrace>* head_traces = trace != nullptr ? &trace->blocks[b] : nullptr;
    MultiHeadOutput attn = multi_head(x, out.context, mode, rng, block, config.attention, head_traces);
    for (const auto& h : attn.heads) {
      if (h.psi.defined()) out.psi.push_back(h.psi);
      if (h.mixture.defined()) out.mixture.push_back(h.mixture);
    }
    ad::Var a = attn.out;
    if (use_dropout) a = dropout(a, config.dropout, rng);
    a = ad::layer_norm(ad::add(x, a), block.norm1_gain, block.norm1_bias, config.norm_eps);
    ad::Var f = ffn(a, block);
    if (use_dropout) f = dropout(f, config.dropout, rng);
    x = ad::layer_norm(ad::add(a, f), block.norm2_gain, block.norm2_bias, config.norm_eps);
  }
  out.hidden = x;
  return out;
}

}  // namespace rksa
