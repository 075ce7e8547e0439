#include "rksa/attention.hpp"

#include <cmath>

namespace rksa {

namespace {

Matrix normal_matrix(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

Mask attention_mask(Index n, bool causal) {
  Mask mask = Mask::Constant(n, n, true);
  if (causal) {
    for (Index q = 0; q < n; ++q) {
      for (Index j = q + 1; j < n; ++j) mask(q, j) = false;
    }
  }
  return mask;
}

}  // namespace

AttentionMode parse_attention_mode(std::string_view name) {
  if (name == "train_stochastic") return AttentionMode::TrainStochastic;
  if (name == "eval_location") return AttentionMode::EvalLocation;
  if (name == "eval_mean_shift") return AttentionMode::EvalMeanShift;
  if (name == "eval_stochastic") return AttentionMode::EvalStochastic;
  throw ConfigError("unknown attention mode '" + std::string(name) + "'");
}

std::string to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::TrainStochastic: return "train_stochastic";
    case AttentionMode::EvalLocation: return "eval_location";
    case AttentionMode::EvalMeanShift: return "eval_mean_shift";
    case AttentionMode::EvalStochastic: return "eval_stochastic";
  }
  return "unknown";
}

BlockParams init_block(Index dim, Index heads, Rng& rng) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("embedding dim " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const Index head_dim = dim / heads;
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
  BlockParams block;
  for (Index h = 0; h < heads; ++h) {
    HeadParams head;
    head.value = ad::parameter(normal_matrix(dim, head_dim, stddev, rng));
    head.location_query = ad::parameter(normal_matrix(dim, head_dim, stddev, rng));
    head.location_key = ad::parameter(normal_matrix(dim, head_dim, stddev, rng));
    head.shape_query = ad::parameter(normal_matrix(dim, head_dim, stddev, rng));
    head.shape_key = ad::parameter(normal_matrix(dim, head_dim, stddev, rng));
    head.kernel = init_kernel_weights(dim, rng);
    block.heads.push_back(std::move(head));
  }
  block.output = ad::parameter(normal_matrix(dim, dim, stddev, rng));
  block.ffn_w1 = ad::parameter(normal_matrix(dim, dim, stddev, rng));
  block.ffn_b1 = ad::parameter(Matrix::Zero(1, dim));
  block.ffn_w2 = ad::parameter(normal_matrix(dim, dim, stddev, rng));
  block.ffn_b2 = ad::parameter(Matrix::Zero(1, dim));
  block.norm1_gain = ad::parameter(Matrix::Ones(1, dim));
  block.norm1_bias = ad::parameter(Matrix::Zero(1, dim));
  block.norm2_gain = ad::parameter(Matrix::Ones(1, dim));
  block.norm2_bias = ad::parameter(Matrix::Zero(1, dim));
  return block;
}

SequenceContext make_context(std::span<const ItemId> items, const CoocStats& cooc, ad::Var user) {
  SequenceContext ctx;
  ctx.items.assign(items.begin(), items.end());
  ctx.cooc_window = cooc.window(items);
  ctx.counting_base = counting_gram(items, cooc);
  ctx.shape_ratio = shape_ratio_rows(ctx.cooc_window);
  ctx.user = std::move(user);
  return ctx;
}

ad::Var location_xi(const ad::Var& x, const ad::Var& w_query, const ad::Var& w_key) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(w_query.cols()));
  return ad::scale(ad::matmul(ad::matmul(x, w_query), ad::transpose(ad::matmul(x, w_key))), inv_sqrt);
}

Vector alpha_hat(const Matrix& cooc_window) {
  const Index n = cooc_window.rows();
  if (n < 2 || cooc_window.cols() != n) throw ConfigError("alpha_hat: needs a square window with n >= 2");
  Matrix c = cooc_window;
  for (Index k = 0; k < n; ++k) {
    c(k, k) = (cooc_window.row(k).sum() - cooc_window(k, k)) / static_cast<double>(n - 1);
  }
  return c * c.col(n - 1);
}

Matrix shape_ratio_rows(const Matrix& cooc_window) {
  const Index n = cooc_window.rows();
  Matrix ratio = Matrix::Zero(n, n);
  for (Index q = 1; q < n; ++q) {
    const Vector a = alpha_hat(cooc_window.topLeftCorner(q + 1, q + 1));
    const double mx = a.maxCoeff();
    if (mx > 0.0) ratio.row(q).head(q + 1) = a.transpose() / mx;
  }
  return ratio;
}

ad::Var shape_alpha(const ad::Var& x, const Matrix& ratio, const HeadParams& head) {
  const ad::Var scale = ad::softplus(location_xi(x, head.shape_query, head.shape_key));
  return ad::hadamard(scale, ad::constant(ratio));
}

HeadOutput rksa_forward(const ad::Var& x, const SequenceContext& context, AttentionMode mode, Rng& rng,
                        const HeadParams& head, const AttentionOptions& options, HeadTrace* trace) {
  const Index n = x.rows();
  if (n == 0) throw ConfigError("rksa_forward: empty sequence");
  HeadOutput out;
  const ad::Var xi = location_xi(x, head.location_query, head.location_key);
  const bool draws = mode == AttentionMode::TrainStochastic || mode == AttentionMode::EvalStochastic;

  ad::Var logits = xi;
  ad::Var omega;
  ad::Var alpha;
  if (options.stochastic) {
    if (draws || trace != nullptr) {
      const CorrelationOutput corr =
          correlation_matrix(x, context.counting_base, context.user, head.kernel, options.kernel);
      out.psi = corr.psi;
      out.mixture = corr.mixture;
    }
    if (mode != AttentionMode::EvalLocation || trace != nullptr) {
      omega = options.fixed_omega ? ad::constant(Matrix::Constant(n, n, *options.fixed_omega))
                                  : omega_matrix(x, head.kernel);
      alpha = options.zero_shape ? ad::constant(Matrix::Zero(n, n)) : shape_alpha(x, context.shape_ratio, head);
    }
    ad::Var latent;
    if (draws) {
      const ad::Var chol = ad::cholesky(out.psi);
      const msn::RowNoise noise = msn::draw_row_noise(n, n, rng);
      latent = msn::reparameterize(xi, omega, alpha, chol, noise);
    } else if (mode == AttentionMode::EvalMeanShift) {
      latent = msn::mean_shift(xi, omega, alpha);
    }
    if (latent.defined()) {
      if (options.last_row_only && n > 1) {
        const ad::Var parts[] = {ad::slice(xi, 0, 0, n - 1, n), ad::slice(latent, n - 1, 0, 1, n)};
        logits = ad::concat_rows(parts);
      } else {
        logits = latent;
      }
    }
  }

  const ad::Var weights = ad::masked_softmax(logits, attention_mask(n, options.causal));
  out.hidden = ad::matmul(weights, ad::matmul(x, head.value));

  if (trace != nullptr) {
    trace->xi = xi.value();
    trace->logits = logits.value();
    trace->weights = weights.value();
    if (out.psi.defined()) trace->psi = out.psi.value();
    if (out.mixture.defined()) trace->mixture = out.mixture.value().row(0);
    if (omega.defined()) trace->omega = omega.value().row(n - 1);
    if (alpha.defined()) trace->alpha = alpha.value().row(n - 1);
  }
  return out;
}

MultiHeadOutput multi_head(const ad::Var& x, const SequenceContext& context, AttentionMode mode, Rng& rng,
                           const BlockParams& block, const AttentionOptions& options,
                           std::vector<HeadTrace>* traces) {
  const auto heads = static_cast<Index>(block.heads.size());
  if (heads == 0 || x.cols() % heads != 0) throw ConfigError("multi_head: dim not divisible by head count");
  MultiHeadOutput out;
  std::vector<ad::Var> parts;
  if (traces != nullptr) traces->assign(block.heads.size(), HeadTrace{});
  for (std::size_t h = 0; h < block.heads.size(); ++h) {
    HeadTrace* trace = traces != nullptr ? &(*traces)[h] : nullptr;
    out.heads.push_back(rksa_forward(x, context, mode, rng, block.heads[h], options, trace));
    parts.push_back(out.heads.back().hidden);
  }
  const ad::Var concat = parts.size() == 1 ? parts.front() : ad::concat_cols(parts);
  out.out = ad::matmul(concat, block.output);
  return out;
}

ad::Var ffn(const ad::Var& h, const BlockParams& block) {
  const ad::Var hidden = ad::relu(ad::add_row(ad::matmul(h, block.ffn_w1), block.ffn_b1));
  return ad::add_row(ad::matmul(hidden, block.ffn_w2), block.ffn_b2);
}

ad::Var relevance_scores(const ad::Var& hidden_row, const ad::Var& item_table, std::span<const ItemId> candidates) {
  std::vector<Index> rows;
  rows.reserve(candidates.size());
  for (ItemId c : candidates) {
    if (c == kPaddingItem) throw ConfigError("relevance_scores: padding item is not a candidate");
    rows.push_back(c);
  }
  return ad::matmul(hidden_row, ad::transpose(ad::gather_rows(item_table, rows)));
}

ad::Var relevance_scores(const ad::Var& hidden_row, const ad::Var& item_table) {
  const Index n = item_table.rows() - 1;
  return ad::matmul(hidden_row, ad::transpose(ad::slice(item_table, 1, 0, n, item_table.cols())));
}

}  // namespace rksa
