#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "rksa/autodiff.hpp"
#include "rksa/corpus.hpp"
#include "rksa/kernel.hpp"
#include "rksa/msn.hpp"

namespace rksa {

enum class AttentionMode {
  TrainStochastic,  // one reparameterized draw per query row
  EvalLocation,     // logits = location
  EvalMeanShift,    // logits = analytic mean of the skew-normal
  EvalStochastic,   // a fresh draw, as in training
};

AttentionMode parse_attention_mode(std::string_view name);
std::string to_string(AttentionMode mode);

/// One attention head: value path, location head, shape-scale head and
/// the kernel parameters of its correlation.
struct HeadParams {
  ad::Var value;           // [d, d_h]
  ad::Var location_query;  // [d, d_h]
  ad::Var location_key;    // [d, d_h]
  ad::Var shape_query;     // [d, d_h]
  ad::Var shape_key;       // [d, d_h]
  KernelWeights kernel;
};

struct BlockParams {
  std::vector<HeadParams> heads;
  ad::Var output;  // [d, d]
  ad::Var ffn_w1;  // [d, d_ff]
  ad::Var ffn_b1;  // [1, d_ff]
  ad::Var ffn_w2;  // [d_ff, d]
  ad::Var ffn_b2;  // [1, d]
  ad::Var norm1_gain, norm1_bias;
  ad::Var norm2_gain, norm2_bias;
};

BlockParams init_block(Index dim, Index heads, Rng& rng);

struct AttentionOptions {
  KernelConfig kernel;
  /// false gives plain scaled-dot attention on the location logits.
  bool stochastic = true;
  /// Draw skew-normal logits for the final query row only.
  bool last_row_only = false;
  bool causal = true;
  /// Replace the variance head by a constant scale.
  std::optional<double> fixed_omega;
  /// Force the shape parameter to zero (Gaussian logits).
  bool zero_shape = false;
};

/// Per-sequence constants derived from co-occurrence statistics.
struct SequenceContext {
  std::vector<ItemId> items;
  Matrix cooc_window;    // C restricted to the sequence positions
  Matrix counting_base;  // unit-scale counting Gram
  Matrix shape_ratio;    // row q: alpha_hat over keys <= q divided by its max
  ad::Var user;          // [1, d]
};

SequenceContext make_context(std::span<const ItemId> items, const CoocStats& cooc, ad::Var user);

/// (X W_q)(X W_k)^T / sqrt(d_h).
ad::Var location_xi(const ad::Var& x, const ad::Var& w_query, const ad::Var& w_key);

/// Two-hop co-occurrence ratio for the last position as query: diagonal
/// entries are replaced by the mean of the rest of their row, then
/// alpha_hat_j = sum_k c_jk c_kn. Requires n >= 2.
Vector alpha_hat(const Matrix& cooc_window);

/// Row q holds alpha_hat over the window [0, q] with q as the query,
/// divided by its maximum (zero when the maximum is zero). Row 0 is zero.
Matrix shape_ratio_rows(const Matrix& cooc_window);

/// softplus((X W_sq)(X W_sk)^T / sqrt(d_h)) ⊙ ratio.
ad::Var shape_alpha(const ad::Var& x, const Matrix& ratio, const HeadParams& head);

struct HeadTrace {
  Matrix xi;
  Matrix logits;
  Matrix weights;
  Matrix psi;  // empty when the correlation was not built
  RowVector omega;
  RowVector alpha;
  RowVector mixture;
};

struct HeadOutput {
  ad::Var hidden;   // [n, d_h]
  ad::Var psi;      // undefined when the correlation was not built
  ad::Var mixture;  // undefined when the correlation was not built
};

HeadOutput rksa_forward(const ad::Var& x, const SequenceContext& context, AttentionMode mode, Rng& rng,
                        const HeadParams& head, const AttentionOptions& options, HeadTrace* trace = nullptr);

struct MultiHeadOutput {
  ad::Var out;  // [n, d]
  std::vector<HeadOutput> heads;
};

MultiHeadOutput multi_head(const ad::Var& x, const SequenceContext& context, AttentionMode mode, Rng& rng,
                           const BlockParams& block, const AttentionOptions& options,
                           std::vector<HeadTrace>* traces = nullptr);

/// ReLU(h W1 + b1) W2 + b2, position-wise.
ad::Var ffn(const ad::Var& h, const BlockParams& block);

/// Scores of `candidates` for one hidden row against the shared item table.
ad::Var relevance_scores(const ad::Var& hidden_row, const ad::Var& item_table, std::span<const ItemId> candidates);
/// Scores of every real item 1..N (column i-1 holds item i).
ad::Var relevance_scores(const ad::Var& hidden_row, const ad::Var& item_table);

}  // namespace rksa
