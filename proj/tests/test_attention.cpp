#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "rksa/attention.hpp"
#include "rksa/model.hpp"

using namespace rksa;

namespace {

Matrix random_matrix(Index rows, Index cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

CoocStats small_cooc() {
  CoocStats cooc(12);
  const std::vector<std::vector<ItemId>> users = {
      {1, 2, 3, 4}, {2, 3, 5}, {1, 3, 6, 7}, {4, 5, 6, 8, 9}, {2, 9, 10, 11, 12}, {1, 2, 7, 12}};
  for (const auto& u : users) cooc.add_user(u);
  return cooc;
}

SequenceContext context_for(std::span<const ItemId> items, const CoocStats& cooc, Index dim, Rng& rng) {
  return make_context(items, cooc, ad::constant(random_matrix(1, dim, rng)));
}

void zero_block(BlockParams& block) {
  for (auto& head : block.heads) {
    for (ad::Var* v : {&head.value, &head.location_query, &head.location_key, &head.shape_query, &head.shape_key,
                       &head.kernel.omega_query, &head.kernel.omega_key, &head.kernel.user_modulation,
                       &head.kernel.mixture_weight, &head.kernel.mixture_bias}) {
      v->mutable_value().setZero();
    }
  }
  for (ad::Var* v : {&block.output, &block.ffn_w1, &block.ffn_b1, &block.ffn_w2, &block.ffn_b2}) {
    v->mutable_value().setZero();
  }
}

Matrix layer_norm_rows(const Matrix& x, double eps) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    out.row(i) = (x.row(i).array() - mean) / std::sqrt(var + eps);
  }
  return out;
}

}  // namespace

TEST(AttentionMode, ParseRoundTrip) {
  for (AttentionMode m : {AttentionMode::TrainStochastic, AttentionMode::EvalLocation, AttentionMode::EvalMeanShift,
                          AttentionMode::EvalStochastic}) {
    EXPECT_EQ(parse_attention_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_attention_mode("sample"), ConfigError);
}

TEST(LocationXi, IdentityWeightsOrthonormalRows) {
  const Index d = 4;
  Rng rng(3);
  const Matrix q = random_matrix(d, d, rng).householderQr().householderQ();
  const ad::Var eye = ad::constant(Matrix::Identity(d, d));
  const ad::Var xi = location_xi(ad::constant(q), eye, eye);
  EXPECT_LT((xi.value() - Matrix::Identity(d, d) / std::sqrt(4.0)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(LocationXi, ZeroWeightsAndShape) {
  Rng rng(4);
  const ad::Var x = ad::constant(random_matrix(50, 6, rng));
  const ad::Var zero = ad::constant(Matrix::Zero(6, 3));
  const ad::Var xi = location_xi(x, zero, zero);
  EXPECT_EQ(xi.rows(), 50);
  EXPECT_EQ(xi.cols(), 50);
  EXPECT_EQ(xi.value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(AlphaHat, HandExample) {
  Matrix c(3, 3);
  c << 0, 2, 1, 2, 0, 3, 1, 3, 0;
  const Vector a = alpha_hat(c);
  EXPECT_DOUBLE_EQ(a(0), 9.5);
  const Vector expected = oracle::alpha_hat(c);
  for (Index j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(a(j), expected(j));
}

TEST(AlphaHat, DiagonalInputIsIgnored) {
  Matrix c(3, 3);
  c << 7, 2, 1, 2, 9, 3, 1, 3, 4;
  EXPECT_DOUBLE_EQ(alpha_hat(c)(0), 9.5);
}

TEST(AlphaHat, ZerosAndErrors) {
  EXPECT_EQ(alpha_hat(Matrix::Zero(4, 4)).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(alpha_hat(Matrix::Zero(1, 1)), ConfigError);
  EXPECT_THROW(alpha_hat(Matrix::Zero(3, 2)), ConfigError);
}

TEST(AlphaHat, MatchesOracleOnRandomCounts) {
  Rng rng(8);
  std::uniform_int_distribution<int> count(0, 9);
  std::uniform_int_distribution<int> size(2, 8);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = size(rng);
    Matrix c = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = i; j < n; ++j) c(i, j) = c(j, i) = count(rng);
    }
    const Vector got = alpha_hat(c);
    const Vector want = oracle::alpha_hat(c);
    for (Index j = 0; j < n; ++j) {
      EXPECT_NEAR(got(j), want(j), 1e-12);
      EXPECT_GE(got(j), 0.0);
    }
  }
}

TEST(AlphaHat, PermutationEquivariance) {
  Rng rng(9);
  std::uniform_int_distribution<int> count(0, 6);
  const Index n = 6;
  Matrix c = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) c(i, j) = c(j, i) = count(rng);
  }
  std::vector<Index> perm(n - 1);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  perm.push_back(n - 1);
  Matrix permuted(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) permuted(i, j) = c(perm[i], perm[j]);
  }
  const Vector a = alpha_hat(c);
  const Vector b = alpha_hat(permuted);
  for (Index i = 0; i < n; ++i) EXPECT_DOUBLE_EQ(b(i), a(perm[i]));
}

TEST(ShapeRatio, RowsUseVisibleWindow) {
  Matrix c(3, 3);
  c << 0, 2, 1, 2, 0, 3, 1, 3, 0;
  const Matrix ratio = shape_ratio_rows(c);
  EXPECT_EQ(ratio.row(0).cwiseAbs().maxCoeff(), 0.0);
  const Vector full = alpha_hat(c);
  for (Index j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(ratio(2, j), full(j) / full.maxCoeff());
  const Vector two = alpha_hat(c.topLeftCorner(2, 2));
  EXPECT_DOUBLE_EQ(ratio(1, 0), two(0) / two.maxCoeff());
  EXPECT_EQ(ratio(1, 2), 0.0);
  EXPECT_EQ(shape_ratio_rows(Matrix::Zero(4, 4)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ShapeAlpha, ArgmaxWithZeroScaleIsLn2) {
  Rng rng(10);
  HeadParams head;
  head.shape_query = ad::constant(Matrix::Zero(4, 4));
  head.shape_key = ad::constant(Matrix::Zero(4, 4));
  Matrix c(3, 3);
  c << 0, 2, 1, 2, 0, 3, 1, 3, 0;
  const Matrix ratio = shape_ratio_rows(c);
  const ad::Var alpha = shape_alpha(ad::constant(random_matrix(3, 4, rng)), ratio, head);
  Index argmax = 0;
  alpha_hat(c).maxCoeff(&argmax);
  EXPECT_NEAR(alpha.value()(2, argmax), std::log(2.0), 1e-15);
}

TEST(ShapeAlpha, NonnegativeAndZeroFallback) {
  Rng rng(11);
  HeadParams head;
  head.shape_query = ad::constant(random_matrix(5, 5, rng));
  head.shape_key = ad::constant(random_matrix(5, 5, rng));
  const ad::Var x = ad::constant(random_matrix(4, 5, rng));
  Matrix c = Matrix::Zero(4, 4);
  c(0, 3) = c(3, 0) = 2;
  c(1, 2) = c(2, 1) = 5;
  EXPECT_GE(shape_alpha(x, shape_ratio_rows(c), head).value().minCoeff(), 0.0);
  EXPECT_EQ(shape_alpha(x, shape_ratio_rows(Matrix::Zero(4, 4)), head).value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(RksaForward, SingleKeyGetsFullWeight) {
  Rng rng(12);
  const CoocStats cooc = small_cooc();
  const std::vector<ItemId> items = {3};
  const BlockParams block = init_block(4, 1, rng);
  const SequenceContext ctx = context_for(items, cooc, 4, rng);
  for (AttentionMode mode : {AttentionMode::EvalLocation, AttentionMode::TrainStochastic}) {
    HeadTrace trace;
    rksa_forward(ad::constant(random_matrix(1, 4, rng)), ctx, mode, rng, block.heads[0], AttentionOptions{},
                 &trace);
    EXPECT_DOUBLE_EQ(trace.weights(0, 0), 1.0);
  }
}

TEST(RksaForward, RowsSumToOneAndRespectCausality) {
  Rng rng(13);
  const CoocStats cooc = small_cooc();
  const std::vector<ItemId> items = {1, 2, 3, 7, 12, 9};
  const BlockParams block = init_block(6, 1, rng);
  const SequenceContext ctx = context_for(items, cooc, 6, rng);
  const ad::Var x = ad::constant(random_matrix(6, 6, rng));
  for (AttentionMode mode : {AttentionMode::TrainStochastic, AttentionMode::EvalLocation,
                             AttentionMode::EvalMeanShift, AttentionMode::EvalStochastic}) {
    HeadTrace trace;
    rksa_forward(x, ctx, mode, rng, block.heads[0], AttentionOptions{}, &trace);
    for (Index q = 0; q < 6; ++q) {
      EXPECT_NEAR(trace.weights.row(q).sum(), 1.0, 1e-12);
      for (Index j = q + 1; j < 6; ++j) EXPECT_EQ(trace.weights(q, j), 0.0);
    }
    EXPECT_EQ(trace.psi.rows(), 6);
    EXPECT_EQ(trace.omega.size(), 6);
    EXPECT_EQ(trace.alpha.size(), 6);
    EXPECT_NEAR(trace.mixture.sum(), 1.0, 1e-12);
  }
}

TEST(RksaForward, NonCausalUsesEveryKey) {
  Rng rng(14);
  const CoocStats cooc = small_cooc();
  const std::vector<ItemId> items = {1, 2, 3};
  const BlockParams block = init_block(4, 1, rng);
  AttentionOptions options;
  options.causal = false;
  HeadTrace trace;
  rksa_forward(ad::constant(random_matrix(3, 4, rng)), context_for(items, cooc, 4, rng), AttentionMode::EvalLocation,
               rng, block.heads[0], options, &trace);
  EXPECT_GT(trace.weights(0, 2), 0.0);
}

TEST(RksaForward, DegenerateLimitMatchesLocation) {
  Rng rng(15);
  const CoocStats cooc = small_cooc();
  const std::vector<ItemId> items = {4, 5, 6, 8, 9};
  const BlockParams block = init_block(8, 1, rng);
  const SequenceContext ctx = context_for(items, cooc, 8, rng);
  const ad::Var x = ad::constant(random_matrix(5, 8, rng));
  AttentionOptions options;
  options.fixed_omega = 1e-8;
  options.zero_shape = true;
  const Matrix location = rksa_forward(x, ctx, AttentionMode::EvalLocation, rng, block.heads[0], options).hidden.value();
  for (AttentionMode mode : {AttentionMode::TrainStochastic, AttentionMode::EvalStochastic,
                             AttentionMode::EvalMeanShift}) {
    const Matrix h = rksa_forward(x, ctx, mode, rng, block.heads[0], options).hidden.value();
    EXPECT_LT((h - location).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(RksaForward, LocationPathIsScaledDotAttention) {
  Rng rng(16);
  const CoocStats cooc = small_cooc();
  const std::vector<ItemId> items = {1, 2, 3};
  const double c = std::sqrt(std::sqrt(3.0) * std::log(3.0));
  const Matrix x = Matrix::Identity(3, 3) * c;
  HeadParams head = init_block(3, 1, rng).heads[0];
  head.location_query = ad::constant(Matrix::Identity(3, 3));
  head.location_key = ad::constant(Matrix::Identity(3, 3));
  head.value = ad::constant(Matrix::Identity(3, 3));
  AttentionOptions options;
  options.causal = false;
  HeadTrace trace;
  const ad::Var h = rksa_forward(ad::constant(x), context_for(items, cooc, 3, rng), AttentionMode::EvalLocation, rng,
                                 head, options, &trace).hidden;
  for (Index q = 0; q < 3; ++q) {
    for (Index j = 0; j < 3; ++j) EXPECT_NEAR(trace.weights(q, j), q == j ? 0.6 : 0.2, 1e-12);
  }
  const Matrix expected = oracle::scaled_dot_attention(x, Matrix::Identity(3, 3), Matrix::Identity(3, 3),
                                                       Matrix::Identity(3, 3), false);
  EXPECT_LT((h.value() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RksaForward, NonStochasticOptionMatchesOracle) {
  Rng rng(17);
  const CoocStats cooc = small_cooc();
  const std::vector<ItemId> items = {1, 2, 3, 4};
  HeadParams head;
  const Matrix wq = random_matrix(5, 5, rng), wk = random_matrix(5, 5, rng), wv = random_matrix(5, 5, rng);
  head.location_query = ad::constant(wq);
  head.location_key = ad::constant(wk);
  head.value = ad::constant(wv);
  AttentionOptions options;
  options.stochastic = false;
  const Matrix x = random_matrix(4, 5, rng);
  const ad::Var h = rksa_forward(ad::constant(x), context_for(items, cooc, 5, rng), AttentionMode::TrainStochastic,
                                 rng, head, options).hidden;
  EXPECT_LT((h.value() - oracle::scaled_dot_attention(x, wq, wk, wv, true)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RksaForward, LastRowOnlyKeepsEarlierRowsDeterministic) {
  Rng rng(18);
  const CoocStats cooc = small_cooc();
  const std::vector<ItemId> items = {1, 2, 3, 4};
  const BlockParams block = init_block(4, 1, rng);
  const SequenceContext ctx = context_for(items, cooc, 4, rng);
  const ad::Var x = ad::constant(random_matrix(4, 4, rng));
  AttentionOptions options;
  options.last_row_only = true;
  HeadTrace loc, draw;
  rksa_forward(x, ctx, AttentionMode::EvalLocation, rng, block.heads[0], options, &loc);
  rksa_forward(x, ctx, AttentionMode::TrainStochastic, rng, block.heads[0], options, &draw);
  EXPECT_LT((loc.weights.topRows(3) - draw.weights.topRows(3)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_GT((loc.weights.row(3) - draw.weights.row(3)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(RksaForward, EvalLocationIgnoresSeed) {
  Rng init(19);
  const CoocStats cooc = small_cooc();
  const std::vector<ItemId> items = {2, 3, 5};
  const BlockParams block = init_block(4, 1, init);
  const SequenceContext ctx = context_for(items, cooc, 4, init);
  const ad::Var x = ad::constant(random_matrix(3, 4, init));
  Rng a(1), b(2);
  const Matrix ha = rksa_forward(x, ctx, AttentionMode::EvalLocation, a, block.heads[0], AttentionOptions{}).hidden.value();
  const Matrix hb = rksa_forward(x, ctx, AttentionMode::EvalLocation, b, block.heads[0], AttentionOptions{}).hidden.value();
  EXPECT_EQ((ha - hb).cwiseAbs().maxCoeff(), 0.0);
  const Matrix sa = rksa_forward(x, ctx, AttentionMode::TrainStochastic, a, block.heads[0], AttentionOptions{}).hidden.value();
  const Matrix sb = rksa_forward(x, ctx, AttentionMode::TrainStochastic, b, block.heads[0], AttentionOptions{}).hidden.value();
  EXPECT_GT((sa - sb).cwiseAbs().maxCoeff(), 0.0);
}

TEST(MultiHead, ShapesAndSingleHeadProjection) {
  Rng rng(20);
  const CoocStats cooc = small_cooc();
  const std::vector<ItemId> items = {1, 2, 3, 4, 5};
  const SequenceContext ctx = context_for(items, cooc, 64, rng);
  const ad::Var x = ad::constant(random_matrix(5, 64, rng, 0.125));
  const BlockParams two = init_block(64, 2, rng);
  EXPECT_EQ(two.heads[0].value.cols(), 32);
  const MultiHeadOutput out = multi_head(x, ctx, AttentionMode::EvalLocation, rng, two, AttentionOptions{});
  EXPECT_EQ(out.out.rows(), 5);
  EXPECT_EQ(out.out.cols(), 64);
  EXPECT_EQ(out.heads.size(), 2U);

  const BlockParams one = init_block(64, 1, rng);
  const MultiHeadOutput single = multi_head(x, ctx, AttentionMode::EvalLocation, rng, one, AttentionOptions{});
  const Matrix expected =
      rksa_forward(x, ctx, AttentionMode::EvalLocation, rng, one.heads[0], AttentionOptions{}).hidden.value() *
      one.output.value();
  EXPECT_LT((single.out.value() - expected).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(MultiHead, DivisibilityError) {
  Rng rng(21);
  EXPECT_THROW(init_block(10, 3, rng), ConfigError);
  EXPECT_THROW(init_block(10, 0, rng), ConfigError);
}

TEST(Ffn, Examples) {
  Rng rng(22);
  BlockParams block = init_block(4, 1, rng);
  const Matrix h = random_matrix(3, 4, rng);
  zero_block(block);
  EXPECT_EQ(ffn(ad::constant(h), block).value().cwiseAbs().maxCoeff(), 0.0);

  block.ffn_w1.mutable_value() = random_matrix(4, 4, rng);
  block.ffn_b1.mutable_value().setConstant(-1e3);
  block.ffn_w2.mutable_value() = random_matrix(4, 4, rng);
  block.ffn_b2.mutable_value() = random_matrix(1, 4, rng);
  const Matrix out = ffn(ad::constant(h), block).value();
  for (Index i = 0; i < 3; ++i) EXPECT_LT((out.row(i) - block.ffn_b2.value()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Ffn, PositionWise) {
  Rng rng(23);
  const BlockParams block = init_block(4, 1, rng);
  const Matrix h = random_matrix(5, 4, rng);
  const Eigen::PermutationMatrix<Eigen::Dynamic> perm(Eigen::VectorXi{{3, 0, 4, 1, 2}});
  const Matrix a = perm * ffn(ad::constant(h), block).value();
  const Matrix b = ffn(ad::constant(Matrix(perm * h)), block).value();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Stack, ZeroWeightsGiveDoubleLayerNorm) {
  Rng rng(24);
  ModelConfig config;
  config.num_items = 12;
  config.num_users = 3;
  config.max_len = 6;
  config.dim = 8;
  config.blocks = 1;
  Model model = Model::create(config, rng);
  for (auto& block : model.blocks()) zero_block(block);
  const CoocStats cooc = small_cooc();
  const std::vector<ItemId> items = {1, 2, 3, 4};
  const ForwardOutput out = forward(model, 0, items, cooc, AttentionMode::EvalLocation, false, rng);
  const Matrix x = build_inputs(model.tables(), items, 2).value();
  const Matrix expected = layer_norm_rows(layer_norm_rows(x, config.norm_eps), config.norm_eps);
  EXPECT_LT((out.hidden.value() - expected).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Stack, CausalPerturbation) {
  Rng rng(25);
  ModelConfig config;
  config.num_items = 12;
  config.num_users = 3;
  config.max_len = 6;
  config.dim = 8;
  config.blocks = 2;
  const Model model = Model::create(config, rng);
  const CoocStats cooc = small_cooc();
  std::vector<ItemId> items = {1, 2, 3, 7, 12, 9};
  for (AttentionMode mode : {AttentionMode::EvalLocation, AttentionMode::TrainStochastic}) {
    for (Index t = 1; t < 6; ++t) {
      Rng a(7), b(7);
      std::vector<ItemId> changed = items;
      changed[static_cast<std::size_t>(t)] = changed[static_cast<std::size_t>(t)] == 5 ? 6 : 5;
      const Matrix h1 = forward(model, 1, items, cooc, mode, false, a).hidden.value();
      const Matrix h2 = forward(model, 1, changed, cooc, mode, false, b).hidden.value();
      EXPECT_LT((h1.topRows(t) - h2.topRows(t)).cwiseAbs().maxCoeff(), 1e-12) << t;
      EXPECT_GT((h1.row(t) - h2.row(t)).cwiseAbs().maxCoeff(), 1e-9) << t;
    }
  }
}

TEST(Stack, EvalIsDeterministicAndTrainingDropoutIsNot) {
  Rng rng(26);
  ModelConfig config;
  config.num_items = 12;
  config.num_users = 3;
  config.max_len = 6;
  config.dim = 8;
  const Model model = Model::create(config, rng);
  const CoocStats cooc = small_cooc();
  const std::vector<ItemId> items = {1, 2, 3};
  Rng a(1), b(2);
  const Matrix e1 = forward(model, 0, items, cooc, AttentionMode::EvalLocation, false, a).hidden.value();
  const Matrix e2 = forward(model, 0, items, cooc, AttentionMode::EvalLocation, false, b).hidden.value();
  EXPECT_EQ((e1 - e2).cwiseAbs().maxCoeff(), 0.0);
  const Matrix t1 = forward(model, 0, items, cooc, AttentionMode::EvalLocation, true, a).hidden.value();
  EXPECT_GT((e1 - t1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Relevance, SubsetConsistencyAndPadding) {
  Rng rng(27);
  const Matrix table = random_matrix(8, 4, rng);
  const ad::Var t = ad::constant(table);
  const ad::Var row = ad::constant(random_matrix(1, 4, rng));
  const Matrix full = relevance_scores(row, t).value();
  EXPECT_EQ(full.cols(), 7);
  const std::vector<ItemId> subset = {5, 2, 7};
  const Matrix part = relevance_scores(row, t, subset).value();
  for (std::size_t k = 0; k < subset.size(); ++k) {
    EXPECT_DOUBLE_EQ(part(0, static_cast<Index>(k)), full(0, subset[k] - 1));
  }
  const std::vector<ItemId> with_padding = {0, 1};
  EXPECT_THROW(relevance_scores(row, t, with_padding), ConfigError);
}

TEST(Relevance, OwnEmbeddingScoresHighestOnUnitRows) {
  Rng rng(28);
  Matrix table = random_matrix(10, 5, rng);
  table.rowwise().normalize();
  const ad::Var t = ad::constant(table);
  for (Index i = 1; i < 10; ++i) {
    const Matrix scores = relevance_scores(ad::constant(table.row(i)), t).value();
    Index best = 0;
    scores.row(0).maxCoeff(&best);
    EXPECT_EQ(best + 1, i);
  }
}
