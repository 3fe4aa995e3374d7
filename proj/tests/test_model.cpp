#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ptk/model.hpp"
#include "ptk/tokenizer.hpp"
#include "test_support.hpp"

namespace {

using namespace ptk;
using namespace ptk::model;
using ptk::testing::TempDir;

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.vocab_size = 12;
  c.max_seq = 24;
  c.m = 2;
  c.d_ff = 32;
  c.seed = 3;
  return c;
}

// Cloud -> patch tokens, then `text` (offsets above the reserved ids)
// appended; supervision on the text.
Example cloud_example(std::uint64_t seed, std::size_t m, std::vector<std::uint32_t> text, std::size_t n = 40) {
  std::mt19937_64 rng(seed);
  auto seq = tokenize(ptk::testing::random_cloud(rng, n), {.m = m, .k = 2}).sequence;
  const std::size_t start = seq.tokens.size();
  for (auto id : text) seq.tokens.push_back(Token::text(kFirstTextId + id));
  return make_example(std::move(seq), start);
}

TEST(Embed, SpecialTokensAreTableRows) {
  auto p = init_params(small_config());
  TokenSequence seq;
  seq.tokens = {Token::pc_start(), Token::layer_sep(), Token::row_sep(), Token::pc_end(), Token::text(7)};
  Mat e = embed_sequence(p, seq);
  ASSERT_EQ(e.rows(), 5);
  const std::uint32_t ids[] = {kPcStartId, kLayerSepId, kRowSepId, kPcEndId, 7};
  for (int i = 0; i < 5; ++i) EXPECT_TRUE(e.row(i) == p.token_embeddings.row(ids[i]));
}

TEST(Embed, ProjectorIsLinear) {
  auto p = init_params(small_config());
  TokenSequence seq;
  seq.tokens = {Token::pc_start(), Token::patch(0), Token::patch(1), Token::pc_end()};
  seq.patch_matrix.rows = 2;
  seq.patch_matrix.cols = 12;
  seq.patch_matrix.data.assign(24, 0.0);
  for (std::size_t i = 0; i < 12; ++i) seq.patch_matrix.data[12 + i] = 0.1 * static_cast<double>(i) - 0.4;
  Mat e = embed_sequence(p, seq);
  EXPECT_TRUE(e.row(1).isZero(0.0));
  auto doubled = seq;
  for (auto& v : doubled.patch_matrix.data) v *= 2.0;
  Mat e2 = embed_sequence(p, doubled);
  EXPECT_TRUE(e2.row(2) == 2.0 * e.row(2));
}

TEST(Embed, WrongPatchWidthIsShapeMismatch) {
  auto p = init_params(small_config());
  TokenSequence seq;
  seq.tokens = {Token::patch(0)};
  seq.patch_matrix = {1, 18, std::vector<double>(18, 0.0)};
  try {
    embed_sequence(p, seq);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(Forward, CausalityIsBitwise) {
  auto p = init_params(small_config());
  auto ex = cloud_example(1, 2, {1, 2, 3});
  Mat emb = embed_sequence(p, ex.seq);
  Mat base = forward(p, emb);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  for (Eigen::Index t = 0; t < emb.rows(); ++t) {
    Mat pert = emb;
    for (Eigen::Index r = t; r < emb.rows(); ++r)
      for (Eigen::Index c = 0; c < emb.cols(); ++c) pert(r, c) += nd(rng);
    Mat out = forward(p, pert);
    for (Eigen::Index r = 0; r < t; ++r) {
      ASSERT_EQ(std::memcmp(out.row(r).data(), base.row(r).data(), sizeof(double) * out.cols()), 0) << t << " " << r;
    }
  }
}

TEST(Forward, SoftmaxRowsSumToOne) {
  auto p = init_params(small_config());
  auto ex = cloud_example(3, 2, {4});
  Mat probs = softmax_rows(forward(p, embed_sequence(p, ex.seq)));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) EXPECT_NEAR(probs.row(r).sum(), 1.0, 1e-6);
}

TEST(Forward, SingleTokenShapeAndSharedPrefix) {
  auto p = init_params(small_config());
  TokenSequence one;
  one.tokens = {Token::pc_start()};
  Mat l = forward(p, embed_sequence(p, one));
  EXPECT_EQ(l.rows(), 1);
  EXPECT_EQ(l.cols(), 12);
  TokenSequence a, b;
  a.tokens = {Token::pc_start(), Token::text(6), Token::text(7)};
  b.tokens = {Token::pc_start(), Token::text(6), Token::text(10)};
  Mat la = forward(p, embed_sequence(p, a));
  Mat lb = forward(p, embed_sequence(p, b));
  EXPECT_TRUE(la.topRows(2) == lb.topRows(2));
}

TEST(Loss, UniformLogitsGiveLogVocab) {
  auto p = init_params(small_config());
  p.head.setZero();
  auto ex = cloud_example(4, 2, {1, 2});
  std::vector<Example> batch{ex};
  EXPECT_NEAR(loss(p, batch), std::log(12.0), 1e-9);
}

TEST(Loss, NoSupervisedPositionIsEmptyMask) {
  auto p = init_params(small_config());
  auto ex = cloud_example(5, 2, {1});
  std::fill(ex.mask.begin(), ex.mask.end(), 0);
  std::vector<Example> batch{ex};
  try {
    loss(p, batch);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyMask);
  }
}

TEST(Loss, OnlyTextTargetsAreSupervised) {
  auto ex = cloud_example(6, 2, {1, 2});
  std::size_t on = 0;
  for (std::size_t t = 0; t < ex.mask.size(); ++t) {
    if (!ex.mask[t]) continue;
    ++on;
    EXPECT_EQ(ex.seq.tokens[t + 1].kind, TokenKind::Text);
  }
  EXPECT_EQ(on, 2u);
}

TEST(Loss, MaskedOutTargetsDoNotAffectGradients) {
  auto p = init_params(small_config());
  auto ex = cloud_example(7, 2, {1, 2});
  std::vector<Example> a{ex};
  auto changed = ex;
  for (std::size_t t = 0; t < changed.mask.size(); ++t)
    if (!changed.mask[t]) changed.targets[t] = 9;
  std::vector<Example> b{changed};
  ModelParams ga, gb;
  const double la = loss_and_grad(p, a, &ga);
  const double lb = loss_and_grad(p, b, &gb);
  EXPECT_EQ(la, lb);
  EXPECT_TRUE(bitwise_equal(ga, gb));
}

TEST(GradCheck, MatchesCentralDifferences) {
  auto p = init_params(small_config());
  std::vector<Example> batch{cloud_example(8, 2, {1, 2}), cloud_example(9, 2, {3})};
  GradCheckOptions opt;
  opt.samples_per_group = 40;
  auto rep = grad_check(p, batch, opt);
  EXPECT_GE(rep.checked, 200u);
  EXPECT_EQ(rep.groups.size(), kNumParamGroups);
  for (const auto& g : rep.groups) EXPECT_LE(g.max_rel_error, 1e-4) << to_string(g.group);
}

TEST(GradCheck, OnePatchOneTextProjector) {
  auto p = init_params(small_config());
  TokenSequence seq;
  seq.tokens = {Token::patch(0), Token::text(6)};
  seq.patch_matrix = {1, 12, {0.1, 0.2, 0.3, 0.9, 0.8, 0.7, 0.4, 0.5, 0.6, 0.3, 0.2, 0.1}};
  std::vector<Example> batch{make_example(seq, 1)};
  auto rep = grad_check(p, batch);
  EXPECT_LE(rep.groups[0].max_rel_error, 1e-4);
}

TEST(GradCheck, ZeroGradientPassesOnAbsoluteBranch) {
  auto p = init_params(small_config());
  std::vector<Example> batch{cloud_example(10, 2, {1})};
  ModelParams g;
  loss_and_grad(p, batch, &g);
  // Unused vocabulary rows have zero analytic and zero numeric gradient.
  const Eigen::Index unused = 11;
  EXPECT_TRUE(g.token_embeddings.row(unused).isZero(0.0));
  ModelParams probe = p;
  probe.token_embeddings(unused, 0) += 1e-5;
  EXPECT_LE(std::abs(loss(probe, batch) - loss(p, batch)), 1e-8);
}

TEST(GradCheck, CorruptedProjectorGradientIsRejected) {
  auto p = init_params(small_config());
  std::vector<Example> batch{cloud_example(11, 2, {1, 2})};
  ModelParams g;
  loss_and_grad(p, batch, &g);
  g.projector *= 1.1;
  try {
    verify_gradients(p, batch, g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::GradMismatch);
    EXPECT_NE(std::string(e.what()).find("projector"), std::string::npos);
  }
}

TEST(GradCheck, EpsilonRange) {
  auto p = init_params(small_config());
  std::vector<Example> batch{cloud_example(12, 2, {1})};
  GradCheckOptions opt;
  opt.epsilon = 1e-2;
  EXPECT_THROW(grad_check(p, batch, opt), Error);
}

TEST(Train, OverfitsOneBatch) {
  auto p = init_params(small_config());
  std::vector<Example> batch{cloud_example(13, 2, {1, 2}), cloud_example(14, 2, {3, 4})};
  TrainOptions o;
  o.steps = 500;
  o.batch_size = 2;
  o.lr = 3e-3;
  // Full-batch: the source cycles deterministically.
  std::size_t next = 0;
  SampleSource src = [&](std::mt19937_64&) -> const Example& { return batch[next++ % batch.size()]; };
  auto r = train(p, src, o);
  ASSERT_EQ(r.losses.size(), 500u);
  EXPECT_LT(loss(r.params, batch), 0.1 * r.losses.front());
}

TEST(Train, SgdOverfitsOneBatchToo) {
  auto p = init_params(small_config());
  std::vector<Example> batch{cloud_example(15, 2, {1, 2})};
  TrainOptions o;
  o.steps = 500;
  o.batch_size = 1;
  o.lr = 0.1;
  o.optimizer = OptimizerKind::Sgd;
  auto r = train(p, batch, o);
  EXPECT_LT(loss(r.params, batch), 0.1 * r.losses.front());
}

TEST(Train, ZeroLearningRateKeepsParams) {
  auto p = init_params(small_config());
  std::vector<Example> batch{cloud_example(16, 2, {1})};
  for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    TrainOptions o;
    o.steps = 5;
    o.lr = 0.0;
    o.optimizer = kind;
    EXPECT_TRUE(bitwise_equal(train(p, batch, o).params, p));
  }
}

TEST(Train, DeterministicPerSeed) {
  auto p = init_params(small_config());
  std::vector<Example> data{cloud_example(17, 2, {1}), cloud_example(18, 2, {2}), cloud_example(19, 2, {3})};
  TrainOptions o;
  o.steps = 20;
  o.batch_size = 2;
  o.seed = 5;
  auto a = train(p, data, o);
  auto b = train(p, data, o);
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_TRUE(bitwise_equal(a.params, b.params));
  EXPECT_TRUE(bitwise_equal(init_params(small_config()), p));
}

TEST(Train, NonFiniteLossIsDivergence) {
  auto p = init_params(small_config());
  p.head(0, 0) = std::numeric_limits<double>::quiet_NaN();
  std::vector<Example> data{cloud_example(20, 2, {1})};
  TrainOptions o;
  o.steps = 3;
  try {
    train(p, data, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DivergenceDetected);
  }
}

TEST(Train, CosineScheduleEndpoints) {
  TrainOptions o;
  o.steps = 101;
  o.lr = 1.0;
  o.min_lr_fraction = 0.1;
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 0), 1.0);
  EXPECT_NEAR(scheduled_lr(o, 50), 0.55, 1e-12);
  EXPECT_NEAR(scheduled_lr(o, 100), 0.1, 1e-12);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir("ckpt");
  auto p = init_params(small_config());
  std::vector<Example> data{cloud_example(21, 2, {1})};
  TrainOptions o;
  o.steps = 3;
  p = train(p, data, o).params;
  save_checkpoint(p, dir / "c.ptkc");
  auto q = load_checkpoint(dir / "c.ptkc");
  EXPECT_TRUE(bitwise_equal(p, q));
  auto bytes = io::read_file(dir / "c.ptkc");
  EXPECT_EQ(bytes.size(), 4u + 4u + 28u + 8u + 8u + 8u * parameter_count(p));
  EXPECT_EQ(encode_checkpoint(q), bytes);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), Error);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), Error);
}

TEST(Config, RejectsBadShapes) {
  ModelConfig c;
  c.n_heads = 3;
  EXPECT_THROW(init_params(c), Error);
  c = ModelConfig{};
  c.vocab_size = 5;
  EXPECT_THROW(init_params(c), Error);
}

TEST(Config, LargePatchProjector) {
  ModelConfig c;
  c.m = 512;
  c.n_layers = 1;
  auto p = init_params(c);
  EXPECT_EQ(p.projector.rows(), 3072);
  EXPECT_EQ(p.projector.cols(), 64);
}

}  // namespace
