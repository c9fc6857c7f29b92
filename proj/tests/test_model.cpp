#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "kvconsist/model.hpp"
#include "kvconsist/structures.hpp"

namespace kvconsist {
namespace {

KvBertConfig tiny_config() {
  KvBertConfig c;
  c.transformer = {1, 1, 16, 8, 32, 0.0};
  c.tree = {6, 4};
  c.d_struct = 3;
  return c;
}

Example make_example(Profile p, const std::string& domain, const std::string& response, Label label,
                     std::optional<std::vector<ParseArc>> parse = std::nullopt) {
  Example ex;
  ex.profile = std::move(p);
  ex.domain = domain;
  ex.response = split_tokens(response);
  ex.label = label;
  ex.response_parse = std::move(parse);
  return ex;
}

std::vector<Example> tiny_batch() {
  return {
      make_example(Profile({{"gender", "female"}, {"location", "Jiangsu Suzhou"}, {"constellation", "Leo"}}), "location",
                   "i live in Suzhou", Label::kEntailed, std::vector<ParseArc>{{1, 2}, {2, 0}, {3, 2}, {4, 3}}),
      make_example(Profile({{"gender", "male"}, {"location", "Henan"}, {"constellation", "Aries"}}), "gender",
                   "my girlfriend bought me flowers", Label::kContradicted),
      make_example(Profile({{"gender", "male"}, {"location", "Hubei Wuhan"}, {"constellation", "Libra"}}), "constellation",
                   "are you a Leo ?", Label::kIrrelevant),
  };
}

Model random_model(const KvBertConfig& cfg, const std::vector<Example>& data, std::uint64_t seed) {
  Model m = make_model(cfg, Vocab::build(data, cfg.keys), seed);
  // Push everything away from the init so no gradient is trivially zero.
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  ModelState::visit(m.state, [&](const std::string&, Matrix& t, ParamGroup) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += u(rng);
  });
  return m;
}

double batch_loss(const Model& m, const std::vector<Example>& batch, PathMode mode, const std::vector<double>& weights) {
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    total -= weights[i] * std::log(forward(m, batch[i], mode).probs[index_of(batch[i].label)]);
  return total;
}

testing::GradCheckResult check_model_gradients(PathMode mode) {
  const auto cfg = tiny_config();
  const auto batch = tiny_batch();
  Model m = random_model(cfg, batch, 21);
  const std::vector<double> weights{0.5, 0.3, 0.2};

  ModelState grads = zeros_like(m.state);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ForwardCache cache;
    const auto pred = forward(m, batch[i], mode, {}, &cache);
    backward(m, batch[i], cache, pred, mode, batch[i].label, weights[i], grads);
  }

  std::vector<std::pair<std::string, Matrix*>> ps;
  std::vector<const Matrix*> gs;
  ModelState::visit(m.state, [&](const std::string& n, Matrix& t, ParamGroup) { ps.emplace_back(n, &t); });
  ModelState::visit(grads, [&](const std::string&, Matrix& t, ParamGroup) { gs.push_back(&t); });
  testing::GradCheckResult result;
  auto f = [&] { return batch_loss(m, batch, mode, weights); };
  for (std::size_t i = 0; i < ps.size(); ++i) testing::check_tensor(ps[i].first, *ps[i].second, *gs[i], f, result);
  return result;
}

TEST(Config, PaperScaleJointWidth) {
  const auto cfg = KvBertConfig::paper_scale();
  EXPECT_EQ(cfg.joint_width(), 818);
  EXPECT_EQ(cfg.transformer.hidden, 768);
  EXPECT_EQ(cfg.tree.input_size, 300);
  EXPECT_EQ(cfg.tree.hidden_size, 50);
  const auto s = make_model_state(KvBertConfig::desk_scale(), 50);
  EXPECT_EQ(s.out_w.cols(), KvBertConfig::desk_scale().joint_width());
}

TEST(Vocab, SpecialsAndFolding) {
  Vocab v;
  EXPECT_EQ(v.id("[PAD]"), Vocab::kPad);
  EXPECT_EQ(v.id("[KV]"), Vocab::kKv);
  const int a = v.add("Beijing");
  EXPECT_EQ(v.id("beijing"), a);
  EXPECT_EQ(v.id("never-seen"), Vocab::kUnk);
  EXPECT_THROW(Vocab({"[PAD]", "[UNK]"}), Error);
}

TEST(Linearize, FigureExample) {
  const Profile p({{"gender", "female"}, {"location", "Beijing"}, {"constellation", "Leo"}});
  const auto lin = linearize(p, split_tokens("i am glad you could come to beijing"), 64);
  EXPECT_EQ(join_tokens(lin.tokens),
            "[CLS] gender female location Beijing constellation Leo [SEP] i am glad you could come to beijing [SEP]");
  EXPECT_EQ(lin.types, (std::vector<int>{0, 1, 1, 2, 2, 3, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(lin.segments, (std::vector<int>{0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1}));
  for (std::size_t i = 0; i < lin.size(); ++i) EXPECT_EQ(lin.positions[i], static_cast<int>(i));
}

TEST(Linearize, SinglePairMultiTokenAndErrors) {
  const auto a = linearize(Profile({{"gender", "male"}}), {"hi"}, 16);
  EXPECT_EQ(a.types, (std::vector<int>{0, 1, 1, 0, 0, 0}));
  const auto b = linearize(Profile({{"location", "Henan Anyang"}}), {"hi"}, 16);
  EXPECT_EQ(b.types, (std::vector<int>{0, 1, 1, 1, 0, 0, 0}));
  EXPECT_THROW(linearize(Profile({{"gender", "male"}}), {}, 16), Error);
  try {
    linearize(Profile({{"gender", "male"}}), Tokens(14, "w"), 16);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "truncation");
  }
}

TEST(Linearize, SurfaceSwapMovesValueSpans) {
  const Profile p({{"gender", "female"}, {"location", "Jiangsu Suzhou"}, {"constellation", "Leo"}});
  const auto lin = linearize(p, {"hi"}, 64, std::array<int, 2>{1, 2});
  EXPECT_EQ(join_tokens(lin.tokens), "[CLS] gender female location Leo constellation Jiangsu Suzhou [SEP] hi [SEP]");
  EXPECT_EQ(lin.types, (std::vector<int>{0, 1, 1, 2, 2, 3, 3, 3, 0, 0, 0}));
  EXPECT_THROW(linearize(p, {"hi"}, 64, std::array<int, 2>{1, 1}), Error);
  EXPECT_THROW(linearize(p, {"hi"}, 64, std::array<int, 2>{0, 3}), Error);
}

TEST(Aggregate, BlocksAndScalarOracle) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> g;
  const int n = 5, out = 4;
  Vector e_p(n), e_r(n);
  for (int i = 0; i < n; ++i) {
    e_p(i) = g(rng);
    e_r(i) = g(rng);
  }
  Matrix w(out, 4 * n), b(out, 1);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = g(rng);
  for (int i = 0; i < out; ++i) b(i, 0) = g(rng);

  const Vector got = aggregate(e_p, e_r, w, b);
  for (int r = 0; r < out; ++r) {
    double acc = b(r, 0);
    for (int i = 0; i < n; ++i) {
      acc += w(r, i) * e_p(i);
      acc += w(r, n + i) * e_r(i);
      acc += w(r, 2 * n + i) * (e_p(i) * e_r(i));
      acc += w(r, 3 * n + i) * (e_p(i) - e_r(i));
    }
    EXPECT_NEAR(got(r), acc, 1e-9);
  }

  EXPECT_TRUE(aggregation_features(e_p, e_p).segment(3 * n, n).isZero(0.0));
  EXPECT_TRUE(aggregate(Vector::Zero(n), Vector::Zero(n), w, b).isApprox(b.col(0)));
  EXPECT_THROW(aggregate(e_p, Vector::Zero(n + 1), w, b), Error);
}

TEST(Prediction, ArgmaxAndTieBreak) {
  auto p = make_prediction({0.0, 0.0, 0.0});
  EXPECT_EQ(p.label, Label::kEntailed);
  EXPECT_NEAR(p.probs[0] + p.probs[1] + p.probs[2], 1.0, 1e-12);
  p = make_prediction({0.0, 2.0, 2.0});
  EXPECT_EQ(p.label, Label::kContradicted);
  p = make_prediction({-1.0, 0.0, 3.0});
  EXPECT_EQ(p.label, Label::kIrrelevant);
  EXPECT_DOUBLE_EQ(p.confidence(), p.probs[2]);
  p = make_prediction({1000.0, 0.0, -1000.0});
  EXPECT_NEAR(p.probs[0], 1.0, 1e-12);
}

TEST(Forward, ZeroStateIsUniformAndLossIsLn3) {
  const auto cfg = tiny_config();
  const auto batch = tiny_batch();
  Model m{cfg, Vocab::build(batch, cfg.keys), {}};
  m.state = make_model_state(cfg, m.vocab.size());
  for (const auto& ex : batch) {
    const auto pred = forward(m, ex);
    for (double q : pred.probs) EXPECT_NEAR(q, 1.0 / 3.0, 1e-12);
  }
  EXPECT_NEAR(loss(m, batch), std::log(3.0), 1e-12);
  EXPECT_THROW(loss(m, std::span<const Example>{}), Error);
}

TEST(Forward, ConfidentModelHasZeroLoss) {
  const auto cfg = tiny_config();
  auto batch = tiny_batch();
  for (auto& ex : batch) ex.label = Label::kIrrelevant;
  Model m{cfg, Vocab::build(batch, cfg.keys), {}};
  m.state = make_model_state(cfg, m.vocab.size());
  m.state.out_b(2, 0) = 1000.0;
  EXPECT_NEAR(loss(m, batch), 0.0, 1e-12);
}

TEST(Forward, LossIsPerExampleAverage) {
  const auto cfg = tiny_config();
  const auto batch = tiny_batch();
  const Model m = random_model(cfg, batch, 5);
  const std::vector<Example> two(batch.begin(), batch.begin() + 2);
  const double a = -std::log(forward(m, two[0]).probs[index_of(two[0].label)]);
  const double b = -std::log(forward(m, two[1]).probs[index_of(two[1].label)]);
  EXPECT_NEAR(loss(m, two), (a + b) / 2.0, 1e-12);
}

TEST(Forward, DeterministicAndNormalized) {
  const auto cfg = tiny_config();
  const auto batch = tiny_batch();
  const Model m = random_model(cfg, batch, 6);
  for (const auto& ex : batch) {
    const auto a = forward(m, ex);
    const auto b = forward(m, ex);
    EXPECT_EQ(a.logits, b.logits);
    EXPECT_NEAR(a.probs[0] + a.probs[1] + a.probs[2], 1.0, 1e-12);
  }
}

TEST(Forward, ProfileOrderLeavesProfileEncodingUnchanged) {
  const auto cfg = tiny_config();
  const auto batch = tiny_batch();
  const Model m = random_model(cfg, batch, 7);
  Example ex = batch[0];
  const auto [e_p, e_r] = encode_structures(m, ex);
  auto pairs = ex.profile.pairs();
  std::reverse(pairs.begin(), pairs.end());
  ex.profile = Profile(pairs);
  const auto [e_p2, e_r2] = encode_structures(m, ex);
  EXPECT_LT((e_p - e_p2).cwiseAbs().maxCoeff(), 1e-9);
  // The sequence path does see the order.
  EXPECT_NE(forward(m, batch[0]).logits, forward(m, ex).logits);
}

TEST(Forward, FlatModeIgnoresStructure) {
  const auto cfg = tiny_config();
  const auto batch = tiny_batch();
  Model m = random_model(cfg, batch, 8);
  const auto before = forward(m, batch[0], PathMode::kFlat);
  m.state.tree.w_i.setRandom();
  m.state.agg_b.setRandom();
  EXPECT_EQ(forward(m, batch[0], PathMode::kFlat).logits, before.logits);
  EXPECT_NE(forward(m, batch[0], PathMode::kJoint).logits, before.logits);
}

TEST(Init, SeededAndIndependentPerTensor) {
  const auto cfg = tiny_config();
  const auto batch = tiny_batch();
  const Vocab v = Vocab::build(batch, cfg.keys);
  const Model a = make_model(cfg, v, 3);
  const Model b = make_model(cfg, v, 3);
  const Model c = make_model(cfg, v, 4);
  EXPECT_EQ(a.state.transformer.layers[0].wq, b.state.transformer.layers[0].wq);
  EXPECT_NE(a.state.transformer.layers[0].wq, c.state.transformer.layers[0].wq);
  EXPECT_TRUE(a.state.tree.b_i.isZero(0.0));
  EXPECT_TRUE((a.state.transformer.layers[0].ln1_gain.array() == 1.0).all());
  EXPECT_NO_THROW(check_shapes(a.state, cfg, v.size()));
  // A tensor's init does not depend on the vocabulary size.
  Vocab bigger = v;
  bigger.add("extra");
  const Model d = make_model(cfg, bigger, 3);
  EXPECT_EQ(d.state.tree.w_f, a.state.tree.w_f);
}

TEST(Gradients, JointModelMatchesFiniteDifferences) {
  const auto r = check_model_gradients(PathMode::kJoint);
  EXPECT_GT(r.checked, 1000);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}

TEST(Gradients, FlatModelMatchesFiniteDifferences) {
  const auto r = check_model_gradients(PathMode::kFlat);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}

TEST(Gradients, StructureOnlyHeadMatchesFiniteDifferences) {
  const auto r = check_model_gradients(PathMode::kStructureOnly);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}

}  // namespace
}  // namespace kvconsist
