#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "kvconsist/checkpoint.hpp"
#include "kvconsist/config.hpp"
#include "kvconsist/synthgen.hpp"
#include "kvconsist/training.hpp"

namespace kvconsist {
namespace {

namespace fs = std::filesystem;

KvBertConfig small_config() {
  KvBertConfig c;
  c.transformer = {1, 2, 16, 32, 32, 0.1};
  c.tree = {16, 8};
  c.d_struct = 8;
  return c;
}

const GeneratedCorpus& corpus() {
  static const GeneratedCorpus c = [] {
    GenConfig g;
    g.train = 200;
    g.valid = 60;
    g.test = 60;
    g.keyswap = 20;
    g.seed = 5;
    return generate(g, TemplateBank::defaults(), LocationOntology());
  }();
  return c;
}

Model fresh_model(std::uint64_t seed = 2) {
  const auto cfg = small_config();
  return make_model(cfg, Vocab::build(corpus().train.examples, cfg.keys), seed);
}

TrainConfig quick(int s1, int s2) {
  TrainConfig t;
  t.stage1_epochs = s1;
  t.stage2_epochs = s2;
  t.batch_size = 8;
  t.lr_tree = 5e-3;
  t.lr_joint = 1e-3;
  t.seed = 9;
  return t;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("kvconsist-train-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(TrainConfig, Validation) {
  TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  t.lr_joint = 0.0;
  EXPECT_THROW(t.validate(), Error);
  t = TrainConfig{};
  t.stage1_epochs = -1;
  EXPECT_THROW(t.validate(), Error);
}

TEST(Clip, BoundsGlobalNorm) {
  Model m = fresh_model();
  ModelState g = zeros_like(m.state);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 3.0);
  ModelState::visit(g, [&](const std::string&, Matrix& t, ParamGroup) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  });
  const auto all = [](ParamGroup) { return true; };
  const double before = clip_global_norm(g, 1.5, all);
  EXPECT_GT(before, 1.5);
  EXPECT_LE(global_norm(g, all), 1.5 + 1e-9);
  // Already inside the bound: untouched.
  const auto fp = parameter_fingerprint(g);
  clip_global_norm(g, 100.0, all);
  EXPECT_EQ(parameter_fingerprint(g), fp);
}

TEST(Adam, MinimizesQuadratic) {
  Model m = fresh_model();
  Adam opt(m.state);
  // Drive every out_w entry towards 0 through gradient = parameter.
  for (int i = 0; i < 500; ++i) {
    ModelState g = zeros_like(m.state);
    g.out_w = m.state.out_w;
    opt.step(m.state, g, [](ParamGroup grp) { return grp == ParamGroup::kOutput ? 0.05 : 0.0; });
  }
  EXPECT_LT(m.state.out_w.cwiseAbs().maxCoeff(), 0.05);
  EXPECT_EQ(opt.steps(), 500);
}

TEST(Stage1, ZeroEpochsIsNoop) {
  Model m = fresh_model();
  const auto before = parameter_fingerprint(m.state);
  const auto r = pretrain_tree(m, corpus().train, &corpus().valid, quick(0, 0));
  EXPECT_TRUE(r.epochs.empty());
  EXPECT_EQ(parameter_fingerprint(m.state), before);
}

TEST(Stage1, EmptyDatasetIsAnError) {
  Model m = fresh_model();
  EXPECT_THROW(pretrain_tree(m, Dataset{}, nullptr, quick(1, 0)), Error);
}

TEST(Stage1, LeavesSequenceSideAndOutputUntouched) {
  Model m = fresh_model();
  const auto seq = parameter_fingerprint(m.state, ParamGroup::kSequence);
  const auto out = parameter_fingerprint(m.state, ParamGroup::kOutput);
  const auto tree = parameter_fingerprint(m.state, ParamGroup::kStructure);
  int hooks = 0;
  pretrain_tree(m, corpus().train, nullptr, quick(2, 0), [&](int, const Model&) { ++hooks; });
  EXPECT_EQ(hooks, 2);
  EXPECT_EQ(parameter_fingerprint(m.state, ParamGroup::kSequence), seq);
  EXPECT_EQ(parameter_fingerprint(m.state, ParamGroup::kOutput), out);
  EXPECT_NE(parameter_fingerprint(m.state, ParamGroup::kStructure), tree);
}

TEST(Stage1, SeededRunsAreBitIdentical) {
  Model a = fresh_model(), b = fresh_model();
  const auto ra = pretrain_tree(a, corpus().train, &corpus().valid, quick(2, 0));
  const auto rb = pretrain_tree(b, corpus().train, &corpus().valid, quick(2, 0));
  EXPECT_EQ(parameter_fingerprint(a.state), parameter_fingerprint(b.state));
  ASSERT_EQ(ra.epochs.size(), 2u);
  EXPECT_EQ(ra.epochs[1].loss, rb.epochs[1].loss);
}

TEST(Stage1, FitsSmallSeparableSet) {
  // The generator's labels agree with the rule oracle, so the set is separable.
  const auto bank = TemplateBank::defaults();
  const LocationOntology onto;
  for (const auto& ex : corpus().train.examples) ASSERT_EQ(rule_oracle(ex, bank, onto), ex.label);
  Model m = fresh_model();
  auto cfg = quick(13, 0);
  cfg.batch_size = 4;
  pretrain_tree(m, corpus().train, nullptr, cfg);
  EXPECT_GT(accuracy(m, corpus().train, PathMode::kStructureOnly), 0.9);
}

TEST(Stage2, ZeroEpochsIsNoop) {
  Model m = fresh_model();
  const auto before = parameter_fingerprint(m.state);
  EXPECT_TRUE(finetune_joint(m, corpus().train, &corpus().valid, quick(0, 0)).epochs.empty());
  EXPECT_TRUE(train_flat_baseline(m, corpus().train, &corpus().valid, quick(0, 0)).epochs.empty());
  EXPECT_EQ(parameter_fingerprint(m.state), before);
}

TEST(Stage2, RetainsBestValidationState) {
  Model m = fresh_model();
  const auto head = parameter_fingerprint(m.state, ParamGroup::kStage1Head);
  const auto r = finetune_joint(m, corpus().train, &corpus().valid, quick(0, 4));
  ASSERT_EQ(r.epochs.size(), 4u);
  ASSERT_TRUE(r.best_epoch && r.best_valid_accuracy);
  for (const auto& e : r.epochs) EXPECT_GE(*r.best_valid_accuracy, *e.valid_accuracy);
  EXPECT_DOUBLE_EQ(accuracy(m, corpus().valid), *r.best_valid_accuracy);
  EXPECT_EQ(parameter_fingerprint(m.state, ParamGroup::kStage1Head), head);
}

TEST(Flat, KeepsStructureSideAndIsDeterministic) {
  Model a = fresh_model(), b = fresh_model();
  const auto tree = parameter_fingerprint(a.state, ParamGroup::kStructure);
  train_flat_baseline(a, corpus().train, &corpus().valid, quick(0, 1));
  train_flat_baseline(b, corpus().train, &corpus().valid, quick(0, 1));
  EXPECT_EQ(parameter_fingerprint(a.state, ParamGroup::kStructure), tree);
  EXPECT_EQ(parameter_fingerprint(a.state), parameter_fingerprint(b.state));
  EXPECT_EQ(a.state.out_w.cols(), a.config.joint_width());
  EXPECT_EQ(KvBertConfig::paper_scale().joint_width(), 818);
}

TEST(Report, JsonShape) {
  Model m = fresh_model();
  auto r = pretrain_tree(m, corpus().train, &corpus().valid, quick(1, 0));
  r.append(finetune_joint(m, corpus().train, &corpus().valid, quick(0, 1)));
  const auto j = to_json(r);
  ASSERT_EQ(j["epochs"].size(), 2u);
  EXPECT_EQ(j["epochs"][0]["stage"], "stage1");
  EXPECT_EQ(j["epochs"][1]["stage"], "stage2");
  EXPECT_EQ(j["best_epoch"], 1);
}

TEST(Checkpoint, RoundTripIsFloat32Exact) {
  const fs::path dir = temp_dir("roundtrip");
  Model m = fresh_model();
  save_checkpoint(m, dir);
  const Model back = load_checkpoint(dir);
  ModelState rounded = m.state;
  round_to_float(rounded);
  EXPECT_EQ(parameter_fingerprint(back.state), parameter_fingerprint(rounded));
  EXPECT_EQ(back.vocab.tokens(), m.vocab.tokens());
  EXPECT_EQ(back.config.joint_width(), m.config.joint_width());
  fs::remove_all(dir);
}

TEST(Checkpoint, TransformerLoaderValidatesShapes) {
  const fs::path dir = temp_dir("loader");
  Model src = fresh_model(7);
  save_checkpoint(src, dir);

  Model dst = fresh_model(8);
  load_transformer_weights(dir, dst.config, dst.state);
  EXPECT_EQ(dst.state.transformer.layers[0].wq, [&] {
    ModelState r = src.state;
    round_to_float(r);
    return r.transformer.layers[0].wq;
  }());

  auto wide = small_config();
  wide.transformer.hidden = 32;
  Model other = make_model(wide, src.vocab, 1);
  EXPECT_THROW(load_transformer_weights(dir, wide, other.state), Error);

  {
    std::ofstream out(dir / "manifest.json");
    out << R"({"format": "something-else", "tensors": []})";
  }
  EXPECT_THROW(load_checkpoint(dir), Error);
  fs::remove_all(dir);
}

TEST(Config, ParsesSectionsAndRejectsUnknownFields) {
  const fs::path dir = temp_dir("config");
  {
    std::ofstream out(dir / "c.json");
    out << R"({"model": {"transformer": {"layers": 1, "heads": 2, "hidden": 8, "ff": 16, "max_len": 40, "dropout": 0.0},
                         "tree": {"input_size": 6, "hidden_size": 3}, "d_struct": 5},
               "train": {"stage1_epochs": 2, "lr_joint": 0.01},
               "gen": {"train": 10, "label_mix": {"ENTAILED": 0.5, "CONTRADICTED": 0.25, "IRRELEVANT": 0.25},
                       "templates": "t.json"}})";
  }
  const RunConfig rc = load_run_config(dir / "c.json");
  EXPECT_EQ(rc.model.joint_width(), 13);
  EXPECT_EQ(rc.train.stage1_epochs, 2);
  EXPECT_EQ(rc.train.stage2_epochs, 3);
  EXPECT_DOUBLE_EQ(rc.train.lr_joint, 0.01);
  EXPECT_EQ(rc.gen.train, 10u);
  EXPECT_DOUBLE_EQ(rc.gen.label_mix[0], 0.5);
  ASSERT_TRUE(rc.templates);
  EXPECT_EQ(*rc.templates, dir / "t.json");

  {
    std::ofstream out(dir / "bad.json");
    out << R"({"train": {"epochs": 2}})";
  }
  EXPECT_THROW(load_run_config(dir / "bad.json"), Error);
  EXPECT_EQ(model_config_from_json(to_json(KvBertConfig::paper_scale())).joint_width(), 818);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace kvconsist
