// kvconsist: generate corpora, train, evaluate and inspect profile-consistency models.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kvconsist/checkpoint.hpp"
#include "kvconsist/config.hpp"
#include "kvconsist/evalkit.hpp"
#include "kvconsist/synthgen.hpp"
#include "kvconsist/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace kvconsist;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string splits;
  std::string predictions;
  std::string mode;
  std::vector<std::string> inputs;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("'" + path.string() + "': " + e.what(), "config");
  }
}

// --set section.field=value, value parsed as JSON when it parses, else a string.
void apply_override(json& root, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) throw Error("override '" + spec + "' is not of the form key=value", "usage");
  json* node = &root;
  std::stringstream path(spec.substr(0, eq));
  std::string part;
  while (std::getline(path, part, '.')) {
    if (part.empty()) throw Error("override '" + spec + "' has an empty key segment", "usage");
    node = &(*node)[part];
  }
  const std::string value = spec.substr(eq + 1);
  json parsed = json::parse(value, nullptr, false);
  *node = parsed.is_discarded() ? json(value) : parsed;
}

RunConfig run_config(const Options& o) {
  json j = json::object();
  fs::path base = fs::current_path();
  if (!o.config.empty()) {
    j = read_json_file(o.config);
    base = fs::path(o.config).parent_path();
  }
  for (const auto& s : o.overrides) apply_override(j, s);
  RunConfig rc = run_config_from_json(j, base);
  if (o.seed) {
    rc.gen.seed = *o.seed;
    rc.train.seed = *o.seed;
  }
  return rc;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

// JSON documents go to --out when given, else stdout.
void emit(const Options& o, const json& j) {
  if (o.out.empty())
    std::cout << j.dump(2) << '\n';
  else
    write_text(o.out, j.dump(2) + "\n");
}

struct Splits {
  Dataset train;
  std::optional<Dataset> valid, test, keyswap;
};

Splits load_splits(const fs::path& dir, const KeySet& keys) {
  if (!fs::is_directory(dir)) throw IoError("splits directory '" + dir.string() + "' does not exist");
  auto optional_split = [&](const char* name, Split split) -> std::optional<Dataset> {
    const fs::path p = dir / (std::string(name) + ".jsonl");
    if (!fs::exists(p)) return std::nullopt;
    return load_dataset(p, split, keys);
  };
  Splits s;
  s.train = load_dataset(dir / "train.jsonl", Split::kTrain, keys);
  s.valid = optional_split("valid", Split::kValid);
  s.test = optional_split("test", Split::kTest);
  s.keyswap = optional_split("keyswap", Split::kTest);
  return s;
}

PathMode parse_mode(const std::string& text) {
  if (text == "joint") return PathMode::kJoint;
  if (text == "flat") return PathMode::kFlat;
  if (text == "structure") return PathMode::kStructureOnly;
  throw Error("unknown path mode '" + text + "'", "usage");
}

std::string mode_name(PathMode m) {
  switch (m) {
    case PathMode::kJoint: return "joint";
    case PathMode::kFlat: return "flat";
    case PathMode::kStructureOnly: return "structure";
  }
  return "joint";
}

PathMode checkpoint_mode(const Options& o) {
  if (!o.mode.empty()) return parse_mode(o.mode);
  return parse_mode(checkpoint_meta(o.checkpoint).value("path", "joint"));
}

json prediction_json(const Example& ex, const PredictionResult& p) {
  json probs = json::object();
  for (Label l : kAllLabels) probs[std::string(to_string(l))] = p.probs[index_of(l)];
  return {{"post", join_tokens(ex.post)},
          {"response", join_tokens(ex.response)},
          {"label", std::string(to_string(p.label))},
          {"confidence", p.confidence()},
          {"probs", probs},
          {"logits", p.logits},
          {"gold", std::string(to_string(ex.label))}};
}

PredictionResult prediction_from_json(const json& j) {
  PredictionResult p;
  p.label = parse_label(j.at("label").get<std::string>());
  const auto& probs = j.at("probs");
  for (Label l : kAllLabels) p.probs[index_of(l)] = probs.at(std::string(to_string(l))).get<double>();
  if (j.contains("logits")) p.logits = j.at("logits").get<std::array<double, kNumLabels>>();
  return p;
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(n, "line", e.what());
    }
  }
  return out;
}

// One label per line, either bare (ENTAILED / E ...) or a JSON object with "label".
std::vector<Label> read_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<Label> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    const std::string text = line.substr(first, last - first + 1);
    std::string label = text;
    if (text.front() == '{') {
      const json j = json::parse(text, nullptr, false);
      if (j.is_discarded() || !j.contains("label") || !j["label"].is_string()) throw ParseError(n, "label", "bad JSON label line");
      label = j["label"].get<std::string>();
    }
    const auto parsed = try_parse_label(label);
    if (!parsed) throw ParseError(n, "label", "unknown label '" + label + "' in " + path.string());
    out.push_back(*parsed);
  }
  return out;
}

int cmd_gen(const Options& o) {
  const RunConfig rc = run_config(o);
  const auto corpus = generate(rc.gen, rc.template_bank(), rc.location_ontology());
  const fs::path dir = o.out;
  fs::create_directories(dir);
  save_dataset(corpus.train, dir / "train.jsonl");
  save_dataset(corpus.valid, dir / "valid.jsonl");
  save_dataset(corpus.test, dir / "test.jsonl");
  save_dataset(corpus.keyswap, dir / "keyswap.jsonl");
  std::cout << json{{"train", corpus.train.size()},
                    {"valid", corpus.valid.size()},
                    {"test", corpus.test.size()},
                    {"keyswap", corpus.keyswap.size()},
                    {"seed", rc.gen.seed},
                    {"out", dir.string()}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig rc = run_config(o);
  const PathMode mode = o.mode.empty() ? PathMode::kJoint : parse_mode(o.mode);
  if (mode == PathMode::kStructureOnly) throw Error("train --mode takes joint or flat", "usage");
  const Splits s = load_splits(o.splits, rc.model.keys);
  const Dataset* valid = s.valid ? &*s.valid : nullptr;

  Model model = make_model(rc.model, Vocab::build(s.train.examples, rc.model.keys), rc.train.seed);
  TrainConfig tc = rc.train;
  tc.checkpoint_dir.clear();
  TrainReport report;
  if (mode == PathMode::kJoint) {
    report = pretrain_tree(model, s.train, valid, tc);
    report.append(finetune_joint(model, s.train, valid, tc));
  } else {
    report = train_flat_baseline(model, s.train, valid, tc);
  }

  const fs::path dir = o.out;
  const fs::path ckpt = dir / "checkpoint";
  save_checkpoint(model, ckpt, {{"path", mode_name(mode)}, {"seed", tc.seed}});
  report.best_checkpoint = ckpt.string();

  // Scores come from the reloaded checkpoint so they match what eval will see.
  const Model saved = load_checkpoint(ckpt);
  json extra = json::object();
  if (s.test) report.test_accuracy = accuracy(saved, *s.test, mode);
  if (s.keyswap && !s.keyswap->empty()) extra["keyswap_accuracy"] = accuracy(saved, *s.keyswap, mode);
  if (mode == PathMode::kJoint && s.test)
    extra["structure_only_test_accuracy"] = accuracy(saved, *s.test, PathMode::kStructureOnly);

  json j = to_json(report);
  j["mode"] = mode_name(mode);
  for (auto& [k, v] : extra.items()) j[k] = v;
  write_text(dir / "report.json", j.dump(2) + "\n");
  write_text(dir / "config.json",
             json{{"model", to_json(rc.model)}, {"train", to_json(rc.train)}, {"gen", to_json(rc.gen)}}.dump(2) + "\n");
  std::cout << json{{"checkpoint", ckpt.string()},
                    {"report", (dir / "report.json").string()},
                    {"test_accuracy", report.test_accuracy ? json(*report.test_accuracy) : json(nullptr)}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_predict(const Options& o) {
  const Model model = load_checkpoint(o.checkpoint);
  const PathMode mode = checkpoint_mode(o);
  const Dataset ds = load_dataset(o.splits, model.config.keys);
  std::ostringstream os;
  for (const auto& ex : ds.examples) os << prediction_json(ex, forward(model, ex, mode)).dump() << '\n';
  if (o.out.empty())
    std::cout << os.str();
  else
    write_text(o.out, os.str());
  return 0;
}

int cmd_eval(const Options& o) {
  std::vector<Label> predicted, gold;
  if (!o.predictions.empty()) {
    for (const auto& j : read_jsonl(o.predictions)) predicted.push_back(parse_label(j.at("label").get<std::string>()));
    if (o.splits.empty()) {
      for (const auto& j : read_jsonl(o.predictions)) {
        if (!j.contains("gold")) throw Error("prediction lines lack \"gold\"; pass --splits with the gold data", "usage");
        gold.push_back(parse_label(j.at("gold").get<std::string>()));
      }
    } else {
      for (const auto& ex : load_dataset(o.splits).examples) gold.push_back(ex.label);
    }
  } else {
    if (o.checkpoint.empty() || o.splits.empty())
      throw Error("eval needs --checkpoint and --splits, or --predictions", "usage");
    const Model model = load_checkpoint(o.checkpoint);
    const PathMode mode = checkpoint_mode(o);
    const Dataset ds = load_dataset(o.splits, model.config.keys);
    for (const auto& ex : ds.examples) {
      predicted.push_back(forward(model, ex, mode).label);
      gold.push_back(ex.label);
    }
  }
  emit(o, to_json(evaluate(predicted, gold)));
  return 0;
}

int cmd_rerank(const Options& o) {
  // Candidates sharing a post form one list; lists keep their first-seen order.
  std::vector<json> rows;
  if (!o.checkpoint.empty()) {
    const Model model = load_checkpoint(o.checkpoint);
    const PathMode mode = checkpoint_mode(o);
    for (const auto& ex : load_dataset(o.splits, model.config.keys).examples)
      rows.push_back(prediction_json(ex, forward(model, ex, mode)));
  } else {
    const std::string input = !o.predictions.empty() ? o.predictions : o.splits;
    if (input.empty()) throw Error("rerank needs --predictions, or --checkpoint with --splits", "usage");
    rows = read_jsonl(input);
  }
  std::vector<std::string> group_order;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string key = rows[i].value("post", "");
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) group_order.push_back(key);
    it->second.push_back(i);
  }
  std::ostringstream os;
  for (const auto& key : group_order) {
    const auto& members = groups[key];
    std::vector<PredictionResult> preds;
    for (std::size_t i : members) preds.push_back(prediction_from_json(rows[i]));
    int rank = 0;
    for (std::size_t k : rerank_order(preds)) {
      json row = rows[members[k]];
      row["rank"] = rank++;
      os << row.dump() << '\n';
    }
  }
  if (o.out.empty())
    std::cout << os.str();
  else
    write_text(o.out, os.str());
  return 0;
}

int cmd_kappa(const Options& o) {
  if (o.inputs.size() < 2) throw Error("kappa needs at least two label files", "usage");
  std::vector<std::vector<Label>> raters;
  for (const auto& f : o.inputs) raters.push_back(read_labels(f));
  const std::size_t n = raters[0].size();
  for (std::size_t r = 1; r < raters.size(); ++r)
    if (raters[r].size() != n)
      throw Error(o.inputs[r] + " has " + std::to_string(raters[r].size()) + " labels, " + o.inputs[0] + " has " +
                      std::to_string(n),
                  "precondition");
  if (n == 0) throw Error("label files are empty", "precondition");

  std::vector<std::vector<Label>> items(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& r : raters) items[i].push_back(r[i]);

  json pairs = json::array();
  double sum = 0.0;
  for (std::size_t a = 0; a < raters.size(); ++a)
    for (std::size_t b = a + 1; b < raters.size(); ++b) {
      const double k = cohen_kappa(raters[a], raters[b]);
      sum += k;
      pairs.push_back({{"a", o.inputs[a]}, {"b", o.inputs[b]}, {"cohen", k}});
    }
  json j{{"items", n}, {"raters", raters.size()}};
  if (raters.size() == 2) j["cohen"] = pairs[0]["cohen"];
  j["pairwise"] = pairs;
  j["mean_pairwise_cohen"] = sum / static_cast<double>(pairs.size());
  j["fleiss"] = fleiss_kappa(rating_counts(items));
  emit(o, j);
  return 0;
}

int cmd_ablate(const Options& o) {
  const RunConfig rc = run_config(o);
  const Splits s = load_splits(o.splits, rc.model.keys);
  if (!s.test) throw Error("ablate needs test.jsonl in the splits directory", "precondition");
  const Dataset* valid = s.valid ? &*s.valid : nullptr;

  Model model = make_model(rc.model, Vocab::build(s.train.examples, rc.model.keys), rc.train.seed);
  std::vector<TreeSnapshot> snaps{{"untrained", model}};
  const int total = rc.train.stage1_epochs;
  const int mid = total / 2;
  pretrain_tree(model, s.train, valid, rc.train, [&](int epoch, const Model& m) {
    if (epoch == mid && mid > 0 && mid < total) snaps.push_back({"mid", m});
  });
  if (total > 0) snaps.push_back({"full", model});

  const auto points = ablation_sweep(snaps, s.train, valid, *s.test, rc.train);
  std::vector<std::pair<double, double>> xy;
  for (const auto& p : points) xy.emplace_back(p.tree_accuracy, p.joint_accuracy);
  json fits = json::object();
  for (int degree : {1, 2}) {
    const std::string key = "degree" + std::to_string(degree);
    try {
      const auto f = fit_polynomial(xy, degree);
      fits[key] = {{"coefficients", f.coefficients}, {"residual", f.residual}};
    } catch (const Error& e) {
      fits[key] = {{"error", e.what()}};
    }
  }
  const fs::path dir = o.out;
  write_text(dir / "sweep.csv", sweep_csv(points));
  write_text(dir / "sweep.json", json{{"points", to_json(points)}, {"fits", fits}}.dump(2) + "\n");
  std::cout << json{{"points", points.size()}, {"csv", (dir / "sweep.csv").string()}}.dump() << '\n';
  return 0;
}

void error_line(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Profile-consistency toolkit: synthetic corpora, two-stage training, evaluation."};
  app.require_subcommand(1, 1);
  Options o;

  auto config_flags = [&](CLI::App* c) {
    c->add_option("--config", o.config, "run config JSON (model / train / gen sections)")->check(CLI::ExistingFile);
    c->add_option("--set", o.overrides, "override a config field, e.g. train.lr_joint=0.001 (repeatable)");
    c->add_option("--seed", o.seed, "seed for generation, initialisation and training");
  };

  auto* gen = app.add_subcommand("gen", "generate train/valid/test/keyswap JSONL splits");
  config_flags(gen);
  gen->add_option("--out", o.out, "output directory")->required();

  auto* train = app.add_subcommand("train", "stage-1 tree pretraining then stage-2 joint finetuning");
  config_flags(train);
  train->add_option("--splits", o.splits, "directory holding train.jsonl and optional valid/test/keyswap.jsonl")
      ->required();
  train->add_option("--out", o.out, "output directory for checkpoint/ and report.json")->required();
  train->add_option("--mode", o.mode, "joint (default) or flat")->check(CLI::IsMember({"joint", "flat"}));

  auto* eval = app.add_subcommand("eval", "score a checkpoint or a predictions file; prints an EvalReport");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint directory");
  eval->add_option("--splits", o.splits, "gold dataset JSONL");
  eval->add_option("--predictions", o.predictions, "predict output to score instead of running a model");
  eval->add_option("--mode", o.mode, "override the checkpoint's path: joint, flat or structure");
  eval->add_option("--out", o.out, "write the report here instead of stdout");

  auto* predict = app.add_subcommand("predict", "one prediction JSON line per input example");
  predict->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
  predict->add_option("--splits", o.splits, "dataset JSONL")->required();
  predict->add_option("--mode", o.mode, "override the checkpoint's path: joint, flat or structure");
  predict->add_option("--out", o.out, "output JSONL (stdout if omitted)");

  auto* rerank_cmd = app.add_subcommand("rerank", "order candidates per post: ENTAILED, IRRELEVANT, CONTRADICTED");
  rerank_cmd->add_option("--predictions", o.predictions, "predict output JSONL");
  rerank_cmd->add_option("--checkpoint", o.checkpoint, "score --splits with this checkpoint first");
  rerank_cmd->add_option("--splits", o.splits, "dataset JSONL (with --checkpoint) or predict output");
  rerank_cmd->add_option("--mode", o.mode, "override the checkpoint's path: joint, flat or structure");
  rerank_cmd->add_option("--out", o.out, "output JSONL (stdout if omitted)");

  auto* kappa = app.add_subcommand("kappa", "Cohen and Fleiss agreement over two or more label files");
  kappa->add_option("files", o.inputs, "label files, one label per line")->required()->check(CLI::ExistingFile);
  kappa->add_option("--out", o.out, "write the statistics here instead of stdout");

  auto* ablate = app.add_subcommand("ablate", "tree-quality sweep: untrained / mid / fully trained tree encoders");
  config_flags(ablate);
  ablate->add_option("--splits", o.splits, "directory holding train/valid/test.jsonl")->required();
  ablate->add_option("--out", o.out, "output directory for sweep.csv and sweep.json")->required();

  app.set_help_flag();
  app.set_help_all_flag("-h,--help", "print this help, covering every command and flag");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    error_line("usage", e.what());
    return 2;
  }

  try {
    if (*gen) return cmd_gen(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*predict) return cmd_predict(o);
    if (*rerank_cmd) return cmd_rerank(o);
    if (*kappa) return cmd_kappa(o);
    if (*ablate) return cmd_ablate(o);
  } catch (const Error& e) {
    error_line(e.kind(), e.what());
    return e.kind() == "usage" ? 2 : 1;
  } catch (const json::exception& e) {
    error_line("json", e.what());
    return 1;
  } catch (const std::exception& e) {
    error_line("internal", e.what());
    return 1;
  }
  return 2;
}
