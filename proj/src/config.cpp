#include "kvconsist/config.hpp"

#include <fstream>
#include <set>

namespace kvconsist {

using json = nlohmann::ordered_json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw Error(where + " must be a JSON object", "config");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [k, _] : j.items())
    if (!allowed.count(k)) throw Error("unknown field '" + k + "' in " + where, "config");
}

template <class T>
void read(const json& j, const char* field, T& out, const std::string& where) {
  if (!j.contains(field)) return;
  try {
    out = j.at(field).get<T>();
  } catch (const json::exception& e) {
    throw Error(where + "." + field + ": " + e.what(), "config");
  }
}

}  // namespace

json to_json(const KvBertConfig& c) {
  return {{"transformer",
           {{"layers", c.transformer.layers},
            {"heads", c.transformer.heads},
            {"hidden", c.transformer.hidden},
            {"ff", c.transformer.ff},
            {"max_len", c.transformer.max_len},
            {"dropout", c.transformer.dropout}}},
          {"tree", {{"input_size", c.tree.input_size}, {"hidden_size", c.tree.hidden_size}}},
          {"d_struct", c.d_struct},
          {"keys", c.keys.keys()}};
}

KvBertConfig model_config_from_json(const json& j) {
  KvBertConfig c = KvBertConfig::desk_scale();
  reject_unknown(j, {"transformer", "tree", "d_struct", "keys"}, "model");
  if (j.contains("transformer")) {
    const auto& t = j.at("transformer");
    reject_unknown(t, {"layers", "heads", "hidden", "ff", "max_len", "dropout"}, "model.transformer");
    read(t, "layers", c.transformer.layers, "model.transformer");
    read(t, "heads", c.transformer.heads, "model.transformer");
    read(t, "hidden", c.transformer.hidden, "model.transformer");
    read(t, "ff", c.transformer.ff, "model.transformer");
    read(t, "max_len", c.transformer.max_len, "model.transformer");
    read(t, "dropout", c.transformer.dropout, "model.transformer");
  }
  if (j.contains("tree")) {
    const auto& t = j.at("tree");
    reject_unknown(t, {"input_size", "hidden_size"}, "model.tree");
    read(t, "input_size", c.tree.input_size, "model.tree");
    read(t, "hidden_size", c.tree.hidden_size, "model.tree");
  }
  read(j, "d_struct", c.d_struct, "model");
  if (j.contains("keys")) {
    std::vector<std::string> keys;
    read(j, "keys", keys, "model");
    c.keys = KeySet(std::move(keys));
  }
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"stage1_epochs", c.stage1_epochs}, {"stage2_epochs", c.stage2_epochs}, {"batch_size", c.batch_size},
          {"lr_tree", c.lr_tree},           {"lr_joint", c.lr_joint},           {"seed", c.seed},
          {"clip_norm", c.clip_norm},       {"warmup_fraction", c.warmup_fraction}, {"checkpoint_dir", c.checkpoint_dir}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  reject_unknown(j,
                 {"stage1_epochs", "stage2_epochs", "batch_size", "lr_tree", "lr_joint", "seed", "clip_norm",
                  "warmup_fraction", "checkpoint_dir"},
                 "train");
  read(j, "stage1_epochs", c.stage1_epochs, "train");
  read(j, "stage2_epochs", c.stage2_epochs, "train");
  read(j, "batch_size", c.batch_size, "train");
  read(j, "lr_tree", c.lr_tree, "train");
  read(j, "lr_joint", c.lr_joint, "train");
  read(j, "seed", c.seed, "train");
  read(j, "clip_norm", c.clip_norm, "train");
  read(j, "warmup_fraction", c.warmup_fraction, "train");
  read(j, "checkpoint_dir", c.checkpoint_dir, "train");
  c.validate();
  return c;
}

json to_json(const GenConfig& c) {
  json mix;
  for (std::size_t i = 0; i < kNumLabels; ++i) mix[std::string(to_string(kAllLabels[i]))] = c.label_mix[i];
  return {{"train", c.train},
          {"valid", c.valid},
          {"test", c.test},
          {"keyswap", c.keyswap},
          {"label_mix", mix},
          {"domain_mix", c.domain_mix},
          {"rewrite_fraction", c.rewrite_fraction},
          {"province_only_fraction", c.province_only_fraction},
          {"same_province_fraction", c.same_province_fraction},
          {"seed", c.seed}};
}

GenConfig gen_config_from_json(const json& j) {
  GenConfig c;
  reject_unknown(j,
                 {"train", "valid", "test", "keyswap", "label_mix", "domain_mix", "rewrite_fraction",
                  "province_only_fraction", "same_province_fraction", "seed", "templates", "ontology"},
                 "gen");
  read(j, "train", c.train, "gen");
  read(j, "valid", c.valid, "gen");
  read(j, "test", c.test, "gen");
  read(j, "keyswap", c.keyswap, "gen");
  if (j.contains("label_mix")) {
    std::map<std::string, double> mix;
    read(j, "label_mix", mix, "gen");
    c.label_mix = {0.0, 0.0, 0.0};
    for (const auto& [name, share] : mix) {
      const auto label = try_parse_label(name);
      if (!label) throw Error("gen.label_mix names unknown label '" + name + "'", "config");
      c.label_mix[index_of(*label)] = share;
    }
  }
  read(j, "domain_mix", c.domain_mix, "gen");
  read(j, "rewrite_fraction", c.rewrite_fraction, "gen");
  read(j, "province_only_fraction", c.province_only_fraction, "gen");
  read(j, "same_province_fraction", c.same_province_fraction, "gen");
  read(j, "seed", c.seed, "gen");
  c.validate();
  return c;
}

TemplateBank RunConfig::template_bank() const {
  return templates ? load_template_bank(*templates) : TemplateBank::defaults();
}

LocationOntology RunConfig::location_ontology() const {
  return ontology ? load_ontology(*ontology) : LocationOntology();
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("config '" + path.string() + "': " + e.what(), "config");
  }
  return run_config_from_json(j, path.parent_path());
}

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base) {
  reject_unknown(j, {"model", "train", "gen"}, "config");
  RunConfig rc;
  if (j.contains("model")) rc.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) rc.train = train_config_from_json(j.at("train"));
  if (j.contains("gen")) {
    const auto& g = j.at("gen");
    rc.gen = gen_config_from_json(g);
    auto resolve = [&](const char* field) -> std::optional<std::filesystem::path> {
      if (!g.contains(field) || g.at(field).is_null()) return std::nullopt;
      std::filesystem::path p = g.at(field).get<std::string>();
      return p.is_absolute() ? p : base / p;
    };
    rc.templates = resolve("templates");
    rc.ontology = resolve("ontology");
  }
  return rc;
}

}  // namespace kvconsist
