#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "kvconsist/model.hpp"
#include "kvconsist/synthgen.hpp"
#include "kvconsist/training.hpp"

namespace kvconsist {

/// Everything a CLI run needs: model shape, training schedule and corpus
/// recipe. Template bank and ontology paths are resolved against the config
/// file's directory; absent paths mean the built-in defaults.
struct RunConfig {
  KvBertConfig model = KvBertConfig::desk_scale();
  TrainConfig train;
  GenConfig gen;
  std::optional<std::filesystem::path> templates;
  std::optional<std::filesystem::path> ontology;

  TemplateBank template_bank() const;
  LocationOntology location_ontology() const;
};

nlohmann::ordered_json to_json(const KvBertConfig& cfg);
KvBertConfig model_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json to_json(const GenConfig& cfg);
GenConfig gen_config_from_json(const nlohmann::ordered_json& j);

/// Missing sections and fields keep their defaults; unknown fields are errors.
RunConfig load_run_config(const std::filesystem::path& path);
/// Relative template/ontology paths resolve against `base`.
RunConfig run_config_from_json(const nlohmann::ordered_json& j, const std::filesystem::path& base);

}  // namespace kvconsist
