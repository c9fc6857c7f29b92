#pragma once

#include <filesystem>
#include <string_view>

#include <json.hpp>

#include "kvconsist/model.hpp"

namespace kvconsist {

inline constexpr std::string_view kCheckpointFormat = "kvconsist-ckpt-v1";

/// Writes `dir/manifest.json` (format tag, config, vocabulary, tensor index)
/// and one raw little-endian float32 blob per tensor, row-major. `meta` is
/// stored verbatim under "meta".
void save_checkpoint(const Model& model, const std::filesystem::path& dir,
                     const nlohmann::ordered_json& meta = nlohmann::ordered_json::object());
Model load_checkpoint(const std::filesystem::path& dir);
nlohmann::ordered_json checkpoint_meta(const std::filesystem::path& dir);

/// Copies the sequence-side tensors (embeddings and transformer) from a
/// checkpoint into `state`. Every transformer tensor must be present with the
/// shape implied by `cfg`; embedding tables are optional.
void load_transformer_weights(const std::filesystem::path& dir, const KvBertConfig& cfg, ModelState& state);

}  // namespace kvconsist
