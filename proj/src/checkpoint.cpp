#include "kvconsist/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "kvconsist/config.hpp"

namespace kvconsist {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace {

std::string blob_name(const std::string& tensor) { return "tensors/" + tensor + ".f32"; }

void write_blob(const Matrix& m, const fs::path& path) {
  std::vector<float> buf(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) buf[k++] = static_cast<float>(m(i, j));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

Matrix read_blob(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open tensor blob '" + path.string() + "'");
  const auto bytes = static_cast<std::size_t>(in.tellg());
  const auto expected = static_cast<std::size_t>(rows * cols) * sizeof(float);
  if (bytes != expected)
    throw Error("tensor blob '" + path.string() + "' holds " + std::to_string(bytes) + " bytes, expected " +
                    std::to_string(expected),
                "checkpoint");
  std::vector<float> buf(static_cast<std::size_t>(rows * cols));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = buf[k++];
  return m;
}

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no checkpoint manifest in '" + dir.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("checkpoint manifest: " + std::string(e.what()), "checkpoint");
  }
  if (j.value("format", "") != kCheckpointFormat)
    throw Error("checkpoint format tag is '" + j.value("format", "") + "', expected '" + std::string(kCheckpointFormat) +
                    "'",
                "checkpoint");
  return j;
}

struct TensorEntry {
  Eigen::Index rows, cols;
  std::string file;
};

std::map<std::string, TensorEntry> tensor_index(const json& manifest) {
  std::map<std::string, TensorEntry> out;
  for (const auto& t : manifest.at("tensors"))
    out[t.at("name").get<std::string>()] = {t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>(),
                                            t.at("file").get<std::string>()};
  return out;
}

}  // namespace

void save_checkpoint(const Model& model, const fs::path& dir, const json& meta) {
  fs::create_directories(dir / "tensors");
  json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["config"] = to_json(model.config);
  manifest["meta"] = meta;
  manifest["vocab"] = model.vocab.tokens();
  manifest["tensors"] = json::array();
  ModelState::visit(model.state, [&](const std::string& name, const Matrix& m, ParamGroup group) {
    write_blob(m, dir / blob_name(name));
    manifest["tensors"].push_back({{"name", name},
                                   {"group", std::string(to_string(group))},
                                   {"rows", m.rows()},
                                   {"cols", m.cols()},
                                   {"dtype", "float32-le"},
                                   {"file", blob_name(name)}});
  });
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write checkpoint manifest in '" + dir.string() + "'");
  out << manifest.dump(2) << '\n';
}

Model load_checkpoint(const fs::path& dir) {
  const json manifest = read_manifest(dir);
  Model model{model_config_from_json(manifest.at("config")),
              Vocab(manifest.at("vocab").get<std::vector<std::string>>()),
              {}};
  model.state = make_model_state(model.config, model.vocab.size());
  const auto index = tensor_index(manifest);
  ModelState::visit(model.state, [&](const std::string& name, Matrix& m, ParamGroup) {
    auto it = index.find(name);
    if (it == index.end()) throw Error("checkpoint lacks tensor '" + name + "'", "checkpoint");
    if (it->second.rows != m.rows() || it->second.cols != m.cols())
      throw Error("checkpoint tensor '" + name + "' has the wrong shape", "shape");
    m = read_blob(dir / it->second.file, m.rows(), m.cols());
  });
  return model;
}

json checkpoint_meta(const fs::path& dir) { return read_manifest(dir).value("meta", json::object()); }

void load_transformer_weights(const fs::path& dir, const KvBertConfig& cfg, ModelState& state) {
  const json manifest = read_manifest(dir);
  const auto index = tensor_index(manifest);
  const ModelState expected = make_model_state(cfg, static_cast<std::size_t>(state.embed.token.rows()));
  auto load = [&](const std::string& name, Matrix& target, const Matrix& shape, bool required) {
    auto it = index.find(name);
    if (it == index.end()) {
      if (required) throw Error("checkpoint lacks transformer tensor '" + name + "'", "checkpoint");
      return;
    }
    if (it->second.rows != shape.rows() || it->second.cols != shape.cols())
      throw Error("checkpoint tensor '" + name + "' is " + std::to_string(it->second.rows) + "x" +
                      std::to_string(it->second.cols) + ", config expects " + std::to_string(shape.rows()) + "x" +
                      std::to_string(shape.cols()),
                  "shape");
    target = read_blob(dir / it->second.file, shape.rows(), shape.cols());
  };
  std::vector<const Matrix*> shapes;
  ModelState::visit(expected, [&](const std::string&, const Matrix& m, ParamGroup) { shapes.push_back(&m); });
  std::size_t i = 0;
  ModelState::visit(state, [&](const std::string& name, Matrix& m, ParamGroup group) {
    const Matrix& shape = *shapes[i++];
    if (group != ParamGroup::kSequence) return;
    load(name, m, shape, name.rfind("transformer.", 0) == 0);
  });
}

}  // namespace kvconsist
