#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "kvconsist/checkpoint.hpp"
#include "kvconsist/config.hpp"
#include "kvconsist/evalkit.hpp"
#include "kvconsist/synthgen.hpp"
#include "kvconsist/training.hpp"

namespace py = pybind11;
using json = nlohmann::ordered_json;
using namespace kvconsist;

// Examples and reports cross the boundary as JSON text; the Python package
// decodes them.

namespace {

std::vector<std::string> dataset_lines(const Dataset& ds) {
  std::vector<std::string> out;
  out.reserve(ds.size());
  for (const auto& ex : ds.examples) out.push_back(example_to_json_line(ex));
  return out;
}

std::vector<Label> labels(const std::vector<std::string>& names) {
  std::vector<Label> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(parse_label(n));
  return out;
}

PathMode mode_of(const std::string& name) {
  if (name == "joint") return PathMode::kJoint;
  if (name == "flat") return PathMode::kFlat;
  if (name == "structure") return PathMode::kStructureOnly;
  throw Error("unknown path mode '" + name + "'", "usage");
}

py::dict prediction_dict(const PredictionResult& p) {
  py::dict probs;
  for (Label l : kAllLabels) probs[py::str(std::string(to_string(l)))] = p.probs[index_of(l)];
  py::dict d;
  d["label"] = std::string(to_string(p.label));
  d["confidence"] = p.confidence();
  d["probs"] = probs;
  d["logits"] = std::vector<double>(p.logits.begin(), p.logits.end());
  return d;
}

PredictionResult prediction_from(const std::string& label, const std::vector<double>& probs) {
  if (probs.size() != kNumLabels) throw Error("probs must hold three values", "precondition");
  PredictionResult p;
  p.label = parse_label(label);
  for (std::size_t k = 0; k < kNumLabels; ++k) p.probs[k] = probs[k];
  return p;
}

class PyModel {
 public:
  explicit PyModel(Model m, std::string mode) : model_(std::move(m)), mode_(std::move(mode)) {}

  static PyModel load(const std::string& dir) {
    return PyModel(load_checkpoint(dir), checkpoint_meta(dir).value("path", "joint"));
  }

  py::dict predict(const std::string& example_line, const std::string& mode) const {
    const Example ex = example_from_json_line(example_line, 1, model_.config.keys);
    return prediction_dict(forward(model_, ex, mode_of(mode.empty() ? mode_ : mode)));
  }

  double accuracy_on(const std::vector<std::string>& lines, const std::string& mode) const {
    Dataset ds;
    std::size_t n = 0;
    for (const auto& l : lines) ds.examples.push_back(example_from_json_line(l, ++n, model_.config.keys));
    return accuracy(model_, ds, mode_of(mode.empty() ? mode_ : mode));
  }

  const std::string& mode() const { return mode_; }
  int joint_width() const { return model_.config.joint_width(); }
  std::size_t vocab_size() const { return model_.vocab.size(); }
  std::size_t parameter_count() const { return kvconsist::parameter_count(model_.state); }

 private:
  Model model_;
  std::string mode_;
};

}  // namespace

PYBIND11_MODULE(_kvconsist, m) {
  m.doc() = "Profile-consistency toolkit core";

  py::register_exception<Error>(m, "KvError", PyExc_RuntimeError);

  m.def(
      "generate",
      [](const std::string& config_json, std::optional<std::uint64_t> seed) {
        RunConfig rc = run_config_from_json(json::parse(config_json), std::filesystem::current_path());
        if (seed) rc.gen.seed = *seed;
        const auto c = generate(rc.gen, rc.template_bank(), rc.location_ontology());
        std::map<std::string, std::vector<std::string>> out;
        out["train"] = dataset_lines(c.train);
        out["valid"] = dataset_lines(c.valid);
        out["test"] = dataset_lines(c.test);
        out["keyswap"] = dataset_lines(c.keyswap);
        return out;
      },
      py::arg("config_json") = "{}", py::arg("seed") = py::none());

  m.def("load_dataset", [](const std::string& path) { return dataset_lines(load_dataset(path)); });
  m.def("save_dataset", [](const std::vector<std::string>& lines, const std::string& path) {
    Dataset ds;
    std::size_t n = 0;
    for (const auto& l : lines) ds.examples.push_back(example_from_json_line(l, ++n, KeySet()));
    save_dataset(ds, path);
  });

  m.def("joint_width", [](const std::string& model_json) {
    return model_config_from_json(json::parse(model_json)).joint_width();
  });
  m.def("paper_scale_config", [] { return to_json(KvBertConfig::paper_scale()).dump(); });
  m.def("desk_scale_config", [] { return to_json(KvBertConfig::desk_scale()).dump(); });

  py::class_<PyModel>(m, "Model")
      .def_static("load", &PyModel::load, py::arg("checkpoint_dir"))
      .def("predict", &PyModel::predict, py::arg("example_json"), py::arg("mode") = "")
      .def("accuracy", &PyModel::accuracy_on, py::arg("example_lines"), py::arg("mode") = "")
      .def_property_readonly("mode", &PyModel::mode)
      .def_property_readonly("joint_width", &PyModel::joint_width)
      .def_property_readonly("vocab_size", &PyModel::vocab_size)
      .def_property_readonly("parameter_count", &PyModel::parameter_count);

  m.def("evaluate", [](const std::vector<std::string>& predicted, const std::vector<std::string>& gold) {
    return to_json(evaluate(labels(predicted), labels(gold))).dump();
  });
  m.def("cohen_kappa", [](const std::vector<std::string>& a, const std::vector<std::string>& b) {
    return cohen_kappa(labels(a), labels(b));
  });
  m.def("fleiss_kappa", &fleiss_kappa, py::arg("counts"));
  m.def(
      "rerank_order",
      [](const std::vector<std::pair<std::string, std::vector<double>>>& preds) {
        std::vector<PredictionResult> ps;
        ps.reserve(preds.size());
        for (const auto& [label, probs] : preds) ps.push_back(prediction_from(label, probs));
        return rerank_order(ps);
      },
      py::arg("predictions"));
  m.def(
      "fit_polynomial",
      [](const std::vector<std::pair<double, double>>& points, int degree) {
        const auto f = fit_polynomial(points, degree);
        return py::make_tuple(f.coefficients, f.residual);
      },
      py::arg("points"), py::arg("degree"));
}
