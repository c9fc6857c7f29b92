#include "kvconsist/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/QR>

#include "log.hpp"

namespace kvconsist {

using json = nlohmann::ordered_json;

namespace {

double safe_div(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

int rerank_rank(Label l) {
  switch (l) {
    case Label::kEntailed: return 0;
    case Label::kIrrelevant: return 1;
    case Label::kContradicted: return 2;
  }
  return 3;
}

}  // namespace

EvalReport evaluate(std::span<const Label> predicted, std::span<const Label> gold) {
  if (predicted.size() != gold.size())
    throw Error("evaluate: " + std::to_string(predicted.size()) + " predictions for " + std::to_string(gold.size()) +
                    " gold labels",
                "precondition");
  if (gold.empty()) throw Error("evaluate: nothing to score", "precondition");
  EvalReport r;
  r.n = gold.size();
  for (std::size_t i = 0; i < gold.size(); ++i) ++r.confusion[index_of(gold[i])][index_of(predicted[i])];
  std::size_t hits = 0;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    hits += r.confusion[k][k];
    double col = 0.0, row = 0.0;
    for (std::size_t j = 0; j < kNumLabels; ++j) {
      col += static_cast<double>(r.confusion[j][k]);
      row += static_cast<double>(r.confusion[k][j]);
    }
    const auto tp = static_cast<double>(r.confusion[k][k]);
    r.precision[k] = safe_div(tp, col);
    r.recall[k] = safe_div(tp, row);
    r.f1[k] = safe_div(2.0 * r.precision[k] * r.recall[k], r.precision[k] + r.recall[k]);
  }
  r.accuracy = static_cast<double>(hits) / static_cast<double>(r.n);
  return r;
}

EvalReport evaluate(std::span<const PredictionResult> predicted, std::span<const Label> gold) {
  std::vector<Label> labels;
  labels.reserve(predicted.size());
  for (const auto& p : predicted) labels.push_back(p.label);
  return evaluate(labels, gold);
}

json to_json(const EvalReport& r) {
  json j;
  j["n"] = r.n;
  j["accuracy"] = r.accuracy;
  const char* names[] = {"entail", "contr", "irrelv"};
  for (std::size_t k = 0; k < kNumLabels; ++k) j[std::string(names[k]) + "_f1"] = r.f1[k];
  json per_class = json::object();
  for (std::size_t k = 0; k < kNumLabels; ++k)
    per_class[std::string(to_string(kAllLabels[k]))] = {
        {"precision", r.precision[k]}, {"recall", r.recall[k]}, {"f1", r.f1[k]}};
  j["per_class"] = per_class;
  j["confusion"] = r.confusion;
  j["confusion_axes"] = "rows = gold, columns = predicted, order ENTAILED CONTRADICTED IRRELEVANT";
  return j;
}

double cohen_kappa(std::span<const Label> a, std::span<const Label> b) {
  if (a.size() != b.size()) throw Error("cohen_kappa: label lists differ in length", "precondition");
  if (a.empty()) throw Error("cohen_kappa: empty label lists", "precondition");
  const auto n = static_cast<double>(a.size());
  std::array<double, kNumLabels> ca{}, cb{};
  double agree = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[index_of(a[i])] += 1.0;
    cb[index_of(b[i])] += 1.0;
    agree += a[i] == b[i];
  }
  const double p_o = agree / n;
  double p_e = 0.0;
  for (std::size_t k = 0; k < kNumLabels; ++k) p_e += (ca[k] / n) * (cb[k] / n);
  if (p_e >= 1.0) return p_o >= 1.0 ? 1.0 : 0.0;
  return (p_o - p_e) / (1.0 - p_e);
}

double fleiss_kappa(const std::vector<std::vector<int>>& counts) {
  if (counts.empty()) throw Error("fleiss_kappa: no items", "precondition");
  const std::size_t cats = counts[0].size();
  if (cats == 0) throw Error("fleiss_kappa: no categories", "precondition");
  long raters = -1;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i].size() != cats) throw Error("fleiss_kappa: ragged count matrix", "precondition");
    long sum = 0;
    for (int c : counts[i]) {
      if (c < 0) throw Error("fleiss_kappa: negative count", "precondition");
      sum += c;
    }
    if (raters < 0) raters = sum;
    if (sum != raters)
      throw Error("fleiss_kappa: row " + std::to_string(i) + " sums to " + std::to_string(sum) + ", expected " +
                      std::to_string(raters),
                  "precondition");
  }
  if (raters < 2) throw Error("fleiss_kappa: need at least two raters per item", "precondition");

  const auto n = static_cast<double>(counts.size());
  const auto r = static_cast<double>(raters);
  std::vector<double> p(cats, 0.0);
  double p_bar = 0.0;
  for (const auto& row : counts) {
    double sq = 0.0;
    for (std::size_t j = 0; j < cats; ++j) {
      sq += static_cast<double>(row[j]) * static_cast<double>(row[j]);
      p[j] += static_cast<double>(row[j]);
    }
    p_bar += (sq - r) / (r * (r - 1.0));
  }
  p_bar /= n;
  double p_e = 0.0;
  for (double& pj : p) {
    pj /= n * r;
    p_e += pj * pj;
  }
  if (p_e >= 1.0) return 1.0;
  return (p_bar - p_e) / (1.0 - p_e);
}

std::vector<std::vector<int>> rating_counts(const std::vector<std::vector<Label>>& ratings) {
  std::vector<std::vector<int>> out;
  out.reserve(ratings.size());
  for (const auto& item : ratings) {
    std::vector<int> row(kNumLabels, 0);
    for (Label l : item) ++row[index_of(l)];
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<std::size_t> rerank_order(std::span<const PredictionResult> predictions) {
  std::vector<std::size_t> idx(predictions.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& pa = predictions[a];
    const auto& pb = predictions[b];
    const int ra = rerank_rank(pa.label), rb = rerank_rank(pb.label);
    if (ra != rb) return ra < rb;
    return pa.confidence() > pb.confidence();
  });
  return idx;
}

std::vector<Candidate> rerank(std::vector<Candidate> candidates) {
  std::vector<PredictionResult> preds;
  preds.reserve(candidates.size());
  for (const auto& c : candidates) preds.push_back(c.prediction);
  std::vector<Candidate> out;
  out.reserve(candidates.size());
  for (std::size_t i : rerank_order(preds)) out.push_back(std::move(candidates[i]));
  return out;
}

std::vector<SweepPoint> ablation_sweep(const std::vector<TreeSnapshot>& snapshots, const Dataset& train,
                                       const Dataset* valid, const Dataset& eval, const TrainConfig& cfg) {
  if (snapshots.empty()) throw Error("ablation_sweep: no snapshots", "precondition");
  if (eval.empty()) throw Error("ablation_sweep: empty evaluation split", "precondition");
  std::vector<SweepPoint> out;
  for (const auto& snap : snapshots) {
    SweepPoint p;
    p.name = snap.name;
    p.tree_accuracy = accuracy(snap.model, eval, PathMode::kStructureOnly);
    Model m = snap.model;
    finetune_joint(m, train, valid, cfg);
    p.joint_accuracy = accuracy(m, eval, PathMode::kJoint);
    detail::log().info("sweep point {}: tree {:.4f}, joint {:.4f}", p.name, p.tree_accuracy, p.joint_accuracy);
    out.push_back(p);
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::ostringstream os;
  os.precision(10);
  os << "name,tree_accuracy,joint_accuracy\n";
  for (const auto& p : points) os << p.name << ',' << p.tree_accuracy << ',' << p.joint_accuracy << '\n';
  return os.str();
}

json to_json(const std::vector<SweepPoint>& points) {
  json j = json::array();
  for (const auto& p : points)
    j.push_back({{"name", p.name}, {"tree_accuracy", p.tree_accuracy}, {"joint_accuracy", p.joint_accuracy}});
  return j;
}

PolyFit fit_polynomial(std::span<const std::pair<double, double>> points, int degree) {
  if (degree < 0) throw Error("fit_polynomial: negative degree", "precondition");
  const auto cols = static_cast<Eigen::Index>(degree) + 1;
  if (static_cast<Eigen::Index>(points.size()) < cols)
    throw Error("fit_polynomial: " + std::to_string(points.size()) + " points cannot determine a degree-" +
                    std::to_string(degree) + " polynomial",
                "precondition");
  const auto rows = static_cast<Eigen::Index>(points.size());
  Matrix a(rows, cols);
  Vector y(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    double xp = 1.0;
    for (Eigen::Index j = 0; j < cols; ++j) {
      a(i, j) = xp;
      xp *= points[static_cast<std::size_t>(i)].first;
    }
    y(i) = points[static_cast<std::size_t>(i)].second;
  }
  const Eigen::ColPivHouseholderQR<Matrix> qr(a);
  if (qr.rank() < cols) throw Error("fit_polynomial: points do not determine the polynomial (repeated x values)", "precondition");
  const Vector c = qr.solve(y);
  PolyFit fit;
  fit.coefficients.assign(c.data(), c.data() + c.size());
  fit.residual = (a * c - y).squaredNorm();
  return fit;
}

}  // namespace kvconsist
