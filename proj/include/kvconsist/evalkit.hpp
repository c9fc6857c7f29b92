#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kvconsist/core.hpp"
#include "kvconsist/model.hpp"
#include "kvconsist/training.hpp"

namespace kvconsist {

/// confusion[gold][predicted]
using ConfusionMatrix = std::array<std::array<std::size_t, kNumLabels>, kNumLabels>;

struct EvalReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  std::array<double, kNumLabels> precision{};
  std::array<double, kNumLabels> recall{};
  /// Per-class F1; 0/0 counts as 0.
  std::array<double, kNumLabels> f1{};
  ConfusionMatrix confusion{};
};

EvalReport evaluate(std::span<const Label> predicted, std::span<const Label> gold);
EvalReport evaluate(std::span<const PredictionResult> predicted, std::span<const Label> gold);
nlohmann::ordered_json to_json(const EvalReport& report);

/// Two-rater agreement. When chance agreement is 1 the result is 1 for
/// perfect observed agreement and 0 otherwise.
double cohen_kappa(std::span<const Label> a, std::span<const Label> b);

/// Items x categories count matrix; every row must sum to the same number of
/// raters R >= 2. Chance agreement of 1 yields 1.
double fleiss_kappa(const std::vector<std::vector<int>>& counts);
/// Items x raters labels to items x 3 counts.
std::vector<std::vector<int>> rating_counts(const std::vector<std::vector<Label>>& ratings);

struct Candidate {
  std::string response;
  PredictionResult prediction;
};

/// ENTAILED before IRRELEVANT before CONTRADICTED, then by descending
/// confidence of the predicted class. Equal keys keep their input order.
std::vector<Candidate> rerank(std::vector<Candidate> candidates);
/// Same order, expressed as indices into `predictions`.
std::vector<std::size_t> rerank_order(std::span<const PredictionResult> predictions);

struct TreeSnapshot {
  std::string name;
  Model model;
};

struct SweepPoint {
  std::string name;
  double tree_accuracy = 0.0;
  double joint_accuracy = 0.0;
};

/// For each snapshot: structure-only accuracy through the stage-1 head, then a
/// stage-2 finetune started from the snapshot and its joint accuracy, both
/// measured on `eval`.
std::vector<SweepPoint> ablation_sweep(const std::vector<TreeSnapshot>& snapshots, const Dataset& train,
                                       const Dataset* valid, const Dataset& eval, const TrainConfig& cfg);
std::string sweep_csv(const std::vector<SweepPoint>& points);
nlohmann::ordered_json to_json(const std::vector<SweepPoint>& points);

struct PolyFit {
  std::vector<double> coefficients;  // ascending degree
  double residual = 0.0;             // sum of squared errors
};

/// Least-squares polynomial; needs at least degree + 1 points.
PolyFit fit_polynomial(std::span<const std::pair<double, double>> points, int degree);

}  // namespace kvconsist
