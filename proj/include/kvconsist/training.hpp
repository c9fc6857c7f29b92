#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvconsist/core.hpp"
#include "kvconsist/model.hpp"

namespace kvconsist {

struct TrainConfig {
  int stage1_epochs = 13;
  int stage2_epochs = 3;
  int batch_size = 16;
  double lr_tree = 1e-3;
  double lr_joint = 2e-5;
  std::uint64_t seed = 1;
  /// Global gradient-norm bound; 0 disables clipping.
  double clip_norm = 1.0;
  /// Share of stage-2 steps spent warming the learning rate up; the rest
  /// decays linearly to zero. Stage 1 runs at a constant rate.
  double warmup_fraction = 0.1;
  /// When non-empty, the retained best stage-2 state is written here.
  std::string checkpoint_dir;

  void validate() const;
};

struct EpochRecord {
  std::string stage;
  int epoch = 0;  // 1-based within the stage
  double loss = 0.0;
  std::optional<double> valid_accuracy;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  /// Index into `epochs` of the retained state, if any epoch ran.
  std::optional<std::size_t> best_epoch;
  std::optional<double> best_valid_accuracy;
  std::string best_checkpoint;
  std::optional<double> test_accuracy;

  void append(const TrainReport& other);
};

nlohmann::ordered_json to_json(const TrainReport& report);
void save_report(const TrainReport& report, const std::string& path);

/// Adam with per-tensor moments. Only tensors whose group has a positive
/// learning rate are touched.
class Adam {
 public:
  explicit Adam(const ModelState& like, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ModelState& state, const ModelState& grads, const std::function<double(ParamGroup)>& lr_of);
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Scales the tensors of the selected groups so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
double clip_global_norm(ModelState& grads, double max_norm, const std::function<bool(ParamGroup)>& selected);
double global_norm(const ModelState& grads, const std::function<bool(ParamGroup)>& selected);

/// FNV-1a over the raw bytes of every tensor in `group` (all groups if unset).
std::uint64_t parameter_fingerprint(const ModelState& state, std::optional<ParamGroup> group = std::nullopt);

std::vector<PredictionResult> predict_all(const Model& model, const Dataset& ds, PathMode mode = PathMode::kJoint);
double accuracy(const Model& model, const Dataset& ds, PathMode mode = PathMode::kJoint);

/// Called after every stage-1 epoch with the 1-based epoch number.
using EpochHook = std::function<void(int epoch, const Model& model)>;

/// Stage 1: tree-side embeddings, tree-LSTM, aggregation linear and the
/// temporary head, trained on the structure-only path. Sequence-side and
/// output-layer tensors are left untouched.
TrainReport pretrain_tree(Model& model, const Dataset& train, const Dataset* valid, const TrainConfig& cfg,
                          const EpochHook& on_epoch = {});

/// Stage 2: every group except the temporary head. lr_joint drives the
/// sequence side and lr_tree the structure side and output layer. The state
/// with the best validation accuracy (earliest on ties) is retained.
TrainReport finetune_joint(Model& model, const Dataset& train, const Dataset* valid, const TrainConfig& cfg);

/// Same schedule as stage 2 with the structure block held at zero.
TrainReport train_flat_baseline(Model& model, const Dataset& train, const Dataset* valid, const TrainConfig& cfg);

}  // namespace kvconsist
