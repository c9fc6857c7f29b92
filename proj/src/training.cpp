#include "kvconsist/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "kvconsist/checkpoint.hpp"
#include "log.hpp"

namespace kvconsist {

using json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (stage1_epochs < 0 || stage2_epochs < 0) throw Error("epoch counts must be non-negative", "config");
  if (batch_size <= 0) throw Error("batch_size must be positive", "config");
  if (!(lr_tree > 0.0) || !(lr_joint > 0.0)) throw Error("learning rates must be positive", "config");
  if (clip_norm < 0.0) throw Error("clip_norm must be non-negative", "config");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) throw Error("warmup_fraction must lie in [0, 1]", "config");
}

void TrainReport::append(const TrainReport& other) {
  const std::size_t offset = epochs.size();
  epochs.insert(epochs.end(), other.epochs.begin(), other.epochs.end());
  if (other.best_epoch) {
    best_epoch = offset + *other.best_epoch;
    best_valid_accuracy = other.best_valid_accuracy;
    best_checkpoint = other.best_checkpoint;
  }
  if (other.test_accuracy) test_accuracy = other.test_accuracy;
}

json to_json(const TrainReport& report) {
  json j;
  j["epochs"] = json::array();
  for (const auto& e : report.epochs) {
    json r{{"stage", e.stage}, {"epoch", e.epoch}, {"loss", e.loss}};
    r["valid_accuracy"] = e.valid_accuracy ? json(*e.valid_accuracy) : json(nullptr);
    r["seconds"] = e.seconds;
    j["epochs"].push_back(std::move(r));
  }
  j["best_epoch"] = report.best_epoch ? json(*report.best_epoch) : json(nullptr);
  j["best_valid_accuracy"] = report.best_valid_accuracy ? json(*report.best_valid_accuracy) : json(nullptr);
  j["best_checkpoint"] = report.best_checkpoint;
  j["test_accuracy"] = report.test_accuracy ? json(*report.test_accuracy) : json(nullptr);
  return j;
}

void save_report(const TrainReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << to_json(report).dump(2) << '\n';
}

Adam::Adam(const ModelState& like, double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {
  ModelState::visit(like, [&](const std::string&, const Matrix& m, ParamGroup) {
    m_.push_back(Matrix::Zero(m.rows(), m.cols()));
    v_.push_back(Matrix::Zero(m.rows(), m.cols()));
  });
}

void Adam::step(ModelState& state, const ModelState& grads, const std::function<double(ParamGroup)>& lr_of) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::vector<const Matrix*> gs;
  ModelState::visit(grads, [&](const std::string&, const Matrix& g, ParamGroup) { gs.push_back(&g); });
  std::size_t i = 0;
  ModelState::visit(state, [&](const std::string&, Matrix& p, ParamGroup group) {
    const std::size_t k = i++;
    const double lr = lr_of(group);
    if (lr <= 0.0) return;
    const Matrix& g = *gs[k];
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g;
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
  });
}

double global_norm(const ModelState& grads, const std::function<bool(ParamGroup)>& selected) {
  double sq = 0.0;
  ModelState::visit(grads, [&](const std::string&, const Matrix& g, ParamGroup group) {
    if (selected(group)) sq += g.squaredNorm();
  });
  return std::sqrt(sq);
}

double clip_global_norm(ModelState& grads, double max_norm, const std::function<bool(ParamGroup)>& selected) {
  const double norm = global_norm(grads, selected);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    ModelState::visit(grads, [&](const std::string&, Matrix& g, ParamGroup group) {
      if (selected(group)) g *= scale;
    });
  }
  return norm;
}

std::uint64_t parameter_fingerprint(const ModelState& state, std::optional<ParamGroup> group) {
  std::uint64_t h = 1469598103934665603ULL;
  ModelState::visit(state, [&](const std::string&, const Matrix& m, ParamGroup g) {
    if (group && g != *group) return;
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(m.size()) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  });
  return h;
}

std::vector<PredictionResult> predict_all(const Model& model, const Dataset& ds, PathMode mode) {
  std::vector<PredictionResult> out;
  out.reserve(ds.size());
  for (const auto& ex : ds.examples) out.push_back(forward(model, ex, mode));
  return out;
}

double accuracy(const Model& model, const Dataset& ds, PathMode mode) {
  if (ds.empty()) throw Error("accuracy: empty dataset", "precondition");
  std::size_t hits = 0;
  for (const auto& ex : ds.examples) hits += forward(model, ex, mode).label == ex.label;
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

namespace {

using Clock = std::chrono::steady_clock;

struct Phase {
  std::string stage;
  PathMode mode;
  std::function<double(ParamGroup)> lr;
  bool scheduled;  // warmup then linear decay
  std::uint64_t salt;
};

void zero(ModelState& grads) {
  ModelState::visit(grads, [](const std::string&, Matrix& m, ParamGroup) { m.setZero(); });
}

double schedule_factor(long step, long total, double warmup_fraction) {
  const long warm = std::max(1L, static_cast<long>(std::floor(warmup_fraction * static_cast<double>(total))));
  if (step < warm) return static_cast<double>(step + 1) / static_cast<double>(warm);
  if (total <= warm) return 1.0;
  return std::max(0.0, static_cast<double>(total - step) / static_cast<double>(total - warm));
}

TrainReport run_phase(Model& model, const Dataset& train, const Dataset* valid, const TrainConfig& cfg,
                      const Phase& phase, int epochs, bool keep_best, const EpochHook& on_epoch) {
  cfg.validate();
  TrainReport report;
  if (epochs == 0) return report;
  if (train.empty()) throw Error(phase.stage + ": training set is empty", "precondition");
  check_shapes(model.state, model.config, model.vocab.size());

  std::mt19937_64 rng(cfg.seed ^ phase.salt);
  Adam adam(model.state);
  ModelState grads = zeros_like(model.state);
  const auto updated = [&](ParamGroup g) { return phase.lr(g) > 0.0; };

  const std::size_t n = train.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const long steps_per_epoch = static_cast<long>((n + batch - 1) / batch);
  const long total_steps = steps_per_epoch * epochs;
  long step = 0;

  std::optional<ModelState> best_state;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const auto t0 = Clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      const double weight = 1.0 / static_cast<double>(end - start);
      zero(grads);
      for (std::size_t k = start; k < end; ++k) {
        const Example& ex = train.examples[order[k]];
        ForwardCache cache;
        const auto pred = forward(model, ex, phase.mode, DropoutContext{0.0, &rng}, &cache);
        epoch_loss -= std::log(std::max(pred.probs[index_of(ex.label)], 1e-300));
        backward(model, ex, cache, pred, phase.mode, ex.label, weight, grads);
      }
      clip_global_norm(grads, cfg.clip_norm, updated);
      const double factor = phase.scheduled ? schedule_factor(step, total_steps, cfg.warmup_fraction) : 1.0;
      adam.step(model.state, grads, [&](ParamGroup g) { return phase.lr(g) * factor; });
      ++step;
    }

    EpochRecord rec;
    rec.stage = phase.stage;
    rec.epoch = epoch;
    rec.loss = epoch_loss / static_cast<double>(n);
    if (valid && !valid->empty()) rec.valid_accuracy = accuracy(model, *valid, phase.mode);
    rec.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    detail::log().info("{} epoch {}/{}: loss {:.4f}, valid acc {}, {:.1f}s", phase.stage, epoch, epochs, rec.loss,
                       rec.valid_accuracy ? std::to_string(*rec.valid_accuracy) : "n/a", rec.seconds);
    report.epochs.push_back(rec);

    const bool better = !report.best_valid_accuracy ||
                        (rec.valid_accuracy && *rec.valid_accuracy > *report.best_valid_accuracy);
    if (keep_best && rec.valid_accuracy) {
      if (better) {
        report.best_epoch = report.epochs.size() - 1;
        report.best_valid_accuracy = rec.valid_accuracy;
        best_state = model.state;
      }
    } else {
      report.best_epoch = report.epochs.size() - 1;
      report.best_valid_accuracy = rec.valid_accuracy;
    }
    if (on_epoch) on_epoch(epoch, model);
  }
  if (best_state) model.state = std::move(*best_state);
  return report;
}

void maybe_checkpoint(const Model& model, const TrainConfig& cfg, TrainReport& report, const char* path) {
  if (cfg.checkpoint_dir.empty() || !report.best_epoch) return;
  save_checkpoint(model, cfg.checkpoint_dir, {{"path", path}});
  report.best_checkpoint = cfg.checkpoint_dir;
}

}  // namespace

TrainReport pretrain_tree(Model& model, const Dataset& train, const Dataset* valid, const TrainConfig& cfg,
                          const EpochHook& on_epoch) {
  const Phase phase{"stage1", PathMode::kStructureOnly,
                    [&](ParamGroup g) {
                      return g == ParamGroup::kStructure || g == ParamGroup::kStage1Head ? cfg.lr_tree : 0.0;
                    },
                    false, 0x7374616765310000ULL};
  return run_phase(model, train, valid, cfg, phase, cfg.stage1_epochs, false, on_epoch);
}

TrainReport finetune_joint(Model& model, const Dataset& train, const Dataset* valid, const TrainConfig& cfg) {
  const Phase phase{"stage2", PathMode::kJoint,
                    [&](ParamGroup g) {
                      switch (g) {
                        case ParamGroup::kSequence: return cfg.lr_joint;
                        case ParamGroup::kStructure:
                        case ParamGroup::kOutput: return cfg.lr_tree;
                        case ParamGroup::kStage1Head: return 0.0;
                      }
                      return 0.0;
                    },
                    true, 0x7374616765320000ULL};
  TrainReport report = run_phase(model, train, valid, cfg, phase, cfg.stage2_epochs, true, {});
  maybe_checkpoint(model, cfg, report, "joint");
  return report;
}

TrainReport train_flat_baseline(Model& model, const Dataset& train, const Dataset* valid, const TrainConfig& cfg) {
  const Phase phase{"flat", PathMode::kFlat,
                    [&](ParamGroup g) {
                      switch (g) {
                        case ParamGroup::kSequence: return cfg.lr_joint;
                        case ParamGroup::kOutput: return cfg.lr_tree;
                        default: return 0.0;
                      }
                    },
                    true, 0x666c617400000000ULL};
  TrainReport report = run_phase(model, train, valid, cfg, phase, cfg.stage2_epochs, true, {});
  maybe_checkpoint(model, cfg, report, "flat");
  return report;
}

}  // namespace kvconsist
