#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kvconsist/core.hpp"
#include "kvconsist/encoders.hpp"

namespace kvconsist {

/// Case-folded token vocabulary. Ids 0..4 are reserved for the special tokens.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kKv = 4;

  Vocab();
  /// `tokens` must begin with the five special tokens in id order.
  explicit Vocab(std::vector<std::string> tokens);

  int add(std::string_view token);
  /// Unknown tokens map to kUnk.
  int id(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }

  /// Profile keys, profile value tokens and response tokens, in first-seen order.
  static Vocab build(std::span<const Example> examples, const KeySet& keys);
  void extend(std::span<const Example> examples);

 private:
  static std::string fold(std::string_view token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct KvBertConfig {
  TransformerConfig transformer;
  TreeLstmConfig tree;
  int d_struct = 50;
  int num_labels = static_cast<int>(kNumLabels);
  KeySet keys;

  int joint_width() const { return transformer.hidden + d_struct; }
  void validate() const;

  /// 12 x 768 transformer, 300 -> 50 tree-LSTM, 50-wide structure block.
  static KvBertConfig paper_scale();
  /// 2 x 128 transformer with 4 heads, 64 -> 16 tree-LSTM, 16-wide structure block.
  static KvBertConfig desk_scale();
};

enum class ParamGroup : std::uint8_t { kSequence, kStructure, kOutput, kStage1Head };
std::string_view to_string(ParamGroup group);

/// Every learnable tensor of the joint model.
struct ModelState {
  EmbeddingTables embed;
  TransformerParams transformer;
  Matrix tree_embed;  // vocab x tree input size; the [KV] row is the root embedding
  TreeLstmParams tree;
  Matrix agg_w, agg_b;    // d_struct x 4*d_tree, d_struct x 1
  Matrix out_w, out_b;    // labels x (d + d_struct), labels x 1
  Matrix head_w, head_b;  // labels x d_struct, labels x 1; stage-1 only

  /// Calls f(name, tensor, group) in a fixed order.
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    EmbeddingTables::visit(self.embed, [&](const std::string& n, auto& m) { f(n, m, ParamGroup::kSequence); });
    TransformerParams::visit(self.transformer,
                             [&](const std::string& n, auto& m) { f(n, m, ParamGroup::kSequence); });
    f(std::string("tree.embed"), self.tree_embed, ParamGroup::kStructure);
    TreeLstmParams::visit(self.tree, [&](const std::string& n, auto& m) { f(n, m, ParamGroup::kStructure); });
    f(std::string("agg.w"), self.agg_w, ParamGroup::kStructure);
    f(std::string("agg.b"), self.agg_b, ParamGroup::kStructure);
    f(std::string("out.w"), self.out_w, ParamGroup::kOutput);
    f(std::string("out.b"), self.out_b, ParamGroup::kOutput);
    f(std::string("head.w"), self.head_w, ParamGroup::kStage1Head);
    f(std::string("head.b"), self.head_b, ParamGroup::kStage1Head);
  }
};

/// Zero-filled state with shapes derived from `cfg` (layer-norm gains are ones).
ModelState make_model_state(const KvBertConfig& cfg, std::size_t vocab_size);
ModelState zeros_like(const ModelState& state);
/// Seeded random initialization; each tensor draws from its own stream so a
/// tensor's initial value does not depend on the shapes of the others.
void init_model_state(ModelState& state, std::uint64_t seed);
void check_shapes(const ModelState& state, const KvBertConfig& cfg, std::size_t vocab_size);
std::size_t parameter_count(const ModelState& state);
/// Rounds every parameter to the nearest 32-bit float.
void round_to_float(ModelState& state);

struct Model {
  KvBertConfig config;
  Vocab vocab;
  ModelState state;
};

Model make_model(const KvBertConfig& cfg, Vocab vocab, std::uint64_t seed);

struct PredictionResult {
  Label label = Label::kEntailed;
  std::array<double, kNumLabels> probs{};
  std::array<double, kNumLabels> logits{};

  double confidence() const { return probs[index_of(label)]; }
};

/// Softmax and argmax with ties resolved towards the earlier label
/// (ENTAILED, CONTRADICTED, IRRELEVANT).
PredictionResult make_prediction(const std::array<double, kNumLabels>& logits);

struct Linearized {
  Tokens tokens;
  std::vector<int> positions;
  std::vector<int> segments;
  std::vector<int> types;

  std::size_t size() const { return tokens.size(); }
};

/// [CLS] k1 v1 ... kn vn [SEP] response [SEP]. Types carry the 1-based pair
/// index over each key and its value tokens and 0 elsewhere. With a surface
/// swap the two value spans trade places and take the type of the key they
/// now follow. Sequences longer than `max_len` are rejected, never truncated.
Linearized linearize(const Profile& profile, const Tokens& response, int max_len,
                     const std::optional<std::array<int, 2>>& surface_swap = std::nullopt);
SequenceInput to_sequence_input(const Linearized& lin, const Vocab& vocab);

/// concat(e_p, e_r, e_p*e_r, e_p-e_r).
Vector aggregation_features(const Vector& e_p, const Vector& e_r);
/// Linear map of the aggregation features to the structure representation.
Vector aggregate(const Vector& e_p, const Vector& e_r, const Matrix& weight, const Matrix& bias);

enum class PathMode : std::uint8_t {
  kJoint,          // sentence + structure representation
  kFlat,           // structure block replaced by zeros
  kStructureOnly,  // stage-1 head over the structure representation
};

struct ForwardCache {
  SequenceInput sequence;
  TransformerCache transformer;
  DepTree profile_tree;
  DepTree response_tree;
  Matrix profile_inputs;
  Matrix response_inputs;
  TreeLstmCache profile_cache;
  TreeLstmCache response_cache;
  Vector e_p, e_r, features, structure;
  Vector pooled;
  Vector head_input;
};

PredictionResult forward(const Model& model, const Example& ex, PathMode mode = PathMode::kJoint,
                         DropoutContext dropout = {}, ForwardCache* cache = nullptr);

/// Tree-side root encodings for one example.
std::pair<Vector, Vector> encode_structures(const Model& model, const Example& ex);

/// Back-propagates weight * cross-entropy(gold) into `grads`.
void backward(const Model& model, const Example& ex, const ForwardCache& cache, const PredictionResult& pred,
              PathMode mode, Label gold, double weight, ModelState& grads);

/// Mean negative log-probability of the gold labels.
double loss(const Model& model, std::span<const Example> batch, PathMode mode = PathMode::kJoint);

}  // namespace kvconsist
