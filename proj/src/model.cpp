#include "kvconsist/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "kvconsist/structures.hpp"

namespace kvconsist {

namespace {

constexpr std::array<const char*, 5> kSpecials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[KV]"};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void fill_normal(Matrix& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
}

void fill_uniform(Matrix& m, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

Matrix node_inputs(const DepTree& tree, const Model& model) {
  Matrix out(model.state.tree_embed.cols(), static_cast<Eigen::Index>(tree.size()));
  for (const auto& node : tree.nodes) {
    const int id = node.token == kKvToken ? Vocab::kKv : model.vocab.id(node.token);
    out.col(node.id) = model.state.tree_embed.row(id).transpose();
  }
  return out;
}

void scatter_node_grads(const DepTree& tree, const Matrix& d_inputs, const Model& model, Matrix& d_table) {
  for (const auto& node : tree.nodes) {
    const int id = node.token == kKvToken ? Vocab::kKv : model.vocab.id(node.token);
    d_table.row(id) += d_inputs.col(node.id).transpose();
  }
}

}  // namespace

Vocab::Vocab() {
  for (const char* s : kSpecials) {
    index_.emplace(s, static_cast<int>(tokens_.size()));
    tokens_.emplace_back(s);
  }
}

Vocab::Vocab(std::vector<std::string> tokens) {
  if (tokens.size() < kSpecials.size()) throw Error("vocabulary is missing the special tokens", "vocab");
  for (std::size_t i = 0; i < kSpecials.size(); ++i)
    if (tokens[i] != kSpecials[i]) throw Error("vocabulary special token " + std::to_string(i) + " must be " +
                                                   kSpecials[i], "vocab");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string key = i < kSpecials.size() ? tokens[i] : fold(tokens[i]);
    if (!index_.emplace(key, static_cast<int>(i)).second)
      throw Error("vocabulary repeats token '" + tokens[i] + "'", "vocab");
  }
  tokens_ = std::move(tokens);
}

std::string Vocab::fold(std::string_view token) {
  std::string out(token);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

int Vocab::add(std::string_view token) {
  if (auto it = index_.find(std::string(token)); it != index_.end() && it->second < 5) return it->second;
  std::string key = fold(token);
  auto [it, inserted] = index_.emplace(key, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(std::move(key));
  return it->second;
}

int Vocab::id(std::string_view token) const {
  if (auto it = index_.find(std::string(token)); it != index_.end() && it->second < 5) return it->second;
  auto it = index_.find(fold(token));
  return it == index_.end() ? kUnk : it->second;
}

Vocab Vocab::build(std::span<const Example> examples, const KeySet& keys) {
  Vocab v;
  for (const auto& k : keys.keys()) v.add(k);
  v.extend(examples);
  return v;
}

void Vocab::extend(std::span<const Example> examples) {
  for (const auto& ex : examples) {
    for (const auto& [key, value] : ex.profile.pairs()) {
      add(key);
      for (const auto& t : split_tokens(value)) add(t);
    }
    for (const auto& t : ex.response) add(t);
  }
}

void KvBertConfig::validate() const {
  transformer.validate();
  tree.validate();
  if (d_struct <= 0) throw Error("d_struct must be positive", "config");
  if (num_labels != static_cast<int>(kNumLabels)) throw Error("num_labels must be 3", "config");
}

KvBertConfig KvBertConfig::paper_scale() {
  KvBertConfig c;
  c.transformer = {12, 12, 768, 3072, 512, 0.1};
  c.tree = {300, 50};
  c.d_struct = 50;
  return c;
}

KvBertConfig KvBertConfig::desk_scale() {
  KvBertConfig c;
  c.transformer = {2, 4, 128, 256, 64, 0.0};
  c.tree = {64, 16};
  c.d_struct = 16;
  return c;
}

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::kSequence: return "sequence";
    case ParamGroup::kStructure: return "structure";
    case ParamGroup::kOutput: return "output";
    case ParamGroup::kStage1Head: return "stage1_head";
  }
  return "?";
}

ModelState make_model_state(const KvBertConfig& cfg, std::size_t vocab_size) {
  cfg.validate();
  const auto v = static_cast<int>(vocab_size);
  const int labels = cfg.num_labels;
  ModelState s;
  s.embed = make_embedding_tables(v, cfg.transformer.max_len, static_cast<int>(cfg.keys.size()) + 1,
                                  cfg.transformer.hidden);
  s.transformer = make_transformer_params(cfg.transformer);
  s.tree_embed = Matrix::Zero(v, cfg.tree.input_size);
  s.tree = make_tree_lstm_params(cfg.tree);
  s.agg_w = Matrix::Zero(cfg.d_struct, 4 * cfg.tree.hidden_size);
  s.agg_b = Matrix::Zero(cfg.d_struct, 1);
  s.out_w = Matrix::Zero(labels, cfg.joint_width());
  s.out_b = Matrix::Zero(labels, 1);
  s.head_w = Matrix::Zero(labels, cfg.d_struct);
  s.head_b = Matrix::Zero(labels, 1);
  return s;
}

ModelState zeros_like(const ModelState& state) {
  ModelState z = state;
  ModelState::visit(z, [](const std::string&, Matrix& m, ParamGroup) { m.setZero(); });
  return z;
}

static bool is_bias(std::string_view name) {
  const auto last = name.substr(name.rfind('.') + 1);
  static constexpr std::array<std::string_view, 12> kBiases = {"b",  "bq", "bk", "bv",  "bo",  "b1",
                                                               "b2", "pool_b", "b_i", "b_f", "b_o", "b_u"};
  return ends_with(last, "_bias") || std::find(kBiases.begin(), kBiases.end(), last) != kBiases.end();
}

void init_model_state(ModelState& state, std::uint64_t seed) {
  ModelState::visit(state, [&](const std::string& name, Matrix& m, ParamGroup) {
    std::mt19937_64 rng(splitmix64(seed ^ fnv1a(name)));
    if (ends_with(name, "_gain")) {
      m.setOnes();
    } else if (is_bias(name)) {
      m.setZero();
    } else if (name.rfind("embed.", 0) == 0) {
      fill_normal(m, 0.02, rng);
    } else if (name == "tree.embed") {
      fill_normal(m, 0.5, rng);
    } else {
      // Glorot-uniform for every weight matrix.
      fill_uniform(m, std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols())), rng);
    }
  });
}

void check_shapes(const ModelState& state, const KvBertConfig& cfg, std::size_t vocab_size) {
  const ModelState expected = make_model_state(cfg, vocab_size);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  ModelState::visit(expected, [&](const std::string&, const Matrix& m, ParamGroup) {
    shapes.emplace_back(m.rows(), m.cols());
  });
  std::size_t i = 0;
  ModelState::visit(state, [&](const std::string& name, const Matrix& m, ParamGroup) {
    if (i >= shapes.size() || shapes[i].first != m.rows() || shapes[i].second != m.cols())
      throw Error("tensor '" + name + "' has shape " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                      " inconsistent with the config",
                  "shape");
    ++i;
  });
  if (i != shapes.size()) throw Error("model state has the wrong number of tensors", "shape");
}

std::size_t parameter_count(const ModelState& state) {
  std::size_t n = 0;
  ModelState::visit(state, [&](const std::string&, const Matrix& m, ParamGroup) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

void round_to_float(ModelState& state) {
  ModelState::visit(state, [](const std::string&, Matrix& m, ParamGroup) {
    m = m.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
  });
}

Model make_model(const KvBertConfig& cfg, Vocab vocab, std::uint64_t seed) {
  Model m{cfg, std::move(vocab), {}};
  m.state = make_model_state(cfg, m.vocab.size());
  init_model_state(m.state, seed);
  return m;
}

PredictionResult make_prediction(const std::array<double, kNumLabels>& logits) {
  PredictionResult r;
  r.logits = logits;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    r.probs[k] = std::exp(logits[k] - mx);
    z += r.probs[k];
  }
  std::size_t best = 0;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    r.probs[k] /= z;
    if (r.probs[k] > r.probs[best]) best = k;
  }
  r.label = kAllLabels[best];
  return r;
}

Linearized linearize(const Profile& profile, const Tokens& response, int max_len,
                     const std::optional<std::array<int, 2>>& surface_swap) {
  if (profile.empty()) throw Error("linearize: profile is empty", "precondition");
  if (response.empty()) throw Error("linearize: response is empty", "precondition");

  const auto& pairs = profile.pairs();
  std::vector<Tokens> values;
  values.reserve(pairs.size());
  for (const auto& p : pairs) values.push_back(split_tokens(p.value));
  if (surface_swap) {
    const auto [a, b] = *surface_swap;
    const auto n = static_cast<int>(pairs.size());
    if (a < 0 || b < 0 || a >= n || b >= n || a == b) throw Error("linearize: invalid surface swap", "precondition");
    std::swap(values[static_cast<std::size_t>(a)], values[static_cast<std::size_t>(b)]);
  }

  Linearized lin;
  auto push = [&](const std::string& tok, int segment, int type) {
    lin.tokens.push_back(tok);
    lin.segments.push_back(segment);
    lin.types.push_back(type);
  };
  push("[CLS]", 0, 0);
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    const int type = static_cast<int>(j) + 1;
    push(pairs[j].key, 0, type);
    for (const auto& v : values[j]) push(v, 0, type);
  }
  push("[SEP]", 0, 0);
  for (const auto& t : response) push(t, 1, 0);
  push("[SEP]", 1, 0);

  if (static_cast<int>(lin.tokens.size()) > max_len)
    throw Error("linearized length " + std::to_string(lin.tokens.size()) + " exceeds max_len " +
                    std::to_string(max_len) + " (no truncation)",
                "truncation");
  lin.positions.resize(lin.tokens.size());
  for (std::size_t t = 0; t < lin.positions.size(); ++t) lin.positions[t] = static_cast<int>(t);
  return lin;
}

SequenceInput to_sequence_input(const Linearized& lin, const Vocab& vocab) {
  SequenceInput in;
  in.tokens.reserve(lin.size());
  for (const auto& t : lin.tokens) in.tokens.push_back(vocab.id(t));
  in.positions = lin.positions;
  in.segments = lin.segments;
  in.types = lin.types;
  return in;
}

Vector aggregation_features(const Vector& e_p, const Vector& e_r) {
  if (e_p.size() != e_r.size()) throw Error("aggregate: encodings differ in width", "shape");
  const Eigen::Index n = e_p.size();
  Vector z(4 * n);
  z << e_p, e_r, e_p.cwiseProduct(e_r), e_p - e_r;
  return z;
}

Vector aggregate(const Vector& e_p, const Vector& e_r, const Matrix& weight, const Matrix& bias) {
  const Vector z = aggregation_features(e_p, e_r);
  if (weight.cols() != z.size()) throw Error("aggregate: weight does not match 4 x encoding width", "shape");
  return weight * z + bias.col(0);
}

std::pair<Vector, Vector> encode_structures(const Model& model, const Example& ex) {
  const DepTree pt = build_profile_tree(ex.profile);
  const DepTree rt = response_tree(ex.response, ex.response_parse);
  return {tree_lstm_encode(pt, node_inputs(pt, model), model.state.tree),
          tree_lstm_encode(rt, node_inputs(rt, model), model.state.tree)};
}

PredictionResult forward(const Model& model, const Example& ex, PathMode mode, DropoutContext dropout,
                         ForwardCache* cache) {
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  const auto& s = model.state;
  const int d = model.config.transformer.hidden;
  const int d_struct = model.config.d_struct;

  if (mode != PathMode::kFlat) {
    c.profile_tree = build_profile_tree(ex.profile);
    c.response_tree = response_tree(ex.response, ex.response_parse);
    c.profile_inputs = node_inputs(c.profile_tree, model);
    c.response_inputs = node_inputs(c.response_tree, model);
    c.e_p = tree_lstm_encode(c.profile_tree, c.profile_inputs, s.tree, &c.profile_cache);
    c.e_r = tree_lstm_encode(c.response_tree, c.response_inputs, s.tree, &c.response_cache);
    c.features = aggregation_features(c.e_p, c.e_r);
    c.structure = s.agg_w * c.features + s.agg_b.col(0);
  } else {
    c.structure = Vector::Zero(d_struct);
  }

  std::array<double, kNumLabels> logits{};
  if (mode == PathMode::kStructureOnly) {
    const Vector out = s.head_w * c.structure + s.head_b.col(0);
    for (std::size_t k = 0; k < kNumLabels; ++k) logits[k] = out(static_cast<Eigen::Index>(k));
    return make_prediction(logits);
  }

  const Linearized lin = linearize(ex.profile, ex.response, model.config.transformer.max_len, ex.surface_swap);
  c.sequence = to_sequence_input(lin, model.vocab);
  const Matrix x = input_embed(s.embed, c.sequence);
  const std::vector<char> mask(c.sequence.size(), 1);
  const DropoutContext drop{model.config.transformer.dropout, dropout.rng};
  c.pooled = transformer_encode(s.transformer, model.config.transformer, x, mask, drop, &c.transformer).pooled;

  c.head_input.resize(d + d_struct);
  c.head_input << c.pooled, c.structure;
  const Vector out = s.out_w * c.head_input + s.out_b.col(0);
  for (std::size_t k = 0; k < kNumLabels; ++k) logits[k] = out(static_cast<Eigen::Index>(k));
  return make_prediction(logits);
}

void backward(const Model& model, const Example& /*ex*/, const ForwardCache& c, const PredictionResult& pred,
              PathMode mode, Label gold, double weight, ModelState& grads) {
  const auto& s = model.state;
  const int d = model.config.transformer.hidden;
  const int d_struct = model.config.d_struct;

  Vector d_logits(static_cast<Eigen::Index>(kNumLabels));
  for (std::size_t k = 0; k < kNumLabels; ++k)
    d_logits(static_cast<Eigen::Index>(k)) = weight * (pred.probs[k] - (k == index_of(gold) ? 1.0 : 0.0));

  Vector d_structure;
  if (mode == PathMode::kStructureOnly) {
    grads.head_w += d_logits * c.structure.transpose();
    grads.head_b += d_logits;
    d_structure = s.head_w.transpose() * d_logits;
  } else {
    grads.out_w += d_logits * c.head_input.transpose();
    grads.out_b += d_logits;
    const Vector d_joint = s.out_w.transpose() * d_logits;
    const Vector d_pooled = d_joint.head(d);
    const Matrix d_x = transformer_backward(s.transformer, model.config.transformer, c.transformer,
                                            Matrix::Zero(static_cast<Eigen::Index>(c.sequence.size()), d), d_pooled,
                                            grads.transformer);
    input_embed_backward(c.sequence, d_x, grads.embed);
    if (mode == PathMode::kFlat) return;
    d_structure = d_joint.tail(d_struct);
  }

  grads.agg_w += d_structure * c.features.transpose();
  grads.agg_b += d_structure;
  const Vector d_z = s.agg_w.transpose() * d_structure;
  const Eigen::Index n = c.e_p.size();
  const Vector d_ep = d_z.segment(0, n) + d_z.segment(2 * n, n).cwiseProduct(c.e_r) + d_z.segment(3 * n, n);
  const Vector d_er = d_z.segment(n, n) + d_z.segment(2 * n, n).cwiseProduct(c.e_p) - d_z.segment(3 * n, n);

  const Matrix d_pin = tree_lstm_backward(c.profile_tree, c.profile_inputs, s.tree, c.profile_cache, d_ep, grads.tree);
  const Matrix d_rin =
      tree_lstm_backward(c.response_tree, c.response_inputs, s.tree, c.response_cache, d_er, grads.tree);
  scatter_node_grads(c.profile_tree, d_pin, model, grads.tree_embed);
  scatter_node_grads(c.response_tree, d_rin, model, grads.tree_embed);
}

double loss(const Model& model, std::span<const Example> batch, PathMode mode) {
  if (batch.empty()) throw Error("loss: empty batch", "precondition");
  double total = 0.0;
  for (const auto& ex : batch) {
    const auto pred = forward(model, ex, mode);
    total -= std::log(pred.probs[index_of(ex.label)]);
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace kvconsist
