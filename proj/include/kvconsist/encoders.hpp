#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kvconsist/structures.hpp"

namespace kvconsist {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Every learnable tensor is a Matrix; biases and gains are 1 x n rows for the
// row-major sequence side and n x 1 columns on the tree side.

/// Token, position, segment and type tables; one row per index, all of width d.
struct EmbeddingTables {
  Matrix token;
  Matrix position;
  Matrix segment;
  Matrix type;

  int width() const { return static_cast<int>(token.cols()); }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("embed.token", self.token);
    f("embed.position", self.position);
    f("embed.segment", self.segment);
    f("embed.type", self.type);
  }
};

EmbeddingTables make_embedding_tables(int vocab, int max_len, int num_types, int width);

/// Index form of one linearized sequence.
struct SequenceInput {
  std::vector<int> tokens;
  std::vector<int> positions;
  std::vector<int> segments;
  std::vector<int> types;

  std::size_t size() const { return tokens.size(); }
};

/// Row t = token[tok_t] + position[pos_t] + segment[seg_t] + type[type_t].
Matrix input_embed(const EmbeddingTables& tables, const SequenceInput& in);
/// Scatter-adds the output gradient into the table gradients.
void input_embed_backward(const SequenceInput& in, const Matrix& d_out, EmbeddingTables& grads);

struct TransformerConfig {
  int layers = 12;
  int heads = 12;
  int hidden = 768;
  int ff = 3072;
  int max_len = 512;
  double dropout = 0.1;

  void validate() const;
};

struct TransformerLayer {
  Matrix ln1_gain, ln1_bias;
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln2_gain, ln2_bias;
  Matrix w1, b1, w2, b2;
};

/// Pre-norm encoder stack with a final layer norm and a tanh pooler over the
/// first position.
struct TransformerParams {
  std::vector<TransformerLayer> layers;
  Matrix final_ln_gain, final_ln_bias;
  Matrix pool_w, pool_b;

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      auto& l = self.layers[i];
      const std::string p = "transformer.layer" + std::to_string(i) + ".";
      f(p + "ln1_gain", l.ln1_gain);
      f(p + "ln1_bias", l.ln1_bias);
      f(p + "wq", l.wq);
      f(p + "bq", l.bq);
      f(p + "wk", l.wk);
      f(p + "bk", l.bk);
      f(p + "wv", l.wv);
      f(p + "bv", l.bv);
      f(p + "wo", l.wo);
      f(p + "bo", l.bo);
      f(p + "ln2_gain", l.ln2_gain);
      f(p + "ln2_bias", l.ln2_bias);
      f(p + "w1", l.w1);
      f(p + "b1", l.b1);
      f(p + "w2", l.w2);
      f(p + "b2", l.b2);
    }
    f("transformer.final_ln_gain", self.final_ln_gain);
    f("transformer.final_ln_bias", self.final_ln_bias);
    f("transformer.pool_w", self.pool_w);
    f("transformer.pool_b", self.pool_b);
  }
};

/// Zero-filled tensors of the right shapes; layer-norm gains are ones.
TransformerParams make_transformer_params(const TransformerConfig& cfg);

/// Inverted dropout driven by a caller-owned generator. A null rng or zero
/// rate disables it (evaluation mode).
struct DropoutContext {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;

  bool active() const { return rng != nullptr && rate > 0.0; }
};

struct LayerNormCache {
  Matrix xhat;
  Vector rstd;
};

struct TransformerLayerCache {
  Matrix x_in;
  LayerNormCache ln1;
  Matrix a_in;
  Matrix q, k, v;
  std::vector<Matrix> probs;
  Matrix ctx;
  Matrix attn_drop;
  LayerNormCache ln2;
  Matrix f_in;
  Matrix h1;
  Matrix g;
  Matrix ffn_drop;
};

struct TransformerCache {
  std::vector<char> mask;
  Matrix embed_drop;
  std::vector<TransformerLayerCache> layers;
  LayerNormCache final_ln;
  Matrix hidden;
  Vector pooled;
};

struct TransformerOutput {
  Matrix hidden;  // L x d
  Vector pooled;  // d
};

/// `mask[t]` is true for real positions. Padding keys never receive
/// attention, so unmasked rows do not depend on padded rows.
TransformerOutput transformer_encode(const TransformerParams& params, const TransformerConfig& cfg, const Matrix& x,
                                     std::span<const char> mask, DropoutContext dropout = {},
                                     TransformerCache* cache = nullptr);

/// Accumulates parameter gradients into `grads` and returns d loss / d x.
Matrix transformer_backward(const TransformerParams& params, const TransformerConfig& cfg,
                            const TransformerCache& cache, const Matrix& d_hidden, const Vector& d_pooled,
                            TransformerParams& grads);

struct TreeLstmConfig {
  int input_size = 300;
  int hidden_size = 50;

  void validate() const;
};

struct TreeLstmParams {
  Matrix w_i, w_f, w_o, w_u;  // hidden x input
  Matrix u_i, u_f, u_o, u_u;  // hidden x hidden
  Matrix b_i, b_f, b_o, b_u;  // hidden x 1

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("tree.w_i", self.w_i);
    f("tree.w_f", self.w_f);
    f("tree.w_o", self.w_o);
    f("tree.w_u", self.w_u);
    f("tree.u_i", self.u_i);
    f("tree.u_f", self.u_f);
    f("tree.u_o", self.u_o);
    f("tree.u_u", self.u_u);
    f("tree.b_i", self.b_i);
    f("tree.b_f", self.b_f);
    f("tree.b_o", self.b_o);
    f("tree.b_u", self.b_u);
  }
};

TreeLstmParams make_tree_lstm_params(const TreeLstmConfig& cfg);

struct TreeNodeState {
  Vector h_sum;
  Vector i, o, u, c, h;
  std::vector<Vector> f;  // one forget gate per child, in child order
};

struct TreeLstmCache {
  std::vector<int> order;
  std::vector<TreeNodeState> nodes;  // indexed by node id
};

/// Child-sum tree-LSTM over `tree` in post-order. Column j of `node_inputs`
/// is the input vector of node j. Returns the root hidden state.
Vector tree_lstm_encode(const DepTree& tree, const Matrix& node_inputs, const TreeLstmParams& params,
                        TreeLstmCache* cache = nullptr);

/// Accumulates into `grads` and returns d loss / d node_inputs (same shape).
Matrix tree_lstm_backward(const DepTree& tree, const Matrix& node_inputs, const TreeLstmParams& params,
                          const TreeLstmCache& cache, const Vector& d_root, TreeLstmParams& grads);

}  // namespace kvconsist
