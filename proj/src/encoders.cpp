#include "kvconsist/encoders.hpp"

#include <cmath>
#include <limits>

namespace kvconsist {

namespace {

constexpr double kLayerNormEps = 1e-6;

Matrix row(int n, double fill = 0.0) { return Matrix::Constant(1, n, fill); }

void check_index(int idx, Eigen::Index rows, const char* table, std::size_t pos) {
  if (idx < 0 || idx >= rows)
    throw Error(std::string(table) + " index " + std::to_string(idx) + " at position " + std::to_string(pos) +
                    " out of range [0, " + std::to_string(rows) + ")",
                "embedding");
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, const DropoutContext& dropout) {
  std::bernoulli_distribution keep(1.0 - dropout.rate);
  const double scale = 1.0 / (1.0 - dropout.rate);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = keep(*dropout.rng) ? scale : 0.0;
  return m;
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache& cache) {
  const auto d = static_cast<double>(x.cols());
  cache.xhat.resize(x.rows(), x.cols());
  cache.rstd.resize(x.rows());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const double mu = x.row(t).sum() / d;
    const auto centered = (x.row(t).array() - mu).matrix();
    const double var = centered.squaredNorm() / d;
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd(t) = rstd;
    cache.xhat.row(t) = centered * rstd;
  }
  Matrix y = cache.xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const Matrix& gain, Matrix& d_gain,
                           Matrix& d_bias) {
  d_gain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  d_bias.row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
  const auto d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index t = 0; t < dy.rows(); ++t) {
    const double mean_d = dxhat.row(t).sum() / d;
    const double mean_dx = dxhat.row(t).dot(cache.xhat.row(t)) / d;
    dx.row(t) = cache.rstd(t) * (dxhat.row(t).array() - mean_d - cache.xhat.row(t).array() * mean_dx).matrix();
  }
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

Vector sigmoid(const Vector& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

}  // namespace

EmbeddingTables make_embedding_tables(int vocab, int max_len, int num_types, int width) {
  return {Matrix::Zero(vocab, width), Matrix::Zero(max_len, width), Matrix::Zero(2, width),
          Matrix::Zero(num_types, width)};
}

Matrix input_embed(const EmbeddingTables& tables, const SequenceInput& in) {
  const std::size_t n = in.tokens.size();
  if (in.positions.size() != n || in.segments.size() != n || in.types.size() != n)
    throw Error("input_embed: index lists differ in length", "embedding");
  Matrix out(static_cast<Eigen::Index>(n), tables.width());
  for (std::size_t t = 0; t < n; ++t) {
    check_index(in.tokens[t], tables.token.rows(), "token", t);
    check_index(in.positions[t], tables.position.rows(), "position", t);
    check_index(in.segments[t], tables.segment.rows(), "segment", t);
    check_index(in.types[t], tables.type.rows(), "type", t);
    const auto r = static_cast<Eigen::Index>(t);
    out.row(r) = tables.token.row(in.tokens[t]) + tables.position.row(in.positions[t]) +
                 tables.segment.row(in.segments[t]) + tables.type.row(in.types[t]);
  }
  return out;
}

void input_embed_backward(const SequenceInput& in, const Matrix& d_out, EmbeddingTables& grads) {
  for (std::size_t t = 0; t < in.tokens.size(); ++t) {
    const auto r = static_cast<Eigen::Index>(t);
    grads.token.row(in.tokens[t]) += d_out.row(r);
    grads.position.row(in.positions[t]) += d_out.row(r);
    grads.segment.row(in.segments[t]) += d_out.row(r);
    grads.type.row(in.types[t]) += d_out.row(r);
  }
}

void TransformerConfig::validate() const {
  if (layers < 0 || heads <= 0 || hidden <= 0 || ff <= 0 || max_len <= 0)
    throw Error("transformer config: sizes must be positive", "config");
  if (hidden % heads != 0) throw Error("transformer config: hidden must be divisible by heads", "config");
  if (dropout < 0.0 || dropout >= 1.0) throw Error("transformer config: dropout must lie in [0, 1)", "config");
}

TransformerParams make_transformer_params(const TransformerConfig& cfg) {
  cfg.validate();
  const int d = cfg.hidden;
  TransformerParams p;
  p.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& l : p.layers) {
    l.ln1_gain = row(d, 1.0);
    l.ln1_bias = row(d);
    l.wq = Matrix::Zero(d, d);
    l.bq = row(d);
    l.wk = Matrix::Zero(d, d);
    l.bk = row(d);
    l.wv = Matrix::Zero(d, d);
    l.bv = row(d);
    l.wo = Matrix::Zero(d, d);
    l.bo = row(d);
    l.ln2_gain = row(d, 1.0);
    l.ln2_bias = row(d);
    l.w1 = Matrix::Zero(d, cfg.ff);
    l.b1 = row(cfg.ff);
    l.w2 = Matrix::Zero(cfg.ff, d);
    l.b2 = row(d);
  }
  p.final_ln_gain = row(d, 1.0);
  p.final_ln_bias = row(d);
  p.pool_w = Matrix::Zero(d, d);
  p.pool_b = row(d);
  return p;
}

TransformerOutput transformer_encode(const TransformerParams& params, const TransformerConfig& cfg, const Matrix& x,
                                     std::span<const char> mask, DropoutContext dropout, TransformerCache* cache) {
  const Eigen::Index len = x.rows();
  const int d = cfg.hidden;
  if (len > cfg.max_len)
    throw Error("sequence length " + std::to_string(len) + " exceeds max_len " + std::to_string(cfg.max_len),
                "length");
  if (len == 0) throw Error("transformer_encode: empty sequence", "length");
  if (x.cols() != d) throw Error("transformer_encode: input width does not match hidden size", "shape");
  if (static_cast<Eigen::Index>(mask.size()) != len) throw Error("transformer_encode: mask length mismatch", "shape");

  TransformerCache local;
  TransformerCache& c = cache ? *cache : local;
  c.mask.assign(mask.begin(), mask.end());
  c.layers.assign(params.layers.size(), {});

  Matrix h = x;
  if (dropout.active()) {
    c.embed_drop = dropout_mask(len, d, dropout);
    h = h.cwiseProduct(c.embed_drop);
  } else {
    c.embed_drop.resize(0, 0);
  }

  const int dk = d / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const auto& l = params.layers[li];
    auto& lc = c.layers[li];

    lc.a_in = layer_norm(h, l.ln1_gain, l.ln1_bias, lc.ln1);
    lc.q = lc.a_in * l.wq;
    lc.q.rowwise() += l.bq.row(0);
    lc.k = lc.a_in * l.wk;
    lc.k.rowwise() += l.bk.row(0);
    lc.v = lc.a_in * l.wv;
    lc.v.rowwise() += l.bv.row(0);

    lc.ctx.setZero(len, d);
    lc.probs.resize(static_cast<std::size_t>(cfg.heads));
    for (int hd = 0; hd < cfg.heads; ++hd) {
      Matrix s = lc.q.middleCols(hd * dk, dk) * lc.k.middleCols(hd * dk, dk).transpose() * scale;
      Matrix& p = lc.probs[static_cast<std::size_t>(hd)];
      p.setZero(len, len);
      for (Eigen::Index t = 0; t < len; ++t) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < len; ++j)
          if (mask[static_cast<std::size_t>(j)]) mx = std::max(mx, s(t, j));
        if (!std::isfinite(mx)) continue;
        double z = 0.0;
        for (Eigen::Index j = 0; j < len; ++j) {
          if (!mask[static_cast<std::size_t>(j)]) continue;
          p(t, j) = std::exp(s(t, j) - mx);
          z += p(t, j);
        }
        p.row(t) /= z;
      }
      lc.ctx.middleCols(hd * dk, dk) = p * lc.v.middleCols(hd * dk, dk);
    }
    Matrix attn = lc.ctx * l.wo;
    attn.rowwise() += l.bo.row(0);
    if (dropout.active()) {
      lc.attn_drop = dropout_mask(len, d, dropout);
      attn = attn.cwiseProduct(lc.attn_drop);
    } else {
      lc.attn_drop.resize(0, 0);
    }
    h += attn;

    lc.f_in = layer_norm(h, l.ln2_gain, l.ln2_bias, lc.ln2);
    lc.h1 = lc.f_in * l.w1;
    lc.h1.rowwise() += l.b1.row(0);
    lc.g = lc.h1.unaryExpr([](double v) { return gelu(v); });
    Matrix ffn = lc.g * l.w2;
    ffn.rowwise() += l.b2.row(0);
    if (dropout.active()) {
      lc.ffn_drop = dropout_mask(len, d, dropout);
      ffn = ffn.cwiseProduct(lc.ffn_drop);
    } else {
      lc.ffn_drop.resize(0, 0);
    }
    h += ffn;
  }

  c.hidden = layer_norm(h, params.final_ln_gain, params.final_ln_bias, c.final_ln);
  Eigen::RowVectorXd pre = c.hidden.row(0) * params.pool_w + params.pool_b.row(0);
  c.pooled = pre.array().tanh().matrix().transpose();
  return {c.hidden, c.pooled};
}

Matrix transformer_backward(const TransformerParams& params, const TransformerConfig& cfg,
                            const TransformerCache& cache, const Matrix& d_hidden, const Vector& d_pooled,
                            TransformerParams& grads) {
  const Eigen::Index len = cache.hidden.rows();
  const int d = cfg.hidden;
  const int dk = d / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  const Vector d_pre = d_pooled.cwiseProduct((1.0 - cache.pooled.array().square()).matrix());
  grads.pool_w += cache.hidden.row(0).transpose() * d_pre.transpose();
  grads.pool_b.row(0) += d_pre.transpose();
  Matrix d_top = d_hidden;
  d_top.row(0) += (params.pool_w * d_pre).transpose();

  Matrix dh = layer_norm_backward(d_top, cache.final_ln, params.final_ln_gain, grads.final_ln_gain,
                                  grads.final_ln_bias);

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& l = params.layers[li];
    const auto& lc = cache.layers[li];
    auto& g = grads.layers[li];

    Matrix d_ffn = lc.ffn_drop.size() ? Matrix(dh.cwiseProduct(lc.ffn_drop)) : dh;
    g.w2 += lc.g.transpose() * d_ffn;
    g.b2.row(0) += d_ffn.colwise().sum();
    Matrix d_h1 = d_ffn * l.w2.transpose();
    d_h1.array() *= lc.h1.unaryExpr([](double v) { return gelu_grad(v); }).array();
    g.w1 += lc.f_in.transpose() * d_h1;
    g.b1.row(0) += d_h1.colwise().sum();
    const Matrix d_fin = d_h1 * l.w1.transpose();
    dh += layer_norm_backward(d_fin, lc.ln2, l.ln2_gain, g.ln2_gain, g.ln2_bias);

    Matrix d_attn = lc.attn_drop.size() ? Matrix(dh.cwiseProduct(lc.attn_drop)) : dh;
    g.wo += lc.ctx.transpose() * d_attn;
    g.bo.row(0) += d_attn.colwise().sum();
    const Matrix d_ctx = d_attn * l.wo.transpose();

    Matrix dq(len, d), dkm(len, d), dv(len, d);
    for (int hd = 0; hd < cfg.heads; ++hd) {
      const Matrix& p = lc.probs[static_cast<std::size_t>(hd)];
      const auto dctx_h = d_ctx.middleCols(hd * dk, dk);
      dv.middleCols(hd * dk, dk) = p.transpose() * dctx_h;
      const Matrix dp = dctx_h * lc.v.middleCols(hd * dk, dk).transpose();
      const Vector rowdot = (dp.array() * p.array()).rowwise().sum();
      const Matrix ds = (p.array() * (dp.colwise() - rowdot).array()).matrix() * scale;
      dq.middleCols(hd * dk, dk) = ds * lc.k.middleCols(hd * dk, dk);
      dkm.middleCols(hd * dk, dk) = ds.transpose() * lc.q.middleCols(hd * dk, dk);
    }
    g.wq += lc.a_in.transpose() * dq;
    g.bq.row(0) += dq.colwise().sum();
    g.wk += lc.a_in.transpose() * dkm;
    g.bk.row(0) += dkm.colwise().sum();
    g.wv += lc.a_in.transpose() * dv;
    g.bv.row(0) += dv.colwise().sum();
    const Matrix d_ain = dq * l.wq.transpose() + dkm * l.wk.transpose() + dv * l.wv.transpose();
    dh += layer_norm_backward(d_ain, lc.ln1, l.ln1_gain, g.ln1_gain, g.ln1_bias);
  }

  if (cache.embed_drop.size()) dh = dh.cwiseProduct(cache.embed_drop);
  return dh;
}

void TreeLstmConfig::validate() const {
  if (input_size <= 0 || hidden_size <= 0) throw Error("tree-LSTM sizes must be positive", "config");
}

TreeLstmParams make_tree_lstm_params(const TreeLstmConfig& cfg) {
  cfg.validate();
  const int h = cfg.hidden_size;
  const int in = cfg.input_size;
  TreeLstmParams p;
  for (Matrix* w : {&p.w_i, &p.w_f, &p.w_o, &p.w_u}) *w = Matrix::Zero(h, in);
  for (Matrix* u : {&p.u_i, &p.u_f, &p.u_o, &p.u_u}) *u = Matrix::Zero(h, h);
  for (Matrix* b : {&p.b_i, &p.b_f, &p.b_o, &p.b_u}) *b = Matrix::Zero(h, 1);
  return p;
}

Vector tree_lstm_encode(const DepTree& tree, const Matrix& node_inputs, const TreeLstmParams& params,
                        TreeLstmCache* cache) {
  const auto n = static_cast<Eigen::Index>(tree.size());
  if (node_inputs.cols() != n)
    throw Error("tree_lstm_encode: " + std::to_string(node_inputs.cols()) + " node embeddings for " +
                    std::to_string(n) + " nodes",
                "embedding");
  if (node_inputs.rows() != params.w_i.cols()) throw Error("tree_lstm_encode: embedding width mismatch", "shape");

  TreeLstmCache local;
  TreeLstmCache& c = cache ? *cache : local;
  c.order = dfs_order(tree);
  c.nodes.assign(tree.size(), {});
  const Eigen::Index hs = params.w_i.rows();

  for (int id : c.order) {
    auto& st = c.nodes[static_cast<std::size_t>(id)];
    const auto x = node_inputs.col(id);
    const auto& children = tree.node(id).children;
    st.h_sum = Vector::Zero(hs);
    for (int k : children) st.h_sum += c.nodes[static_cast<std::size_t>(k)].h;

    st.i = sigmoid(params.w_i * x + params.u_i * st.h_sum + params.b_i.col(0));
    st.o = sigmoid(params.w_o * x + params.u_o * st.h_sum + params.b_o.col(0));
    st.u = (params.w_u * x + params.u_u * st.h_sum + params.b_u.col(0)).array().tanh().matrix();
    st.c = st.i.cwiseProduct(st.u);
    const Vector wf_x = params.w_f * x + params.b_f.col(0);
    st.f.clear();
    st.f.reserve(children.size());
    for (int k : children) {
      const auto& child = c.nodes[static_cast<std::size_t>(k)];
      st.f.push_back(sigmoid(wf_x + params.u_f * child.h));
      st.c += st.f.back().cwiseProduct(child.c);
    }
    st.h = st.o.cwiseProduct(st.c.array().tanh().matrix());
  }
  return c.nodes[static_cast<std::size_t>(tree.root)].h;
}

Matrix tree_lstm_backward(const DepTree& tree, const Matrix& node_inputs, const TreeLstmParams& params,
                          const TreeLstmCache& cache, const Vector& d_root, TreeLstmParams& grads) {
  const Eigen::Index hs = params.w_i.rows();
  std::vector<Vector> dh(tree.size(), Vector::Zero(hs));
  std::vector<Vector> dc(tree.size(), Vector::Zero(hs));
  dh[static_cast<std::size_t>(tree.root)] = d_root;
  Matrix d_inputs = Matrix::Zero(node_inputs.rows(), node_inputs.cols());

  for (auto it = cache.order.rbegin(); it != cache.order.rend(); ++it) {
    const int id = *it;
    const auto idx = static_cast<std::size_t>(id);
    const auto& st = cache.nodes[idx];
    const auto x = node_inputs.col(id);
    const auto& children = tree.node(id).children;

    const Vector tc = st.c.array().tanh().matrix();
    const Vector d_o = dh[idx].cwiseProduct(tc);
    const Vector d_c = dc[idx] + dh[idx].cwiseProduct(st.o).cwiseProduct((1.0 - tc.array().square()).matrix());
    const Vector dz_i = d_c.cwiseProduct(st.u).array().cwiseProduct(st.i.array() * (1.0 - st.i.array())).matrix();
    const Vector dz_o = d_o.array().cwiseProduct(st.o.array() * (1.0 - st.o.array())).matrix();
    const Vector dz_u = d_c.cwiseProduct(st.i).array().cwiseProduct(1.0 - st.u.array().square()).matrix();

    grads.w_i += dz_i * x.transpose();
    grads.u_i += dz_i * st.h_sum.transpose();
    grads.b_i += dz_i;
    grads.w_o += dz_o * x.transpose();
    grads.u_o += dz_o * st.h_sum.transpose();
    grads.b_o += dz_o;
    grads.w_u += dz_u * x.transpose();
    grads.u_u += dz_u * st.h_sum.transpose();
    grads.b_u += dz_u;

    Vector dx = params.w_i.transpose() * dz_i + params.w_o.transpose() * dz_o + params.w_u.transpose() * dz_u;
    const Vector dh_sum =
        params.u_i.transpose() * dz_i + params.u_o.transpose() * dz_o + params.u_u.transpose() * dz_u;

    for (std::size_t j = 0; j < children.size(); ++j) {
      const auto k = static_cast<std::size_t>(children[j]);
      const auto& child = cache.nodes[k];
      const Vector& f = st.f[j];
      const Vector dz_f = d_c.cwiseProduct(child.c).array().cwiseProduct(f.array() * (1.0 - f.array())).matrix();
      grads.w_f += dz_f * x.transpose();
      grads.u_f += dz_f * child.h.transpose();
      grads.b_f += dz_f;
      dx += params.w_f.transpose() * dz_f;
      dh[k] += dh_sum + params.u_f.transpose() * dz_f;
      dc[k] += d_c.cwiseProduct(f);
    }
    d_inputs.col(id) = dx;
  }
  return d_inputs;
}

}  // namespace kvconsist
