#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "todlab/encode.hpp"
#include "todlab/graph.hpp"
#include "todlab/mat.hpp"
#include "todlab/rng.hpp"
#include "todlab/vocab.hpp"

namespace todlab {

enum class Pooling { cls, mean };

inline Pooling parse_pooling(const std::string& s) {
  if (s == "cls") return Pooling::cls;
  if (s == "mean") return Pooling::mean;
  throw std::runtime_error("unknown pooling: " + s + " (expected cls or mean)");
}

inline const char* pooling_name(Pooling p) { return p == Pooling::cls ? "cls" : "mean"; }

// Post-layer-norm transformer encoder with learned absolute positions and no
// segment embeddings. The MLM head is a plain linear projection, untied from
// the token embedding.
struct EncoderConfig {
  int layers = 4;
  int hidden_dim = 128;
  int heads = 4;
  int ffn_dim = 512;
  int max_len = 512;
  double dropout = 0.2;
  double ln_eps = 1e-12;
  int vocab_size = 0;
  Pooling pooling = Pooling::cls;

  void validate() const {
    check(layers >= 1, "encoder: layers must be >= 1");
    check(hidden_dim >= 1, "encoder: hidden_dim must be >= 1");
    check(heads >= 1, "encoder: heads must be >= 1");
    check(hidden_dim % heads == 0, "encoder: hidden_dim must be divisible by heads");
    check(ffn_dim >= 1, "encoder: ffn_dim must be >= 1");
    check(max_len >= 4, "encoder: max_len must be >= 4");
    check(dropout >= 0.0 && dropout < 1.0, "encoder: dropout must be in [0, 1)");
    check(ln_eps > 0.0, "encoder: ln_eps must be positive");
    check(vocab_size > Vocab::kNumSpecial, "encoder: vocab_size not set");
  }
};

// Per-layer tensor slots, in their serialization order.
namespace slot {
enum : int {
  attn_wq = 0, attn_bq, attn_wk, attn_bk, attn_wv, attn_bv, attn_wo, attn_bo,
  ln1_gain, ln1_bias, ffn_w1, ffn_b1, ffn_w2, ffn_b2, ln2_gain, ln2_bias,
  count
};
}  // namespace slot

struct TensorShape {
  std::string name;
  int rows = 0, cols = 0;
};

// Flat tensor layout: embeddings, then the per-layer blocks, then the MLM
// head. This order is the on-disk order, so it must not change.
inline std::vector<TensorShape> encoder_layout(const EncoderConfig& c) {
  std::vector<TensorShape> out;
  const int d = c.hidden_dim;
  out.push_back({"embeddings.token", c.vocab_size, d});
  out.push_back({"embeddings.position", c.max_len, d});
  out.push_back({"embeddings.ln_gain", 1, d});
  out.push_back({"embeddings.ln_bias", 1, d});
  for (int l = 0; l < c.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    out.push_back({p + "attn.wq", d, d});
    out.push_back({p + "attn.bq", 1, d});
    out.push_back({p + "attn.wk", d, d});
    out.push_back({p + "attn.bk", 1, d});
    out.push_back({p + "attn.wv", d, d});
    out.push_back({p + "attn.bv", 1, d});
    out.push_back({p + "attn.wo", d, d});
    out.push_back({p + "attn.bo", 1, d});
    out.push_back({p + "ln1.gain", 1, d});
    out.push_back({p + "ln1.bias", 1, d});
    out.push_back({p + "ffn.w1", c.ffn_dim, d});
    out.push_back({p + "ffn.b1", 1, c.ffn_dim});
    out.push_back({p + "ffn.w2", d, c.ffn_dim});
    out.push_back({p + "ffn.b2", 1, d});
    out.push_back({p + "ln2.gain", 1, d});
    out.push_back({p + "ln2.bias", 1, d});
  }
  out.push_back({"mlm.w", c.vocab_size, d});
  out.push_back({"mlm.b", 1, c.vocab_size});
  return out;
}

template <class S>
struct EncoderParams {
  EncoderConfig cfg;
  std::vector<std::string> names;
  std::vector<Mat<S>> w;
  std::vector<Mat<S>> g;

  static constexpr int kTokEmb = 0;
  static constexpr int kPosEmb = 1;
  static constexpr int kEmbLnGain = 2;
  static constexpr int kEmbLnBias = 3;
  int layer_base(int l) const { return 4 + slot::count * l; }
  int mlm_w() const { return 4 + slot::count * cfg.layers; }
  int mlm_b() const { return mlm_w() + 1; }

  // Gaussian(0, 0.02) weights and embeddings, zero biases, unit norm gains.
  static EncoderParams init(const EncoderConfig& cfg, Rng rng) {
    cfg.validate();
    EncoderParams p;
    p.cfg = cfg;
    for (const auto& t : encoder_layout(cfg)) {
      p.names.push_back(t.name);
      // Norm gains start at one, anything named b* or *bias at zero, and
      // weight matrices and embeddings at gaussian(0, 0.02).
      const std::string tail = t.name.substr(t.name.rfind('.') + 1);
      if (tail.find("gain") != std::string::npos) {
        p.w.push_back(Mat<S>::ones(t.rows, t.cols));
      } else if (tail[0] == 'b' || tail.find("bias") != std::string::npos) {
        p.w.push_back(Mat<S>(t.rows, t.cols));
      } else {
        p.w.push_back(Mat<S>::gaussian(t.rows, t.cols, 0.02, rng));
      }
      p.g.emplace_back(t.rows, t.cols);
    }
    return p;
  }

  std::size_t tensor_count() const { return w.size(); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& m : w) n += m.size();
    return n;
  }

  void zero_grad() {
    for (auto& m : g) m.set_zero();
  }

  bool grads_all_zero() const {
    for (const auto& m : g)
      for (std::size_t i = 0; i < m.size(); ++i)
        if (m.data()[i] != S(0)) return false;
    return true;
  }

  // Copies parameter values (not gradients) from another instance.
  void assign_from(const EncoderParams& o) {
    check(w.size() == o.w.size(), "assign_from: layout mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      check(w[i].same_shape(o.w[i]), "assign_from: shape mismatch at " + names[i]);
      w[i] = o.w[i];
    }
  }

  bool all_finite() const {
    for (const auto& m : w)
      if (!m.all_finite()) return false;
    return true;
  }

  // FNV-1a over the little-endian f32 serialization, tensor by tensor in
  // layout order; the same bytes a checkpoint would contain.
  std::uint64_t content_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& m : w)
      for (std::size_t i = 0; i < m.size(); ++i) {
        const float f = float(m.data()[i]);
        h = fnv1a64(&f, sizeof(f), h);
      }
    return h;
  }
};

template <class S>
struct ForwardOptions {
  bool train = false;        // enables dropout
  bool trainable = true;     // register gradient sinks for the parameters
  bool want_logits = false;  // compute the MLM head over the final states
  Rng* dropout_rng = nullptr;
};

template <class S>
struct ForwardNodes {
  std::vector<typename Graph<S>::Ref> pooled;  // one per layer, 1 x d
  typename Graph<S>::Ref final_states = nullptr;
  typename Graph<S>::Ref logits = nullptr;
  int active_len = 0;
};

// Builds the encoder forward pass on a tape. Only the active prefix of the
// sequence is materialised: padding is a suffix by construction, so skipping
// it is exactly equivalent to masked attention.
template <class S>
ForwardNodes<S> encoder_forward(Graph<S>& gr, EncoderParams<S>& P,
                                const TokenSequence& seq,
                                const ForwardOptions<S>& opt = {}) {
  const EncoderConfig& cfg = P.cfg;
  const int n = seq.active_len;
  check(n >= 1 && n <= cfg.max_len, "encoder_forward: bad active length");
  check(int(seq.ids.size()) >= n, "encoder_forward: ids shorter than active_len");
  for (int i = 0; i < n; ++i)
    check(seq.attention[std::size_t(i)] == 1, "encoder_forward: padding before active_len");

  const double p = opt.train ? cfg.dropout : 0.0;
  check(p == 0.0 || opt.dropout_rng != nullptr,
        "encoder_forward: dropout requires an rng");

  auto param = [&](int idx) {
    return gr.param(P.w[std::size_t(idx)], opt.trainable ? &P.g[std::size_t(idx)] : nullptr);
  };
  auto drop = [&](typename Graph<S>::Ref x) {
    return p > 0.0 ? gr.dropout(x, p, *opt.dropout_rng) : x;
  };

  std::vector<int> ids(seq.ids.begin(), seq.ids.begin() + n);
  std::vector<int> pos(ids.size());
  std::iota(pos.begin(), pos.end(), 0);

  auto x = gr.add(gr.embed(param(P.kTokEmb), std::move(ids)),
                  gr.embed(param(P.kPosEmb), std::move(pos)));
  x = gr.layer_norm(x, param(P.kEmbLnGain), param(P.kEmbLnBias), cfg.ln_eps);
  x = drop(x);

  ForwardNodes<S> out;
  out.active_len = n;
  const int dh = cfg.hidden_dim / cfg.heads;
  const double scale = 1.0 / std::sqrt(double(dh));

  for (int l = 0; l < cfg.layers; ++l) {
    const int b = P.layer_base(l);
    auto q = gr.linear(x, param(b + slot::attn_wq), param(b + slot::attn_bq));
    auto k = gr.linear(x, param(b + slot::attn_wk), param(b + slot::attn_bk));
    auto v = gr.linear(x, param(b + slot::attn_wv), param(b + slot::attn_bv));
    std::vector<typename Graph<S>::Ref> heads;
    heads.reserve(std::size_t(cfg.heads));
    for (int h = 0; h < cfg.heads; ++h) {
      auto qh = gr.col_block(q, h * dh, dh);
      auto kh = gr.col_block(k, h * dh, dh);
      auto vh = gr.col_block(v, h * dh, dh);
      auto attn = gr.softmax_rows(gr.scale(gr.matmul_nt(qh, kh), scale));
      heads.push_back(gr.matmul(drop(attn), vh));
    }
    auto merged = gr.linear(gr.concat_cols(heads), param(b + slot::attn_wo),
                            param(b + slot::attn_bo));
    x = gr.layer_norm(gr.add(x, drop(merged)), param(b + slot::ln1_gain),
                      param(b + slot::ln1_bias), cfg.ln_eps);
    auto inner = gr.gelu(gr.linear(x, param(b + slot::ffn_w1), param(b + slot::ffn_b1)));
    auto ffn = gr.linear(inner, param(b + slot::ffn_w2), param(b + slot::ffn_b2));
    x = gr.layer_norm(gr.add(x, drop(ffn)), param(b + slot::ln2_gain),
                      param(b + slot::ln2_bias), cfg.ln_eps);
    check(gr.v(x).all_finite(),
          "encoder_forward: non-finite activations in layer " + std::to_string(l));
    out.pooled.push_back(cfg.pooling == Pooling::cls ? gr.row(x, 0) : gr.mean_rows(x));
  }
  out.final_states = x;
  if (opt.want_logits)
    out.logits = gr.linear(x, param(P.mlm_w()), param(P.mlm_b()));
  return out;
}

// Plain forward pass without a tape; used by evaluation, probing and the
// teacher side of training.
template <class S>
struct Encoded {
  std::vector<Mat<S>> pooled;  // one per layer, 1 x d
  Mat<S> final_states;
  Mat<S> logits;
  int active_len = 0;
};

template <class S>
Encoded<S> encode_eval(EncoderParams<S>& P, const TokenSequence& seq,
                       bool want_logits = false) {
  Graph<S> gr(false);
  ForwardOptions<S> opt;
  opt.train = false;
  opt.trainable = false;
  opt.want_logits = want_logits;
  auto nodes = encoder_forward(gr, P, seq, opt);
  Encoded<S> e;
  e.active_len = nodes.active_len;
  for (auto r : nodes.pooled) e.pooled.push_back(gr.v(r));
  e.final_states = gr.v(nodes.final_states);
  if (want_logits) e.logits = gr.v(nodes.logits);
  return e;
}

// Mask-aware pooling over precomputed hidden states. cls takes the first
// active row, mean averages all active rows.
template <class S>
Mat<S> pool(const Mat<S>& states, const std::vector<std::int8_t>& mask, Pooling mode) {
  check(int(mask.size()) >= states.rows(), "pool: mask shorter than states");
  int active = 0;
  for (int i = 0; i < states.rows(); ++i)
    if (mask[std::size_t(i)]) ++active;
  check(active > 0, "pool: no active positions");
  Mat<S> out(1, states.cols());
  if (mode == Pooling::cls) {
    check(mask[0] == 1, "pool: first position is not active");
    out.map().row(0) = states.map().row(0);
    return out;
  }
  for (int i = 0; i < states.rows(); ++i)
    if (mask[std::size_t(i)]) out.map().row(0) += states.map().row(i);
  out.map() /= S(active);
  return out;
}

template <class S>
double cosine_similarity(const Mat<S>& a, const Mat<S>& b) {
  check(a.same_shape(b), "cosine_similarity: shape mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a.data()[i]) * double(b.data()[i]);
    na += double(a.data()[i]) * double(a.data()[i]);
    nb += double(b.data()[i]) * double(b.data()[i]);
  }
  check(na > 1e-30 && nb > 1e-30, "cosine_similarity: zero-norm input");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace todlab
