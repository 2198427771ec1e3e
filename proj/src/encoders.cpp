#include "csmgan/encoders.hpp"

#include <cmath>

namespace csmgan {

template <typename T>
LinearParams<T> LinearParams<T>::make(ParamStore<T>& store, const std::string& prefix, std::size_t in,
                                      std::size_t out) {
  LinearParams p;
  p.w = &store.weight(prefix + ".w", Shape{in, out}, in, out);
  p.b = &store.zeros(prefix + ".b", Shape{1, out});
  return p;
}

template <typename T>
Var<T> linear(Tape<T>& tape, const Var<T>& x, const LinearParams<T>& p) {
  return add(matmul(x, tape.param(*p.w)), tape.param(*p.b));
}

template <typename T>
BiGruParams<T> BiGruParams<T>::make(ParamStore<T>& store, const std::string& prefix, std::size_t in,
                                    std::size_t hidden) {
  BiGruParams p;
  p.input_width = in;
  p.hidden = hidden;
  auto direction = [&](const std::string& tag) {
    GruDirectionParams<T> d;
    d.wx = &store.weight(prefix + "." + tag + ".wx", Shape{in, 3 * hidden}, in, hidden);
    d.bx = &store.zeros(prefix + "." + tag + ".bx", Shape{1, 3 * hidden});
    d.wh = &store.weight(prefix + "." + tag + ".wh", Shape{hidden, 3 * hidden}, hidden, hidden);
    d.bh = &store.zeros(prefix + "." + tag + ".bh", Shape{1, 3 * hidden});
    return d;
  };
  p.forward = direction("fwd");
  p.backward = direction("bwd");
  return p;
}

template <typename T>
Var<T> bigru(Tape<T>& tape, const Var<T>& x, const BiGruParams<T>& p) {
  if (x.cols() != p.input_width) {
    throw DimensionError("bigru: input width " + std::to_string(x.cols()) + " but GRU expects " +
                         std::to_string(p.input_width));
  }
  auto run = [&](const GruDirectionParams<T>& d, bool reverse) {
    Var<T> proj = add(matmul(x, tape.param(*d.wx)), tape.param(*d.bx));
    return gru_sequence(proj, tape.param(*d.wh), tape.param(*d.bh), reverse);
  };
  return concat_cols<T>({run(p.forward, false), run(p.backward, true)});
}

template <typename T>
SelfAttentionParams<T> SelfAttentionParams<T>::make(ParamStore<T>& store, const std::string& prefix, std::size_t d) {
  SelfAttentionParams p;
  p.wq = &store.weight(prefix + ".wq", Shape{d, d}, d, d);
  p.wk = &store.weight(prefix + ".wk", Shape{d, d}, d, d);
  p.wv = &store.weight(prefix + ".wv", Shape{d, d}, d, d);
  return p;
}

template <typename T>
AttentionOutput<T> self_attention(Tape<T>& tape, const Var<T>& x, const SelfAttentionParams<T>& p) {
  const std::size_t d = p.wq->value.rows();
  if (x.cols() != d) {
    throw DimensionError("self_attention: input width " + std::to_string(x.cols()) + " but projections are " +
                         shape_string(p.wq->value.shape()));
  }
  Var<T> q = matmul(x, tape.param(*p.wq));
  Var<T> k = matmul(x, tape.param(*p.wk));
  Var<T> v = matmul(x, tape.param(*p.wv));
  Var<T> logits = scale(matmul(q, transpose(k)), T(1) / std::sqrt(static_cast<T>(d)));
  Var<T> weights = softmax_rows(logits);
  return {add(x, matmul(weights, v)), weights};
}

template <typename T>
EncoderParams<T> EncoderParams<T>::make(ParamStore<T>& store, const Config& cfg) {
  EncoderParams p;
  p.video.input = LinearParams<T>::make(store, "video.in", cfg.d_in, cfg.d);
  p.video.attention = SelfAttentionParams<T>::make(store, "video.attn", cfg.d);
  p.video.gru = BiGruParams<T>::make(store, "video.gru", cfg.d, cfg.d / 2);

  p.query.hierarchical = !cfg.ablation.disable_hierarchy;
  if (p.query.hierarchical) {
    for (std::size_t k = 1; k <= 3; ++k) {
      const std::string tag = "query.phrase.k" + std::to_string(k);
      p.query.phrase.kernels[k - 1] = &store.weight(tag + ".w", Shape{k, cfg.d_g, cfg.d_g}, k * cfg.d_g, cfg.d_g);
      p.query.phrase.biases[k - 1] = &store.zeros(tag + ".b", Shape{1, cfg.d_g});
    }
    p.query.sentence = BiGruParams<T>::make(store, "query.sentence", cfg.d_g, cfg.d_g / 2);
    p.query.fusion = BiGruParams<T>::make(store, "query.fusion", 3 * cfg.d_g, cfg.d / 2);
  } else {
    p.query.fusion = BiGruParams<T>::make(store, "query.fusion", cfg.d_g, cfg.d / 2);
  }
  return p;
}

template <typename T>
Var<T> encode_video(Tape<T>& tape, const Var<T>& frames, const VideoEncoderParams<T>& p) {
  Var<T> x = linear(tape, frames, p.input);
  Var<T> attended = self_attention(tape, x, p.attention).out;
  return bigru(tape, attended, p.gru);
}

template <typename T>
PhraseBranches<T> phrase_features(Tape<T>& tape, const Var<T>& words, const PhraseParams<T>& p) {
  PhraseBranches<T> out;
  for (std::size_t k = 1; k <= 3; ++k) {
    Var<T> conv = conv1d(words, tape.param(*p.kernels[k - 1]), 0, k - 1);
    out.branch[k - 1] = tanh(add(conv, tape.param(*p.biases[k - 1])));
  }
  out.pooled = maximum<T>({out.branch[0], out.branch[1], out.branch[2]});
  return out;
}

template <typename T>
Var<T> encode_query(Tape<T>& tape, const Var<T>& words, const QueryEncoderParams<T>& p, bool ablate_hierarchy) {
  if (ablate_hierarchy) return bigru(tape, words, p.fusion);
  if (!p.hierarchical) throw ContractError("encode_query: encoder was built without the hierarchical branch");
  Var<T> phrase = phrase_features(tape, words, p.phrase).pooled;
  Var<T> sentence = bigru(tape, phrase, p.sentence);
  return bigru(tape, concat_cols<T>({words, phrase, sentence}), p.fusion);
}

#define CSMGAN_INSTANTIATE_ENCODERS(T)                                                                  \
  template struct LinearParams<T>;                                                                      \
  template struct BiGruParams<T>;                                                                       \
  template struct SelfAttentionParams<T>;                                                               \
  template struct EncoderParams<T>;                                                                     \
  template Var<T> linear(Tape<T>&, const Var<T>&, const LinearParams<T>&);                              \
  template Var<T> bigru(Tape<T>&, const Var<T>&, const BiGruParams<T>&);                                \
  template AttentionOutput<T> self_attention(Tape<T>&, const Var<T>&, const SelfAttentionParams<T>&);   \
  template Var<T> encode_video(Tape<T>&, const Var<T>&, const VideoEncoderParams<T>&);                  \
  template PhraseBranches<T> phrase_features(Tape<T>&, const Var<T>&, const PhraseParams<T>&);          \
  template Var<T> encode_query(Tape<T>&, const Var<T>&, const QueryEncoderParams<T>&, bool);

CSMGAN_INSTANTIATE_ENCODERS(float)
CSMGAN_INSTANTIATE_ENCODERS(double)

}  // namespace csmgan
