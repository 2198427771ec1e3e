#pragma once

// Initial node states: a self-attention + Bi-GRU video encoder and a
// word / phrase / sentence hierarchical query encoder.

#include <array>
#include <string>

#include "csmgan/autodiff.hpp"
#include "csmgan/config.hpp"
#include "csmgan/params.hpp"

namespace csmgan {

template <typename T>
struct LinearParams {
  Parameter<T>* w = nullptr;  // [in × out]
  Parameter<T>* b = nullptr;  // [1 × out]

  static LinearParams make(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out);
};

template <typename T>
Var<T> linear(Tape<T>& tape, const Var<T>& x, const LinearParams<T>& p);

template <typename T>
struct GruDirectionParams {
  Parameter<T>* wx = nullptr;  // [in × 3h]
  Parameter<T>* bx = nullptr;  // [1 × 3h]
  Parameter<T>* wh = nullptr;  // [h × 3h]
  Parameter<T>* bh = nullptr;  // [1 × 3h]
};

template <typename T>
struct BiGruParams {
  GruDirectionParams<T> forward;
  GruDirectionParams<T> backward;
  std::size_t input_width = 0;
  std::size_t hidden = 0;  // per direction

  static BiGruParams make(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t hidden);
};

/// [T×a] -> [T×2h]; row t is [forward state after x_t ‖ backward state after x_t].
template <typename T>
Var<T> bigru(Tape<T>& tape, const Var<T>& x, const BiGruParams<T>& p);

template <typename T>
struct SelfAttentionParams {
  Parameter<T>* wq = nullptr;
  Parameter<T>* wk = nullptr;
  Parameter<T>* wv = nullptr;

  static SelfAttentionParams make(ParamStore<T>& store, const std::string& prefix, std::size_t d);
};

template <typename T>
struct AttentionOutput {
  Var<T> out;      // [T×d]
  Var<T> weights;  // [T×T], row-stochastic
};

/// Single-head scaled dot-product self-attention with a residual connection:
/// x + softmax_rows((xW_Q)(xW_K)ᵀ/√d)·(xW_V).
template <typename T>
AttentionOutput<T> self_attention(Tape<T>& tape, const Var<T>& x, const SelfAttentionParams<T>& p);

template <typename T>
struct VideoEncoderParams {
  LinearParams<T> input;
  SelfAttentionParams<T> attention;
  BiGruParams<T> gru;
};

template <typename T>
struct PhraseParams {
  std::array<Parameter<T>*, 3> kernels{};  // window k ∈ {1,2,3}: [k × d_g × d_g]
  std::array<Parameter<T>*, 3> biases{};   // [1 × d_g]
};

template <typename T>
struct PhraseBranches {
  std::array<Var<T>, 3> branch;  // tanh(conv_k) per window size
  Var<T> pooled;                 // element-wise max over the branches
};

template <typename T>
struct QueryEncoderParams {
  bool hierarchical = true;
  PhraseParams<T> phrase;   // unused when !hierarchical
  BiGruParams<T> sentence;  // d_g -> d_g, unused when !hierarchical
  BiGruParams<T> fusion;    // 3·d_g (or d_g) -> d
};

template <typename T>
struct EncoderParams {
  VideoEncoderParams<T> video;
  QueryEncoderParams<T> query;

  /// Registers every encoder tensor under "video." / "query." prefixes.
  static EncoderParams make(ParamStore<T>& store, const Config& cfg);
};

/// Ĥ⁰(V) = bigru(self_attention(linear_in(frames))); [N_v × d].
template <typename T>
Var<T> encode_video(Tape<T>& tape, const Var<T>& frames, const VideoEncoderParams<T>& p);

/// Unigram/bigram/trigram features with right zero-padding so window k at
/// position n covers words n..n+k−1, then an element-wise max over k.
template <typename T>
PhraseBranches<T> phrase_features(Tape<T>& tape, const Var<T>& words, const PhraseParams<T>& p);

/// Ĥ⁰(Q) = bigru(concat[Q^w, Q^p, Q^s]) with Q^s = bigru(Q^p). With
/// `ablate_hierarchy` the query is bigru(Q^w) alone; the fusion Bi-GRU must
/// have been built for the matching input width.
template <typename T>
Var<T> encode_query(Tape<T>& tape, const Var<T>& words, const QueryEncoderParams<T>& p, bool ablate_hierarchy);

}  // namespace csmgan
