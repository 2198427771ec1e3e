#pragma once

// Stacked joint graph layers. Each layer runs a cross-modal relation graph
// (gated word↔frame message passing) followed by a self-modal relation graph
// (position-aware attention within each modality); both update node states
// through a ConvGRU.

#include <string>
#include <vector>

#include "csmgan/autodiff.hpp"
#include "csmgan/config.hpp"
#include "csmgan/params.hpp"

namespace csmgan {

template <typename T>
struct NodeStates {
  Var<T> hv;  // frames [N_v × d]
  Var<T> hq;  // words  [N_q × d]
  std::size_t layer_index = 0;
};

template <typename T>
struct GateParams {
  Parameter<T>* w = nullptr;  // [d × 1]
  Parameter<T>* b = nullptr;  // [1 × 1]
};

template <typename T>
struct ConvGruParams {
  Parameter<T>* kx = nullptr;   // message -> (update, reset, candidate): [k × d × 3d]
  Parameter<T>* kh = nullptr;   // state -> (update, reset):             [k × d × 2d]
  Parameter<T>* khn = nullptr;  // (reset ⊙ state) -> candidate:         [k × d × d]
  Parameter<T>* b = nullptr;    // [1 × 3d]

  static ConvGruParams make(ParamStore<T>& store, const std::string& prefix, std::size_t d, std::size_t width);
};

template <typename T>
struct GraphLayerParams {
  Parameter<T>* wq = nullptr;  // [d × d]
  Parameter<T>* wv = nullptr;  // [d × d]
  GateParams<T> gate_to_frames;
  GateParams<T> gate_to_words;
  ConvGruParams<T> cmg_frames, cmg_words;
  ConvGruParams<T> smg_frames, smg_words;

  static GraphLayerParams make(ParamStore<T>& store, const std::string& prefix, std::size_t d,
                               std::size_t convgru_width);
};

enum class Direction { kWordsToFrames, kFramesToWords };

/// e = (hq·W_q)(hv·W_v)ᵀ, or hq·hvᵀ without the heterogeneous embedding. [N_q × N_v].
template <typename T>
Var<T> cross_attention(Tape<T>& tape, const Var<T>& hq, const Var<T>& hv, const GraphLayerParams<T>& p,
                       bool disable_hetero_embed);

template <typename T>
struct Aggregate {
  Var<T> messages;  // [N_receivers × d]
  Var<T> weights;   // softmax-normalised edge weights, [N_q × N_v]
  Var<T> gates;     // per-edge gates in (0,1), [N_q × N_v]; invalid when gating is off
};

/// Softmax over the source axis of e, gate each weighted message with
/// σ(M·W_g + b_g) and sum per receiver. For kWordsToFrames the sources are
/// word states and the result is [N_v × d]; kFramesToWords mirrors it.
template <typename T>
Aggregate<T> gated_aggregate(Tape<T>& tape, const Var<T>& e, const Var<T>& source, Direction direction,
                             const GateParams<T>& gate, bool disable_gate);

/// GRU whose pre-activations are same-padded 1-D convolutions over the node
/// axis: out = (1 − z) ⊙ h_prev + z ⊙ h̃. With additive_fallback, out = h_prev + m.
template <typename T>
Var<T> conv_gru_update(Tape<T>& tape, const Var<T>& h_prev, const Var<T>& m, const ConvGruParams<T>& p,
                       bool additive_fallback);

/// PE[t][j] = sin(t / 10000^{j/d}) for even j, cos(·) for odd j; t, j zero-based.
template <typename T>
Tensor<T> positional_encoding(std::size_t n_positions, std::size_t d);

template <typename T>
struct SelfGraphOutput {
  Var<T> out;
  Var<T> weights;  // [N × N] row-stochastic
};

/// p = h + α·PE; ē = p·pᵀ; M̄ = softmax_rows(ē)·h; out = conv_gru_update(h, M̄).
template <typename T>
SelfGraphOutput<T> smg_layer(Tape<T>& tape, const Var<T>& h, const ConvGruParams<T>& p, double alpha,
                             bool disable_pos_enc, bool additive_fallback);

/// Values captured per layer for probes and attention dumps.
template <typename T>
struct LayerTrace {
  Tensor<T> hv, hq;                 // states after the layer
  Tensor<T> cross_to_frames;        // column-stochastic word→frame weights
  Tensor<T> self_frames;            // SMG frame attention (empty when SMG is off)
};

/// Runs every layer in order. Returns the input unchanged for an empty layer
/// list or when the joint graph is ablated.
template <typename T>
NodeStates<T> joint_graph_forward(Tape<T>& tape, const NodeStates<T>& s0, const std::vector<GraphLayerParams<T>>& layers,
                                  const AblationFlags& flags, double alpha, std::vector<LayerTrace<T>>* trace = nullptr);

/// Mean pairwise cosine similarity among the rows of each frame-state matrix.
/// A single row counts as perfectly similar.
template <typename T>
std::vector<double> smoothing_probe(const std::vector<Tensor<T>>& frame_states_per_layer);

}  // namespace csmgan
