#include "csmgan/joint_graph.hpp"

#include <cmath>

namespace csmgan {

template <typename T>
ConvGruParams<T> ConvGruParams<T>::make(ParamStore<T>& store, const std::string& prefix, std::size_t d,
                                        std::size_t width) {
  ConvGruParams p;
  p.kx = &store.weight(prefix + ".kx", Shape{width, d, 3 * d}, width * d, d);
  p.kh = &store.weight(prefix + ".kh", Shape{width, d, 2 * d}, width * d, d);
  p.khn = &store.weight(prefix + ".khn", Shape{width, d, d}, width * d, d);
  p.b = &store.zeros(prefix + ".b", Shape{1, 3 * d});
  return p;
}

template <typename T>
GraphLayerParams<T> GraphLayerParams<T>::make(ParamStore<T>& store, const std::string& prefix, std::size_t d,
                                              std::size_t convgru_width) {
  GraphLayerParams p;
  p.wq = &store.weight(prefix + ".wq", Shape{d, d}, d, d);
  p.wv = &store.weight(prefix + ".wv", Shape{d, d}, d, d);
  p.gate_to_frames.w = &store.weight(prefix + ".gate_frames.w", Shape{d, 1}, d, 1);
  p.gate_to_frames.b = &store.zeros(prefix + ".gate_frames.b", Shape{1, 1});
  p.gate_to_words.w = &store.weight(prefix + ".gate_words.w", Shape{d, 1}, d, 1);
  p.gate_to_words.b = &store.zeros(prefix + ".gate_words.b", Shape{1, 1});
  p.cmg_frames = ConvGruParams<T>::make(store, prefix + ".cmg_frames", d, convgru_width);
  p.cmg_words = ConvGruParams<T>::make(store, prefix + ".cmg_words", d, convgru_width);
  p.smg_frames = ConvGruParams<T>::make(store, prefix + ".smg_frames", d, convgru_width);
  p.smg_words = ConvGruParams<T>::make(store, prefix + ".smg_words", d, convgru_width);
  return p;
}

template <typename T>
Var<T> cross_attention(Tape<T>& tape, const Var<T>& hq, const Var<T>& hv, const GraphLayerParams<T>& p,
                       bool disable_hetero_embed) {
  if (hq.cols() != hv.cols()) {
    throw DimensionError("cross_attention: word states " + shape_string(hq.shape()) + " and frame states " +
                         shape_string(hv.shape()) + " differ in width");
  }
  if (disable_hetero_embed) return matmul(hq, transpose(hv));
  return matmul(matmul(hq, tape.param(*p.wq)), transpose(matmul(hv, tape.param(*p.wv))));
}

template <typename T>
Aggregate<T> gated_aggregate(Tape<T>& tape, const Var<T>& e, const Var<T>& source, Direction direction,
                             const GateParams<T>& gate, bool disable_gate) {
  const bool to_frames = direction == Direction::kWordsToFrames;
  const std::size_t sources = to_frames ? e.rows() : e.cols();
  if (source.rows() != sources) {
    throw DimensionError("gated_aggregate: attention " + shape_string(e.shape()) + " does not match " +
                         std::to_string(source.rows()) + " source states");
  }
  Aggregate<T> out;
  out.weights = to_frames ? softmax_cols(e) : softmax_rows(e);
  Var<T> edge = out.weights;
  if (!disable_gate) {
    // M_(n,t)·W_g = weight_(n,t) · (h_n·W_g), so one projection per source suffices.
    Var<T> projected = matmul(source, tape.param(*gate.w));
    if (!to_frames) projected = transpose(projected);
    out.gates = sigmoid(add(mul(out.weights, projected), tape.param(*gate.b)));
    edge = mul(out.gates, out.weights);
  }
  out.messages = to_frames ? matmul(transpose(edge), source) : matmul(edge, source);
  return out;
}

template <typename T>
Var<T> conv_gru_update(Tape<T>& tape, const Var<T>& h_prev, const Var<T>& m, const ConvGruParams<T>& p,
                       bool additive_fallback) {
  if (h_prev.shape() != m.shape()) {
    throw DimensionError("conv_gru_update: state " + shape_string(h_prev.shape()) + " vs message " +
                         shape_string(m.shape()));
  }
  if (additive_fallback) return add(h_prev, m);
  const std::size_t d = h_prev.cols();
  Var<T> xm = add(conv1d_same(m, tape.param(*p.kx)), tape.param(*p.b));
  Var<T> hm = conv1d_same(h_prev, tape.param(*p.kh));
  Var<T> z = sigmoid(add(slice_cols(xm, 0, d), slice_cols(hm, 0, d)));
  Var<T> r = sigmoid(add(slice_cols(xm, d, 2 * d), slice_cols(hm, d, 2 * d)));
  Var<T> candidate = tanh(add(slice_cols(xm, 2 * d, 3 * d), conv1d_same(mul(r, h_prev), tape.param(*p.khn))));
  return add(h_prev, mul(z, sub(candidate, h_prev)));
}

template <typename T>
Tensor<T> positional_encoding(std::size_t n_positions, std::size_t d) {
  if (d < 2) throw ContractError("positional_encoding: d must be at least 2");
  Tensor<T> pe = Tensor<T>::zeros(n_positions, d);
  for (std::size_t t = 0; t < n_positions; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, static_cast<double>(j) / static_cast<double>(d));
      pe(t, j) = static_cast<T>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

template <typename T>
SelfGraphOutput<T> smg_layer(Tape<T>& tape, const Var<T>& h, const ConvGruParams<T>& p, double alpha,
                             bool disable_pos_enc, bool additive_fallback) {
  Var<T> keyed = h;
  if (!disable_pos_enc && alpha != 0.0) {
    Tensor<T> pe = positional_encoding<T>(h.rows(), h.cols());
    for (T& v : pe.values()) v *= static_cast<T>(alpha);
    keyed = add(h, tape.constant(std::move(pe)));
  }
  SelfGraphOutput<T> out;
  out.weights = softmax_rows(matmul(keyed, transpose(keyed)));
  Var<T> message = matmul(out.weights, h);
  out.out = conv_gru_update(tape, h, message, p, additive_fallback);
  return out;
}

template <typename T>
NodeStates<T> joint_graph_forward(Tape<T>& tape, const NodeStates<T>& s0, const std::vector<GraphLayerParams<T>>& layers,
                                  const AblationFlags& flags, double alpha, std::vector<LayerTrace<T>>* trace) {
  if (flags.disable_joint_graph) return s0;
  NodeStates<T> s = s0;
  for (const GraphLayerParams<T>& layer : layers) {
    Var<T> e = cross_attention(tape, s.hq, s.hv, layer, flags.disable_hetero_embed);
    Aggregate<T> to_frames =
        gated_aggregate(tape, e, s.hq, Direction::kWordsToFrames, layer.gate_to_frames, flags.disable_gate);
    Aggregate<T> to_words =
        gated_aggregate(tape, e, s.hv, Direction::kFramesToWords, layer.gate_to_words, flags.disable_gate);
    Var<T> hv = conv_gru_update(tape, s.hv, to_frames.messages, layer.cmg_frames, flags.additive_update);
    Var<T> hq = conv_gru_update(tape, s.hq, to_words.messages, layer.cmg_words, flags.additive_update);

    Tensor<T> self_frames;
    if (!flags.disable_smg) {
      SelfGraphOutput<T> sv = smg_layer(tape, hv, layer.smg_frames, alpha, flags.disable_pos_enc, flags.additive_update);
      SelfGraphOutput<T> sq = smg_layer(tape, hq, layer.smg_words, alpha, flags.disable_pos_enc, flags.additive_update);
      hv = sv.out;
      hq = sq.out;
      if (trace) self_frames = sv.weights.value();
    }
    s = NodeStates<T>{hv, hq, s.layer_index + 1};
    if (trace) trace->push_back({hv.value(), hq.value(), to_frames.weights.value(), std::move(self_frames)});
  }
  return s;
}

template <typename T>
std::vector<double> smoothing_probe(const std::vector<Tensor<T>>& frame_states_per_layer) {
  if (frame_states_per_layer.empty()) throw ContractError("smoothing_probe: no layer outputs given");
  std::vector<double> series;
  for (const Tensor<T>& h : frame_states_per_layer) {
    const std::size_t n = h.rows(), d = h.cols();
    if (n < 2) {
      series.push_back(1.0);
      continue;
    }
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(h(i, k)) * h(i, k);
      norms[i] = std::sqrt(s);
    }
    double total = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j, ++pairs) {
        if (norms[i] < 1e-8 || norms[j] < 1e-8) continue;
        double dot = 0;
        for (std::size_t k = 0; k < d; ++k) dot += static_cast<double>(h(i, k)) * h(j, k);
        total += dot / (norms[i] * norms[j]);
      }
    }
    series.push_back(total / static_cast<double>(pairs));
  }
  return series;
}

#define CSMGAN_INSTANTIATE_GRAPH(T)                                                                              \
  template struct ConvGruParams<T>;                                                                              \
  template struct GraphLayerParams<T>;                                                                           \
  template Var<T> cross_attention(Tape<T>&, const Var<T>&, const Var<T>&, const GraphLayerParams<T>&, bool);     \
  template Aggregate<T> gated_aggregate(Tape<T>&, const Var<T>&, const Var<T>&, Direction, const GateParams<T>&, \
                                        bool);                                                                   \
  template Var<T> conv_gru_update(Tape<T>&, const Var<T>&, const Var<T>&, const ConvGruParams<T>&, bool);        \
  template Tensor<T> positional_encoding<T>(std::size_t, std::size_t);                                           \
  template SelfGraphOutput<T> smg_layer(Tape<T>&, const Var<T>&, const ConvGruParams<T>&, double, bool, bool);   \
  template NodeStates<T> joint_graph_forward(Tape<T>&, const NodeStates<T>&, const std::vector<GraphLayerParams<T>>&, \
                                             const AblationFlags&, double, std::vector<LayerTrace<T>>*);         \
  template std::vector<double> smoothing_probe(const std::vector<Tensor<T>>&);

CSMGAN_INSTANTIATE_GRAPH(float)
CSMGAN_INSTANTIATE_GRAPH(double)

}  // namespace csmgan
