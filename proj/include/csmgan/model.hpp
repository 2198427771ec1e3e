#pragma once

#include <vector>

#include "csmgan/config.hpp"
#include "csmgan/dataset.hpp"
#include "csmgan/encoders.hpp"
#include "csmgan/joint_graph.hpp"
#include "csmgan/localization.hpp"
#include "csmgan/params.hpp"

namespace csmgan {

/// The full network: encoders, L joint graph layers, integration and heads,
/// with parameters laid out according to the config (ablated configs omit
/// the tensors they do not use).
template <typename T>
class Model {
 public:
  explicit Model(const Config& cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const Config& config() const noexcept { return cfg_; }
  ParamStore<T>& params() noexcept { return store_; }
  const ParamStore<T>& params() const noexcept { return store_; }
  const EncoderParams<T>& encoder() const noexcept { return encoder_; }
  const std::vector<GraphLayerParams<T>>& layers() const noexcept { return layers_; }
  const HeadParams<T>& head() const noexcept { return head_; }

  struct Forward {
    NodeStates<T> encoded;
    NodeStates<T> final;
    Integration<T> integration;
    HeadOutput<T> head;
    std::vector<CandidateMoment> candidates;  // anchor spans, unscored
  };

  struct Loss {
    Var<T> total, align, bound;
  };

  /// Throws DimensionError/ContractError when the sample does not fit the config.
  void check_sample(const Sample& s) const;

  Forward forward(Tape<T>& tape, const Sample& s, std::vector<LayerTrace<T>>* trace = nullptr);
  Loss loss(const Forward& fw, const SpanLabel& gt) const;

  /// Scores and offsets copied onto the candidates, spans refined and clamped.
  static std::vector<CandidateMoment> scored_candidates(const Forward& fw, std::size_t n_v);

  /// Forward without gradients, refinement, NMS; top_n = 0 uses the config value.
  std::vector<CandidateMoment> predict(const Sample& s, std::size_t top_n = 0);

  /// Copies every parameter value from a model with the same layout.
  template <typename U>
  void copy_from(const Model<U>& other);

 private:
  Config cfg_;
  ParamStore<T> store_;
  EncoderParams<T> encoder_;
  std::vector<GraphLayerParams<T>> layers_;
  HeadParams<T> head_;
};

template <typename T>
template <typename U>
void Model<T>::copy_from(const Model<U>& other) {
  for (Parameter<T>& p : store_) {
    const Parameter<U>& src = other.params().at(p.name);
    if (src.value.shape() != p.value.shape()) {
      throw DimensionError("copy_from: parameter '" + p.name + "' has shape " + shape_string(src.value.shape()) +
                           ", expected " + shape_string(p.value.shape()));
    }
    for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] = static_cast<T>(src.value[k]);
  }
}

}  // namespace csmgan
