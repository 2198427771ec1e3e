#include "csmgan/model.hpp"

namespace csmgan {

template <typename T>
Model<T>::Model(const Config& cfg) : cfg_(cfg) {
  cfg_.validate();
  store_.seed(cfg_.seed);
  encoder_ = EncoderParams<T>::make(store_, cfg_);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    layers_.push_back(
        GraphLayerParams<T>::make(store_, "graph" + std::to_string(l), cfg_.d, cfg_.convgru_kernel_width));
  }
  head_ = HeadParams<T>::make(store_, cfg_.d, cfg_.window_sizes.size(), cfg_.head_kernel_width);
}

template <typename T>
void Model<T>::check_sample(const Sample& s) const {
  validate_sample(s);
  if (s.video.cols() != cfg_.d_in) {
    throw DimensionError("sample '" + s.id + "': frame features have width " + std::to_string(s.video.cols()) +
                         ", model expects d_in = " + std::to_string(cfg_.d_in));
  }
  if (s.query.cols() != cfg_.d_g) {
    throw DimensionError("sample '" + s.id + "': word embeddings have width " + std::to_string(s.query.cols()) +
                         ", model expects d_g = " + std::to_string(cfg_.d_g));
  }
  if (s.video.rows() > cfg_.max_video_len) {
    throw DimensionError("sample '" + s.id + "': " + std::to_string(s.video.rows()) +
                         " frames exceed max_video_len = " + std::to_string(cfg_.max_video_len));
  }
}

template <typename T>
typename Model<T>::Forward Model<T>::forward(Tape<T>& tape, const Sample& s, std::vector<LayerTrace<T>>* trace) {
  check_sample(s);
  Forward fw;
  Var<T> frames = tape.constant(s.video.template cast<T>());
  Var<T> words = tape.constant(s.query.template cast<T>());
  fw.encoded.hv = encode_video(tape, frames, encoder_.video);
  fw.encoded.hq = encode_query(tape, words, encoder_.query, cfg_.ablation.disable_hierarchy);
  fw.final = joint_graph_forward(tape, fw.encoded, layers_, cfg_.ablation, cfg_.alpha, trace);
  fw.integration = integrate(tape, fw.final.hv, fw.final.hq, head_);
  const std::size_t n_v = s.video_len();
  fw.head = score_and_offset(tape, fw.integration.f, head_, anchor_times(n_v, cfg_.window_sizes, cfg_.stride_fraction));
  fw.candidates = generate_candidates(n_v, cfg_.window_sizes, cfg_.stride_fraction);
  return fw;
}

template <typename T>
typename Model<T>::Loss Model<T>::loss(const Forward& fw, const SpanLabel& gt) const {
  Loss out;
  out.align = alignment_loss(fw.head.scores, fw.candidates, gt);
  out.bound = boundary_loss(fw.head.offsets, fw.candidates, gt, cfg_.tau);
  out.total = total_loss(out.align, out.bound, cfg_.beta);
  return out;
}

template <typename T>
std::vector<CandidateMoment> Model<T>::scored_candidates(const Forward& fw, std::size_t n_v) {
  std::vector<CandidateMoment> out = fw.candidates;
  const Tensor<T>& scores = fw.head.scores.value();
  const Tensor<T>& offsets = fw.head.offsets.value();
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].score = static_cast<double>(scores[k]);
    out[k].offset_s = static_cast<double>(offsets[2 * k]);
    out[k].offset_e = static_cast<double>(offsets[2 * k + 1]);
    out[k] = refine(out[k], static_cast<double>(n_v));
  }
  return out;
}

template <typename T>
std::vector<CandidateMoment> Model<T>::predict(const Sample& s, std::size_t top_n) {
  Tape<T> tape;
  tape.set_grad_enabled(false);
  Forward fw = forward(tape, s);
  return nms(scored_candidates(fw, s.video_len()), cfg_.nms_threshold, top_n == 0 ? cfg_.top_n : top_n);
}

template class Model<float>;
template class Model<double>;

}  // namespace csmgan
