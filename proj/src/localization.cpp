#include "csmgan/localization.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace csmgan {

double temporal_iou(const SpanLabel& a, const SpanLabel& b) {
  const double inter = std::max(0.0, std::min(a.e, b.e) - std::max(a.s, b.s));
  const double uni = (a.e - a.s) + (b.e - b.s) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<std::size_t> anchor_times(std::size_t n_v, const std::vector<std::size_t>& window_sizes,
                                      double stride_fraction) {
  if (window_sizes.empty()) throw ConfigError("generate_candidates: window list is empty");
  if (!(stride_fraction > 0.0 && stride_fraction <= 1.0)) {
    throw ConfigError("generate_candidates: stride_fraction must lie in (0, 1]");
  }
  if (std::find(window_sizes.begin(), window_sizes.end(), 0u) != window_sizes.end()) {
    throw ConfigError("generate_candidates: window sizes must be at least 1");
  }
  const std::size_t min_window = *std::min_element(window_sizes.begin(), window_sizes.end());
  const auto step = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(min_window * stride_fraction)));
  std::vector<std::size_t> anchors;
  for (std::size_t t = 0; t < n_v; t += step) anchors.push_back(t);
  return anchors;
}

std::vector<CandidateMoment> generate_candidates(std::size_t n_v, const std::vector<std::size_t>& window_sizes,
                                                 double stride_fraction) {
  std::vector<CandidateMoment> out;
  const double len = static_cast<double>(n_v);
  for (std::size_t t : anchor_times(n_v, window_sizes, stride_fraction)) {
    for (std::size_t i = 0; i < window_sizes.size(); ++i) {
      const double half = static_cast<double>(window_sizes[i]) / 2.0;
      CandidateMoment c;
      c.start = std::clamp(static_cast<double>(t) - half, 0.0, len);
      c.end = std::clamp(static_cast<double>(t) + half, 0.0, len);
      c.scale_index = i;
      c.anchor_time = t;
      out.push_back(c);
    }
  }
  return out;
}

template <typename T>
HeadParams<T> HeadParams<T>::make(ParamStore<T>& store, std::size_t d, std::size_t scales, std::size_t kernel_width) {
  HeadParams p;
  p.scales = scales;
  p.wc = &store.weight("head.wc", Shape{d, d}, d, d);
  p.fusion = BiGruParams<T>::make(store, "head.gru", 2 * d, d / 2);
  p.score_k = &store.weight("head.score.w", Shape{kernel_width, d, scales}, kernel_width * d, scales);
  p.score_b = &store.zeros("head.score.b", Shape{1, scales});
  p.offset_k = &store.weight("head.offset.w", Shape{kernel_width, d, 2 * scales}, kernel_width * d, 2 * scales);
  p.offset_b = &store.zeros("head.offset.b", Shape{1, 2 * scales});
  return p;
}

template <typename T>
Integration<T> integrate(Tape<T>& tape, const Var<T>& v_final, const Var<T>& q_final, const HeadParams<T>& p) {
  Integration<T> out;
  out.similarity = cosine_similarity(matmul(q_final, tape.param(*p.wc)), v_final);
  out.weights = softmax_cols(out.similarity);
  Var<T> h = matmul(transpose(out.weights), q_final);
  out.f = concat_cols<T>({v_final, h});
  return out;
}

template <typename T>
HeadOutput<T> score_and_offset(Tape<T>& tape, const Var<T>& f, const HeadParams<T>& p,
                               const std::vector<std::size_t>& anchors) {
  Var<T> context = bigru(tape, f, p.fusion);
  Var<T> logits = add(conv1d_same(context, tape.param(*p.score_k)), tape.param(*p.score_b));
  Var<T> offsets = add(conv1d_same(context, tape.param(*p.offset_k)), tape.param(*p.offset_b));
  return {select_rows(sigmoid(logits), anchors), select_rows(offsets, anchors)};
}

std::vector<double> candidate_ious(const std::vector<CandidateMoment>& candidates, const SpanLabel& gt) {
  std::vector<double> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back(temporal_iou(c.span(), gt));
  return out;
}

template <typename T>
Var<T> alignment_loss(const Var<T>& scores, const std::vector<CandidateMoment>& candidates, const SpanLabel& gt) {
  if (scores.value().size() != candidates.size()) {
    throw DimensionError("alignment_loss: " + std::to_string(candidates.size()) + " candidates but scores " +
                         shape_string(scores.shape()));
  }
  const std::vector<double> ious = candidate_ious(candidates, gt);
  Tensor<T> targets(scores.shape());
  for (std::size_t k = 0; k < ious.size(); ++k) targets[k] = static_cast<T>(ious[k]);
  return soft_bce(scores, targets, static_cast<T>(1e-7));
}

template <typename T>
Var<T> boundary_loss(const Var<T>& offsets, const std::vector<CandidateMoment>& candidates, const SpanLabel& gt,
                     double tau) {
  if (offsets.value().size() != 2 * candidates.size()) {
    throw DimensionError("boundary_loss: " + std::to_string(candidates.size()) + " candidates but offsets " +
                         shape_string(offsets.shape()));
  }
  Tensor<T> targets(offsets.shape());
  Tensor<T> mask(offsets.shape());
  std::size_t positives = 0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto& c = candidates[k];
    if (temporal_iou(c.span(), gt) <= tau) continue;
    ++positives;
    targets[2 * k] = static_cast<T>(gt.s - c.start);
    targets[2 * k + 1] = static_cast<T>(gt.e - c.end);
    mask[2 * k] = mask[2 * k + 1] = T(1);
  }
  Tape<T>& tape = *offsets.tape();
  if (positives == 0) return tape.constant(Tensor<T>(Shape{1, 1}));
  Var<T> diff = sub(offsets, tape.constant(std::move(targets)));
  Var<T> masked = mul(smooth_l1(diff), tape.constant(std::move(mask)));
  return scale(sum(masked), T(1) / static_cast<T>(positives));
}

template <typename T>
Var<T> total_loss(const Var<T>& align, const Var<T>& bound, double beta) {
  return add(align, scale(bound, static_cast<T>(beta)));
}

CandidateMoment refine(const CandidateMoment& c, double n_v) {
  CandidateMoment out = c;
  const double s = std::clamp(c.start + c.offset_s, 0.0, n_v);
  const double e = std::clamp(c.end + c.offset_e, 0.0, n_v);
  if (s < e) {
    out.start = s;
    out.end = e;
  }
  return out;
}

std::vector<CandidateMoment> nms(const std::vector<CandidateMoment>& candidates, double iou_threshold,
                                 std::size_t top_n) {
  if (top_n < 1) throw ConfigError("nms: top_n must be at least 1");
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ca = candidates[a];
    const auto& cb = candidates[b];
    if (ca.score != cb.score) return ca.score > cb.score;
    if (ca.start != cb.start) return ca.start < cb.start;
    return a < b;
  });
  std::vector<CandidateMoment> kept;
  std::vector<bool> suppressed(candidates.size(), false);
  for (std::size_t pos = 0; pos < order.size() && kept.size() < top_n; ++pos) {
    const std::size_t i = order[pos];
    if (suppressed[i]) continue;
    kept.push_back(candidates[i]);
    for (std::size_t later = pos + 1; later < order.size(); ++later) {
      const std::size_t j = order[later];
      if (!suppressed[j] && temporal_iou(candidates[i].span(), candidates[j].span()) > iou_threshold) {
        suppressed[j] = true;
      }
    }
  }
  return kept;
}

#define CSMGAN_INSTANTIATE_LOCALIZATION(T)                                                                     \
  template struct HeadParams<T>;                                                                               \
  template Integration<T> integrate(Tape<T>&, const Var<T>&, const Var<T>&, const HeadParams<T>&);             \
  template HeadOutput<T> score_and_offset(Tape<T>&, const Var<T>&, const HeadParams<T>&,                       \
                                          const std::vector<std::size_t>&);                                    \
  template Var<T> alignment_loss(const Var<T>&, const std::vector<CandidateMoment>&, const SpanLabel&);        \
  template Var<T> boundary_loss(const Var<T>&, const std::vector<CandidateMoment>&, const SpanLabel&, double); \
  template Var<T> total_loss(const Var<T>&, const Var<T>&, double);

CSMGAN_INSTANTIATE_LOCALIZATION(float)
CSMGAN_INSTANTIATE_LOCALIZATION(double)

}  // namespace csmgan
