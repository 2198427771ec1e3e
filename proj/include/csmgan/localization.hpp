#pragma once

// Multi-modal integration, candidate moments, scoring heads, losses and NMS.

#include <string>
#include <vector>

#include "csmgan/autodiff.hpp"
#include "csmgan/encoders.hpp"
#include "csmgan/params.hpp"

namespace csmgan {

/// Ground-truth span in frame units, 0 ≤ s < e ≤ N_v.
struct SpanLabel {
  double s = 0.0;
  double e = 0.0;
};

struct CandidateMoment {
  double start = 0.0;  // frame units, clamped to [0, N_v]
  double end = 0.0;
  std::size_t scale_index = 0;
  std::size_t anchor_time = 0;
  double score = 0.0;
  double offset_s = 0.0;
  double offset_e = 0.0;

  SpanLabel span() const { return {start, end}; }
};

/// |a ∩ b| / |a ∪ b|, 0 for an empty union.
double temporal_iou(const SpanLabel& a, const SpanLabel& b);

/// Shared anchor grid: t = 0, step, 2·step, ... < n_v with
/// step = max(1, round(min(window_sizes) · stride_fraction)).
std::vector<std::size_t> anchor_times(std::size_t n_v, const std::vector<std::size_t>& window_sizes,
                                      double stride_fraction);

/// One candidate [t − w/2, t + w/2] ∩ [0, n_v] per anchor and window, anchor-major.
/// Throws ConfigError for an empty window list or a stride outside (0, 1].
std::vector<CandidateMoment> generate_candidates(std::size_t n_v, const std::vector<std::size_t>& window_sizes,
                                                 double stride_fraction);

template <typename T>
struct HeadParams {
  Parameter<T>* wc = nullptr;  // [d × d]
  BiGruParams<T> fusion;       // 2d -> d
  Parameter<T>* score_k = nullptr;   // [kw × d × N_Φ]
  Parameter<T>* score_b = nullptr;   // [1 × N_Φ]
  Parameter<T>* offset_k = nullptr;  // [kw × d × 2N_Φ], channels (δs, δe) per scale
  Parameter<T>* offset_b = nullptr;  // [1 × 2N_Φ]
  std::size_t scales = 0;

  static HeadParams make(ParamStore<T>& store, std::size_t d, std::size_t scales, std::size_t kernel_width);
};

template <typename T>
struct Integration {
  Var<T> f;           // [N_v × 2d] = concat[v_t, h_t]
  Var<T> similarity;  // c, [N_q × N_v]
  Var<T> weights;     // softmax of c over words, [N_q × N_v]
};

/// c[n][t] = cos(v_t, q_n·W_c); h_t = Σ_n softmax_n(c[:,t])·q_n; f_t = [v_t ‖ h_t].
template <typename T>
Integration<T> integrate(Tape<T>& tape, const Var<T>& v_final, const Var<T>& q_final, const HeadParams<T>& p);

template <typename T>
struct HeadOutput {
  Var<T> scores;   // [anchors × N_Φ] in (0,1)
  Var<T> offsets;  // [anchors × 2N_Φ]
};

/// Bi-GRU over f, then conv heads read at the anchor rows.
template <typename T>
HeadOutput<T> score_and_offset(Tape<T>& tape, const Var<T>& f, const HeadParams<T>& p,
                               const std::vector<std::size_t>& anchors);

/// IoU of each candidate with the label, in candidate order.
std::vector<double> candidate_ious(const std::vector<CandidateMoment>& candidates, const SpanLabel& gt);

/// Mean soft-label BCE between candidate scores and their IoUs (scores clamped to [1e-7, 1 − 1e-7]).
template <typename T>
Var<T> alignment_loss(const Var<T>& scores, const std::vector<CandidateMoment>& candidates, const SpanLabel& gt);

/// Smooth-L1 on offsets of candidates with IoU > tau against targets
/// (gt.s − start, gt.e − end), averaged over positives; 0 with no positives.
template <typename T>
Var<T> boundary_loss(const Var<T>& offsets, const std::vector<CandidateMoment>& candidates, const SpanLabel& gt,
                     double tau);

template <typename T>
Var<T> total_loss(const Var<T>& align, const Var<T>& bound, double beta);

/// Applies predicted offsets and clamps to [0, n_v]. Falls back to the anchor
/// span if refinement collapses it.
CandidateMoment refine(const CandidateMoment& c, double n_v);

/// Greedy NMS on (start, end, score): highest score first, ties by earlier
/// start then lower input index; drops spans with IoU > threshold against a
/// kept one. Throws ConfigError for top_n < 1.
std::vector<CandidateMoment> nms(const std::vector<CandidateMoment>& candidates, double iou_threshold,
                                 std::size_t top_n);

}  // namespace csmgan
