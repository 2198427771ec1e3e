#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "csmgan/check_suite.hpp"
#include "csmgan/localization.hpp"
#include "csmgan/model.hpp"

using namespace csmgan;
using D = double;

namespace {

Tensor<D> rand_t(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  return random_tensor(s, rng, lo, hi);
}

// Overlap by sweeping a fine grid of sub-intervals between all endpoints.
double iou_oracle(const SpanLabel& a, const SpanLabel& b) {
  std::vector<double> pts{a.s, a.e, b.s, b.e};
  std::sort(pts.begin(), pts.end());
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double lo = pts[i], hi = pts[i + 1], mid = 0.5 * (lo + hi);
    const bool in_a = mid > a.s && mid < a.e, in_b = mid > b.s && mid < b.e;
    if (in_a && in_b) inter += hi - lo;
    if (in_a || in_b) uni += hi - lo;
  }
  return uni > 0 ? inter / uni : 0.0;
}

SpanLabel random_span(std::mt19937_64& rng, double len) {
  std::uniform_real_distribution<double> u(0.0, len);
  double s = u(rng), e = u(rng);
  if (s > e) std::swap(s, e);
  if (e - s < 1e-3) e = s + 1e-3;
  return {s, e};
}

// Selection-loop greedy NMS written independently of the library's sort.
std::vector<std::size_t> nms_oracle(const std::vector<CandidateMoment>& c, double thr, std::size_t top_n) {
  std::vector<bool> alive(c.size(), true);
  std::vector<std::size_t> out;
  while (out.size() < top_n) {
    std::size_t best = c.size();
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (!alive[i]) continue;
      if (best == c.size() || c[i].score > c[best].score ||
          (c[i].score == c[best].score && c[i].start < c[best].start)) {
        best = i;
      }
    }
    if (best == c.size()) break;
    out.push_back(best);
    alive[best] = false;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (alive[i] && iou_oracle(c[best].span(), c[i].span()) > thr) alive[i] = false;
    }
  }
  return out;
}

std::vector<CandidateMoment> random_candidates(std::mt19937_64& rng, std::size_t n, bool coarse_scores) {
  std::vector<CandidateMoment> c(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> q(0, 9);
  for (auto& m : c) {
    const auto s = random_span(rng, 30.0);
    m.start = std::round(s.s);
    m.end = std::max(m.start + 1, std::round(s.e));
    m.score = coarse_scores ? q(rng) / 10.0 : u(rng);
  }
  return c;
}

double bce(double y, double p) { return -(y * std::log(p) + (1 - y) * std::log(1 - p)); }

}  // namespace

TEST_CASE("temporal_iou: examples") {
  CHECK(temporal_iou({2, 7}, {2, 7}) == 1.0);
  CHECK(temporal_iou({0, 3}, {4, 9}) == 0.0);
  CHECK(temporal_iou({0, 5}, {5, 9}) == 0.0);
  CHECK(temporal_iou({0, 10}, {5, 15}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("temporal_iou: symmetric, bounded, 1 iff identical, 0 iff disjoint, matches oracle") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_span(rng, 20), b = random_span(rng, 20);
    const double v = temporal_iou(a, b);
    CHECK(v == temporal_iou(b, a));
    CHECK((v >= 0.0 && v <= 1.0));
    CHECK(std::abs(v - iou_oracle(a, b)) <= 1e-12);
    CHECK((v == 0.0) == (std::min(a.e, b.e) <= std::max(a.s, b.s)));
    CHECK(temporal_iou(a, a) == 1.0);
    if (a.s != b.s || a.e != b.e) CHECK(v < 1.0);
  }
}

TEST_CASE("generate_candidates: hand enumeration and presets") {
  const auto c = generate_candidates(10, {4}, 1.0);
  REQUIRE(c.size() == 3);
  const double want[3][2] = {{0, 2}, {2, 6}, {6, 10}};
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(c[i].anchor_time == 4 * i);
    CHECK(c[i].start == want[i][0]);
    CHECK(c[i].end == want[i][1]);
  }

  const Config act = preset_config("activity");
  CHECK(act.window_sizes == std::vector<std::size_t>{16, 32, 64, 96, 128, 160, 192});
  CHECK(act.stride_fraction == 0.5);
  CHECK(anchor_times(200, act.window_sizes, act.stride_fraction)[1] == 8);
  const Config tacos = preset_config("tacos");
  CHECK(tacos.window_sizes == std::vector<std::size_t>{8, 16, 32, 64});
  CHECK(tacos.stride_fraction == 0.125);
  CHECK(anchor_times(200, tacos.window_sizes, tacos.stride_fraction).size() == 200);

  const auto big = generate_candidates(200, act.window_sizes, act.stride_fraction);
  CHECK(big.size() == 25 * 7);
  for (std::size_t k = 0; k < big.size(); ++k) {
    CHECK(big[k].scale_index == k % 7);
    CHECK(big[k].anchor_time == 8 * (k / 7));
  }
  CHECK_THROWS_AS(generate_candidates(10, {}, 0.5), ConfigError);
  CHECK_THROWS_AS(generate_candidates(10, {4}, 0.0), ConfigError);
  CHECK_THROWS_AS(generate_candidates(10, {4}, 1.5), ConfigError);
}

TEST_CASE("generate_candidates: deterministic and always inside [0, n_v]") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n_v = 1 + rng() % 64;
    std::vector<std::size_t> sizes(1 + rng() % 4);
    for (auto& w : sizes) w = 1 + rng() % 40;
    const double stride = (1 + rng() % 8) / 8.0;
    const auto a = generate_candidates(n_v, sizes, stride);
    const auto b = generate_candidates(n_v, sizes, stride);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK((a[k].start == b[k].start && a[k].end == b[k].end));
      CHECK((0.0 <= a[k].start && a[k].start < a[k].end && a[k].end <= static_cast<double>(n_v)));
    }
  }
}

TEST_CASE("integrate: single word, self-cosine, loop oracle") {
  const std::size_t d = 5;
  ParamStore<D> store;
  auto p = HeadParams<D>::make(store, d, 2, 3);
  std::mt19937_64 rng(3);
  for (auto& q : store) q.value = random_tensor(q.value.shape(), rng);
  Tape<D> t;
  {
    const auto q = rand_t({1, d}, 4);
    auto r = integrate(t, t.constant(rand_t({4, d}, 5)), t.constant(q), p);
    for (std::size_t tt = 0; tt < 4; ++tt)
      for (std::size_t k = 0; k < d; ++k) CHECK(r.f.value()(tt, d + k) == doctest::Approx(q[k]).epsilon(1e-14));
  }
  const auto v = rand_t({4, d}, 6), q = rand_t({3, d}, 7);
  {
    ParamStore<D> s2;
    auto pi = HeadParams<D>::make(s2, d, 2, 3);
    pi.wc->value = Tensor<D>::identity(d);
    auto r = integrate(t, t.constant(v), t.constant(v), pi);
    for (std::size_t i = 0; i < 4; ++i) CHECK(r.similarity.value()(i, i) == doctest::Approx(1.0).epsilon(1e-14));
  }
  auto r = integrate(t, t.constant(v), t.constant(q), p);
  for (std::size_t tt = 0; tt < 4; ++tt) {
    std::vector<double> c(3);
    for (std::size_t n = 0; n < 3; ++n) {
      std::vector<double> qw(d, 0.0);
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k) qw[j] += q(n, k) * p.wc->value(k, j);
      double dot = 0, nq = 0, nv = 0;
      for (std::size_t j = 0; j < d; ++j) {
        dot += qw[j] * v(tt, j);
        nq += qw[j] * qw[j];
        nv += v(tt, j) * v(tt, j);
      }
      c[n] = dot / std::sqrt(nq * nv);
      CHECK(r.similarity.value()(n, tt) == doctest::Approx(c[n]).epsilon(1e-12));
    }
    double z = 0;
    for (double x : c) z += std::exp(x);
    for (std::size_t k = 0; k < d; ++k) {
      double h = 0;
      for (std::size_t n = 0; n < 3; ++n) h += std::exp(c[n]) / z * q(n, k);
      CHECK(r.f.value()(tt, k) == v(tt, k));
      CHECK(r.f.value()(tt, d + k) == doctest::Approx(h).epsilon(1e-12));
    }
  }
  CHECK(run_gradcheck("integrate", 1).max_rel_error < 1e-4);
}

TEST_CASE("score_and_offset: zero heads, sigmoid range, gradients") {
  const std::size_t d = 4;
  ParamStore<D> store;
  auto p = HeadParams<D>::make(store, d, 3, 3);
  const std::vector<std::size_t> anchors{0, 2, 4};
  Tape<D> t;
  const auto f = rand_t({6, 2 * d}, 8);
  for (auto* z : {p.score_k, p.score_b, p.offset_k, p.offset_b}) z->value.fill(0);
  auto zero = score_and_offset(t, t.constant(f), p, anchors);
  CHECK(zero.scores.shape() == Shape{3, 3});
  CHECK(zero.offsets.shape() == Shape{3, 6});
  for (double s : zero.scores.value().values()) CHECK(s == 0.5);
  for (double o : zero.offsets.value().values()) CHECK(o == 0.0);
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(100 + trial);
    for (auto& q : store) q.value = random_tensor(q.value.shape(), rng, -3, 3);
    auto out = score_and_offset(t, t.constant(rand_t({6, 2 * d}, 200 + trial, -3, 3)), p, anchors);
    for (double s : out.scores.value().values()) CHECK((s > 0.0 && s < 1.0));
  }
  CHECK(run_gradcheck("score_and_offset", 1).max_rel_error < 1e-4);
}

TEST_CASE("alignment_loss: hand value, entropy minimum, saturation") {
  std::vector<CandidateMoment> c(3);
  c[0].start = 0, c[0].end = 2;   // IoU 0 with [4, 8]
  c[1].start = 4, c[1].end = 6;   // IoU 0.5
  c[2].start = 4, c[2].end = 8;   // IoU 1
  const SpanLabel gt{4, 8};
  Tape<D> t;
  auto half = alignment_loss(t.constant(Tensor<D>(Shape{1, 3}, 0.5)), c, gt);
  CHECK(half.value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const auto ious = candidate_ious(c, gt);
  CHECK(ious == std::vector<double>{0.0, 0.5, 1.0});
  Tensor<D> at_target(Shape{1, 3});
  for (std::size_t k = 0; k < 3; ++k) at_target[k] = ious[k];
  const double minimum = alignment_loss(t.constant(at_target), c, gt).value()[0];
  double entropy = 0;
  for (double y : ious) entropy += y > 0 && y < 1 ? bce(y, y) : bce(y, std::clamp(y, 1e-7, 1 - 1e-7));
  CHECK(minimum == doctest::Approx(entropy / 3).epsilon(1e-9));

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor<D> cs(Shape{1, 3});
    for (std::size_t k = 0; k < 3; ++k) cs[k] = u(rng);
    CHECK(alignment_loss(t.constant(cs), c, gt).value()[0] >= minimum);
  }
  std::vector<CandidateMoment> exact{c[2]};
  CHECK(alignment_loss(t.constant(Tensor<D>(Shape{1, 1}, 1.0 - 1e-12)), exact, gt).value()[0] < 1e-6);
  CHECK_THROWS_AS(alignment_loss(t.constant(Tensor<D>(Shape{1, 2}, 0.5)), c, gt), DimensionError);
}

TEST_CASE("boundary_loss: perfect offsets, no positives, hand value, knee continuity") {
  std::vector<CandidateMoment> c(2);
  c[0].start = 4, c[0].end = 8;  // IoU 0.8 with [4, 9]
  c[1].start = 20, c[1].end = 24;
  const SpanLabel gt{4, 9};
  Tape<D> t;
  auto perfect = boundary_loss(t.constant(Tensor<D>::matrix(2, 2, {0, 1, 7, 7})), c, gt, 0.5);
  CHECK(perfect.value()[0] == 0.0);
  auto none = boundary_loss(t.constant(Tensor<D>::matrix(2, 2, {3, 3, 3, 3})), c, {30, 31}, 0.5);
  CHECK(none.value()[0] == 0.0);
  // Predicted minus target (0.5, 2.0) on the single positive.
  auto hand = boundary_loss(t.constant(Tensor<D>::matrix(2, 2, {0.5, 3.0, -9, 9})), c, gt, 0.5);
  CHECK(hand.value()[0] == doctest::Approx(1.625).epsilon(1e-15));
  // Both branches meet at the knee.
  auto below = boundary_loss(t.constant(Tensor<D>::matrix(2, 2, {1.0 - 1e-9, 1, 0, 0})), c, gt, 0.5);
  auto above = boundary_loss(t.constant(Tensor<D>::matrix(2, 2, {1.0 + 1e-9, 1, 0, 0})), c, gt, 0.5);
  auto knee = boundary_loss(t.constant(Tensor<D>::matrix(2, 2, {1.0, 1, 0, 0})), c, gt, 0.5);
  CHECK(knee.value()[0] == 0.5);
  CHECK(std::abs(below.value()[0] - 0.5) < 1e-8);
  CHECK(std::abs(above.value()[0] - 0.5) < 1e-8);
  // Strictly greater than tau counts as positive.
  std::vector<CandidateMoment> edge(1);
  edge[0].start = 0, edge[0].end = 4;
  CHECK(boundary_loss(t.constant(Tensor<D>::matrix(1, 2, {5, 5})), edge, {0, 2}, 0.5).value()[0] == 0.0);
  CHECK(boundary_loss(t.constant(Tensor<D>::matrix(1, 2, {5, 5})), edge, {0, 2}, 0.45).value()[0] > 0.0);
  CHECK(run_gradcheck("losses", 1).max_rel_error < 1e-4);
}

TEST_CASE("total_loss and the preset balance weights") {
  Tape<D> t;
  auto a = t.constant(Tensor<D>(Shape{1, 1}, 0.5)), b = t.constant(Tensor<D>(Shape{1, 1}, 2.0));
  CHECK(total_loss(a, b, 0.0).value()[0] == 0.5);
  CHECK(total_loss(a, b, 0.005).value()[0] == doctest::Approx(0.51).epsilon(1e-15));
  CHECK(preset_config("activity").beta == 0.001);
  CHECK(preset_config("tacos").beta == 0.005);
}

TEST_CASE("nms: single candidate, identical spans, errors") {
  CandidateMoment one;
  one.start = 1, one.end = 5, one.score = 0.3;
  auto r = nms({one}, 0.5, 5);
  REQUIRE(r.size() == 1);
  CHECK((r[0].start == 1 && r[0].end == 5 && r[0].score == 0.3));

  CandidateMoment a = one, b = one;
  a.score = 0.8;
  b.score = 0.9;
  r = nms({a, b}, 0.5, 5);
  REQUIRE(r.size() == 1);
  CHECK(r[0].score == 0.9);
  CHECK_THROWS_AS(nms({one}, 0.5, 0), ConfigError);
}

TEST_CASE("nms matches a greedy oracle, sorted and non-overlapping") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 1000; ++trial) {
    const bool coarse = trial % 2 == 1;  // many score ties
    const auto c = random_candidates(rng, 50, coarse);
    const double thr = (trial % 3 == 0) ? 0.3 : 0.55;
    const std::size_t top_n = 1 + trial % 10;
    const auto got = nms(c, thr, top_n);
    const auto want = nms_oracle(c, thr, top_n);
    REQUIRE(got.size() == want.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      CHECK((got[k].start == c[want[k]].start && got[k].end == c[want[k]].end && got[k].score == c[want[k]].score));
      if (k > 0) CHECK(got[k - 1].score >= got[k].score);
      for (std::size_t j = 0; j < k; ++j) CHECK(temporal_iou(got[j].span(), got[k].span()) <= thr);
    }
  }
}

TEST_CASE("refine applies offsets, clamps, and keeps collapsed spans at the anchor") {
  CandidateMoment c;
  c.start = 2, c.end = 6, c.offset_s = -0.5, c.offset_e = 1.25;
  auto r = refine(c, 10);
  CHECK((r.start == 1.5 && r.end == 7.25));
  c.offset_s = -5, c.offset_e = 9;
  r = refine(c, 10);
  CHECK((r.start == 0 && r.end == 10));
  c.offset_s = 5, c.offset_e = -3;
  r = refine(c, 10);
  CHECK((r.start == 2 && r.end == 6));
}

TEST_CASE("predict with zeroed heads ranks by the tie-break rules") {
  Config cfg = toy_config();
  cfg.max_video_len = 8;
  cfg.window_sizes = {2, 4};
  cfg.nms_threshold = 0.55;
  Model<float> model(cfg);
  for (const char* name : {"head.score.w", "head.score.b", "head.offset.w", "head.offset.b"}) {
    model.params().at(name).value.fill(0.0f);
  }
  Sample s = toy_sample(cfg, 3);
  std::mt19937_64 rng(11);
  s.video = random_tensor({8, cfg.d_in}, rng).cast<float>();
  s.label = {2, 5};
  const auto ranked = model.predict(s, 5);
  REQUIRE(!ranked.empty());
  for (const auto& m : ranked) CHECK(m.score == 0.5);

  std::vector<CandidateMoment> c = generate_candidates(8, cfg.window_sizes, cfg.stride_fraction);
  for (auto& m : c) m.score = 0.5;
  const auto want = nms_oracle(c, cfg.nms_threshold, 5);
  REQUIRE(ranked.size() == want.size());
  for (std::size_t k = 0; k < want.size(); ++k) {
    CHECK(ranked[k].start == c[want[k]].start);
    CHECK(ranked[k].end == c[want[k]].end);
  }
  const auto again = model.predict(s, 5);
  for (std::size_t k = 0; k < ranked.size(); ++k) CHECK(again[k].start == ranked[k].start);
}
