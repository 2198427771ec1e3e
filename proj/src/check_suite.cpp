#include "csmgan/check_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>

#include "csmgan/encoders.hpp"
#include "csmgan/joint_graph.hpp"
#include "csmgan/localization.hpp"
#include "csmgan/model.hpp"

namespace csmgan {

namespace {

using D = double;

// Inputs live in a ParamStore so grad_check can perturb them like weights.
struct Bench {
  explicit Bench(std::uint64_t seed) : rng(seed), proj_seed(seed * 7919 + 13) {}

  Parameter<D>& input(const std::string& name, Shape shape, double lo = -1.0, double hi = 1.0) {
    Parameter<D>& p = store.zeros(name, shape);
    p.value = random_tensor(p.value.shape(), rng, lo, hi);
    return p;
  }

  // Random values for every registered parameter, so zero-initialised biases
  // do not hide their gradient paths.
  void randomize() {
    for (auto& p : store) p.value = random_tensor(p.value.shape(), rng);
  }

  GradCheckResult check(const std::function<Var<D>(Tape<D>&)>& out, double eps) {
    const std::uint64_t s = proj_seed;
    return grad_check([&](Tape<D>& t) { return random_projection(out(t), s); }, store.pointers(), eps);
  }

  ParamStore<D> store;
  std::mt19937_64 rng;
  std::uint64_t proj_seed;
};

using Check = std::function<GradCheckResult(std::uint64_t, double)>;

// Pushes values at least `gap` away from a kink so no stencil straddles it.
void keep_off(Tensor<D>& t, double kink, double gap) {
  for (auto& v : t.values()) {
    if (std::abs(v - kink) < gap) v = kink + (v < kink ? -gap : gap);
  }
}

Config encoder_config() {
  Config c;
  c.d = 6;
  c.d_g = 4;
  c.d_in = 5;
  return c;
}

const std::vector<std::pair<std::string, Check>>& registry() {
  static const std::vector<std::pair<std::string, Check>> checks = [] {
    std::vector<std::pair<std::string, Check>> r;
    auto unary = [&r](const std::string& name, Shape shape, std::function<Var<D>(const Var<D>&)> op, double lo = -1.0,
                      double hi = 1.0) {
      r.emplace_back(name, [=](std::uint64_t seed, double eps) {
        Bench b(seed);
        auto& x = b.input("x", shape, lo, hi);
        return b.check([&](Tape<D>& t) { return op(t.param(x)); }, eps);
      });
    };
    auto binary = [&r](const std::string& name, Shape sa, Shape sb,
                       std::function<Var<D>(const Var<D>&, const Var<D>&)> op) {
      r.emplace_back(name, [=](std::uint64_t seed, double eps) {
        Bench b(seed);
        auto& x = b.input("a", sa);
        auto& y = b.input("b", sb);
        return b.check([&](Tape<D>& t) { return op(t.param(x), t.param(y)); }, eps);
      });
    };

    binary("matmul", {4, 5}, {5, 3}, [](auto& a, auto& b) { return matmul(a, b); });
    unary("transpose", {3, 4}, [](auto& x) { return transpose(x); });
    binary("add", {3, 4}, {1, 4}, [](auto& a, auto& b) { return add(a, b); });
    binary("sub", {3, 4}, {3, 1}, [](auto& a, auto& b) { return sub(a, b); });
    binary("mul", {3, 4}, {3, 4}, [](auto& a, auto& b) { return mul(a, b); });
    binary("mul_scalar", {3, 4}, {1, 1}, [](auto& a, auto& b) { return mul(a, b); });
    unary("scale", {3, 4}, [](auto& x) { return scale(x, 1.7); });
    unary("add_scalar", {3, 4}, [](auto& x) { return add_scalar(x, -0.3); });
    unary("sigmoid", {3, 4}, [](auto& x) { return sigmoid(x); });
    unary("tanh", {3, 4}, [](auto& x) { return tanh(x); });
    r.emplace_back("relu", [](std::uint64_t seed, double eps) {
      Bench b(seed);
      auto& x = b.input("x", {3, 4});
      keep_off(x.value, 0.0, 1e-3);
      return b.check([&](Tape<D>& t) { return relu(t.param(x)); }, eps);
    });
    unary("softmax_rows", {3, 4}, [](auto& x) { return softmax_rows(x); });
    unary("softmax_cols", {3, 4}, [](auto& x) { return softmax_cols(x); });
    binary("conv1d", {7, 3}, {3, 3, 2}, [](auto& x, auto& k) { return conv1d_same(x, k); });
    binary("conv1d_right_pad", {5, 3}, {3, 3, 2}, [](auto& x, auto& k) { return conv1d(x, k, 0, 2); });
    r.emplace_back("smooth_l1", [](std::uint64_t seed, double eps) {
      Bench b(seed);
      auto& x = b.input("x", {3, 4}, -2.5, 2.5);
      keep_off(x.value, 1.0, 1e-3);
      keep_off(x.value, -1.0, 1e-3);
      return b.check([&](Tape<D>& t) { return smooth_l1(t.param(x)); }, eps);
    });
    unary("sum", {3, 4}, [](auto& x) { return sum(x); });
    unary("mean", {3, 4}, [](auto& x) { return mean(x); });
    unary("slice_rows", {5, 3}, [](auto& x) { return slice_rows(x, 1, 4); });
    unary("slice_cols", {3, 5}, [](auto& x) { return slice_cols(x, 2, 5); });
    unary("select_rows", {5, 3}, [](auto& x) { return select_rows(x, {0, 2, 2, 4}); });
    binary("concat_cols", {3, 2}, {3, 4}, [](auto& a, auto& b) { return concat_cols<D>({a, b, a}); });
    binary("concat_rows", {2, 3}, {4, 3}, [](auto& a, auto& b) { return concat_rows<D>({a, b}); });
    unary("reverse_rows", {4, 3}, [](auto& x) { return reverse_rows(x); });
    r.emplace_back("maximum", [](std::uint64_t seed, double eps) {
      Bench b(seed);
      auto& x = b.input("x", {4, 3});
      auto& y = b.input("y", {4, 3});
      auto& z = b.input("z", {4, 3});
      // Separate near-ties from the running maximum.
      for (std::size_t i = 0; i < x.value.size(); ++i) {
        double& yv = y.value[i];
        double& zv = z.value[i];
        if (std::abs(yv - x.value[i]) < 1e-3) yv += 2e-3;
        const double m = std::max(x.value[i], yv);
        if (std::abs(zv - m) < 1e-3) zv += 2e-3;
      }
      return b.check([&](Tape<D>& t) { return maximum<D>({t.param(x), t.param(y), t.param(z)}); }, eps);
    });
    binary("cosine_similarity", {3, 5}, {4, 5}, [](auto& a, auto& b) { return cosine_similarity(a, b); });
    r.emplace_back("soft_bce", [](std::uint64_t seed, double eps) {
      Bench b(seed);
      auto& x = b.input("logits", {4, 3}, -2.0, 2.0);
      Tensor<D> targets = random_tensor({4, 3}, b.rng, 0.0, 1.0);
      return b.check([&](Tape<D>& t) { return soft_bce(sigmoid(t.param(x)), targets, 1e-7); }, eps);
    });
    for (bool reverse : {false, true}) {
      r.emplace_back(reverse ? "gru_sequence_reverse" : "gru_sequence", [reverse](std::uint64_t seed, double eps) {
        Bench b(seed);
        auto& x = b.input("x_proj", {5, 9});
        auto& w = b.input("w_h", {3, 9});
        auto& bias = b.input("b_h", {1, 9});
        return b.check([&](Tape<D>& t) { return gru_sequence(t.param(x), t.param(w), t.param(bias), reverse); }, eps);
      });
    }

    // Encoders.
    r.emplace_back("self_attention", [](std::uint64_t seed, double eps) {
      Bench b(seed);
      auto& x = b.input("x", {5, 8});
      auto p = SelfAttentionParams<D>::make(b.store, "attn", 8);
      b.randomize();
      return b.check([&](Tape<D>& t) { return self_attention(t, t.param(x), p).out; }, eps);
    });
    r.emplace_back("bigru", [](std::uint64_t seed, double eps) {
      Bench b(seed);
      auto& x = b.input("x", {6, 4});
      auto p = BiGruParams<D>::make(b.store, "gru", 4, 3);
      b.randomize();
      return b.check([&](Tape<D>& t) { return bigru(t, t.param(x), p); }, eps);
    });
    r.emplace_back("encode_video", [](std::uint64_t seed, double eps) {
      Bench b(seed);
      Config c = encoder_config();
      c.d = 8;
      auto& x = b.input("frames", {4, c.d_in});
      auto p = EncoderParams<D>::make(b.store, c);
      b.randomize();
      return b.check([&](Tape<D>& t) { return encode_video(t, t.param(x), p.video); }, eps);
    });
    r.emplace_back("phrase_features", [](std::uint64_t seed, double eps) {
      Bench b(seed);
      Config c = encoder_config();
      auto& x = b.input("words", {4, c.d_g});
      auto p = EncoderParams<D>::make(b.store, c);
      b.randomize();
      return b.check([&](Tape<D>& t) { return phrase_features(t, t.param(x), p.query.phrase).pooled; }, eps);
    });
    for (bool ablate : {false, true}) {
      r.emplace_back(ablate ? "encode_query_flat" : "encode_query", [ablate](std::uint64_t seed, double eps) {
        Bench b(seed);
        Config c = encoder_config();
        c.ablation.disable_hierarchy = ablate;
        auto& x = b.input("words", {3, c.d_g});
        auto p = EncoderParams<D>::make(b.store, c);
        b.randomize();
        return b.check([&](Tape<D>& t) { return encode_query(t, t.param(x), p.query, ablate); }, eps);
      });
    }

    // Joint graph.
    r.emplace_back("cross_attention", [](std::uint64_t seed, double eps) {
      Bench b(seed);
      auto& hq = b.input("hq", {3, 6});
      auto& hv = b.input("hv", {5, 6});
      auto p = GraphLayerParams<D>::make(b.store, "g", 6, 3);
      b.randomize();
      return b.check([&](Tape<D>& t) { return cross_attention(t, t.param(hq), t.param(hv), p, false); }, eps);
    });
    for (Direction dir : {Direction::kWordsToFrames, Direction::kFramesToWords}) {
      const bool to_frames = dir == Direction::kWordsToFrames;
      r.emplace_back(to_frames ? "gated_aggregate_to_frames" : "gated_aggregate_to_words",
                     [dir, to_frames](std::uint64_t seed, double eps) {
                       Bench b(seed);
                       auto& e = b.input("e", {3, 4}, -2.0, 2.0);
                       auto& src = b.input("source", {to_frames ? 3u : 4u, 6});
                       auto p = GraphLayerParams<D>::make(b.store, "g", 6, 3);
                       b.randomize();
                       const GateParams<D>& gate = to_frames ? p.gate_to_frames : p.gate_to_words;
                       return b.check(
                           [&](Tape<D>& t) { return gated_aggregate(t, t.param(e), t.param(src), dir, gate, false).messages; },
                           eps);
                     });
    }
    r.emplace_back("conv_gru_update", [](std::uint64_t seed, double eps) {
      Bench b(seed);
      auto& h = b.input("h_prev", {5, 6});
      auto& m = b.input("m", {5, 6});
      auto p = ConvGruParams<D>::make(b.store, "cg", 6, 3);
      b.randomize();
      return b.check([&](Tape<D>& t) { return conv_gru_update(t, t.param(h), t.param(m), p, false); }, eps);
    });
    r.emplace_back("smg_layer", [](std::uint64_t seed, double eps) {
      Bench b(seed);
      auto& h = b.input("h", {4, 6});
      auto p = ConvGruParams<D>::make(b.store, "cg", 6, 3);
      b.randomize();
      return b.check([&](Tape<D>& t) { return smg_layer(t, t.param(h), p, 1.0, false, false).out; }, eps);
    });
    r.emplace_back("joint_graph", [](std::uint64_t seed, double eps) {
      Bench b(seed);
      auto& hv = b.input("hv", {4, 8});
      auto& hq = b.input("hq", {3, 8});
      std::vector<GraphLayerParams<D>> layers;
      for (int l = 0; l < 2; ++l) layers.push_back(GraphLayerParams<D>::make(b.store, "g" + std::to_string(l), 8, 3));
      b.randomize();
      return b.check(
          [&](Tape<D>& t) {
            NodeStates<D> s = joint_graph_forward(t, NodeStates<D>{t.param(hv), t.param(hq), 0}, layers, AblationFlags{}, 1.0);
            return concat_rows<D>({s.hv, s.hq});
          },
          eps);
    });

    // Localization.
    r.emplace_back("integrate", [](std::uint64_t seed, double eps) {
      Bench b(seed);
      auto& v = b.input("v", {4, 6});
      auto& q = b.input("q", {3, 6});
      auto p = HeadParams<D>::make(b.store, 6, 2, 3);
      b.randomize();
      return b.check([&](Tape<D>& t) { return integrate(t, t.param(v), t.param(q), p).f; }, eps);
    });
    r.emplace_back("score_and_offset", [](std::uint64_t seed, double eps) {
      Bench b(seed);
      auto& f = b.input("f", {6, 8});
      auto p = HeadParams<D>::make(b.store, 4, 2, 3);
      b.randomize();
      return b.check(
          [&](Tape<D>& t) {
            HeadOutput<D> h = score_and_offset(t, t.param(f), p, {0, 2, 4});
            return concat_cols<D>({h.scores, h.offsets});
          },
          eps);
    });
    r.emplace_back("losses", [](std::uint64_t seed, double eps) {
      Bench b(seed);
      const auto cands = generate_candidates(10, {2, 4}, 0.5);
      auto& logits = b.input("logits", {cands.size() / 2, 2}, -2.0, 2.0);
      auto& offsets = b.input("offsets", {cands.size() / 2, 4}, -2.0, 2.0);
      const SpanLabel gt{2.5, 6.0};
      return grad_check(
          [&](Tape<D>& t) {
            Var<D> align = alignment_loss(sigmoid(t.param(logits)), cands, gt);
            Var<D> bound = boundary_loss(t.param(offsets), cands, gt, 0.3);
            return total_loss(align, bound, 0.5);
          },
          b.store.pointers(), eps);
    });

    r.emplace_back("model", [](std::uint64_t seed, double eps) {
      const Config cfg = toy_config();
      Model<D> model(cfg);
      std::mt19937_64 rng(seed);
      for (auto& p : model.params()) p.value = random_tensor(p.value.shape(), rng);
      const Sample s = toy_sample(cfg, seed);
      return grad_check(
          [&](Tape<D>& t) {
            auto fw = model.forward(t, s);
            return model.loss(fw, s.label).total;
          },
          model.params().pointers(), eps);
    });
    return r;
  }();
  return checks;
}

}  // namespace

const std::vector<std::string>& gradcheck_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, fn] : registry()) out.push_back(name);
    return out;
  }();
  return names;
}

GradCheckResult run_gradcheck(const std::string& name, std::uint64_t seed, double eps) {
  for (const auto& [n, fn] : registry()) {
    if (n == name) return fn(seed, eps);
  }
  throw ContractError("unknown gradcheck op '" + name + "'");
}

Config toy_config() {
  Config c;
  c.d = 8;
  c.d_g = 4;
  c.d_in = 6;
  c.max_video_len = 4;
  c.layers = 2;
  c.window_sizes = {2, 4};
  c.stride_fraction = 0.5;
  c.tau = 0.3;
  c.beta = 0.5;
  return c;
}

Sample toy_sample(const Config& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xabcdefULL);
  Sample s;
  s.id = "toy";
  s.video = random_tensor({4, cfg.d_in}, rng).cast<float>();
  s.query = random_tensor({3, cfg.d_g}, rng).cast<float>();
  s.label = {1.0, 3.0};
  return s;
}

}  // namespace csmgan
