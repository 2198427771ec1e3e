#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include <unistd.h>

#include "csmgan/checkpoint.hpp"
#include "csmgan/config.hpp"
#include "csmgan/dataset.hpp"
#include "csmgan/metrics.hpp"
#include "csmgan/model.hpp"
#include "csmgan/train.hpp"

using namespace csmgan;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  fs::path p = fs::temp_directory_path() / ("csmgan_harness_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& s, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(s, bits);
}

// Small model and data that train in well under a second per epoch.
Config small_config(std::uint64_t seed = 1) {
  Config c = preset_config("synthetic");
  c.d = 16;
  c.d_g = 8;
  c.d_in = 8;
  c.max_video_len = 16;
  c.window_sizes = {2, 4, 8};
  c.synth_video_len = 16;
  c.synth_samples = 8;
  c.seed = seed;
  return c;
}

Dataset small_data(const Config& c, std::size_t n = 8, std::uint64_t seed = 3) {
  return generate_synthetic_dataset(synthetic_spec(c, n, seed));
}

// Raw scores and offsets on every sample, as a probe of the whole forward pass.
std::vector<Tensor<float>> probe(Model<float>& m, const Dataset& ds) {
  std::vector<Tensor<float>> out;
  for (const Sample& s : ds) {
    Tape<float> tape;
    tape.set_grad_enabled(false);
    auto fw = m.forward(tape, s);
    out.push_back(fw.head.scores.value());
    out.push_back(fw.head.offsets.value());
  }
  return out;
}

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(float)) == 0;
}

bool all_bit_equal(const std::vector<Tensor<float>>& a, const std::vector<Tensor<float>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!bit_equal(a[i], b[i])) return false;
  }
  return true;
}

std::string what_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("config parse applies preset first and overrides after") {
  const Config c = parse_config("# toy\nd = 64   # wider\nlearning_rate = 2e-3\npreset = tacos\n\ndisable_smg = true\n");
  CHECK(c.preset == "tacos");
  CHECK(c.d == 64);
  CHECK(c.learning_rate == 2e-3);
  CHECK(c.window_sizes == std::vector<std::size_t>{8, 16, 32, 64});
  CHECK(c.ablation.disable_smg);
  CHECK_FALSE(c.ablation.disable_gate);
}

TEST_CASE("config errors name the line") {
  CHECK(what_of([] { parse_config("d = 32\nbogus = 1\n"); }).find("line 2") != std::string::npos);
  CHECK(what_of([] { parse_config("d = 32\nd\n"); }).find("line 2") != std::string::npos);
  CHECK(what_of([] { parse_config("\n\nlearning_rate = fast\n"); }).find("line 3") != std::string::npos);
  CHECK_THROWS_AS(parse_config("d = 33\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("tau = 1.0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("tau = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("beta = -0.1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("preset = imagenet\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("window_sizes = 4, x\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("disable_gate = maybe\n"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/csmgan.cfg"), ConfigError);
}

TEST_CASE("config serialization round trips every preset") {
  for (const std::string& name : preset_names()) {
    Config c = preset_config(name);
    CHECK_NOTHROW(c.validate());
    CHECK(parse_config(serialize_config(c)) == c);
  }
  Config odd = small_config(7);
  odd.alpha = 0.1 + 0.2;
  odd.ablation.additive_update = true;
  odd.ablation.disable_pos_enc = true;
  odd.layers = 0;
  odd.grad_clip = 1.0 / 3.0;
  odd.train_data = "data/train.mgd";
  CHECK(parse_config(serialize_config(odd)) == odd);
}

TEST_CASE("presets carry the published hyperparameters") {
  const Config act = preset_config("activity");
  CHECK(act.learning_rate == 8e-4);
  CHECK(act.batch_size == 128);
  CHECK(act.window_sizes == std::vector<std::size_t>{16, 32, 64, 96, 128, 160, 192});
  CHECK(act.stride_fraction == 0.5);
  CHECK(act.tau == 0.45);
  CHECK(act.beta == 0.001);
  CHECK(act.layers == 2);
  CHECK(act.max_video_len == 200);
  CHECK(act.d_in == 500);
  CHECK(act.d_g == 300);
  CHECK(act.d == 512);
  CHECK(act.alpha == 1.0);

  const Config tac = preset_config("tacos");
  CHECK(tac.learning_rate == 3e-4);
  CHECK(tac.batch_size == 64);
  CHECK(tac.window_sizes == std::vector<std::size_t>{8, 16, 32, 64});
  CHECK(tac.stride_fraction == 0.125);
  CHECK(tac.beta == 0.005);

  const Config cha = preset_config("charades");
  CHECK(cha.window_sizes == std::vector<std::size_t>{16, 24, 32, 40});
  CHECK(cha.stride_fraction == 0.25);
  CHECK(cha.tau == 0.5);
  CHECK(cha.beta == 0.005);

  const Config did = preset_config("didemo");
  CHECK(did.window_sizes == std::vector<std::size_t>{16, 32, 64, 96});
  CHECK(did.stride_fraction == 0.25);
  CHECK(did.tau == 0.5);
  CHECK(did.beta == 0.005);

  const Config syn = preset_config("synthetic");
  CHECK(syn.adam_beta1 == 0.9);
  CHECK(syn.adam_beta2 == 0.999);
  CHECK(syn.adam_eps == 1e-8);
  CHECK(syn.grad_clip == 0.0);
}

TEST_CASE("metric grids") {
  const MetricGrid act{{1, 0.3}, {1, 0.5}, {1, 0.7}, {5, 0.3}, {5, 0.5}, {5, 0.7}};
  const MetricGrid tac{{1, 0.1}, {1, 0.3}, {1, 0.5}, {5, 0.1}, {5, 0.3}, {5, 0.5}};
  CHECK(metric_grid("activity") == act);
  CHECK(metric_grid("tacos") == tac);
  CHECK(metric_grid("charades") == MetricGrid{{1, 0.5}, {1, 0.7}, {5, 0.5}, {5, 0.7}});
  CHECK(metric_grid("didemo") == metric_grid("charades"));
  CHECK_THROWS_AS(metric_grid("kinetics"), ConfigError);
}

TEST_CASE("synthetic data is deterministic and well formed") {
  SyntheticSpec spec;
  spec.n_samples = 64;
  spec.seed = 11;
  const Dataset a = generate_synthetic_dataset(spec);
  const Dataset b = generate_synthetic_dataset(spec);
  REQUIRE(a.size() == 64);
  REQUIRE(b.size() == 64);
  CHECK(encode_dataset(a) == encode_dataset(b));
  spec.seed = 12;
  CHECK(encode_dataset(generate_synthetic_dataset(spec)) != encode_dataset(a));

  for (const Sample& s : a) {
    CHECK(s.video.shape() == Shape{32, 16});
    CHECK(s.query.shape() == Shape{4, 16});
    CHECK(s.label.s >= 0.0);
    CHECK(s.label.s < s.label.e);
    CHECK(s.label.e <= 32.0);
    const double len = s.label.e - s.label.s;
    CHECK(len >= 2.0);
    CHECK(len <= 8.0);
    CHECK(s.label.s == std::floor(s.label.s));
    CHECK(s.label.e == std::floor(s.label.e));
    CHECK_NOTHROW(validate_sample(s));
  }
}

TEST_CASE("noise-free synthetic span is recovered by nearest neighbours") {
  SyntheticSpec spec;
  spec.n_samples = 100;
  spec.noise = 0.0;
  spec.seed = 5;
  const TokenTables tok = synthetic_tokens(spec);
  const Dataset ds = generate_synthetic_dataset(spec);
  auto nearest = [](const Tensor<float>& table, const Tensor<float>& m, std::size_t row) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t v = 0; v < table.rows(); ++v) {
      double dist = 0;
      for (std::size_t c = 0; c < table.cols(); ++c) {
        const double diff = static_cast<double>(table(v, c)) - m(row, c);
        dist += diff * diff;
      }
      if (dist < best_d) best_d = dist, best = v;
    }
    return best;
  };
  for (const Sample& s : ds) {
    std::vector<std::size_t> qtok;
    for (std::size_t w = 0; w < s.query.rows(); ++w) qtok.push_back(nearest(tok.word, s.query, w));
    std::vector<bool> hit;
    for (std::size_t t = 0; t < s.video.rows(); ++t) {
      const std::size_t f = nearest(tok.frame, s.video, t);
      hit.push_back(std::find(qtok.begin(), qtok.end(), f) != qtok.end());
    }
    const auto first = std::find(hit.begin(), hit.end(), true);
    const auto last = std::find(hit.rbegin(), hit.rend(), true);
    REQUIRE(first != hit.end());
    const double s0 = static_cast<double>(first - hit.begin());
    const double e0 = static_cast<double>(hit.rend() - last);
    CHECK(s0 == s.label.s);
    CHECK(e0 == s.label.e);
    CHECK(std::all_of(first, hit.begin() + static_cast<std::ptrdiff_t>(e0), [](bool b) { return b; }));
  }
}

TEST_CASE("synthetic geometry errors") {
  auto bad = [](auto mutate) {
    SyntheticSpec s;
    mutate(s);
    return s;
  };
  CHECK_THROWS_AS(generate_synthetic_dataset(bad([](SyntheticSpec& s) { s.n_q = 1; })), ConfigError);
  CHECK_THROWS_AS(generate_synthetic_dataset(bad([](SyntheticSpec& s) { s.n_v = 4; })), ConfigError);
  CHECK_THROWS_AS(generate_synthetic_dataset(bad([](SyntheticSpec& s) { s.vocab = 7; })), ConfigError);
  CHECK_THROWS_AS(generate_synthetic_dataset(bad([](SyntheticSpec& s) {
                    s.vocab = 8;
                    s.n_q = 8;
                    s.n_v = 20;
                  })),
                  ConfigError);
  CHECK_THROWS_AS(generate_synthetic_dataset(bad([](SyntheticSpec& s) { s.noise = -1; })), ConfigError);
  CHECK_NOTHROW(generate_synthetic_dataset(bad([](SyntheticSpec& s) {
    s.n_v = 3;
    s.n_q = 2;
    s.vocab = 8;
  })));
}

TEST_CASE("feature file of known bytes") {
  std::string bytes = "MGF1";
  put_u32(bytes, 2);
  put_u32(bytes, 2);
  put_u32(bytes, 3);
  const float vals[6] = {1.0f, -2.5f, 0.125f, 3e-8f, 65504.0f, -0.0f};
  for (float v : vals) put_f32(bytes, v);
  REQUIRE(bytes.size() == 4 + 4 + 8 + 24);

  const Tensor<float> t = decode_features(bytes);
  CHECK(t.shape() == Shape{2, 3});
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::memcmp(&t[i], &vals[i], 4) == 0);
  CHECK(encode_features(t) == bytes);

  const fs::path p = scratch_dir() / "known.mgf";
  write_file(p.string(), bytes);
  CHECK(bit_equal(load_features(p.string()), t));
  save_features(p.string(), t);
  CHECK(read_file(p.string()) == bytes);
}

TEST_CASE("feature file parse errors carry offsets") {
  auto offset_of = [](const std::string& b) -> long {
    try {
      decode_features(b);
    } catch (const ParseError& e) {
      return static_cast<long>(e.offset());
    }
    return -1;
  };
  std::string good = "MGF1";
  put_u32(good, 2);
  put_u32(good, 2);
  put_u32(good, 3);
  for (int i = 0; i < 6; ++i) put_f32(good, static_cast<float>(i));

  CHECK(offset_of("") == 0);
  CHECK(offset_of("MGX1" + good.substr(4)) == 0);
  CHECK(offset_of(good.substr(0, 6)) >= 4);
  CHECK(offset_of(good.substr(0, good.size() - 1)) >= 16);
  CHECK(offset_of(good + "x") == static_cast<long>(good.size()));
  std::string zero = good;
  zero[12] = 0;
  CHECK(offset_of(zero) >= 12);
  std::string rank0 = "MGF1";
  put_u32(rank0, 0);
  CHECK(offset_of(rank0) == 4);
  // Shape declares 2 × 4 but payload holds 6 floats.
  std::string mismatch = good;
  mismatch[12] = 4;
  CHECK(offset_of(mismatch) >= 16);
  CHECK_THROWS(load_features("/nonexistent/x.mgf"));
}

TEST_CASE("dataset file round trip") {
  const Config c = small_config();
  Dataset ds = small_data(c, 5);
  ds[2].id = "clip with spaces";
  const std::string bytes = encode_dataset(ds);
  CHECK(bytes.substr(0, 4) == "MGD1");
  const Dataset back = decode_dataset(bytes);
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back[i].id == ds[i].id);
    CHECK(back[i].label.s == ds[i].label.s);
    CHECK(back[i].label.e == ds[i].label.e);
    CHECK(bit_equal(back[i].video, ds[i].video));
    CHECK(bit_equal(back[i].query, ds[i].query));
  }
  CHECK(encode_dataset(back) == bytes);
  const fs::path p = scratch_dir() / "ds.mgd";
  save_dataset(p.string(), ds);
  CHECK(encode_dataset(load_dataset(p.string())) == bytes);

  CHECK_THROWS_AS(decode_dataset(""), ParseError);
  CHECK_THROWS_AS(decode_dataset(bytes.substr(0, bytes.size() - 3)), ParseError);
  CHECK_THROWS_AS(decode_dataset(bytes + std::string(1, '\0')), ParseError);
}

TEST_CASE("sample validation") {
  const Config c = small_config();
  Sample s = small_data(c, 1)[0];
  Sample nan = s;
  nan.video(0, 0) = NAN;
  CHECK_THROWS_AS(validate_sample(nan), ContractError);
  Sample late = s;
  late.label = {3.0, 17.0};
  CHECK_THROWS_AS(validate_sample(late), ContractError);
  Sample inverted = s;
  inverted.label = {5.0, 5.0};
  CHECK_THROWS_AS(validate_sample(inverted), ContractError);

  Model<float> m(c);
  Sample wide = s;
  wide.video = Tensor<float>::zeros(16, 9);
  CHECK_THROWS_AS(m.predict(wide), DimensionError);
  Sample longv = s;
  longv.video = Tensor<float>::zeros(17, 8);
  CHECK_THROWS_AS(m.predict(longv), DimensionError);
  Sample words = s;
  words.query = Tensor<float>::zeros(4, 6);
  CHECK_THROWS_AS(m.predict(words), DimensionError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Config c = small_config(4);
  const Dataset ds = small_data(c);
  TrainOptions opts;
  opts.max_steps = 3;
  TrainResult r = train(c, ds, opts);
  REQUIRE(r.optimizer.step == 3);

  const Checkpoint ck = make_checkpoint(*r.model, &r.optimizer);
  const std::string bytes = encode_checkpoint(ck);
  CHECK(bytes.substr(0, 4) == "MGC1");
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.config == c);
  CHECK(back.optimizer.step == 3);
  REQUIRE(back.optimizer.m.size() == r.optimizer.m.size());
  for (std::size_t i = 0; i < back.optimizer.m.size(); ++i) {
    CHECK(bit_equal(back.optimizer.m[i], r.optimizer.m[i]));
    CHECK(bit_equal(back.optimizer.v[i], r.optimizer.v[i]));
  }
  CHECK(encode_checkpoint(back) == bytes);

  const fs::path p = scratch_dir() / "model.mgc";
  save_checkpoint(p.string(), ck);
  auto restored = model_from_checkpoint(load_checkpoint(p.string()));
  CHECK(all_bit_equal(probe(*r.model, ds), probe(*restored, ds)));

  // Restoring into a fresh model of the same config also reproduces the probe.
  Config other = c;
  other.seed = 99;
  Model<float> fresh(other);
  CHECK_FALSE(all_bit_equal(probe(fresh, ds), probe(*r.model, ds)));
  restore_parameters(fresh, back);
  CHECK(all_bit_equal(probe(fresh, ds), probe(*r.model, ds)));

  // Parameters only, no optimiser moments.
  const Checkpoint bare = decode_checkpoint(encode_checkpoint(make_checkpoint(*r.model)));
  CHECK(bare.optimizer.m.empty());
  CHECK(all_bit_equal(probe(*model_from_checkpoint(bare), ds), probe(*r.model, ds)));
}

TEST_CASE("checkpoint load errors") {
  const Config c = small_config();
  Model<float> m(c);
  const std::string bytes = encode_checkpoint(make_checkpoint(m));

  CHECK_THROWS_AS(decode_checkpoint(""), ParseError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{7}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, cut)), ParseError);
  }
  CHECK_THROWS_AS(decode_checkpoint(bytes + "z"), ParseError);
  std::string magic = bytes;
  magic[3] = '2';
  CHECK_THROWS_AS(decode_checkpoint(magic), ParseError);
  std::string version = bytes;
  version[4] = 2;
  CHECK(what_of([&] { decode_checkpoint(version); }).find("version 2") != std::string::npos);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/model.mgc"), std::exception);
}

TEST_CASE("ablated checkpoint refuses to load into the full model") {
  Config full = small_config();
  Config flat = full;
  flat.ablation.disable_hierarchy = true;
  Model<float> a(flat);
  Model<float> b(full);
  const std::string msg = what_of([&] { restore_parameters(b, make_checkpoint(a)); });
  CHECK(msg.find("query.") != std::string::npos);
  CHECK_THROWS_AS(restore_parameters(b, make_checkpoint(a)), ContractError);
  CHECK_THROWS_AS(restore_parameters(a, make_checkpoint(b)), ContractError);

  Config shallow = full;
  shallow.layers = 1;
  Model<float> s(shallow);
  CHECK(what_of([&] { restore_parameters(b, make_checkpoint(s)); }).find("graph1.") != std::string::npos);

  Config wider = full;
  wider.d = 20;
  Model<float> w(wider);
  CHECK(what_of([&] { restore_parameters(b, make_checkpoint(w)); }).find("shape") != std::string::npos);
}

namespace {

// Counts hits with nested loops over explicit overlap arithmetic.
double recall_oracle(const std::vector<Ranked>& preds, const std::vector<SpanLabel>& labels, std::size_t n, double m) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    bool any = false;
    for (std::size_t k = 0; k < preds[i].size() && k < n; ++k) {
      const double lo = std::max(preds[i][k].start, labels[i].s);
      const double hi = std::min(preds[i][k].end, labels[i].e);
      const double inter = hi > lo ? hi - lo : 0.0;
      const double uni = (preds[i][k].end - preds[i][k].start) + (labels[i].e - labels[i].s) - inter;
      if (uni > 0 && inter / uni >= m) any = true;
    }
    hits += any ? 1 : 0;
  }
  return preds.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(preds.size());
}

std::pair<std::vector<Ranked>, std::vector<SpanLabel>> random_predictions(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> count(1, 30), ranks(0, 8), grid(0, 20);
  const std::size_t n = count(rng);
  std::vector<Ranked> preds(n);
  std::vector<SpanLabel> labels(n);
  auto span = [&] {
    std::size_t a = grid(rng), b = grid(rng);
    if (a == b) ++b;
    if (a > b) std::swap(a, b);
    return std::pair<double, double>(static_cast<double>(a), static_cast<double>(b));
  };
  for (std::size_t i = 0; i < n; ++i) {
    auto [s, e] = span();
    labels[i] = {s, e};
    const std::size_t k = ranks(rng);
    for (std::size_t j = 0; j < k; ++j) {
      auto [ps, pe] = span();
      CandidateMoment c;
      c.start = ps;
      c.end = pe;
      c.score = 1.0 - 0.1 * static_cast<double>(j);
      preds[i].push_back(c);
    }
  }
  return {preds, labels};
}

}  // namespace

TEST_CASE("recall matches a counting oracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    auto [preds, labels] = random_predictions(rng);
    for (std::size_t n : {1, 2, 5, 10}) {
      for (double m : {0.0, 0.1, 0.3, 0.5, 0.7, 1.0}) CHECK(recall_at_n_iou(preds, labels, n, m) == recall_oracle(preds, labels, n, m));
    }
  }
}

TEST_CASE("recall properties") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    auto [preds, labels] = random_predictions(rng);
    for (double m : {0.1, 0.3, 0.5, 0.7}) {
      CHECK(recall_at_n_iou(preds, labels, 5, m) >= recall_at_n_iou(preds, labels, 1, m));
      CHECK(recall_at_n_iou(preds, labels, 1, m) >= recall_at_n_iou(preds, labels, 1, m + 0.2));
    }
    std::vector<Ranked> perfect(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      CandidateMoment c;
      c.start = labels[i].s;
      c.end = labels[i].e;
      perfect[i] = {c};
    }
    for (double m : {0.1, 0.5, 0.9, 1.0}) CHECK(recall_at_n_iou(perfect, labels, 1, m) == 1.0);
  }
}

TEST_CASE("evaluate") {
  const Config c = small_config(2);
  Model<float> m(c);
  const Dataset ds = small_data(c, 12);
  CHECK_THROWS_AS(evaluate(m, Dataset{}, metric_grid("activity")), ContractError);

  const MetricTable t1 = evaluate(m, ds, metric_grid("activity"));
  EvalOptions par;
  par.threads = 3;
  const MetricTable t3 = evaluate(m, ds, metric_grid("activity"), par);
  CHECK(t1.samples == 12);
  REQUIRE(t1.rows.size() == 6);
  for (std::size_t i = 0; i < t1.rows.size(); ++i) CHECK(t1.rows[i].recall == t3.rows[i].recall);
  for (double mm : {0.3, 0.5, 0.7}) CHECK(t1.at(5, mm) >= t1.at(1, mm));
  CHECK(t1.at(1, 0.3) >= t1.at(1, 0.5));
  CHECK(t1.at(1, 0.5) >= t1.at(1, 0.7));
  CHECK_THROWS_AS(t1.at(3, 0.5), ContractError);

  const auto p1 = predict_all(m, ds, 5);
  const auto p3 = predict_all(m, ds, 5, par);
  REQUIRE(p1.size() == p3.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    REQUIRE(p1[i].size() == p3[i].size());
    CHECK(p1[i].size() <= 5);
    for (std::size_t k = 0; k < p1[i].size(); ++k) {
      CHECK(p1[i][k].start == p3[i][k].start);
      CHECK(p1[i][k].end == p3[i][k].end);
      CHECK(p1[i][k].score == p3[i][k].score);
    }
  }
  std::vector<SpanLabel> labels;
  for (const Sample& s : ds) labels.push_back(s.label);
  CHECK(t1.at(1, 0.5) == recall_at_n_iou(p1, labels, 1, 0.5));

  const std::string text = t1.text();
  CHECK(text.find("R@1") != std::string::npos);
  CHECK(text.find("R@5") != std::string::npos);
  const std::string jl = t1.json_lines();
  CHECK(std::count(jl.begin(), jl.end(), '\n') == 6);
  CHECK(jl.find("\"iou\"") != std::string::npos);
}

TEST_CASE("Adam update matches the bias-corrected rule") {
  Config c = small_config();
  c.learning_rate = 0.01;
  ParamStore<float> store;
  Parameter<float>& p = store.constant("w", Shape{1, 3}, 0.5);
  Adam opt(store, c);
  const float g1[3] = {1.0f, -2.0f, 0.0f};
  const float g2[3] = {0.5f, 0.5f, 3.0f};
  double m[3] = {0, 0, 0}, v[3] = {0, 0, 0}, w[3] = {0.5, 0.5, 0.5};
  for (int step = 1; step <= 2; ++step) {
    const float* g = step == 1 ? g1 : g2;
    for (int k = 0; k < 3; ++k) {
      p.grad[k] = g[k];
      m[k] = 0.9 * m[k] + 0.1 * g[k];
      v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
      const double mh = m[k] / (1 - std::pow(0.9, step));
      const double vh = v[k] / (1 - std::pow(0.999, step));
      w[k] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
    opt.step();
    for (int k = 0; k < 3; ++k) CHECK(p.value[k] == doctest::Approx(w[k]).epsilon(1e-6));
  }
  CHECK(opt.state().step == 2);
}

TEST_CASE("gradient clipping bounds the global norm") {
  Config c = small_config();
  c.learning_rate = 1.0;
  c.grad_clip = 1.0;
  ParamStore<float> a, b;
  Parameter<float>& pa = a.constant("w", Shape{1, 2}, 0.0);
  Parameter<float>& pb = b.constant("w", Shape{1, 2}, 0.0);
  pa.grad[0] = 30.0f, pa.grad[1] = 40.0f;
  pb.grad[0] = 0.6f, pb.grad[1] = 0.8f;
  Adam oa(a, c), ob(b, c);
  oa.step();
  ob.step();
  CHECK(oa.state().m[0][0] == doctest::Approx(ob.state().m[0][0]).epsilon(1e-6));
  CHECK(oa.state().v[0][1] == doctest::Approx(ob.state().v[0][1]).epsilon(1e-6));
}

TEST_CASE("training is bit-exact deterministic") {
  Config c = small_config(6);
  c.epochs = 2;
  const Dataset ds = small_data(c, 10);
  const TrainResult a = train(c, ds);
  const TrainResult b = train(c, ds);
  REQUIRE(a.step_losses.size() == 6);
  CHECK(a.step_losses == b.step_losses);
  REQUIRE(a.epochs.size() == 2);
  CHECK(a.epochs[1].mean_loss == b.epochs[1].mean_loss);
  CHECK(all_bit_equal(probe(*a.model, ds), probe(*b.model, ds)));

  Config other = c;
  other.seed = 7;
  CHECK(train(other, ds).step_losses != a.step_losses);

  TrainOptions stop;
  stop.on_epoch = [](const EpochStats& s, Model<float>&) { return s.epoch < 1; };
  CHECK(train(c, ds, stop).epochs.size() == 1);
  TrainOptions capped;
  capped.max_steps = 4;
  const TrainResult cr = train(c, ds, capped);
  CHECK(cr.step_losses.size() == 4);
  CHECK(std::equal(cr.step_losses.begin(), cr.step_losses.end(), a.step_losses.begin()));
  CHECK_THROWS_AS(train(c, Dataset{}), ContractError);
}

TEST_CASE("toy training loss decreases over the first five epochs") {
  int decreasing = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Config c = preset_config("synthetic");
    c.seed = seed;
    c.epochs = 5;
    const Dataset ds = generate_synthetic_dataset(synthetic_spec(c, 32, seed));
    const TrainResult r = train(c, ds);
    REQUIRE(r.epochs.size() == 5);
    bool ok = true;
    for (std::size_t e = 1; e < 5; ++e) ok = ok && r.epochs[e].mean_loss < r.epochs[e - 1].mean_loss;
    MESSAGE("seed " << seed << " epoch losses " << r.epochs[0].mean_loss << " .. " << r.epochs[4].mean_loss);
    decreasing += ok ? 1 : 0;
  }
  CHECK(decreasing >= 4);
}

TEST_CASE("non-finite values abort training with the op name") {
  Config c = small_config();
  c.learning_rate = 1e30;
  c.epochs = 3;
  const Dataset ds = small_data(c);
  const std::string msg = what_of([&] { train(c, ds); });
  CHECK(msg.find("non-finite value produced by") != std::string::npos);
  CHECK_THROWS_AS(train(c, ds), NumericError);
}

TEST_CASE("ablation flags toggle and untoggle at model level") {
  const Config base = small_config(8);
  const Dataset ds = small_data(base, 4);
  Model<float> ref(base);
  const auto baseline = probe(ref, ds);
  const std::vector<bool AblationFlags::*> flags{
      &AblationFlags::disable_hierarchy, &AblationFlags::disable_joint_graph, &AblationFlags::disable_hetero_embed,
      &AblationFlags::disable_gate,      &AblationFlags::disable_smg,         &AblationFlags::disable_pos_enc,
      &AblationFlags::additive_update};
  for (auto flag : flags) {
    Config on = base;
    on.ablation.*flag = true;
    Model<float> ablated(on);
    CHECK_FALSE(all_bit_equal(probe(ablated, ds), baseline));
    Config off = on;
    off.ablation.*flag = false;
    Model<float> back(off);
    CHECK(all_bit_equal(probe(back, ds), baseline));
  }
}
