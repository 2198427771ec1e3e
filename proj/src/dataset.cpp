#include "csmgan/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "csmgan/binary_io.hpp"

namespace csmgan {

void validate_sample(const Sample& s) {
  if (s.video.rank() != 2 || s.video.empty()) throw ContractError("sample '" + s.id + "': video must be a non-empty matrix");
  if (s.query.rank() != 2 || s.query.empty()) throw ContractError("sample '" + s.id + "': query must be a non-empty matrix");
  if (!all_finite(s.video) || !all_finite(s.query)) throw ContractError("sample '" + s.id + "': non-finite features");
  const double n_v = static_cast<double>(s.video.rows());
  if (!(s.label.s >= 0.0 && s.label.s < s.label.e && s.label.e <= n_v)) {
    throw ContractError("sample '" + s.id + "': label (" + std::to_string(s.label.s) + ", " +
                        std::to_string(s.label.e) + ") outside [0, " + std::to_string(s.video.rows()) + "]");
  }
}

namespace {

Tensor<float> unit_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor<float> t = Tensor<float>::zeros(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<double> v(cols);
    double norm = 0;
    for (double& x : v) {
      x = gauss(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < cols; ++j) t(i, j) = static_cast<float>(v[j] / norm);
  }
  return t;
}

void check_spec(const SyntheticSpec& spec) {
  if (spec.n_q < 2) throw ConfigError("synthetic data: n_q must be at least 2");
  if (spec.n_v <= spec.n_q) throw ConfigError("synthetic data: n_v must exceed n_q");
  if (spec.vocab < 8) throw ConfigError("synthetic data: vocab must be at least 8");
  if (spec.vocab <= spec.n_q) throw ConfigError("synthetic data: vocab must exceed n_q to leave distractor tokens");
  if (spec.min_segment < 1 || spec.min_segment > spec.max_segment) {
    throw ConfigError("synthetic data: segment length range is empty");
  }
  if (spec.min_segment >= spec.n_v) throw ConfigError("synthetic data: segments do not fit inside the video");
  if (spec.d_in < 1 || spec.d_g < 1) throw ConfigError("synthetic data: feature widths must be positive");
  if (!(spec.noise >= 0.0)) throw ConfigError("synthetic data: noise must be non-negative");
}

}  // namespace

TokenTables synthetic_tokens(const SyntheticSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  TokenTables tables;
  tables.frame = unit_rows(spec.vocab, spec.d_in, rng);
  tables.word = unit_rows(spec.vocab, spec.d_g, rng);
  return tables;
}

Dataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  check_spec(spec);
  const TokenTables tables = synthetic_tokens(spec);
  // Sample draws use a stream separate from the token tables.
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Dataset ds;
  ds.reserve(spec.n_samples);
  const std::size_t max_len = std::min(spec.max_segment, spec.n_v - 1);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    std::vector<std::size_t> tokens(spec.vocab);
    std::iota(tokens.begin(), tokens.end(), 0);
    std::shuffle(tokens.begin(), tokens.end(), rng);
    const std::vector<std::size_t> query(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(spec.n_q));
    const std::vector<std::size_t> distractors(tokens.begin() + static_cast<std::ptrdiff_t>(spec.n_q), tokens.end());

    const std::size_t len = std::uniform_int_distribution<std::size_t>(spec.min_segment, max_len)(rng);
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, spec.n_v - len)(rng);
    std::uniform_int_distribution<std::size_t> pick(0, distractors.size() - 1);

    Sample s;
    s.id = "synth-" + std::to_string(spec.seed) + "-" + std::to_string(i);
    s.video = Tensor<float>::zeros(spec.n_v, spec.d_in);
    for (std::size_t t = 0; t < spec.n_v; ++t) {
      const bool inside = t >= start && t < start + len;
      const std::size_t token = inside ? query[(t - start) * spec.n_q / len] : distractors[pick(rng)];
      for (std::size_t j = 0; j < spec.d_in; ++j) {
        s.video(t, j) = tables.frame(token, j) + static_cast<float>(spec.noise * gauss(rng));
      }
    }
    s.query = Tensor<float>::zeros(spec.n_q, spec.d_g);
    for (std::size_t n = 0; n < spec.n_q; ++n) {
      for (std::size_t j = 0; j < spec.d_g; ++j) s.query(n, j) = tables.word(query[n], j);
    }
    s.label = {static_cast<double>(start), static_cast<double>(start + len)};
    ds.push_back(std::move(s));
  }
  return ds;
}

namespace {

void write_block(binary::Writer& w, const Tensor<float>& t) {
  w.bytes("MGF1");
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (float v : t.values()) w.f32(v);
}

Tensor<float> read_block(binary::Reader& r) {
  r.expect_magic("MGF1");
  const std::size_t rank_at = r.offset();
  const std::uint32_t rank = r.u32("rank");
  if (rank == 0 || rank > 8) throw ParseError("unsupported tensor rank " + std::to_string(rank), rank_at);
  Shape shape;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::size_t at = r.offset();
    const std::uint32_t d = r.u32("dimension");
    if (d == 0) throw ParseError("zero-sized dimension", at);
    shape.push_back(d);
    count *= d;
  }
  const std::size_t payload_at = r.offset();
  if (r.remaining() / sizeof(float) < count) {
    throw ParseError("payload holds " + std::to_string(r.remaining() / sizeof(float)) + " floats but shape " +
                         shape_string(shape) + " needs " + std::to_string(count),
                     payload_at);
  }
  std::vector<float> values(count);
  for (float& v : values) v = r.f32("payload");
  return Tensor<float>(std::move(shape), std::move(values));
}

}  // namespace

std::string encode_features(const Tensor<float>& t) {
  binary::Writer w;
  write_block(w, t);
  return w.take();
}

Tensor<float> decode_features(const std::string& bytes) {
  if (bytes.empty()) throw ParseError("empty feature file", 0);
  binary::Reader r(bytes);
  Tensor<float> t = read_block(r);
  if (r.remaining() != 0) {
    throw ParseError(std::to_string(r.remaining()) + " trailing bytes after payload of shape " +
                         shape_string(t.shape()),
                     r.offset());
  }
  return t;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

void save_features(const std::string& path, const Tensor<float>& t) { write_file(path, encode_features(t)); }

Tensor<float> load_features(const std::string& path) { return decode_features(read_file(path)); }

std::string encode_dataset(const Dataset& ds) {
  binary::Writer w;
  w.bytes("MGD1");
  w.u32(static_cast<std::uint32_t>(ds.size()));
  for (const Sample& s : ds) {
    w.u32(static_cast<std::uint32_t>(s.id.size()));
    w.bytes(s.id);
    w.f32(static_cast<float>(s.label.s));
    w.f32(static_cast<float>(s.label.e));
    write_block(w, s.video);
    write_block(w, s.query);
  }
  return w.take();
}

Dataset decode_dataset(const std::string& bytes) {
  if (bytes.empty()) throw ParseError("empty dataset file", 0);
  binary::Reader r(bytes);
  r.expect_magic("MGD1");
  const std::uint32_t count = r.u32("sample count");
  Dataset ds;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    Sample s;
    const std::uint32_t id_len = r.u32("id length");
    s.id = std::string(r.bytes(id_len, "id"));
    s.label.s = r.f32("label start");
    s.label.e = r.f32("label end");
    s.video = read_block(r);
    s.query = read_block(r);
    if (s.video.rank() != 2 || s.query.rank() != 2) throw ParseError("sample features must be matrices", at);
    try {
      validate_sample(s);
    } catch (const ContractError& e) {
      throw ParseError(e.what(), at);
    }
    ds.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw ParseError("trailing bytes after last sample", r.offset());
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) { write_file(path, encode_dataset(ds)); }

Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace csmgan
