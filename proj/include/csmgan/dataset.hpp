#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csmgan/localization.hpp"
#include "csmgan/tensor.hpp"

namespace csmgan {

struct Sample {
  std::string id;
  Tensor<float> video;  // [N_v × d_in]
  Tensor<float> query;  // [N_q × d_g]
  SpanLabel label;

  std::size_t video_len() const { return video.rows(); }
};

/// Throws ContractError if shapes, finiteness or label bounds are violated.
void validate_sample(const Sample& s);

using Dataset = std::vector<Sample>;

struct SyntheticSpec {
  std::size_t n_samples = 32;
  std::size_t n_v = 32;
  std::size_t n_q = 4;
  std::size_t d_in = 16;
  std::size_t d_g = 16;
  std::size_t vocab = 16;
  std::uint64_t seed = 1;
  double noise = 0.1;
  std::size_t min_segment = 2;
  std::size_t max_segment = 8;
};

/// Token tables shared by every sample generated from one seed.
struct TokenTables {
  Tensor<float> frame;  // [vocab × d_in], unit-norm rows
  Tensor<float> word;   // [vocab × d_g], unit-norm rows
};

TokenTables synthetic_tokens(const SyntheticSpec& spec);

/// Each sample draws n_q distinct query tokens and plants them, in order, over
/// a contiguous 2–8 frame segment; every other frame shows a token outside the
/// query. Frame features are token vectors plus N(0, noise²) noise. Fully
/// determined by the seed. Throws ConfigError for infeasible geometry.
Dataset generate_synthetic_dataset(const SyntheticSpec& spec);

// ---- Feature files: "MGF1", u32 rank, rank × u32 dims, float32 payload (little-endian). ----

std::string encode_features(const Tensor<float>& t);
Tensor<float> decode_features(const std::string& bytes);
void save_features(const std::string& path, const Tensor<float>& t);
Tensor<float> load_features(const std::string& path);

// ---- Dataset files: "MGD1", u32 count, then per sample: u32 id length, id
// bytes, f32 label start, f32 label end, video feature block, query feature
// block (each block laid out exactly as a feature file). ----

std::string encode_dataset(const Dataset& ds);
Dataset decode_dataset(const std::string& bytes);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace csmgan
