#pragma once

#include <memory>
#include <string>
#include <vector>

#include "csmgan/config.hpp"
#include "csmgan/model.hpp"
#include "csmgan/train.hpp"

namespace csmgan {

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

/// On disk: "MGC1", u32 format version, u32 config length, config text,
/// u64 optimiser step, u32 record count, then records of (u32 name length,
/// name bytes, u32 rank, rank × u32 dims, float32 payload). Parameter records
/// are named "param/<name>"; moment records "adam.m/<name>" and "adam.v/<name>".
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  Config config;
  std::vector<NamedTensor> params;
  AdamState optimizer;  // may be empty
};

Checkpoint make_checkpoint(const Model<float>& model, const AdamState* optimizer = nullptr);

std::string encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint tensors into a model. Every model parameter must be
/// present with the same shape and no extras are allowed; the error names
/// the offending tensor.
void restore_parameters(Model<float>& model, const Checkpoint& ck);

/// Builds a model from the checkpoint's own config and restores it.
std::unique_ptr<Model<float>> model_from_checkpoint(const Checkpoint& ck);

}  // namespace csmgan
