#include "csmgan/checkpoint.hpp"

#include <map>

#include "csmgan/binary_io.hpp"

namespace csmgan {

Checkpoint make_checkpoint(const Model<float>& model, const AdamState* optimizer) {
  Checkpoint ck;
  ck.config = model.config();
  for (const auto& p : model.params()) ck.params.push_back({p.name, p.value});
  if (optimizer) ck.optimizer = *optimizer;
  return ck;
}

namespace {

void write_record(binary::Writer& w, const std::string& name, const Tensor<float>& t) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (float v : t.values()) w.f32(v);
}

NamedTensor read_record(binary::Reader& r) {
  NamedTensor out;
  const std::uint32_t len = r.u32("record name length");
  out.name = std::string(r.bytes(len, "record name"));
  const std::size_t rank_at = r.offset();
  const std::uint32_t rank = r.u32("record rank");
  if (rank == 0 || rank > 8) throw ParseError("record '" + out.name + "' has unsupported rank " + std::to_string(rank), rank_at);
  Shape shape;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::size_t at = r.offset();
    const std::uint32_t d = r.u32("record dimension");
    if (d == 0) throw ParseError("record '" + out.name + "' has a zero dimension", at);
    shape.push_back(d);
    count *= d;
  }
  if (r.remaining() / sizeof(float) < count) {
    throw ParseError("truncated payload for record '" + out.name + "'", r.offset());
  }
  std::vector<float> values(count);
  for (float& v : values) v = r.f32("record payload");
  out.value = Tensor<float>(std::move(shape), std::move(values));
  return out;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ck) {
  binary::Writer w;
  w.bytes("MGC1");
  w.u32(Checkpoint::kVersion);
  const std::string cfg = serialize_config(ck.config);
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg);
  w.u64(ck.optimizer.step);
  const bool with_moments = !ck.optimizer.m.empty();
  if (with_moments && (ck.optimizer.m.size() != ck.params.size() || ck.optimizer.v.size() != ck.params.size())) {
    throw ContractError("checkpoint: optimiser moments do not match the parameter list");
  }
  w.u32(static_cast<std::uint32_t>(ck.params.size() * (with_moments ? 3 : 1)));
  for (const auto& p : ck.params) write_record(w, "param/" + p.name, p.value);
  if (with_moments) {
    for (std::size_t i = 0; i < ck.params.size(); ++i) write_record(w, "adam.m/" + ck.params[i].name, ck.optimizer.m[i]);
    for (std::size_t i = 0; i < ck.params.size(); ++i) write_record(w, "adam.v/" + ck.params[i].name, ck.optimizer.v[i]);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.empty()) throw ParseError("empty checkpoint file", 0);
  binary::Reader r(bytes);
  r.expect_magic("MGC1");
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("format version");
  if (version != Checkpoint::kVersion) {
    throw ParseError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(Checkpoint::kVersion) + ")",
                     version_at);
  }
  Checkpoint ck;
  const std::uint32_t cfg_len = r.u32("config length");
  const std::size_t cfg_at = r.offset();
  const std::string cfg_text(r.bytes(cfg_len, "config block"));
  try {
    ck.config = parse_config(cfg_text);
  } catch (const ConfigError& e) {
    throw ParseError(std::string("invalid config block: ") + e.what(), cfg_at);
  }
  ck.optimizer.step = r.u64("optimiser step");
  const std::uint32_t count = r.u32("record count");

  std::map<std::string, Tensor<float>> m, v;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    NamedTensor rec = read_record(r);
    if (rec.name.rfind("param/", 0) == 0) {
      ck.params.push_back({rec.name.substr(6), std::move(rec.value)});
    } else if (rec.name.rfind("adam.m/", 0) == 0) {
      m.emplace(rec.name.substr(7), std::move(rec.value));
    } else if (rec.name.rfind("adam.v/", 0) == 0) {
      v.emplace(rec.name.substr(7), std::move(rec.value));
    } else {
      throw ParseError("unknown record '" + rec.name + "'", at);
    }
  }
  if (r.remaining() != 0) throw ParseError("trailing bytes after last record", r.offset());
  if (!m.empty() || !v.empty()) {
    for (const auto& p : ck.params) {
      auto mi = m.find(p.name);
      auto vi = v.find(p.name);
      if (mi == m.end() || vi == v.end()) {
        throw ParseError("optimiser moments missing for '" + p.name + "'", r.offset());
      }
      ck.optimizer.m.push_back(std::move(mi->second));
      ck.optimizer.v.push_back(std::move(vi->second));
    }
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) { write_file(path, encode_checkpoint(ck)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

void restore_parameters(Model<float>& model, const Checkpoint& ck) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& p : ck.params) by_name.emplace(p.name, &p.value);
  for (auto& p : model.params()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ContractError("checkpoint has no tensor '" + p.name + "' required by the model");
    if (it->second->shape() != p.value.shape()) {
      throw ContractError("checkpoint tensor '" + p.name + "' has shape " + shape_string(it->second->shape()) +
                          ", model expects " + shape_string(p.value.shape()));
    }
  }
  for (const auto& [name, t] : by_name) {
    if (!model.params().contains(name)) throw ContractError("checkpoint tensor '" + name + "' is not used by the model");
  }
  for (auto& p : model.params()) p.value = *by_name.at(p.name);
}

std::unique_ptr<Model<float>> model_from_checkpoint(const Checkpoint& ck) {
  auto model = std::make_unique<Model<float>>(ck.config);
  restore_parameters(*model, ck);
  return model;
}

}  // namespace csmgan
