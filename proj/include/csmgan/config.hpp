#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace csmgan {

/// Component switches for ablation runs. All false is the full model.
struct AblationFlags {
  bool disable_hierarchy = false;      // w/o HS: query encoded by a single Bi-GRU over word embeddings
  bool disable_joint_graph = false;    // w/o CSG: graph stack skipped
  bool disable_hetero_embed = false;   // w/o EM: cross attention in the raw node space
  bool disable_gate = false;           // w/o MG: message gates fixed at 1
  bool disable_smg = false;            // w/o SMG: cross-modal graph only
  bool disable_pos_enc = false;        // w/o PE: no positional term in self-modal similarity
  bool additive_update = false;        // w/o CG: node update is h + m

  bool operator==(const AblationFlags&) const = default;
};

struct Config {
  std::string preset = "synthetic";

  // Model geometry.
  std::size_t d = 32;            // node state width; even
  std::size_t d_g = 16;          // word embedding width; even
  std::size_t d_in = 16;         // frame feature width
  std::size_t max_video_len = 32;
  std::size_t layers = 2;        // joint graph layers
  double alpha = 1.0;            // positional encoding scale
  std::size_t convgru_kernel_width = 3;
  std::size_t head_kernel_width = 3;

  // Candidates, losses and inference.
  std::vector<std::size_t> window_sizes{4, 8, 16};
  double stride_fraction = 0.5;
  double tau = 0.45;
  double beta = 0.1;
  double nms_threshold = 0.55;
  std::size_t top_n = 5;

  // Optimisation.
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  std::size_t batch_size = 4;
  std::size_t epochs = 20;
  std::uint64_t seed = 1;

  AblationFlags ablation;

  // Data. An empty train_data path means a synthetic set built from the synth_* keys.
  std::string train_data;
  std::string checkpoint_out = "model.mgc";
  std::size_t synth_samples = 512;
  std::size_t synth_video_len = 32;
  std::size_t synth_query_len = 4;
  std::size_t synth_vocab = 16;
  double synth_noise = 0.1;

  /// Throws ConfigError on violated invariants (d even, tau in (0,1), ...).
  void validate() const;

  bool operator==(const Config&) const = default;
};

/// Named hyperparameter bundles. Known names: synthetic, activity, tacos, charades, didemo.
Config preset_config(const std::string& name);
std::vector<std::string> preset_names();

/// Parses `key = value` lines with '#' comments. A `preset` key, wherever it
/// appears, is applied first; the remaining keys override it. Unknown keys
/// and malformed values raise ConfigError naming the line.
Config parse_config(const std::string& text);
Config load_config(const std::string& path);

/// Inverse of parse_config; every field is written explicitly.
std::string serialize_config(const Config& cfg);

/// (n, m) pairs for "R@n, IoU=m" grids.
using MetricGrid = std::vector<std::pair<std::size_t, double>>;
MetricGrid metric_grid(const std::string& name);

}  // namespace csmgan
