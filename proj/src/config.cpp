#include "csmgan/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "csmgan/errors.hpp"

namespace csmgan {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t parse_size(const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a real number, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError("expected a real number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_sizes(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(trim(item)));
  return out;
}

std::string real_string(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

struct Field {
  const char* key;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

template <typename M>
Field size_field(const char* key, M Config::*member) {
  return {key, [member](Config& c, const std::string& v) { c.*member = parse_size(v); },
          [member](const Config& c) { return std::to_string(c.*member); }};
}

Field real_field(const char* key, double Config::*member) {
  return {key, [member](Config& c, const std::string& v) { c.*member = parse_real(v); },
          [member](const Config& c) { return real_string(c.*member); }};
}

Field string_field(const char* key, std::string Config::*member) {
  return {key, [member](Config& c, const std::string& v) { c.*member = v; },
          [member](const Config& c) { return c.*member; }};
}

Field flag_field(const char* key, bool AblationFlags::*member) {
  return {key, [member](Config& c, const std::string& v) { c.ablation.*member = parse_bool(v); },
          [member](const Config& c) { return std::string(c.ablation.*member ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      string_field("preset", &Config::preset),
      size_field("d", &Config::d),
      size_field("d_g", &Config::d_g),
      size_field("d_in", &Config::d_in),
      size_field("max_video_len", &Config::max_video_len),
      size_field("layers", &Config::layers),
      real_field("alpha", &Config::alpha),
      size_field("convgru_kernel_width", &Config::convgru_kernel_width),
      size_field("head_kernel_width", &Config::head_kernel_width),
      {"window_sizes", [](Config& c, const std::string& v) { c.window_sizes = parse_sizes(v); },
       [](const Config& c) {
         std::string out;
         for (std::size_t i = 0; i < c.window_sizes.size(); ++i) {
           out += (i ? "," : "") + std::to_string(c.window_sizes[i]);
         }
         return out;
       }},
      real_field("stride_fraction", &Config::stride_fraction),
      real_field("tau", &Config::tau),
      real_field("beta", &Config::beta),
      real_field("nms_threshold", &Config::nms_threshold),
      size_field("top_n", &Config::top_n),
      real_field("learning_rate", &Config::learning_rate),
      real_field("adam_beta1", &Config::adam_beta1),
      real_field("adam_beta2", &Config::adam_beta2),
      real_field("adam_eps", &Config::adam_eps),
      real_field("grad_clip", &Config::grad_clip),
      size_field("batch_size", &Config::batch_size),
      size_field("epochs", &Config::epochs),
      size_field("seed", &Config::seed),
      flag_field("disable_hierarchy", &AblationFlags::disable_hierarchy),
      flag_field("disable_joint_graph", &AblationFlags::disable_joint_graph),
      flag_field("disable_hetero_embed", &AblationFlags::disable_hetero_embed),
      flag_field("disable_gate", &AblationFlags::disable_gate),
      flag_field("disable_smg", &AblationFlags::disable_smg),
      flag_field("disable_pos_enc", &AblationFlags::disable_pos_enc),
      flag_field("additive_update", &AblationFlags::additive_update),
      string_field("train_data", &Config::train_data),
      string_field("checkpoint_out", &Config::checkpoint_out),
      size_field("synth_samples", &Config::synth_samples),
      size_field("synth_video_len", &Config::synth_video_len),
      size_field("synth_query_len", &Config::synth_query_len),
      size_field("synth_vocab", &Config::synth_vocab),
      real_field("synth_noise", &Config::synth_noise),
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (key == f.key) return &f;
  }
  return nullptr;
}

}  // namespace

void Config::validate() const {
  if (d < 2 || d % 2 != 0) throw ConfigError("d must be even and at least 2, got " + std::to_string(d));
  if (d_g < 2 || d_g % 2 != 0) throw ConfigError("d_g must be even and at least 2, got " + std::to_string(d_g));
  if (d_in < 1) throw ConfigError("d_in must be positive");
  if (max_video_len < 1) throw ConfigError("max_video_len must be positive");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0, 1), got " + real_string(tau));
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative, got " + real_string(beta));
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative, got " + real_string(alpha));
  if (window_sizes.empty()) throw ConfigError("window_sizes must not be empty");
  if (std::any_of(window_sizes.begin(), window_sizes.end(), [](std::size_t w) { return w == 0; })) {
    throw ConfigError("window sizes must be at least 1");
  }
  if (!(stride_fraction > 0.0 && stride_fraction <= 1.0)) {
    throw ConfigError("stride_fraction must lie in (0, 1], got " + real_string(stride_fraction));
  }
  if (!(nms_threshold >= 0.0 && nms_threshold <= 1.0)) throw ConfigError("nms_threshold must lie in [0, 1]");
  if (top_n < 1) throw ConfigError("top_n must be at least 1");
  if (convgru_kernel_width < 1 || head_kernel_width < 1) throw ConfigError("kernel widths must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be non-negative");
}

Config preset_config(const std::string& name) {
  Config c;
  c.preset = name;
  if (name == "synthetic") return c;

  // Full-scale presets share one geometry.
  c.d = 512;
  c.d_g = 300;
  c.d_in = 500;
  c.max_video_len = 200;
  c.layers = 2;
  c.alpha = 1.0;
  if (name == "activity") {
    c.window_sizes = {16, 32, 64, 96, 128, 160, 192};
    c.stride_fraction = 0.5;
    c.tau = 0.45;
    c.beta = 0.001;
    c.learning_rate = 8e-4;
    c.batch_size = 128;
  } else if (name == "tacos") {
    c.window_sizes = {8, 16, 32, 64};
    c.stride_fraction = 0.125;
    c.tau = 0.45;
    c.beta = 0.005;
    c.learning_rate = 3e-4;
    c.batch_size = 64;
  } else if (name == "charades") {
    c.window_sizes = {16, 24, 32, 40};
    c.stride_fraction = 0.25;
    c.tau = 0.5;
    c.beta = 0.005;
    c.learning_rate = 3e-4;
    c.batch_size = 64;
  } else if (name == "didemo") {
    c.window_sizes = {16, 32, 64, 96};
    c.stride_fraction = 0.25;
    c.tau = 0.5;
    c.beta = 0.005;
    c.learning_rate = 3e-4;
    c.batch_size = 64;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

std::vector<std::string> preset_names() { return {"synthetic", "activity", "tacos", "charades", "didemo"}; }

Config parse_config(const std::string& text) {
  std::vector<std::pair<std::size_t, std::pair<std::string, std::string>>> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::string preset = "synthetic";
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(body.substr(0, eq));
    std::string value = trim(body.substr(eq + 1));
    if (find_field(key) == nullptr) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (key == "preset") preset = value;
    entries.push_back({lineno, {std::move(key), std::move(value)}});
  }

  Config cfg = preset_config(preset);
  for (const auto& [no, kv] : entries) {
    try {
      find_field(kv.first)->set(cfg, kv.second);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(no) + " (" + kv.first + "): " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const Config& cfg) {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

MetricGrid metric_grid(const std::string& name) {
  std::vector<double> ms;
  if (name == "activity") {
    ms = {0.3, 0.5, 0.7};
  } else if (name == "tacos") {
    ms = {0.1, 0.3, 0.5};
  } else if (name == "charades" || name == "didemo") {
    ms = {0.5, 0.7};
  } else {
    throw ConfigError("unknown metric grid '" + name + "' (expected activity, tacos, charades or didemo)");
  }
  MetricGrid grid;
  for (std::size_t n : {1, 5}) {
    for (double m : ms) grid.emplace_back(n, m);
  }
  return grid;
}

}  // namespace csmgan
