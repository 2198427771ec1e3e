#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "csmgan/check_suite.hpp"
#include "csmgan/checkpoint.hpp"
#include "csmgan/metrics.hpp"
#include "csmgan/train.hpp"

using namespace csmgan;

namespace {

int cmd_train(const std::string& config_path, const std::optional<std::uint64_t>& seed, const std::string& out,
              bool quiet) {
  Config cfg = load_config(config_path);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  const Dataset ds = training_data(cfg);
  TrainOptions opts;
  if (!quiet) opts.log = &std::cout;
  TrainResult result = train(cfg, ds, opts);
  const std::string path = out.empty() ? cfg.checkpoint_out : out;
  save_checkpoint(path, make_checkpoint(*result.model, &result.optimizer));
  std::cout << "trained " << result.step_losses.size() << " steps on " << ds.size() << " samples; checkpoint "
            << path << "\n";
  return 0;
}

int cmd_eval(const std::string& ck_path, const std::string& ds_path, const std::string& grid, std::size_t threads) {
  const MetricGrid g = metric_grid(grid);
  auto model = model_from_checkpoint(load_checkpoint(ck_path));
  const Dataset ds = load_dataset(ds_path);
  const MetricTable table = evaluate(*model, ds, g, EvalOptions{threads});
  std::cout << table.text() << table.json_lines();
  return 0;
}

int cmd_predict(const std::string& ck_path, const std::string& sample_path, std::size_t top_n, std::size_t index) {
  if (top_n < 1) throw ConfigError("--top-n must be at least 1");
  auto model = model_from_checkpoint(load_checkpoint(ck_path));
  const Dataset ds = load_dataset(sample_path);
  if (index >= ds.size()) {
    throw ContractError("sample index " + std::to_string(index) + " out of range for " + std::to_string(ds.size()) +
                        " samples");
  }
  const auto ranked = model->predict(ds[index], top_n);
  std::cout << "rank\tstart\tend\tscore\n" << std::fixed << std::setprecision(4);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    std::cout << i + 1 << "\t" << ranked[i].start << "\t" << ranked[i].end << "\t" << ranked[i].score << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::string& op, std::uint64_t seed, double eps, double tol) {
  std::vector<std::string> names;
  if (op.empty()) {
    names = gradcheck_names();
  } else {
    names.push_back(op);
  }
  bool ok = true;
  for (const auto& name : names) {
    const GradCheckResult r = run_gradcheck(name, seed, eps);
    const bool pass = r.max_rel_error < tol;
    ok = ok && pass;
    std::cout << std::left << std::setw(28) << name << std::scientific << std::setprecision(3) << r.max_rel_error << "  "
              << (pass ? "ok" : "FAIL") << "  (" << r.coordinates << " coords, worst " << r.worst << ")\n";
  }
  if (!ok) {
    std::cerr << "error: gradient check exceeded tolerance " << tol << "\n";
    return 1;
  }
  return 0;
}

void dump_matrix(std::ostream& os, const std::string& title, const Tensor<float>& m) {
  os << "# " << title << " [" << m.rows() << "x" << m.cols() << "]\n" << std::fixed << std::setprecision(5);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) os << (c ? " " : "") << m(r, c);
    os << "\n";
  }
}

int cmd_probe(const std::string& ck_path, std::size_t layers, const std::string& ds_path, std::size_t samples,
              const std::string& dump_path) {
  const Checkpoint ck = load_checkpoint(ck_path);
  if (layers > ck.config.layers) {
    throw ConfigError("--layers " + std::to_string(layers) + " exceeds the checkpoint's " +
                      std::to_string(ck.config.layers) + " graph layers");
  }
  if (ck.config.ablation.disable_joint_graph) throw ConfigError("checkpoint was trained without the joint graph");
  Config cfg = ck.config;
  cfg.layers = layers;
  Model<float> model(cfg);
  {
    Checkpoint subset = ck;
    subset.params.clear();
    for (const auto& p : ck.params) {
      if (model.params().contains(p.name)) subset.params.push_back(p);
    }
    restore_parameters(model, subset);
  }
  Dataset ds = ds_path.empty() ? generate_synthetic_dataset(synthetic_spec(cfg, samples, cfg.seed + 1))
                               : load_dataset(ds_path);
  if (ds.empty()) throw ContractError("probe dataset is empty");
  if (ds.size() > samples) ds.resize(samples);

  std::vector<double> series(layers + 1, 0.0);
  std::ofstream dump;
  if (!dump_path.empty()) {
    dump.open(dump_path);
    if (!dump) throw ContractError("cannot write " + dump_path);
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Tape<float> tape;
    tape.set_grad_enabled(false);
    std::vector<LayerTrace<float>> trace;
    auto fw = model.forward(tape, ds[i], &trace);
    std::vector<Tensor<float>> states{fw.encoded.hv.value()};
    for (const auto& t : trace) states.push_back(t.hv);
    const auto sims = smoothing_probe(states);
    for (std::size_t l = 0; l < sims.size(); ++l) series[l] += sims[l] / static_cast<double>(ds.size());
    if (i == 0 && dump) {
      for (std::size_t l = 0; l < trace.size(); ++l) {
        dump_matrix(dump, "layer " + std::to_string(l + 1) + " words->frames", trace[l].cross_to_frames);
        if (!trace[l].self_frames.empty()) {
          dump_matrix(dump, "layer " + std::to_string(l + 1) + " frames self", trace[l].self_frames);
        }
      }
    }
  }
  std::cout << "layer\tmean_pairwise_cosine\n" << std::fixed << std::setprecision(6);
  for (std::size_t l = 0; l < series.size(); ++l) std::cout << l << "\t" << series[l] << "\n";
  return 0;
}

int cmd_gen_data(const std::string& out, std::size_t samples, std::uint64_t seed, const std::string& config_path) {
  const Config cfg = config_path.empty() ? preset_config("synthetic") : load_config(config_path);
  const Dataset ds = generate_synthetic_dataset(synthetic_spec(cfg, samples, seed));
  save_dataset(out, ds);
  std::cout << "wrote " << ds.size() << " samples to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross- and self-modal graph attention for video moment localization"};
  app.require_subcommand(1);
  app.failure_message([](const CLI::App*, const CLI::Error& e) { return "error: " + std::string(e.what()) + "\n"; });

  std::string config_path, out, ck_path, ds_path, grid, sample_path, op, dump_path;
  std::optional<std::uint64_t> train_seed;
  std::uint64_t seed = 1;
  std::size_t threads = 1, top_n = 5, index = 0, layers = 0, samples = 0;
  double eps = 1e-4, tol = 1e-4;
  bool quiet = false;

  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", train_seed, "Override the config seed");
  train_cmd->add_option("--out", out, "Checkpoint path (default: checkpoint_out from the config)");
  train_cmd->add_flag("--quiet", quiet, "Suppress per-epoch logging");

  auto* eval_cmd = app.add_subcommand("eval", "Recall table for a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", ck_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", ds_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--grid", grid)->required()->check(CLI::IsMember({"activity", "tacos", "charades", "didemo"}));
  eval_cmd->add_option("--threads", threads, "Parallel evaluation workers")->check(CLI::PositiveNumber);

  auto* predict_cmd = app.add_subcommand("predict", "Ranked moments for one sample");
  predict_cmd->add_option("--checkpoint", ck_path)->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--sample", sample_path, "Dataset file holding the sample")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--top-n", top_n)->required();
  predict_cmd->add_option("--index", index, "Sample index within the file");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad_cmd->add_option("--op", op, "Single check to run (default: all)");
  grad_cmd->add_option("--seed", seed);
  grad_cmd->add_option("--eps", eps)->check(CLI::Range(1e-6, 1e-4));
  grad_cmd->add_option("--tol", tol);
  bool list = false;
  grad_cmd->add_flag("--list", list, "Print the available check names");

  auto* probe_cmd = app.add_subcommand("probe-smoothing", "Mean pairwise cosine of frame states per layer");
  probe_cmd->add_option("--checkpoint", ck_path)->required()->check(CLI::ExistingFile);
  probe_cmd->add_option("--layers", layers)->required();
  probe_cmd->add_option("--dataset", ds_path, "Dataset file (default: synthetic from the checkpoint config)")
      ->check(CLI::ExistingFile);
  samples = 16;
  probe_cmd->add_option("--samples", samples, "Samples averaged")->check(CLI::PositiveNumber);
  probe_cmd->add_option("--dump-attention", dump_path, "Write attention grids of the first sample");

  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset file");
  std::size_t gen_samples = 0;
  std::uint64_t gen_seed = 1;
  gen_cmd->add_option("--out", out)->required();
  gen_cmd->add_option("--samples", gen_samples)->required()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen_seed)->required();
  gen_cmd->add_option("--config", config_path, "Geometry from a config (default: synthetic preset)")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train_cmd) return cmd_train(config_path, train_seed, out, quiet);
    if (*eval_cmd) return cmd_eval(ck_path, ds_path, grid, threads);
    if (*predict_cmd) return cmd_predict(ck_path, sample_path, top_n, index);
    if (*grad_cmd) {
      if (list) {
        for (const auto& n : gradcheck_names()) std::cout << n << "\n";
        return 0;
      }
      return cmd_gradcheck(op, seed, eps, tol);
    }
    if (*probe_cmd) return cmd_probe(ck_path, layers, ds_path, samples, dump_path);
    if (*gen_cmd) return cmd_gen_data(out, gen_samples, gen_seed, config_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
