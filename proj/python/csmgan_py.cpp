#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>

#include "csmgan/check_suite.hpp"
#include "csmgan/checkpoint.hpp"
#include "csmgan/metrics.hpp"
#include "csmgan/train.hpp"

namespace py = pybind11;
using namespace csmgan;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

FloatArray to_numpy(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray a(shape);
  std::copy(t.values().begin(), t.values().end(), a.mutable_data());
  return a;
}

Tensor<float> from_numpy(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  Tensor<float> t(shape);
  std::copy(a.data(), a.data() + a.size(), t.values().begin());
  return t;
}

py::dict moment_dict(const CandidateMoment& m) {
  py::dict d;
  d["start"] = m.start;
  d["end"] = m.end;
  d["score"] = m.score;
  d["scale_index"] = m.scale_index;
  d["anchor_time"] = m.anchor_time;
  return d;
}

// Trained or restored model with the config it was built from.
class PyModel {
 public:
  explicit PyModel(std::unique_ptr<Model<float>> m) : model_(std::move(m)) {}
  const Config& config() const { return model_->config(); }
  Model<float>& get() { return *model_; }

 private:
  std::unique_ptr<Model<float>> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cross- and self-modal graph attention for video moment localization";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<Config>(m, "Config")
      .def(py::init(&preset_config), py::arg("preset") = "synthetic")
      .def_static("parse", &parse_config)
      .def_static("load", &load_config)
      .def("serialize", &serialize_config)
      .def("validate", &Config::validate)
      .def("__eq__", [](const Config& a, const Config& b) { return a == b; })
      .def_readwrite("preset", &Config::preset)
      .def_readwrite("d", &Config::d)
      .def_readwrite("d_g", &Config::d_g)
      .def_readwrite("d_in", &Config::d_in)
      .def_readwrite("max_video_len", &Config::max_video_len)
      .def_readwrite("layers", &Config::layers)
      .def_readwrite("alpha", &Config::alpha)
      .def_readwrite("window_sizes", &Config::window_sizes)
      .def_readwrite("stride_fraction", &Config::stride_fraction)
      .def_readwrite("tau", &Config::tau)
      .def_readwrite("beta", &Config::beta)
      .def_readwrite("nms_threshold", &Config::nms_threshold)
      .def_readwrite("top_n", &Config::top_n)
      .def_readwrite("learning_rate", &Config::learning_rate)
      .def_readwrite("batch_size", &Config::batch_size)
      .def_readwrite("epochs", &Config::epochs)
      .def_readwrite("seed", &Config::seed)
      .def_readwrite("synth_video_len", &Config::synth_video_len)
      .def_readwrite("synth_query_len", &Config::synth_query_len)
      .def_readwrite("synth_samples", &Config::synth_samples)
      .def("set_ablation", [](Config& c, const std::string& flag, bool on) {
        AblationFlags& a = c.ablation;
        const std::map<std::string, bool*> flags{{"disable_hierarchy", &a.disable_hierarchy},
                                                 {"disable_joint_graph", &a.disable_joint_graph},
                                                 {"disable_hetero_embed", &a.disable_hetero_embed},
                                                 {"disable_gate", &a.disable_gate},
                                                 {"disable_smg", &a.disable_smg},
                                                 {"disable_pos_enc", &a.disable_pos_enc},
                                                 {"additive_update", &a.additive_update}};
        auto it = flags.find(flag);
        if (it == flags.end()) throw ConfigError("unknown ablation flag '" + flag + "'");
        *it->second = on;
      });
  m.def("preset_names", &preset_names);
  m.def("metric_grid", &metric_grid);

  py::class_<Sample>(m, "Sample")
      .def_readonly("id", &Sample::id)
      .def_property_readonly("video", [](const Sample& s) { return to_numpy(s.video); })
      .def_property_readonly("query", [](const Sample& s) { return to_numpy(s.query); })
      .def_property_readonly("label", [](const Sample& s) { return std::make_pair(s.label.s, s.label.e); });

  m.def(
      "synthetic_dataset",
      [](const Config& cfg, std::size_t n, std::uint64_t seed) {
        return generate_synthetic_dataset(synthetic_spec(cfg, n, seed));
      },
      py::arg("config"), py::arg("samples"), py::arg("seed"));
  m.def("save_dataset", &save_dataset);
  m.def("load_dataset", &load_dataset);
  m.def("encode_features", [](const FloatArray& a) { return py::bytes(encode_features(from_numpy(a))); });
  m.def("decode_features", [](const py::bytes& b) { return to_numpy(decode_features(std::string(b))); });
  m.def("save_features", [](const std::string& path, const FloatArray& a) { save_features(path, from_numpy(a)); });
  m.def("load_features", [](const std::string& path) { return to_numpy(load_features(path)); });

  m.def("temporal_iou", [](std::pair<double, double> a, std::pair<double, double> b) {
    return temporal_iou({a.first, a.second}, {b.first, b.second});
  });
  m.def(
      "candidates",
      [](std::size_t n_v, const std::vector<std::size_t>& windows, double stride) {
        py::list out;
        for (const auto& c : generate_candidates(n_v, windows, stride)) out.append(moment_dict(c));
        return out;
      },
      py::arg("n_v"), py::arg("window_sizes"), py::arg("stride_fraction"));
  m.def("gradcheck_names", &gradcheck_names);
  m.def(
      "gradcheck",
      [](const std::string& name, std::uint64_t seed) { return run_gradcheck(name, seed).max_rel_error; },
      py::arg("name"), py::arg("seed") = 1);

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const Config& cfg) { return PyModel(std::make_unique<Model<float>>(cfg)); }))
      .def_static("load", [](const std::string& path) { return PyModel(model_from_checkpoint(load_checkpoint(path))); })
      .def("save", [](PyModel& pm, const std::string& path) { save_checkpoint(path, make_checkpoint(pm.get())); })
      .def_property_readonly("config", &PyModel::config)
      .def("parameter_count", [](PyModel& pm) { return pm.get().params().scalar_count(); })
      .def(
          "predict",
          [](PyModel& pm, const Sample& s, std::size_t top_n) {
            py::list out;
            for (const auto& c : pm.get().predict(s, top_n)) out.append(moment_dict(c));
            return out;
          },
          py::arg("sample"), py::arg("top_n") = 0)
      .def(
          "scores",
          [](PyModel& pm, const Sample& s) {
            Tape<float> tape;
            tape.set_grad_enabled(false);
            return to_numpy(pm.get().forward(tape, s).head.scores.value());
          },
          py::arg("sample"))
      .def(
          "evaluate",
          [](PyModel& pm, const Dataset& ds, const std::string& grid, std::size_t threads) {
            EvalOptions opts;
            opts.threads = threads;
            py::dict out;
            for (const MetricRow& r : evaluate(pm.get(), ds, metric_grid(grid), opts).rows)
              out[py::make_tuple(r.n, r.m)] = r.recall;
            return out;
          },
          py::arg("dataset"), py::arg("grid") = "activity", py::arg("threads") = 1);

  m.def(
      "train",
      [](const Config& cfg, const Dataset& ds, std::size_t max_steps) {
        TrainOptions opts;
        opts.max_steps = max_steps;
        TrainResult r = [&] {
          py::gil_scoped_release release;
          return train(cfg, ds, opts);
        }();
        return py::make_tuple(PyModel(std::move(r.model)), r.step_losses);
      },
      py::arg("config"), py::arg("dataset"), py::arg("max_steps") = 0,
      "Returns (model, per-step losses).");
}
