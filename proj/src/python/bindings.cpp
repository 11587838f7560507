#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "lucf/cli/commands.hpp"
#include "lucf/metrics/metrics.hpp"
#include "lucf/tensor/autograd.hpp"
#include "lucf/tensor/ops.hpp"
#include "lucf/train/checkpoint.hpp"

namespace py = pybind11;
using namespace lucf;
using nlohmann::json;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using I32Array = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Shape shape_of(const py::array& a) { return Shape(a.shape(), a.shape() + a.ndim()); }

Tensor to_tensor(const F64Array& a, DType dtype) {
  return Tensor::from_values(shape_of(a), std::span<const double>(a.data(), static_cast<std::size_t>(a.size())), dtype);
}

py::array_t<double> to_numpy(const Tensor& t) {
  const auto v = t.to_vector();
  py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

LabelMap to_labels(const I32Array& a) {
  if (a.ndim() != 3) throw std::invalid_argument("labels must have shape [B, H, W]");
  return {a.shape(0), a.shape(1), a.shape(2), std::vector<std::int32_t>(a.data(), a.data() + a.size())};
}

py::array_t<std::int32_t> labels_to_numpy(const LabelMap& m) {
  py::array_t<std::int32_t> out({m.batch, m.height, m.width});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

Mask to_mask(const U8Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("masks must be 2-D");
  Mask m(a.shape(0), a.shape(1));
  for (py::ssize_t i = 0; i < a.size(); ++i) m.values[static_cast<std::size_t>(i)] = a.data()[i] != 0;
  return m;
}

cli::RunConfig run_config(const std::string& text) {
  return text.empty() ? cli::RunConfig{} : cli::run_config_from_json(json::parse(text));
}

class Model {
 public:
  Model(const std::string& model_json, std::uint64_t seed)
      : rng_(seed, 1), net_(std::make_unique<LucfNet>(model_config_from_json(json::parse(model_json)), rng_)) {}

  static Model load(const std::string& path) {
    const auto meta = read_checkpoint_meta(path);
    Model m(to_json(meta.config).dump(), 0);
    load_checkpoint(path, *m.net_);
    return m;
  }

  py::tuple forward(const F64Array& x) {
    NoGradGuard no_grad;
    net_->eval();
    const auto out = net_->forward(to_tensor(x, DType::f32));
    py::list heads;
    for (const auto& h : out.head_logits) heads.append(to_numpy(h));
    return py::make_tuple(to_numpy(out.fused_logits), heads);
  }

  py::array_t<std::int32_t> predict(const F64Array& x) {
    NoGradGuard no_grad;
    net_->eval();
    return labels_to_numpy(argmax_channels(net_->forward(to_tensor(x, DType::f32)).fused_logits));
  }

  py::array_t<double> features(const F64Array& x, int stage) {
    NoGradGuard no_grad;
    net_->eval();
    return to_numpy(net_->dump_features(to_tensor(x, DType::f32), stage));
  }

  std::int64_t num_parameters() { return net_->num_parameters(); }
  std::string config() const { return to_json(net_->config()).dump(); }
  void save(const std::string& path) { save_checkpoint(path, *net_, nullptr, rng_); }

 private:
  Rng rng_;
  std::unique_ptr<LucfNet> net_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "LUCF-Net segmentation core";

  py::register_exception<cli::UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);

  m.def("default_config", [] { return cli::to_json(cli::RunConfig{}).dump(); });
  m.def("normalize_config", [](const std::string& text) { return cli::to_json(run_config(text)).dump(); });
  m.def("preset", [](const std::string& name) {
    if (name == "desk") return to_json(desk_preset()).dump();
    if (name == "paper") return to_json(paper_preset()).dump();
    throw std::invalid_argument("preset must be desk or paper");
  });

  m.def("lr_schedule", &lr_schedule, py::arg("iter"), py::arg("max_iter"), py::arg("lr_base"), py::arg("power") = 0.9);

  m.def(
      "summary",
      [](const std::string& model_json, std::int64_t h, std::int64_t w, bool measure) {
        return cli::cmd_summary(model_config_from_json(json::parse(model_json)), h, w, false, measure).dump();
      },
      py::arg("model"), py::arg("height"), py::arg("width"), py::arg("measure") = false);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, const std::string& fault) {
        const auto entries = cli::cmd_gradcheck(seed, fault);
        return py::make_tuple(all_passed(entries), to_json(entries).dump());
      },
      py::arg("seed") = 0, py::arg("inject_fault") = "");

  m.def(
      "synth",
      [](const std::string& cfg, const std::string& out, const std::string& format, bool force) {
        return to_json(cli::cmd_synth(run_config(cfg), {out, format, force})).dump();
      },
      py::arg("config"), py::arg("out"), py::arg("format") = "png", py::arg("force") = false);

  m.def(
      "train",
      [](const std::string& cfg, const std::string& data, const std::string& out, const std::vector<double>& grid,
         const std::string& resume, std::int64_t stop_at, std::int64_t log_every) {
        std::ostringstream log;
        cli::cmd_train(run_config(cfg), {data, out, grid, resume, stop_at, log_every}, log);
        return log.str();
      },
      py::arg("config"), py::arg("data"), py::arg("out"), py::arg("grid") = std::vector<double>{},
      py::arg("resume") = "", py::arg("stop_at") = -1, py::arg("log_every") = 0,
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "evaluate",
      [](const std::string& cfg, const std::string& checkpoint, const std::string& data, const std::string& out) {
        return cli::cmd_eval(run_config(cfg), {checkpoint, data, out}).summary_json().dump();
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("data"), py::arg("out"));

  m.def(
      "dump_features",
      [](const std::string& cfg, const std::string& checkpoint, const std::string& image, const std::string& out) {
        std::vector<std::string> paths;
        for (const auto& p : cli::cmd_dump_features(run_config(cfg), {checkpoint, image, out})) paths.push_back(p.string());
        return paths;
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("image"), py::arg("out"));

  m.def("dsc", [](const U8Array& p, const U8Array& g) { return dsc(to_mask(p), to_mask(g)); });
  m.def("iou", [](const U8Array& p, const U8Array& g) { return iou(to_mask(p), to_mask(g)); });
  m.def(
      "hausdorff",
      [](const U8Array& p, const U8Array& g, double percentile, double sy, double sx) {
        return hausdorff(to_mask(p), to_mask(g), percentile, {sy, sx});
      },
      py::arg("pred"), py::arg("gt"), py::arg("percentile") = 100.0, py::arg("spacing_y") = 1.0,
      py::arg("spacing_x") = 1.0);
  m.def(
      "evaluate_labels",
      [](const I32Array& pred, const I32Array& gt, std::int64_t num_classes, double percentile) {
        return evaluate(to_labels(pred), to_labels(gt), num_classes, percentile).summary_json().dump();
      },
      py::arg("pred"), py::arg("gt"), py::arg("num_classes"), py::arg("percentile") = 100.0);

  m.def(
      "lovasz_softmax",
      [](const F64Array& probs, const I32Array& labels, bool present_only) {
        NoGradGuard no_grad;
        return lovasz_softmax(to_tensor(probs, DType::f64), to_labels(labels), present_only).item();
      },
      py::arg("probs"), py::arg("labels"), py::arg("present_only") = false);
  m.def(
      "ohem_loss",
      [](const F64Array& logits, const I32Array& labels, double threshold, double min_kept_fraction) {
        NoGradGuard no_grad;
        const auto r = ohem_loss(to_tensor(logits, DType::f64), to_labels(labels), threshold, min_kept_fraction);
        return py::dict(py::arg("loss") = r.loss.item(), py::arg("org") = r.org, py::arg("re") = r.re,
                        py::arg("kept") = r.kept);
      },
      py::arg("logits"), py::arg("labels"), py::arg("threshold") = 0.7, py::arg("min_kept_fraction") = 1.0 / 16.0);

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&, std::uint64_t>(), py::arg("model"), py::arg("seed") = 0)
      .def_static("load", &Model::load, py::arg("checkpoint"))
      .def("forward", &Model::forward)
      .def("predict", &Model::predict)
      .def("features", &Model::features, py::arg("x"), py::arg("stage"))
      .def("save", &Model::save)
      .def_property_readonly("num_parameters", &Model::num_parameters)
      .def_property_readonly("config", &Model::config);
}
