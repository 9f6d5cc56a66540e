// Python bindings for the core operations: front end, model inference,
// metrics, and the gradient-check suite.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "multibreath/dsp.hpp"
#include "multibreath/gradcheck_suite.hpp"
#include "multibreath/metrics.hpp"
#include "multibreath/model.hpp"
#include "multibreath/wav.hpp"

namespace py = pybind11;
using namespace mb;

namespace {

Array<float> array_from_numpy(const py::array_t<float, py::array::c_style |
                                                           py::array::forcecast>& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = a.shape(i);
  Array<float> out(shape);
  std::copy(a.data(), a.data() + a.size(), out.v.begin());
  return out;
}

py::array_t<float> numpy_from_array(const Array<float>& a) {
  std::vector<py::ssize_t> shape(a.shape.begin(), a.shape.end());
  py::array_t<float> out(shape);
  std::copy(a.v.begin(), a.v.end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_multibreath, m) {
  m.doc() = "respiratory-sound classification core";

  m.def("resample",
        [](const std::vector<float>& x, int from_hz, int to_hz) {
          return dsp::resample(Waveform{x, from_hz}, to_hz).samples;
        },
        py::arg("samples"), py::arg("from_hz"), py::arg("to_hz"));

  m.def("log_mel",
        [](const std::vector<float>& samples, int rate_hz) {
          const auto fb = dsp::build_mel_filterbank(
              dsp::kFftSize, dsp::kTargetRateHz, dsp::kNumMels, dsp::kFminHz,
              dsp::kFmaxHz);
          Waveform w{samples, rate_hz};
          return numpy_from_array(dsp::frontend(w, fb).values);
        },
        py::arg("samples"), py::arg("rate_hz"),
        "full front end: resample to 16 kHz, pad, 64x256 log-mel");

  m.def("read_wav", [](const std::string& path) {
    const Waveform w = read_wav(path);
    return py::make_tuple(w.samples, w.sample_rate_hz);
  });

  py::class_<metrics::MetricsReport>(m, "MetricsReport")
      .def_property_readonly("specificity",
                             [](const metrics::MetricsReport& r) {
                               return r.specificity;
                             })
      .def_property_readonly(
          "sensitivity",
          [](const metrics::MetricsReport& r) { return r.sensitivity; })
      .def_property_readonly(
          "score", [](const metrics::MetricsReport& r) { return r.score; })
      .def("__repr__", [](const metrics::MetricsReport& r) {
        return metrics::format_metrics(r);
      });

  m.def("icbhi_metrics",
        [](const std::vector<std::pair<int, int>>& truth,
           const std::vector<std::pair<int, int>>& pred) {
          std::vector<icbhi::LabelVector> t, p;
          for (auto [c, w] : truth) t.push_back({c != 0, w != 0});
          for (auto [c, w] : pred) p.push_back({c != 0, w != 0});
          return metrics::icbhi_metrics(metrics::confusion(t, p));
        },
        py::arg("truth"), py::arg("pred"),
        "truth/pred are lists of (crackle, wheeze) flag pairs");

  py::class_<nn::Model<float>>(m, "Model")
      .def_static("load",
                  [](const std::string& path) {
                    return nn::load_checkpoint(path);
                  })
      .def("forward",
           [](nn::Model<float>& self,
              const py::array_t<float, py::array::c_style |
                                           py::array::forcecast>& batch) {
             return numpy_from_array(
                 self.forward(array_from_numpy(batch), /*train=*/false)
                     .value());
           },
           py::arg("batch"), "inference logits for a [N,1,64,256] batch")
      .def_property_readonly("num_parameters", [](nn::Model<float>& self) {
        return self.params.total_count();
      });

  m.def("gradient_suite",
        [](int seeds) {
          py::list out;
          for (const auto& r : ad::run_gradcheck_suite(seeds))
            out.append(py::make_tuple(r.name, r.max_rel_err, r.pass()));
          return out;
        },
        py::arg("seeds") = 3);
}
