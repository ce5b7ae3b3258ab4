#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cnx/convnext.hpp"
#include "cnx/errors.hpp"
#include "cnx/executor.hpp"
#include "cnx/harness.hpp"
#include "cnx/profiler.hpp"
#include "cnx/quant.hpp"
#include "cnx/serialize.hpp"
#include "cnx/structured.hpp"
#include "cnx/unstructured.hpp"

namespace py = pybind11;
using namespace cnx;

namespace {

// JSON crosses the boundary as text; the Python package parses it.
std::string dumps(const nlohmann::ordered_json& j) { return j.dump(); }

py::array_t<float> to_numpy(const Tensor& t) {
  py::array_t<float> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  Shape s(a.shape(), a.shape() + a.ndim());
  return Tensor::from(std::move(s), std::vector<float>(a.data(), a.data() + a.size()));
}

Dataset dataset_from(const std::string& spec, bool test) {
  auto d = load_data(DataSpec::parse(spec));
  return test ? std::move(d.test) : std::move(d.train);
}

}  // namespace

PYBIND11_MODULE(_cnx, m) {
  m.doc() = "ConvNeXt compression toolkit core";

  static py::exception<Error> base(m, "CnxError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const UsageError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const ConfigError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const Error& e) {
      base(e.what());
    }
  });

  py::class_<Model>(m, "Model")
      .def_property_readonly("config_name", [](const Model& x) { return x.meta.config_name; })
      .def_property_readonly("num_classes", [](const Model& x) { return x.meta.num_classes; })
      .def_property_readonly("input_shape", [](const Model& x) { return x.meta.input_shape; })
      .def("param_names", &Model::param_names)
      .def("is_quantized", &Model::is_quantized)
      .def("param", [](const Model& x, const std::string& name) {
        if (x.is_quantized(name)) return to_numpy(dequantize(x.quantized(name)));
        return to_numpy(x.fp32(name));
      })
      .def("forward", [](const Model& x, const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
        return to_numpy(forward(x, from_numpy(a)));
      })
      .def("serialize", [](const Model& x) {
        const auto b = serialize(x);
        return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
      })
      .def("save", [](const Model& x, const std::string& path) { save(x, path); })
      .def("copy", [](const Model& x) { return x; });

  m.def("build_convnext", [](const std::string& config_json, std::uint64_t seed) {
    return build_convnext(convnext_config_from_json(nlohmann::json::parse(config_json)), seed);
  }, py::arg("config_json"), py::arg("seed") = 0);
  m.def("load", [](const std::string& path) { return load(path); });
  m.def("deserialize", [](const py::bytes& b) {
    const std::string s = b;
    return deserialize({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  });

  m.def("profile", [](const Model& x, const std::string& convention, const std::string& data) {
    std::optional<Dataset> ds;
    if (!data.empty()) ds = dataset_from(data, true);
    return dumps(to_json(profile(x, ds ? &*ds : nullptr, convention_from_name(convention))));
  }, py::arg("model"), py::arg("convention") = "fp32_only", py::arg("data") = "");
  m.def("compare", [](const std::string& before, const std::string& after) {
    const auto b = profile_from_json(nlohmann::json::parse(before));
    const auto a = profile_from_json(nlohmann::json::parse(after));
    return dumps(to_json(compare(b, a), b.convention));
  });

  m.def("quantize_model", &quantize_model);
  m.def("quantize_weights", [](const py::array_t<float, py::array::c_style | py::array::forcecast>& w) {
    const auto q = quantize_weights(from_numpy(w));
    py::array_t<std::int8_t> out(std::vector<py::ssize_t>(q.values.shape().begin(), q.values.shape().end()));
    std::copy(q.values.int8_data().begin(), q.values.int8_data().end(), out.mutable_data());
    return py::make_tuple(out, q.scale);
  });

  m.def("l1_prune", [](const Model& x, double fl, double fc) { return apply_masks(x, l1_mask(x, fl, fc)); });
  m.def("random_prune", [](const Model& x, double fl, double fc, std::uint64_t seed) {
    return apply_masks(x, random_mask(x, fl, fc, seed));
  }, py::arg("model"), py::arg("frac_linear"), py::arg("frac_conv"), py::arg("seed") = 0);
  m.def("count_groups", [](const Model& x) { return partition_pzigs(analyze_dependencies(x), x).size(); });

  m.def("run_pipeline", [](const std::string& spec_json, const Model& x, const std::string& data) {
    const auto spec = PipelineSpec::from_json(nlohmann::json::parse(spec_json));
    const auto d = load_data(DataSpec::parse(data));
    auto r = run_pipeline(spec, x, &d.train, &d.test);
    return py::make_tuple(emit_report(r.report, ReportFormat::kJson, false), std::move(r.model));
  }, py::arg("spec_json"), py::arg("model"), py::arg("data") = "synthetic:500:0");
}
