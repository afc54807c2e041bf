#include "conformgen/metrics.hpp"
#include "conformgen/pipeline.hpp"
#include "conformgen/spec_ingest.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace conformgen;

namespace {

py::object to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

Json from_py(const py::handle& obj)
{
    return Json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

metrics::LineKind kind_arg(const std::string& kind) { return metrics::line_kind_from_string(kind); }

} // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Protocol conformance test generation core";

    static PyObject* error_type = PyErr_NewException("conformgen._core.ConformgenError", PyExc_RuntimeError, nullptr);
    m.attr("ConformgenError") = py::handle(error_type);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p)
                std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object inst = py::handle(error_type)(e.what());
            inst.attr("kind") = std::string(to_string(e.kind()));
            inst.attr("subject") = e.subject();
            PyErr_SetObject(error_type, inst.ptr());
        }
    });

    m.def("canonical_section_number", &ingest::canonical_section_number, py::arg("token"));
    m.def(
        "ingest_text",
        [](const std::string& text, const std::string& source_id) {
            return to_py(ingest::ingest({source_id, text}).to_json());
        },
        py::arg("text"), py::arg("source_id") = "spec", "Section tree of a plain-text specification as a dict.");

    m.def(
        "normalize_line",
        [](const std::string& raw, const std::string& kind) { return metrics::normalize_line(raw, kind_arg(kind)); },
        py::arg("raw"), py::arg("kind") = "config");
    m.def(
        "normalize_lines",
        [](const std::vector<std::string>& raw, const std::string& kind) {
            return metrics::normalize_lines(raw, kind_arg(kind));
        },
        py::arg("raw"), py::arg("kind") = "config");
    m.def(
        "line_recall",
        [](const metrics::LineSequence& a, const metrics::LineSequence& o) { return metrics::line_recall(a, o).recall; },
        py::arg("answer"), py::arg("output"));
    m.def("edit_distance", &metrics::edit_distance, py::arg("a"), py::arg("b"));
    m.def("similarity", &metrics::similarity, py::arg("answer"), py::arg("output"));
    m.def("validation_rate", &metrics::validation_rate, py::arg("verdicts"));
    m.def("estimate_fix_time", &metrics::estimate_fix_time, py::arg("gen_time_min"), py::arg("vr"), py::arg("sim"),
          py::arg("manual_time_min"));
    m.def("speedup", &metrics::speedup, py::arg("manual_time_min"), py::arg("fix_time_min"));
    m.def(
        "compare",
        [](const std::string& name, const std::vector<std::string>& answer, const std::vector<std::string>& output,
           const std::string& kind, bool validated) {
            return to_py(metrics::compare(name, answer, output, kind_arg(kind), validated).to_json());
        },
        py::arg("name"), py::arg("answer"), py::arg("output"), py::arg("kind") = "config", py::arg("validated") = false);

    m.def("stage_names", &pipeline::stage_names);
    m.def("default_config", [] { return to_py(pipeline::RunConfig::defaults().to_json()); });
    m.def(
        "run_pipeline",
        [](const py::dict& config, const fs::path& base_dir) {
            auto cfg = pipeline::RunConfig::from_json(from_py(config), base_dir);
            pipeline::RunManifest manifest;
            {
                py::gil_scoped_release release;
                manifest = pipeline::run(cfg);
            }
            return to_py(manifest.to_json());
        },
        py::arg("config"), py::arg("base_dir") = fs::path("."),
        "Runs the configured stages and returns the run manifest.");
    m.def("report", &pipeline::report, py::arg("run_dir"));
    m.def(
        "score_directories",
        [](const fs::path& answers, const fs::path& outputs, std::optional<fs::path> verdicts) {
            return to_py(pipeline::score_directories(answers, outputs, verdicts));
        },
        py::arg("answers"), py::arg("outputs"), py::arg("verdicts") = py::none());
}
