#include <sstream>
#include <string>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fsrel/cli.hpp"
#include "fsrel/errors.hpp"
#include "fsrel/metric.hpp"
#include "fsrel/sgdata.hpp"
#include "fsrel/synthetic.hpp"

namespace py = pybind11;

PYBIND11_MODULE(_fsrel, m) {
    m.doc() = "Bindings for the fsrel few-shot predicate classification library";

    auto base = py::register_exception<fsrel::Error>(m, "FsrelError");
    py::register_exception<fsrel::ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<fsrel::ParseError>(m, "ParseError", base.ptr());
    py::register_exception<fsrel::IntegrityError>(m, "IntegrityError", base.ptr());
    py::register_exception<fsrel::VocabularyError>(m, "VocabularyError", base.ptr());
    py::register_exception<fsrel::ContractViolation>(m, "ContractViolation", base.ptr());

    m.def(
        "run",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = fsrel::cli::run(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs one fsrel command; returns (exit_code, stdout, stderr).");

    m.def(
        "generate_world",
        [](const std::string& world_config_json, std::uint64_t seed) {
            const auto cfg = fsrel::world_config_from_json(nlohmann::json::parse(world_config_json));
            const auto world = fsrel::generate_synthetic_world(cfg, seed);
            return py::make_tuple(fsrel::dataset_to_json(world.dataset).dump(),
                                  fsrel::world_metadata_to_json(world.metadata).dump());
        },
        py::arg("world_config_json"), py::arg("seed"),
        "Synthetic world as (dataset JSON, metadata JSON) strings.");

    m.def(
        "validate_dataset",
        [](const std::string& dataset_json) {
            const auto ds = fsrel::parse_dataset(nlohmann::json::parse(dataset_json));
            return py::dict(py::arg("images") = ds.images.size(), py::arg("categories") = ds.num_categories(),
                            py::arg("predicates") = ds.num_predicates(),
                            py::arg("appearance_dim") = ds.appearance_dim);
        },
        py::arg("dataset_json"));

    m.def(
        "support_weights",
        [](std::vector<double> subject, std::vector<double> object) {
            return fsrel::SupportWeights::from_similarities(std::move(subject), std::move(object)).normalized;
        },
        py::arg("subject_similarity"), py::arg("object_similarity"),
        "Normalized metric weights softmax(e_s * e_o).");

    m.def(
        "reweighted_metric",
        [](const std::vector<double>& distances, std::vector<double> subject, std::vector<double> object) {
            const auto w = fsrel::SupportWeights::from_similarities(std::move(subject), std::move(object));
            return fsrel::reweighted_metric(distances, w);
        },
        py::arg("distances"), py::arg("subject_similarity"), py::arg("object_similarity"));

    m.def(
        "average_metric", [](const std::vector<double>& d) { return fsrel::average_metric(d); },
        py::arg("distances"));

    m.attr("EXIT_OK") = fsrel::cli::kExitOk;
    m.attr("EXIT_CONFIG") = fsrel::cli::kExitConfig;
    m.attr("EXIT_NUMERICAL") = fsrel::cli::kExitNumerical;
    m.attr("EXIT_DATA") = fsrel::cli::kExitData;
}
