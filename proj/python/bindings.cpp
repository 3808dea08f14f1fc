// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ulga/harness.hpp"
#include "ulga/mi.hpp"

namespace py = pybind11;
using namespace ulga;

namespace {

std::vector<double> as_doubles(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    return std::vector<double>(a.data(), a.data() + a.size());
}

py::array_t<float> to_array(std::span<const float> v) {
    py::array_t<float> out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::dict record_dict(const ImpRecord& r) {
    py::dict d;
    d["iteration"] = r.iteration;
    d["weights_remaining_frac"] = r.weights_remaining_frac;
    d["units_remaining_frac"] = r.units_remaining_frac;
    d["valid_loss"] = r.valid_loss;
    d["test_error_multiplier"] = r.test_error_multiplier;
    d["flops_per_second_audio"] = r.flops_per_second_audio;
    d["disk_bytes"] = r.disk_bytes;
    d["rw_accesses"] = r.rw_accesses;
    return d;
}

}  // namespace

PYBIND11_MODULE(_ulga, m) {
    m.doc() = "Structured lottery-ticket pruning of small generative audio networks";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    py::enum_<ModelKind>(m, "ModelKind")
        .value("tiny_wavenet", ModelKind::tiny_wavenet)
        .value("tiny_sing", ModelKind::tiny_sing)
        .value("tiny_ddsp", ModelKind::tiny_ddsp);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def_static("desk", &ModelConfig::desk)
        .def_static("reference", &ModelConfig::reference)
        .def_readwrite("kind", &ModelConfig::kind)
        .def_readwrite("width_scale", &ModelConfig::width_scale)
        .def_readwrite("depth_scale", &ModelConfig::depth_scale)
        .def_readwrite("sample_rate", &ModelConfig::sample_rate)
        .def_readwrite("mu", &ModelConfig::mu)
        .def_readwrite("n_partials", &ModelConfig::n_partials)
        .def_readwrite("noise_bands", &ModelConfig::noise_bands)
        .def("validate", &ModelConfig::validate);

    py::class_<Network>(m, "Network")
        .def_property_readonly("param_count", &Network::param_count)
        .def_property_readonly("weight_count", &Network::weight_count)
        .def_property_readonly("trimmable_unit_count", &Network::trimmable_unit_count)
        .def_property_readonly("layer_names",
                               [](const Network& n) {
                                   std::vector<std::string> names;
                                   for (const auto& l : n.layers()) names.push_back(l.name);
                                   return names;
                               })
        .def("save", [](const Network& n, const std::string& path) { save(n, path); })
        .def("disk_size", [](const Network& n) { return disk_size(n); });

    m.def("build", &build, py::arg("config"), py::arg("seed") = 0);
    m.def("load", &load, py::arg("path"));

    m.def(
        "costs",
        [](const Network& net, const ModelConfig& cfg) {
            const ModelCosts c = measure_costs(net, cfg, 1.0);
            py::dict d;
            d["flops_per_audio_second"] = c.flops_per_audio_second;
            d["disk_bytes"] = c.disk_bytes;
            d["rw_accesses_per_sample"] = c.rw_accesses_per_sample;
            d["working_set_bytes"] = c.working_set_bytes;
            return d;
        },
        py::arg("network"), py::arg("config"));

    m.def("table1_platforms", [] {
        py::list out;
        for (const auto& p : table1_platforms()) {
            py::dict d;
            d["name"] = p.name;
            d["cpu_hz"] = p.cpu_hz;
            d["flops_per_sec"] = p.flops_per_sec;
            d["drive_bytes"] = p.drive_bytes;
            d["ram_bytes"] = p.ram_bytes;
            out.append(d);
        }
        return out;
    });

    m.def(
        "feasibility",
        [](double flops, std::uint64_t disk, std::uint64_t working_set) {
            ModelCosts c;
            c.flops_per_audio_second = flops;
            c.disk_bytes = disk;
            c.working_set_bytes = working_set;
            py::dict d;
            for (const auto& p : table1_platforms()) {
                const EmbedVerdict v = feasibility(c, p);
                d[py::str(p.name)] = py::make_tuple(v.realtime_ok, v.embeddable_ok);
            }
            return d;
        },
        py::arg("flops_per_audio_second"), py::arg("disk_bytes"), py::arg("working_set_bytes"),
        "Map of platform name to (real_time, embeddable) for the built-in table.");

    m.def(
        "pareto_front",
        [](const std::vector<std::pair<double, double>>& points) {
            std::vector<ParetoPoint> p;
            for (std::size_t i = 0; i < points.size(); ++i) p.push_back({points[i].first, points[i].second, i});
            std::vector<std::pair<double, double>> out;
            for (const auto& q : pareto_front(p)) out.emplace_back(q.error, q.cost);
            return out;
        },
        py::arg("points"), "Non-dominated (error, cost) pairs sorted by cost.");

    m.def(
        "estimate_mi",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& z,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& y, std::size_t max_samples) {
            MiConfig cfg;
            cfg.max_samples = max_samples;
            const std::size_t dims = y.ndim() == 2 ? static_cast<std::size_t>(y.shape(1)) : 1;
            return estimate_mi(as_doubles(z), as_doubles(y), dims, cfg);
        },
        py::arg("z"), py::arg("y"), py::arg("max_samples") = 2048, "Mutual information in nats.");

    py::class_<MuLawCodec>(m, "MuLawCodec")
        .def(py::init<int>(), py::arg("mu") = 255)
        .def("encode", &MuLawCodec::encode)
        .def("decode", &MuLawCodec::decode)
        .def_property_readonly("levels", &MuLawCodec::levels);

    m.def(
        "gen_synthetic_tones",
        [](std::size_t n, double sr, double duration, std::uint64_t seed) {
            py::list out;
            for (const auto& ex : gen_synthetic_tones(n, sr, duration, seed)) {
                py::dict d;
                d["wave"] = to_array(ex.wave);
                d["f0"] = to_array(ex.f0);
                d["loudness"] = to_array(ex.loudness);
                out.append(d);
            }
            return out;
        },
        py::arg("n_items"), py::arg("sample_rate") = 16000.0, py::arg("duration") = 0.5, py::arg("seed") = 0);

    m.def(
        "write_wav",
        [](const std::string& path, const py::array_t<float, py::array::c_style | py::array::forcecast>& x,
           std::uint32_t sr) { write_wav(path, std::span<const float>(x.data(), x.size()), sr); },
        py::arg("path"), py::arg("samples"), py::arg("sample_rate") = 16000);
    m.def(
        "read_wav",
        [](const std::string& path) {
            const WavData w = read_wav(path);
            return py::make_tuple(to_array(w.samples), w.sample_rate);
        },
        py::arg("path"));

    m.def(
        "run_experiment",
        [](const std::string& config_json) {
            const ExperimentConfig cfg = parse_experiment_config(config_json);
            ExperimentResult r;
            {
                py::gil_scoped_release release;
                r = run_experiment(cfg);
            }
            py::list rows;
            for (const auto& rec : r.trace.records) rows.append(record_dict(rec));
            return rows;
        },
        py::arg("config_json"), "Run an experiment from a JSON configuration and return the trace rows.");
}
