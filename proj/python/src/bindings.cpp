#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "plumeemu/cvae.hpp"
#include "plumeemu/eof.hpp"
#include "plumeemu/error.hpp"
#include "plumeemu/gp.hpp"
#include "plumeemu/pipeline.hpp"
#include "plumeemu/preprocess.hpp"
#include "plumeemu/synth.hpp"

namespace py = pybind11;
using namespace plumeemu;

namespace {

py::array_t<double> image_of(const Plume& p) {
    py::array_t<double> out({p.grid.n_lat, p.grid.n_lon});
    std::copy(p.values.begin(), p.values.end(), out.mutable_data());
    return out;
}

void set_image(Plume& p, const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (static_cast<std::size_t>(a.size()) != p.grid.size())
        throw DimensionError("plume image has " + std::to_string(a.size()) + " values, grid has " +
                             std::to_string(p.grid.size()));
    p.values.assign(a.data(), a.data() + a.size());
}

ExperimentConfig config_from_text(const std::string& text) {
    std::istringstream is(text);
    return ExperimentConfig::from_config(ConfigFile::parse(is));
}

std::string config_to_text(const ExperimentConfig& cfg) {
    std::ostringstream os;
    cfg.to_config().write(os);
    return os.str();
}

}  // namespace

PYBIND11_MODULE(_plumeemu, m) {
    m.doc() = "Footprint emulation: synthetic plumes, EOF and CVAE reducers, GP feature emulators";
    m.attr("__version__") = "0.1.0";

    auto base = py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    (void)base;

    py::class_<GridSpec>(m, "GridSpec")
        .def(py::init<>())
        .def(py::init([](std::size_t n_lon, std::size_t n_lat, double lon_min, double lat_min, double d_lon,
                         double d_lat) { return GridSpec{n_lon, n_lat, lon_min, lat_min, d_lon, d_lat}; }),
             py::arg("n_lon"), py::arg("n_lat"), py::arg("lon_min"), py::arg("lat_min"), py::arg("d_lon"),
             py::arg("d_lat"))
        .def_readwrite("n_lon", &GridSpec::n_lon)
        .def_readwrite("n_lat", &GridSpec::n_lat)
        .def_readwrite("lon_min", &GridSpec::lon_min)
        .def_readwrite("lat_min", &GridSpec::lat_min)
        .def_readwrite("d_lon", &GridSpec::d_lon)
        .def_readwrite("d_lat", &GridSpec::d_lat)
        .def("size", &GridSpec::size)
        .def("center_lon", &GridSpec::center_lon)
        .def("center_lat", &GridSpec::center_lat)
        .def("__eq__", [](const GridSpec& a, const GridSpec& b) { return a == b; });

    py::class_<LonLat>(m, "LonLat")
        .def(py::init([](double lon, double lat) { return LonLat{lon, lat}; }), py::arg("lon"), py::arg("lat"))
        .def_readwrite("lon", &LonLat::lon)
        .def_readwrite("lat", &LonLat::lat);

    py::class_<Plume>(m, "Plume")
        .def_static("zeros", &Plume::zeros, py::arg("grid"), py::arg("origin") = LonLat{}, py::arg("time") = 0)
        .def_readwrite("grid", &Plume::grid)
        .def_readwrite("origin", &Plume::origin)
        .def_readwrite("time", &Plume::time)
        .def_readwrite("departure_angle", &Plume::departure_angle)
        .def_property("image", &image_of, &set_image, "Values as an (n_lat, n_lon) array; a copy.")
        .def("total", &Plume::total);

    py::class_<PlumeSet>(m, "PlumeSet")
        .def(py::init<>())
        .def_readwrite("grid", &PlumeSet::grid)
        .def_readwrite("plumes", &PlumeSet::plumes)
        .def("add", &PlumeSet::add)
        .def("__len__", &PlumeSet::size)
        .def("__getitem__", [](const PlumeSet& s, std::size_t i) { return s.plumes.at(i); });

    m.def("load_plumeset", &load_plumeset);
    m.def("save_plumeset", &save_plumeset);
    m.def("mse", py::overload_cast<const Plume&, const Plume&>(&mse));
    m.def("sum_mse", &sum_mse);

    py::class_<WindField>(m, "WindField")
        .def(py::init<>())
        .def_readwrite("base_speed", &WindField::base_speed)
        .def_readwrite("base_direction", &WindField::base_direction)
        .def_readwrite("direction_drift_amplitude", &WindField::direction_drift_amplitude)
        .def_readwrite("drift_period", &WindField::drift_period)
        .def_readwrite("warp_amplitude", &WindField::warp_amplitude)
        .def_readwrite("seed", &WindField::seed);
    py::class_<PlumeShape>(m, "PlumeShape")
        .def(py::init<>())
        .def_readwrite("duration", &PlumeShape::duration)
        .def_readwrite("sigma0", &PlumeShape::sigma0)
        .def_readwrite("spread", &PlumeShape::spread)
        .def_readwrite("mass_budget", &PlumeShape::mass_budget);
    py::class_<RegionBounds>(m, "RegionBounds")
        .def(py::init([](double a, double b, double c, double d) { return RegionBounds{a, b, c, d}; }),
             py::arg("lon_min"), py::arg("lon_max"), py::arg("lat_min"), py::arg("lat_max"));
    py::class_<TimeRange>(m, "TimeRange")
        .def(py::init([](std::int64_t s, std::int64_t e) { return TimeRange{s, e}; }), py::arg("start") = 0,
             py::arg("end") = 30 * 86400);
    m.def("central_region", &central_region);
    m.def("generate_plume", &generate_plume, py::arg("origin"), py::arg("time"), py::arg("wind"), py::arg("grid"),
          py::arg("shape") = PlumeShape{});
    m.def("generate_dataset", &generate_dataset, py::arg("n"), py::arg("region"), py::arg("times"), py::arg("wind"),
          py::arg("grid"), py::arg("seed"), py::arg("shape") = PlumeShape{});

    py::class_<AngleEstimate>(m, "AngleEstimate")
        .def_readonly("angle", &AngleEstimate::angle)
        .def_readonly("east", &AngleEstimate::east)
        .def_readonly("north", &AngleEstimate::north);
    m.def("estimate_departure_angle", [](const Plume& p) { return estimate_departure_angle(p); });
    m.def("idw_resample", [](const Plume& p, const GridSpec& g) { return idw_resample(p, g); });
    m.def("rotate_to_canonical", [](const Plume& p, double a) { return rotate_to_canonical(p, a); });

    py::class_<EofBasis>(m, "EofBasis")
        .def_readonly("r", &EofBasis::r)
        .def_readonly("singular_values", &EofBasis::singular_values)
        .def_readonly("right_vectors", &EofBasis::right_vectors)
        .def_readonly("train_coeffs", &EofBasis::train_coeffs);
    m.def("fit_eof", py::overload_cast<const linalg::Matrix&, std::size_t>(&fit_eof), py::arg("b"), py::arg("r"));
    m.def("reconstruct", &reconstruct, py::arg("basis"), py::arg("coeffs"));
    m.def("regress_coefficients",
          py::overload_cast<const EofBasis&, const linalg::Matrix&>(&regress_coefficients));

    py::class_<StPoint>(m, "StPoint")
        .def(py::init([](double lon, double lat, double t) { return StPoint{lon, lat, t}; }), py::arg("lon"),
             py::arg("lat"), py::arg("time_hours"))
        .def_readwrite("lon", &StPoint::lon)
        .def_readwrite("lat", &StPoint::lat)
        .def_readwrite("time", &StPoint::time);
    py::class_<GpHyper>(m, "GpHyper")
        .def_static("from_values", &GpHyper::from_values, py::arg("variance"), py::arg("length_space"),
                    py::arg("length_time"))
        .def_property_readonly("variance", &GpHyper::variance)
        .def_property_readonly("length_space", &GpHyper::length_space)
        .def_property_readonly("length_time", &GpHyper::length_time);
    py::class_<GpPrediction>(m, "GpPrediction")
        .def_readonly("mean", &GpPrediction::mean)
        .def_readonly("variance", &GpPrediction::variance);
    py::class_<GpModel>(m, "GpModel")
        .def_readonly("hyper", &GpModel::hyper)
        .def_readonly("jitter", &GpModel::jitter)
        .def_readonly("log_likelihood", &GpModel::log_likelihood);
    m.def("kernel", &kernel);
    m.def("condition", [](const std::vector<StPoint>& pts, const std::vector<double>& y, const GpHyper& h) {
        return condition(pts, y, h);
    });
    m.def(
        "fit_mle",
        [](const std::vector<StPoint>& pts, const std::vector<double>& y, std::size_t restarts, std::uint64_t seed) {
            GpFitConfig cfg;
            cfg.restarts = restarts;
            cfg.seed = seed;
            return fit_mle(pts, y, default_hyper(pts, y), cfg);
        },
        py::arg("points"), py::arg("targets"), py::arg("restarts") = 5, py::arg("seed") = 0);
    m.def("posterior", &posterior);

    py::class_<LatentCode>(m, "LatentCode")
        .def(py::init([](std::vector<double> mean, std::vector<double> log_variance) {
                 return LatentCode{std::move(mean), std::move(log_variance)};
             }),
             py::arg("mean"), py::arg("log_variance"))
        .def_readwrite("mean", &LatentCode::mean)
        .def_readwrite("log_variance", &LatentCode::log_variance);
    m.def("kl_term", &kl_term);

    py::class_<ExperimentConfig>(m, "ExperimentConfig")
        .def(py::init<>())
        .def_static("from_text", &config_from_text)
        .def_static("load", [](const std::string& path) { return ExperimentConfig::from_config(ConfigFile::load(path)); })
        .def("to_text", &config_to_text)
        .def("validate", &ExperimentConfig::validate)
        .def_readwrite("seed", &ExperimentConfig::seed)
        .def_readwrite("r", &ExperimentConfig::r)
        .def_readwrite("n_samples", &ExperimentConfig::n_samples);
    m.def("synthesize", [](const ExperimentConfig& cfg) { return synthesize(cfg.synth, cfg.seed); });
    m.def(
        "run_experiment",
        [](const ExperimentConfig& cfg, const std::string& out_dir) {
            const ExperimentResult r = run_experiment(cfg, out_dir);
            py::dict d;
            d["sum_mse_baseline"] = r.sum_mse_baseline;
            d["sum_mse_eof"] = r.sum_mse_eof;
            d["sum_mse_cvae"] = r.sum_mse_cvae;
            d["min_output_value"] = r.min_output_value;
            d["n_kept"] = r.n_kept;
            d["n_removed"] = r.n_removed;
            d["seconds"] = r.seconds;
            return d;
        },
        py::arg("config"), py::arg("out_dir"));

    py::class_<EmulationBundle>(m, "EmulationBundle");
    py::class_<EmulatedPlume>(m, "EmulatedPlume")
        .def_readonly("mean", &EmulatedPlume::mean)
        .def_readonly("stderr", &EmulatedPlume::stderr_plume)
        .def_readonly("n_samples", &EmulatedPlume::n_samples);
    m.def("load_bundle", &load_bundle);
    m.def("emulate", &emulate, py::arg("bundle"), py::arg("site"), py::arg("time"), py::arg("n_samples"),
          py::arg("seed"));
}
