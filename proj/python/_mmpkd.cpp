#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include <json.hpp>

#include "mmpkd/attention_eval.hpp"
#include "mmpkd/auroc.hpp"
#include "mmpkd/cli.hpp"
#include "mmpkd/distill.hpp"
#include "mmpkd/experiment.hpp"
#include "mmpkd/stats.hpp"
#include "mmpkd/synth_data.hpp"
#include "mmpkd/teacher.hpp"
#include "mmpkd/vit.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace mmpkd;

namespace {

// dicts cross the boundary as JSON text
json to_json_value(const py::object& o) {
    if (o.is_none()) return json::object();
    return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

template <typename T>
py::array_t<double> grid_array(const Grid<T>& g) {
    py::array_t<double> a({g.height, g.width});
    auto r = a.mutable_unchecked<2>();
    for (std::size_t y = 0; y < g.height; ++y)
        for (std::size_t x = 0; x < g.width; ++x) r(y, x) = static_cast<double>(g(y, x));
    return a;
}

template <typename T>
Grid<T> array_grid(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    Grid<T> g(a.shape(0), a.shape(1));
    auto r = a.unchecked<2>();
    for (std::size_t y = 0; y < g.height; ++y)
        for (std::size_t x = 0; x < g.width; ++x) g(y, x) = static_cast<T>(r(y, x));
    return g;
}

Box to_box(const std::tuple<int, int, int, int>& t) {
    return {std::get<0>(t), std::get<1>(t), std::get<2>(t), std::get<3>(t)};
}

py::tuple from_box(const Box& b) { return py::make_tuple(b.x0, b.y0, b.x1, b.y1); }

py::dict sample_dict(const data::Sample& s) {
    py::dict d;
    d["id"] = s.id;
    d["label"] = s.label;
    d["image"] = grid_array(s.image);
    d["roi_mask"] = grid_array(s.roi_mask);
    d["privileged"] = s.privileged;
    py::list boxes;
    for (const auto& b : s.roi_boxes) boxes.append(from_box(b));
    d["roi_boxes"] = boxes;
    return d;
}

py::dict dataset_dict(const data::Dataset& ds) {
    py::dict d;
    for (auto s : data::kAllSplits) {
        py::list l;
        for (const auto& x : ds.split(s)) l.append(sample_dict(x));
        d[py::str(data::split_name(s))] = l;
    }
    return d;
}

}  // namespace

PYBIND11_MODULE(_mmpkd, m) {
    m.doc() = "mmpkd core bindings";

    m.def("generate_dataset", [](const py::object& cfg) {
        json j = data::GeneratorConfig{};
        j.update(to_json_value(cfg));
        return dataset_dict(data::generate_dataset(j.get<data::GeneratorConfig>()));
    }, py::arg("config") = py::none());
    m.def("read_dataset", [](const std::filesystem::path& dir) { return dataset_dict(data::read_dataset(dir)); });

    m.def("auroc", [](const std::vector<double>& scores, const std::vector<int>& labels) {
        return auroc(scores, labels);
    });
    m.def("pixel_auroc", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& map,
                            const py::array_t<double, py::array::c_style | py::array::forcecast>& mask) {
        return eval::pixel_auroc(array_grid<double>(map), array_grid<std::uint8_t>(mask));
    });
    m.def("iou", [](const std::tuple<int, int, int, int>& a, const std::tuple<int, int, int, int>& b) {
        return eval::iou(to_box(a), to_box(b));
    });
    m.def("extract_boxes", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& map,
                              double quantile, std::size_t min_area) {
        py::list out;
        for (const auto& b : eval::extract_boxes(array_grid<double>(map), {quantile, min_area})) out.append(from_box(b));
        return out;
    }, py::arg("map"), py::arg("quantile") = 0.9, py::arg("min_area") = 16);

    m.def("soft_label", [](double logit, double temperature) { return teacher::soft_label(logit, temperature).value; });
    m.def("distill_loss", [](const std::vector<double>& hard, const std::vector<double>& soft,
                             const std::vector<double>& p, double lambda) {
        const auto t = nn::Tensor::from_data({p.size()}, p);
        return distill::compute_distill_loss(hard, soft, t, lambda).item();
    }, py::arg("hard"), py::arg("soft"), py::arg("p"), py::arg("lam"));

    m.def("mann_whitney_u", [](const std::vector<double>& a, const std::vector<double>& b, const std::string& alt) {
        auto alternative = stats::Alternative::TwoSided;
        if (alt == "less") alternative = stats::Alternative::Less;
        else if (alt == "greater") alternative = stats::Alternative::Greater;
        else if (alt != "two-sided") throw std::invalid_argument("alternative must be two-sided, less or greater");
        const auto r = stats::mann_whitney_u(a, b, alternative);
        return py::make_tuple(r.u, r.p, r.exact);
    }, py::arg("a"), py::arg("b"), py::arg("alternative") = "two-sided");

    py::class_<student::StudentViT>(m, "StudentViT")
        .def(py::init([](const py::object& cfg, std::uint64_t seed) {
                 json j = student::VitConfig{};
                 j.update(to_json_value(cfg));
                 return student::StudentViT(j.get<student::VitConfig>(), seed);
             }),
             py::arg("config") = py::none(), py::arg("seed") = 0)
        .def_static("load", &student::StudentViT::load)
        .def("save", &student::StudentViT::save)
        .def_property_readonly("config", [](const student::StudentViT& s) { return to_py(json(s.config())); })
        .def("parameter_count", &student::StudentViT::parameter_count)
        // (logit, H x W attention map)
        .def("infer", [](const student::StudentViT& s, const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
                         const std::string& method) {
            const auto [logit, rec] = s.infer(array_grid<double>(image));
            return py::make_tuple(logit, grid_array(student::extract_attention_map(rec, student::parse_method(method)).normalized));
        }, py::arg("image"), py::arg("method") = "last_cls");

    py::class_<experiment::Experiment>(m, "Experiment")
        .def(py::init([](const py::object& cfg, const std::filesystem::path& output_dir, bool strict) {
                 experiment::ExperimentConfig c;
                 to_json_value(cfg).get_to(c);
                 c.output_dir = output_dir;
                 return experiment::Experiment(std::move(c), {strict, true, nullptr});
             }),
             py::arg("config") = py::none(), py::arg("output_dir") = "mmpkd-out", py::arg("strict") = false)
        .def_property_readonly("config", [](const experiment::Experiment& e) { return to_py(json(e.config())); })
        .def_property_readonly("config_digest", [](const experiment::Experiment& e) { return experiment::config_digest(e.config()); })
        .def("generate", &experiment::Experiment::generate)
        .def("train_teacher", [](experiment::Experiment& e) { e.train_teacher(); })
        .def("train_student", [](experiment::Experiment& e, const std::string& mode, std::uint64_t seed,
                                 std::optional<std::filesystem::path> teacher) {
            return to_py(json(e.train_student(distill::parse_mode(mode), seed, teacher)));
        }, py::arg("mode"), py::arg("seed"), py::arg("teacher") = py::none())
        .def("evaluate", [](experiment::Experiment& e, const std::string& mode, std::uint64_t seed, const std::string& method) {
            return to_py(eval::metrics_summary(e.evaluate(distill::parse_mode(mode), seed, student::parse_method(method))));
        }, py::arg("mode"), py::arg("seed"), py::arg("method") = "last_cls")
        .def("write_reports", &experiment::Experiment::write_reports, py::arg("pooled") = false, py::arg("alpha") = 0.05,
             py::arg("two_sided") = true)
        .def("render", [](experiment::Experiment& e, const std::string& mode, std::uint64_t seed, std::size_t count,
                          const std::string& method) {
            return e.render(distill::parse_mode(mode), seed, count, student::parse_method(method));
        }, py::arg("mode"), py::arg("seed"), py::arg("count") = 6, py::arg("method") = "last_cls")
        .def("run_pipeline", &experiment::Experiment::run_pipeline);

    // argv without the program name; returns the exit code and captured streams
    m.def("cli", [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"mmpkd"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
    });

    py::register_exception<experiment::PreconditionError>(m, "PreconditionError", PyExc_RuntimeError);
    py::register_exception<distill::NanLossError>(m, "NanLossError", PyExc_ArithmeticError);
}
