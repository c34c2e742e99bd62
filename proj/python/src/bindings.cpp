#include "mmreg/cli.h"
#include "mmreg/eval.h"
#include "mmreg/mha_io.h"
#include "mmreg/mind.h"
#include "mmreg/parallel.h"
#include "mmreg/phantom.h"
#include "mmreg/registration.h"
#include "mmreg/rigid.h"
#include "mmreg/similarity.h"
#include "mmreg/stitch.h"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace pybind11::literals;
using namespace mmreg;

namespace {

// Arrays are indexed [z, y, x], which matches the x-fastest voxel order.
template <class T>
using carray = py::array_t<T, py::array::c_style | py::array::forcecast>;

Dims dims_of(const py::buffer_info& b)
{
    if (b.ndim != 3) throw std::invalid_argument("expected a 3D array indexed [z, y, x]");
    return {static_cast<int>(b.shape[2]), static_cast<int>(b.shape[1]), static_cast<int>(b.shape[0])};
}

template <class T>
py::array_t<T> to_array(Dims d, const std::vector<T>& data)
{
    py::array_t<T> a({d.z, d.y, d.x});
    std::copy(data.begin(), data.end(), a.mutable_data());
    return a;
}

Volume volume_from(const carray<float>& arr, Vec3 spacing, Vec3 origin)
{
    const auto b = arr.request();
    Volume v(dims_of(b), spacing, origin);
    std::copy_n(arr.data(), v.data.size(), v.data.begin());
    v.validate();
    return v;
}

LabelVolume labels_from(const carray<std::uint16_t>& arr, Vec3 spacing)
{
    const auto b = arr.request();
    LabelVolume l(dims_of(b), spacing);
    std::copy_n(arr.data(), l.data.size(), l.data.begin());
    return l;
}

py::array_t<double> field_to_array(const DenseField& f)
{
    py::array_t<double> a({f.dims.z, f.dims.y, f.dims.x, 3});
    double* p = a.mutable_data();
    for (const auto& v : f.vectors) {
        *p++ = v[0];
        *p++ = v[1];
        *p++ = v[2];
    }
    return a;
}

DenseField field_from(const carray<double>& arr)
{
    const auto b = arr.request();
    if (b.ndim != 4 || b.shape[3] != 3) throw std::invalid_argument("expected a field array of shape (z, y, x, 3)");
    DenseField f({static_cast<int>(b.shape[2]), static_cast<int>(b.shape[1]), static_cast<int>(b.shape[0])});
    const double* p = arr.data();
    for (auto& v : f.vectors) {
        v = {p[0], p[1], p[2]};
        p += 3;
    }
    return f;
}

ScaleStrategy parse_strategy(const std::string& s)
{
    if (s == "fixed") return ScaleStrategy::fixed;
    if (s == "grad") return ScaleStrategy::initial_gradient;
    if (s == "delta") return ScaleStrategy::dissimilarity_change;
    throw std::invalid_argument("scale must be fixed, grad or delta, got '" + s + "'");
}

} // namespace

PYBIND11_MODULE(_mmreg, m)
{
    m.doc() = "Multi-modal deformable registration of 3D volumes";
    m.attr("__version__") = tool_version;

    py::class_<Volume>(m, "Volume")
        .def(py::init(&volume_from), "array"_a, "spacing"_a = Vec3{1, 1, 1}, "origin"_a = Vec3{0, 0, 0})
        .def_property_readonly("shape", [](const Volume& v) { return std::array<int, 3>{v.dims.z, v.dims.y, v.dims.x}; })
        .def_readwrite("spacing", &Volume::spacing)
        .def_readwrite("origin", &Volume::origin)
        .def("to_numpy", [](const Volume& v) { return to_array(v.dims, v.data); });

    py::class_<LabelVolume>(m, "LabelVolume")
        .def(py::init(&labels_from), "array"_a, "spacing"_a = Vec3{1, 1, 1})
        .def_property_readonly("shape", [](const LabelVolume& v) { return std::array<int, 3>{v.dims.z, v.dims.y, v.dims.x}; })
        .def_readwrite("names", &LabelVolume::label_names)
        .def("to_numpy", [](const LabelVolume& v) { return to_array(v.dims, v.data); });

    m.def("set_threads", &set_num_threads, "n"_a, "worker threads; results do not depend on the count");

    // io
    m.def("load_volume", &load_mha_volume, "path"_a);
    m.def("load_labels", &load_mha_labels, "path"_a);
    m.def("save_volume", py::overload_cast<const Volume&, const std::string&>(&save_mha), "volume"_a, "path"_a);
    m.def("save_labels", py::overload_cast<const LabelVolume&, const std::string&>(&save_mha), "labels"_a, "path"_a);
    m.def("load_field", [](const std::string& path) { return field_to_array(load_mha_field(path)); }, "path"_a);
    py::register_exception<MhaError>(m, "MhaError", PyExc_ValueError);

    // phantoms
    m.def(
        "phantom",
        [](const std::string& spec) {
            const Phantom p = generate(parse_phantom_spec(spec));
            py::dict d;
            d["a"] = p.a;
            d["b"] = p.b;
            d["labels_a"] = p.labels_a;
            d["labels_b"] = p.labels_b;
            d["truth"] = field_to_array(p.truth);
            return d;
        },
        "spec"_a = "", "phantom pair from a spec such as 'dims=32x32x32 deformation=sinusoidal(2,16)'");

    // measures
    m.def("nmi", [](const Volume& f, const Volume& w, int bins) { return nmi_dissimilarity(f, w, bins); }, "fixed"_a,
          "warped_moving"_a, "bins"_a = 100, "negated normalised mutual information, in [-2, -1]");
    m.def("lncc", &lncc_dissimilarity, "fixed"_a, "warped_moving"_a, "radius"_a = 3);
    m.def(
        "mind",
        [](const Volume& f, const Volume& mv, std::optional<carray<double>> field, double sigma) {
            MindParams p;
            p.sigma = sigma;
            return mind_dissimilarity(f, mv, field ? field_from(*field) : DenseField(f.dims), p);
        },
        "fixed"_a, "moving"_a, "field"_a = py::none(), "sigma"_a = 0.5);
    m.def(
        "combined",
        [](const Volume& f, const Volume& mv, std::optional<carray<double>> field, double beta, double s) {
            return combined_dissimilarity(f, mv, field ? field_from(*field) : DenseField(f.dims), beta, s);
        },
        "fixed"_a, "moving"_a, "field"_a = py::none(), "beta"_a = 0.8, "s"_a = 1.0);
    m.def(
        "mind_descriptor",
        [](const Volume& v, double sigma) {
            MindParams p;
            p.sigma = sigma;
            const MindField f = compute_mind(v, p);
            py::array_t<double> a({f.dims.z, f.dims.y, f.dims.x, f.channels});
            std::copy(f.data.begin(), f.data.end(), a.mutable_data());
            return a;
        },
        "volume"_a, "sigma"_a = 0.5);

    // registration
    m.def(
        "register",
        [](const Volume& fixed, const Volume& moving, const std::string& measure, double beta, const std::string& scale,
           double fixed_s, double lambda, const std::string& regularizer, int spacing, int levels, int max_iters,
           bool symmetric) {
            RegistrationConfig c;
            c.measure = parse_measure(measure);
            c.combine = {beta, parse_strategy(scale), fixed_s};
            c.lambda = lambda;
            c.regularizer = parse_regularizer(regularizer);
            c.spacing_vox = spacing;
            c.levels = levels;
            c.max_iters_per_level = max_iters;
            c.symmetric = symmetric;
            RegistrationResult r;
            {
                py::gil_scoped_release nogil;
                r = register_deformable(fixed, moving, c);
            }
            std::ostringstream rep;
            write_report(rep, r);
            py::dict d;
            d["field"] = field_to_array(r.field());
            if (r.backward) d["backward"] = field_to_array(*r.backward_field());
            d["dissimilarity"] = r.final_dissimilarity;
            d["report"] = rep.str();
            return d;
        },
        "fixed"_a, "moving"_a, "measure"_a = "nmi", "beta"_a = 0.8, "scale"_a = "grad", "fixed_s"_a = 1.0,
        "lambda_"_a = 1e-5, "regularizer"_a = "tv", "spacing"_a = 4, "levels"_a = 3, "max_iters"_a = 100,
        "symmetric"_a = false);
    m.def(
        "register_rigid",
        [](const Volume& fixed, const Volume& moving, std::uint64_t seed, int iterations) {
            RigidOptions o;
            o.seed = seed;
            o.iterations = iterations;
            RigidResult r;
            {
                py::gil_scoped_release nogil;
                r = register_rigid(fixed, moving, o);
            }
            py::dict d;
            d["rotation_rad"] = r.transform.rotation_rad;
            d["translation_mm"] = r.transform.translation_mm;
            d["resampled"] = r.resampled;
            d["cost"] = r.cost;
            return d;
        },
        "fixed"_a, "moving"_a, "seed"_a = 0x5EED, "iterations"_a = 600);
    m.def("warp", [](const Volume& v, const carray<double>& field) { return warp(v, field_from(field)); }, "volume"_a,
          "field"_a);
    m.def("warp_labels", [](const LabelVolume& l, const carray<double>& field) { return propagate_labels(l, field_from(field)); },
          "labels"_a, "field"_a);

    // evaluation
    m.def(
        "dice",
        [](const LabelVolume& a, const LabelVolume& b) {
            const DiceReport r = dice(a, b);
            return py::make_tuple(r.mean, r.per_label);
        },
        "a"_a, "b"_a, "(mean, {label: dice})");
    m.def(
        "endpoint_error",
        [](const carray<double>& est, const carray<double>& truth) {
            const EndpointError e = endpoint_error(field_from(est), field_from(truth));
            return py::make_tuple(e.mean, e.max);
        },
        "estimated"_a, "truth"_a, "(mean, max)");

    // tiling
    m.def(
        "stitch",
        [](const Volume& v, std::array<int, 3> tile, std::array<int, 3> stride, py::object mapper) {
            const TilePlan plan = plan_tiles(v.dims, {tile[0], tile[1], tile[2]}, {stride[0], stride[1], stride[2]});
            if (mapper.is_none()) return stitch_map(v, plan, identity_mapper());
            // python callables run serially under the GIL
            const TileMapper f = [&mapper](const Volume& t) { return mapper(t).cast<Volume>(); };
            return stitch_map(v, plan, f, false);
        },
        "volume"_a, "tile"_a = std::array<int, 3>{16, 16, 12}, "stride"_a = std::array<int, 3>{4, 4, 4},
        "mapper"_a = py::none(), "tile and stride are (x, y, z); mapper maps a tile Volume to a Volume of the same shape");
}
