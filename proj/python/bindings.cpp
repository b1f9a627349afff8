#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <string>
#include <vector>

#include "cdx/config.hpp"
#include "cdx/gradsuite.hpp"
#include "cdx/model.hpp"
#include "cdx/ops.hpp"
#include "cdx/trainer.hpp"
#include "cdx/xlstm.hpp"

namespace py = pybind11;
using namespace cdx;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape s(a.shape(), a.shape() + a.ndim());
    return Tensor::from(std::move(s), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::dict metrics_dict(const Metrics& m, const ConfusionCounts& c) {
    py::dict d;
    d["f1"] = m.f1;
    d["precision"] = m.precision;
    d["recall"] = m.recall;
    d["iou"] = m.iou;
    d["oa"] = m.oa;
    d["tp"] = c.tp;
    d["fp"] = c.fp;
    d["fn"] = c.fn;
    d["tn"] = c.tn;
    return d;
}

// Samples cross the boundary as (img1, img2, mask, id) tuples.
std::vector<BiTemporalSample> to_samples(const py::list& items) {
    std::vector<BiTemporalSample> out;
    for (const auto& it : items) {
        auto t = it.cast<py::tuple>();
        if (t.size() < 3) throw py::value_error("a sample is (img1, img2, mask[, id])");
        BiTemporalSample s;
        s.img1 = to_tensor(t[0].cast<Array>());
        s.img2 = to_tensor(t[1].cast<Array>());
        s.mask = to_tensor(t[2].cast<Array>());
        s.id = t.size() > 3 ? t[3].cast<std::string>() : "sample_" + std::to_string(out.size());
        out.push_back(std::move(s));
    }
    return out;
}

py::list from_samples(const std::vector<BiTemporalSample>& samples) {
    py::list out;
    for (const auto& s : samples) out.append(py::make_tuple(to_array(s.img1), to_array(s.img2), to_array(s.mask), s.id));
    return out;
}

struct PyModel {
    ParamStore store;
    std::unique_ptr<ChangeDetector> net;

    PyModel(const std::vector<std::size_t>& channels, const std::string& assignment, std::size_t phi_heads,
            std::size_t attn_heads, std::size_t embed, std::uint64_t seed) {
        if (channels.size() != 4) throw py::value_error("channels needs 4 entries");
        ModelConfig cfg;
        std::copy(channels.begin(), channels.end(), cfg.channels.begin());
        cfg.assignment = EnhancerAssignment::parse(assignment);
        cfg.phi_heads = phi_heads;
        cfg.attn_heads = attn_heads;
        cfg.embed = embed;
        Rng rng(seed);
        net = std::make_unique<ChangeDetector>(cfg, store, rng);
    }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Bi-temporal change detection with xLSTM enhancers (double precision, CPU).";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
    py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);

    py::class_<PyModel>(m, "Model")
        .def(py::init<const std::vector<std::size_t>&, const std::string&, std::size_t, std::size_t, std::size_t,
                      std::uint64_t>(),
             py::arg("channels") = std::vector<std::size_t>{16, 32, 64, 128}, py::arg("assignment") = "SSGG",
             py::arg("phi_heads") = 4, py::arg("attn_heads") = 1, py::arg("embed") = 32, py::arg("seed") = 0)
        .def_property_readonly("param_count", [](const PyModel& p) { return p.store.scalar_count(); })
        .def_property_readonly("assignment", [](const PyModel& p) { return p.net->config().assignment.str(); })
        .def("param_names",
             [](const PyModel& p) {
                 std::vector<std::string> names;
                 for (const auto& t : p.store.params()) names.push_back(t.name);
                 return names;
             })
        .def("param", [](const PyModel& p, const std::string& name) { return to_array(p.store.get(name)); })
        .def(
            "forward",
            [](const PyModel& p, const Array& a, const Array& b) {
                const Tensor x1 = to_tensor(a), x2 = to_tensor(b);
                Tensor z;
                {
                    py::gil_scoped_release nogil;
                    NoGradGuard ng;
                    z = p.net->forward(x1, x2);
                }
                return to_array(z);
            },
            py::arg("img1"), py::arg("img2"), "Logits (N, 1, H, W) for images (N, 3, H, W).")
        .def(
            "trace",
            [](const PyModel& p, const Array& a, const Array& b) {
                NoGradGuard ng;
                const auto tr = p.net->trace(to_tensor(a), to_tensor(b));
                py::dict d;
                py::list pyr1, pyr2, reps;
                for (std::size_t s = 0; s < 4; ++s) {
                    pyr1.append(to_array(tr.pyr1.stages[s]));
                    pyr2.append(to_array(tr.pyr2.stages[s]));
                    reps.append(to_array(tr.reps[s]));
                }
                d["pyr1"] = pyr1;
                d["pyr2"] = pyr2;
                d["reps"] = reps;
                d["fused"] = to_array(tr.fused);
                d["logits"] = to_array(tr.logits);
                return d;
            },
            py::arg("img1"), py::arg("img2"))
        .def(
            "train",
            [](PyModel& p, const py::list& samples, std::size_t epochs, std::size_t batch, double lr,
               std::uint64_t seed) {
                TrainConfig cfg;
                cfg.epochs = epochs;
                cfg.batch = batch;
                cfg.adam.lr = lr;
                cfg.seed = seed;
                const auto data = to_samples(samples);
                std::vector<EpochLog> logs;
                {
                    py::gil_scoped_release nogil;
                    logs = train(*p.net, p.store, data, cfg);
                }
                py::list out;
                for (const auto& r : logs) {
                    auto d = metrics_dict(r.metrics, r.counts);
                    d["epoch"] = r.epoch;
                    d["loss"] = r.loss;
                    out.append(d);
                }
                return out;
            },
            py::arg("samples"), py::arg("epochs"), py::arg("batch") = 2, py::arg("lr") = 1e-3, py::arg("seed") = 0,
            "Adam over shuffled mini-batches; returns one dict per epoch.")
        .def(
            "evaluate",
            [](const PyModel& p, const py::list& samples) {
                const auto data = to_samples(samples);
                EvalResult r;
                {
                    py::gil_scoped_release nogil;
                    r = evaluate(*p.net, data);
                }
                auto d = metrics_dict(r.metrics, r.counts);
                d["loss"] = r.loss;
                return d;
            },
            py::arg("samples"))
        .def("save", [](const PyModel& p, const std::string& path) { save_checkpoint(p.store, path); })
        .def("load", [](PyModel& p, const std::string& path) { load_checkpoint(p.store, path); });

    m.def(
        "synth",
        [](std::size_t count, std::size_t size, std::uint64_t seed) {
            SynthConfig c;
            c.size = size;
            c.seed = seed;
            return from_samples(synth_generate(c, count));
        },
        py::arg("count") = 8, py::arg("size") = 64, py::arg("seed") = 0,
        "Synthetic (img1, img2, mask, id) pairs.");
    m.def("load_pair_dir", [](const std::string& root) { return from_samples(load_pair_dir(root)); });

    m.def(
        "bce_loss", [](const Array& z, const Array& y) { return bce_loss(to_tensor(z), to_tensor(y)).item(); },
        py::arg("logits"), py::arg("target"));
    m.def(
        "dice_loss",
        [](const Array& z, const Array& y, double eps) { return dice_loss(to_tensor(z), to_tensor(y), eps).item(); },
        py::arg("logits"), py::arg("target"), py::arg("eps") = 1.0);
    m.def(
        "total_loss",
        [](const Array& z, const Array& y, double ce, double dice) {
            return total_loss(to_tensor(z), to_tensor(y), {ce, dice}).item();
        },
        py::arg("logits"), py::arg("target"), py::arg("ce") = 1.0, py::arg("dice") = 1.0);
    m.def(
        "metrics",
        [](std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn) {
            const ConfusionCounts c{tp, fp, fn, tn};
            return metrics_dict(metrics(c), c);
        },
        py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("tn"));

    m.def(
        "mlstm_scan",
        [](const Array& q, const Array& k, const Array& v, const Array& i, const Array& f, const Array& o,
           std::size_t heads) {
            return to_array(xlstm::mlstm_scan(to_tensor(q), to_tensor(k), to_tensor(v), to_tensor(i), to_tensor(f),
                                              to_tensor(o), heads));
        },
        py::arg("q"), py::arg("k"), py::arg("v"), py::arg("igate"), py::arg("fgate"), py::arg("ogate"),
        py::arg("heads"), "Recurrent mLSTM readout over (N, L, D) inputs from a zero state.");

    m.def(
        "grad_suite",
        [](std::size_t seeds, std::size_t model_size, std::size_t model_coords, bool include_model) {
            GradSuiteOptions o;
            o.seeds = seeds;
            o.model_size = model_size;
            o.model_coords = model_coords;
            o.include_model = include_model;
            std::vector<GradSuiteEntry> rows;
            {
                py::gil_scoped_release nogil;
                rows = run_grad_suite(o);
            }
            py::list out;
            for (const auto& r : rows) {
                py::dict d;
                d["name"] = r.name;
                d["max_rel_error"] = r.max_rel_error;
                d["coords"] = r.coords;
                d["seconds"] = r.seconds;
                out.append(d);
            }
            return out;
        },
        py::arg("seeds") = 5, py::arg("model_size") = 32, py::arg("model_coords") = 2, py::arg("include_model") = true);

    m.def(
        "canonical_config", [](const std::string& text) { return to_text(parse_config(text)); }, py::arg("text"),
        "Parses config text and returns its canonical form.");
    m.def(
        "config_hash", [](const std::string& text) { return config_hash(parse_config(text)); }, py::arg("text"));
}
