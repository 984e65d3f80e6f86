#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "wtonp/data.hpp"
#include "wtonp/metrics.hpp"
#include "wtonp/network.hpp"
#include "wtonp/optim.hpp"
#include "wtonp/prune.hpp"

namespace py = pybind11;
using namespace wtonp;

namespace {

// numpy <-> Tensor<double> at the boundary; the C++ core keeps its own storage

Tensor<double> tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    Shape shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
    std::vector<double> data(static_cast<size_t>(a.size()));
    std::memcpy(data.data(), a.data(), sizeof(double) * data.size());
    return Tensor<double>(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor<double>& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> a(shape);
    std::memcpy(a.mutable_data(), t.data(), sizeof(double) * static_cast<size_t>(t.size()));
    return a;
}

Labels labels_from_array(const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 1) throw py::value_error("labels must be a 1-d integer array");
    return Labels(a.data(), a.data() + a.size());
}

GateSpec gate_from_args(const std::string& kind, double a) { return GateSpec::from_name(kind, a); }

RegSpec reg_from_args(const std::string& kind, double lambda1, double lambda2) {
    if (kind == "elastic" && lambda2 == 0.0 && lambda1 > 0.0)
        return RegSpec::elastic(lambda1 / 2, lambda1 / 2);
    return RegSpec::from_name(kind, lambda1, lambda2);
}

// Network<double> plus the metric surface, exposed as one object
class Model {
public:
    explicit Model(const std::string& architecture) : net_(make_network<double>(architecture)) {}

    const std::string& architecture() const { return net_.architecture(); }
    int64_t param_count() const { return net_.param_count(); }
    int64_t weight_count() const { return net_.weight_count(); }
    int64_t step_counter() const { return net_.step_counter(); }

    void init_weights(uint64_t seed) { net_.init_weights(seed); }

    py::array_t<double> forward(const py::array_t<double, py::array::c_style | py::array::forcecast>& x) const {
        return array_from_tensor(net_.forward(tensor_from_array(x)));
    }

    double loss(const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& y) const {
        return net_.loss(tensor_from_array(x), labels_from_array(y));
    }

    py::dict weights() const {
        py::dict out;
        for (const auto& l : net_.layers())
            if (const LayerParams<double>* p = l->params()) {
                py::dict entry;
                entry["weights"] = array_from_tensor(p->weights);
                entry["bias"] = array_from_tensor(p->bias);
                out[py::str(p->layer_id)] = entry;
            }
        return out;
    }

    void set_layer_weights(const std::string& layer_id,
                           const py::array_t<double, py::array::c_style | py::array::forcecast>& w) {
        Layer<double>* l = net_.find_layer(layer_id);
        if (!l || !l->params()) throw py::key_error("no weight layer " + layer_id);
        Tensor<double> t = tensor_from_array(w);
        if (!t.same_shape(l->params()->weights))
            throw py::value_error("shape mismatch for " + layer_id);
        l->params()->weights = std::move(t);
    }

    double pruned_weight_frac() const { return pruned_weight_fraction(net_); }

    py::tuple pruned_node_frac() const {
        const NodeFractions nf = pruned_node_fraction(net_);
        py::dict per_layer;
        for (const auto& [layer, v] : nf.per_layer) per_layer[py::str(layer)] = v;
        return py::make_tuple(nf.global, per_layer);
    }

    std::vector<int64_t> nodes_per_digit() const { return wtonp::nodes_per_digit(net_); }

    py::dict evaluate(const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                      const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& y) const {
        Dataset<double> ds;
        ds.inputs = tensor_from_array(x);
        ds.labels = labels_from_array(y);
        const EvalResult ev = wtonp::evaluate(net_, ds);
        py::dict out;
        out["loss"] = ev.loss;
        out["error_rate"] = ev.error_rate;
        return out;
    }

    void magnitude_threshold_prune(double target) {
        wtonp::magnitude_threshold_prune(net_, target);
    }

    Network<double>& net() { return net_; }

private:
    Network<double> net_;
};

// Training session bound to one model: plain baseline steps or gated wtonp
// steps, with per-layer gate streams derived from the seed.
class Trainer {
public:
    Trainer(Model& model, const std::string& optimizer, double learning_rate,
            const std::string& reg_kind, double lambda1, double lambda2,
            const std::string& gate_kind, double gate_a, uint64_t seed)
        : model_(model),
          opt_(make_opt(optimizer, learning_rate)),
          reg_(reg_from_args(reg_kind, lambda1, lambda2)),
          gate_(gate_from_args(gate_kind, gate_a > 0 ? gate_a : 1.0)),
          gate_set_(gate_a > 0),
          streams_(seed) {
        reg_.validate(learning_rate);
    }

    double baseline_step(const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                         const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& y) {
        return train_step(model_.net(), opt_, reg_, tensor_from_array(x), labels_from_array(y));
    }

    double wtonp_step(const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                      const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& y) {
        if (!gate_set_) throw py::value_error("trainer was built without gate_a; wtonp_step needs a gate");
        return wtonp::wtonp_step(model_.net(), opt_, reg_, gate_, tensor_from_array(x),
                                 labels_from_array(y), streams_);
    }

private:
    static Optimizer<double> make_opt(const std::string& kind, double lr) {
        OptimizerSpec spec = OptimizerSpec::from_name(kind);
        spec.learning_rate = lr;
        return Optimizer<double>(spec);
    }

    Model& model_;
    Optimizer<double> opt_;
    RegSpec reg_;
    GateSpec gate_;
    bool gate_set_;
    GateStreams streams_;
};

py::tuple dataset_to_python(const Dataset<double>& ds) {
    py::array_t<int32_t> labels(static_cast<py::ssize_t>(ds.labels.size()));
    std::memcpy(labels.mutable_data(), ds.labels.data(), sizeof(int32_t) * ds.labels.size());
    return py::make_tuple(array_from_tensor(ds.inputs), labels);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "stochastic magnitude-gated weight pruning core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_IOError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

    m.def(
        "gate_prob",
        [](const std::string& kind, double a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& w) {
            const GateSpec g = gate_from_args(kind, a);
            py::array_t<double> out(std::vector<py::ssize_t>(w.shape(), w.shape() + w.ndim()));
            const double* src = w.data();
            double* dst = out.mutable_data();
            for (py::ssize_t i = 0; i < w.size(); ++i) dst[i] = gate_prob(g, src[i]);
            return out;
        },
        py::arg("kind"), py::arg("a"), py::arg("w"),
        "keep probability of the gate for each weight");

    m.def(
        "sample_mask",
        [](const std::string& kind, double a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& w, uint64_t seed) {
            const GateSpec g = gate_from_args(kind, a);
            Tensor<double> t = tensor_from_array(w);
            Rng rng(seed);
            return array_from_tensor(sample_mask(g, t, rng).z);
        },
        py::arg("kind"), py::arg("a"), py::arg("w"), py::arg("seed"),
        "one Bernoulli keep/drop draw per weight");

    m.def(
        "apply_mask",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& w,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& z) {
            Tensor<double> wt = tensor_from_array(w);
            PruneMask<double> mask{tensor_from_array(z)};
            apply_mask(wt, mask);
            return array_from_tensor(wt);
        },
        py::arg("w"), py::arg("z"));

    m.def(
        "load_idx",
        [](const std::string& images, const std::string& labels) {
            return dataset_to_python(read_idx<double>(images, labels));
        },
        py::arg("images"), py::arg("labels"),
        "read an IDX image/label pair; pixels scaled by 1/255");

    m.def(
        "synth_blobs",
        [](int64_t classes, int64_t per_class, int64_t dim, double spread, uint64_t seed) {
            return dataset_to_python(synth_blobs<double>(classes, per_class, dim, spread, seed));
        },
        py::arg("classes"), py::arg("per_class"), py::arg("dim"), py::arg("spread"),
        py::arg("seed"), "seeded gaussian clusters at random centers");

    py::class_<Model>(m, "Model")
        .def(py::init<const std::string&>(), py::arg("architecture"),
             "mlp-300-100 | lenet-small | custom:dense(...),relu,...")
        .def_property_readonly("architecture", &Model::architecture)
        .def_property_readonly("param_count", &Model::param_count)
        .def_property_readonly("weight_count", &Model::weight_count)
        .def_property_readonly("step_counter", &Model::step_counter)
        .def("init_weights", &Model::init_weights, py::arg("seed"))
        .def("forward", &Model::forward, py::arg("x"))
        .def("loss", &Model::loss, py::arg("x"), py::arg("y"))
        .def("weights", &Model::weights)
        .def("set_layer_weights", &Model::set_layer_weights, py::arg("layer_id"), py::arg("weights"))
        .def("pruned_weight_frac", &Model::pruned_weight_frac)
        .def("pruned_node_frac", &Model::pruned_node_frac)
        .def("nodes_per_digit", &Model::nodes_per_digit)
        .def("evaluate", &Model::evaluate, py::arg("x"), py::arg("y"))
        .def("magnitude_threshold_prune", &Model::magnitude_threshold_prune, py::arg("target"));

    py::class_<Trainer>(m, "Trainer")
        .def(py::init<Model&, const std::string&, double, const std::string&, double, double,
                      const std::string&, double, uint64_t>(),
             py::arg("model"), py::arg("optimizer") = "adam", py::arg("learning_rate") = 0.001,
             py::arg("reg") = "none", py::arg("lambda1") = 0.0, py::arg("lambda2") = 0.0,
             py::arg("gate") = "sigmoid-gate", py::arg("gate_a") = 0.0, py::arg("seed") = 1,
             py::keep_alive<1, 2>())
        .def("baseline_step", &Trainer::baseline_step, py::arg("x"), py::arg("y"))
        .def("wtonp_step", &Trainer::wtonp_step, py::arg("x"), py::arg("y"));
}
