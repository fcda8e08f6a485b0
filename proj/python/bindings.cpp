#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hdnn/corpus.hpp"
#include "hdnn/io.hpp"
#include "hdnn/trainer.hpp"

namespace py = pybind11;
using namespace hdnn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-d array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data().begin());
  return m;
}

Array to_array(const Matrix& m) {
  Array a({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), a.mutable_data());
  return a;
}

Array to_array(std::span<const Real> v) {
  Array a(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

py::tuple loss_tuple(const LossResult& r) { return py::make_tuple(r.value, to_array(r.dlogits)); }

NetworkConfig make_config(std::size_t input, std::size_t hidden, std::size_t layers, std::size_t output,
                          const std::string& arch) {
  return {input, hidden, layers, output, parse_architecture(arch)};
}

FrameSet frame_set(const Array& features, const std::vector<int>& labels) { return {to_matrix(features), labels}; }

py::list reports_list(const std::vector<EpochReport>& reports) {
  py::list out;
  for (const auto& r : reports) {
    py::dict d;
    d["epoch"] = r.epoch;
    d["loss"] = r.train_loss;
    d["cv_frame_error"] = r.cv_frame_error ? py::cast(*r.cv_frame_error) : py::none();
    d["lr"] = r.learning_rate;
    d["momentum"] = r.momentum;
    out.append(d);
  }
  return out;
}

TrainConfig train_config(Real lr, std::size_t epochs, std::size_t batch, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.learning_rate = lr;
  cfg.max_epochs = epochs;
  cfg.minibatch_size = batch;
  cfg.seed = seed;
  return cfg;
}

py::dict utterance_dict(const Utterance& u) {
  py::dict d;
  d["id"] = u.id;
  d["speaker"] = u.speaker;
  d["features"] = to_array(u.features);
  d["alignment"] = u.alignment;
  return d;
}

}  // namespace

PYBIND11_MODULE(_hdnn, m) {
  m.doc() = "Highway DNN core: networks, frame losses, lattice sMBR and synthetic corpora";
  py::register_exception<Error>(m, "HdnnError", PyExc_ValueError);

  m.def("count_params",
        [](const std::string& arch, std::size_t input, std::size_t hidden, std::size_t layers, std::size_t output) {
          return count_params(make_config(input, hidden, layers, output, arch));
        },
        py::arg("arch"), py::arg("input"), py::arg("hidden"), py::arg("layers"), py::arg("output"));
  m.def("count_gate_params", [](std::size_t hidden) {
    return count_gate_params({1, hidden, 2, 1, Architecture::kHighway});
  }, py::arg("hidden"));

  py::class_<Network>(m, "Network")
      .def_property_readonly("architecture", [](const Network& n) { return to_string(n.config().architecture); })
      .def_property_readonly("input_dim", [](const Network& n) { return n.config().input_dim; })
      .def_property_readonly("hidden_dim", [](const Network& n) { return n.config().hidden_dim; })
      .def_property_readonly("num_hidden_layers", [](const Network& n) { return n.config().num_hidden_layers; })
      .def_property_readonly("output_dim", [](const Network& n) { return n.config().output_dim; })
      .def("num_params", [](const Network& n) { return count_params(n.config()); })
      .def("parameters",
           [](const Network& n) {
             py::dict d;
             for (const auto& t : n.params().tensors()) {
               Array a({t.rows, t.cols});
               std::copy(t.values.begin(), t.values.end(), a.mutable_data());
               d[py::str(t.name)] = a;
             }
             return d;
           })
      .def("forward",
           [](const Network& n, const Array& x, Real temperature) {
             const ForwardTrace t = forward(n, to_matrix(x), temperature);
             py::dict d;
             d["logits"] = to_array(t.logits);
             d["posteriors"] = to_array(t.posteriors);
             return d;
           },
           py::arg("features"), py::arg("temperature") = 1.0)
      .def("frame_error",
           [](const Network& n, const Array& x, const std::vector<int>& labels) {
             return evaluate_frame_error(n, frame_set(x, labels));
           },
           py::arg("features"), py::arg("labels"))
      .def("save", [](const Network& n, const std::string& path) { save_model(n, path); }, py::arg("path"))
      .def("__eq__", [](const Network& a, const Network& b) { return a == b; });

  m.def("build_network",
        [](std::size_t input, std::size_t hidden, std::size_t layers, std::size_t output, const std::string& arch,
           std::uint64_t seed, Real init_range) {
          return build_network(make_config(input, hidden, layers, output, arch), seed, init_range);
        },
        py::arg("input"), py::arg("hidden"), py::arg("layers"), py::arg("output"), py::arg("arch") = "highway",
        py::arg("seed") = 1, py::arg("init_range") = 0.5);
  m.def("load_model", [](const std::string& path) { return load_model(path); }, py::arg("path"));

  m.def("ce_loss",
        [](const Array& posteriors, const std::vector<int>& labels) {
          return loss_tuple(ce_loss(to_matrix(posteriors), labels));
        },
        py::arg("posteriors"), py::arg("labels"), "Mean cross-entropy and its gradient w.r.t. the logits.");
  m.def("kd_loss",
        [](const Array& logits, const Array& targets, Real temperature) {
          return loss_tuple(kd_loss(to_matrix(logits), SoftTargets{to_matrix(targets), temperature}, temperature));
        },
        py::arg("logits"), py::arg("targets"), py::arg("temperature") = 1.0);
  m.def("hybrid_loss",
        [](const Array& logits, const Array& targets, const std::vector<int>& labels, Real q, Real temperature) {
          return loss_tuple(
              hybrid_loss(to_matrix(logits), SoftTargets{to_matrix(targets), temperature}, labels, q, temperature));
        },
        py::arg("logits"), py::arg("targets"), py::arg("labels"), py::arg("q"), py::arg("temperature") = 1.0);

  py::class_<LatticeArc>(m, "LatticeArc")
      .def(py::init([](std::size_t from, std::size_t to, std::size_t frame, int state, Real w) {
             return LatticeArc{from, to, frame, state, w};
           }),
           py::arg("source"), py::arg("target"), py::arg("frame"), py::arg("state"), py::arg("graph_logweight") = 0.0)
      .def_readonly("source", &LatticeArc::from)
      .def_readonly("target", &LatticeArc::to)
      .def_readonly("frame", &LatticeArc::frame)
      .def_readonly("state", &LatticeArc::state)
      .def_readonly("graph_logweight", &LatticeArc::graph_logweight);
  py::class_<Lattice>(m, "Lattice")
      .def(py::init([](std::size_t frames, std::size_t nodes, std::vector<LatticeArc> arcs) {
             Lattice lat{frames, nodes, std::move(arcs)};
             lat.validate();
             return lat;
           }),
           py::arg("num_frames"), py::arg("num_nodes"), py::arg("arcs"))
      .def_readonly("num_frames", &Lattice::num_frames)
      .def_readonly("num_nodes", &Lattice::num_nodes)
      .def_readonly("arcs", &Lattice::arcs);

  m.def("build_lattice",
        [](const std::vector<int>& reference, std::size_t num_states, std::size_t branch, std::uint64_t seed,
           Real penalty) {
          Rng rng(seed, "lattice");
          return build_lattice(reference, num_states, branch, rng, penalty);
        },
        py::arg("reference"), py::arg("num_states"), py::arg("branch"), py::arg("seed") = 1,
        py::arg("max_graph_penalty") = 0.5);
  m.def("forward_backward",
        [](const Lattice& lat, const Array& scores) {
          const ForwardBackwardResult r = forward_backward(lat, to_matrix(scores));
          return py::make_tuple(to_array(r.arc_posteriors), r.total_logprob);
        },
        py::arg("lattice"), py::arg("frame_log_scores"), "Arc posteriors and total log score.");
  m.def("smbr_objective",
        [](const Lattice& lat, const Array& posteriors, const std::vector<int>& reference, Real acoustic_scale,
           std::vector<Real> priors) {
          SmbrConfig cfg;
          cfg.acoustic_scale = acoustic_scale;
          cfg.state_priors = std::move(priors);
          const SmbrResult r = smbr_objective(lat, to_matrix(posteriors), reference, cfg);
          py::dict d;
          d["expected_accuracy"] = r.expected_accuracy;
          d["arc_posteriors"] = to_array(r.arc_posteriors);
          d["dlogits"] = to_array(r.dlogits);
          d["total_logprob"] = r.total_logprob;
          return d;
        },
        py::arg("lattice"), py::arg("posteriors"), py::arg("reference"), py::arg("acoustic_scale") = 0.1,
        py::arg("state_priors") = std::vector<Real>{});

  m.def("splice", [](const Array& x, std::size_t context) { return to_array(splice(to_matrix(x), context)); },
        py::arg("features"), py::arg("context"));
  m.def("gen_corpus",
        [](const std::map<std::string, std::string>& spec) {
          const Corpus c = gen_corpus(CorpusSpec::from_map(spec));
          py::dict d;
          for (const auto& [name, split] : {std::pair{"train", &c.train}, {"cv", &c.cv}, {"adapt", &c.adapt}}) {
            py::list l;
            for (const auto& u : *split) l.append(utterance_dict(u));
            d[name] = l;
          }
          return d;
        },
        py::arg("spec") = std::map<std::string, std::string>{},
        "Synthetic HMM corpus; spec keys as in corpus.conf, values as strings.");

  m.def("train_ce",
        [](const Network& net, const Array& x, const std::vector<int>& y, const Array& cv_x,
           const std::vector<int>& cv_y, Real lr, std::size_t epochs, std::size_t batch, std::uint64_t seed) {
          const TrainResult r =
              train_ce(net, frame_set(x, y), frame_set(cv_x, cv_y), train_config(lr, epochs, batch, seed));
          return py::make_tuple(r.net, reports_list(r.reports));
        },
        py::arg("net"), py::arg("features"), py::arg("labels"), py::arg("cv_features"), py::arg("cv_labels"),
        py::arg("lr") = 0.1, py::arg("epochs") = 10, py::arg("batch") = 256, py::arg("seed") = 1);
  m.def("distill",
        [](const Network& student, const Network& teacher, const Array& x, const std::vector<int>& y,
           const Array& cv_x, const std::vector<int>& cv_y, Real q, Real temperature, Real lr, std::size_t epochs,
           std::size_t batch, std::uint64_t seed) {
          TrainConfig cfg = train_config(lr, epochs, batch, seed);
          cfg.loss_kind = q > 0.0 ? LossKind::kHybrid : LossKind::kKd;
          cfg.q = q;
          cfg.temperature = temperature;
          const TrainResult r = distill_from(student, teacher, frame_set(x, y), frame_set(cv_x, cv_y), cfg);
          return py::make_tuple(r.net, reports_list(r.reports));
        },
        py::arg("student"), py::arg("teacher"), py::arg("features"), py::arg("labels"), py::arg("cv_features"),
        py::arg("cv_labels"), py::arg("q") = 0.0, py::arg("temperature") = 1.0, py::arg("lr") = 0.1,
        py::arg("epochs") = 10, py::arg("batch") = 256, py::arg("seed") = 1);
}
