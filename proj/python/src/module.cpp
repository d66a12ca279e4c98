#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>

#include "nl2sql/checkpoint.hpp"
#include "nl2sql/gradcheck.hpp"
#include "nl2sql/metrics.hpp"
#include "nl2sql/synthetic.hpp"
#include "nl2sql/train.hpp"

namespace py = pybind11;
using namespace nl2sql;

namespace {

struct Tables {
  TableMap map;

  const TableSchema& at(const std::string& id) const {
    const auto it = map.find(id);
    if (it == map.end()) throw py::key_error("unknown table id '" + id + "'");
    return it->second;
  }
};

struct Examples {
  std::vector<Example> items;
};

py::object cell_to_py(const Cell& cell) {
  if (const auto* d = std::get_if<double>(&cell)) return py::float_(*d);
  return py::str(std::get<std::string>(cell));
}

py::object exec_to_py(const ExecValue& value) {
  if (const auto* d = std::get_if<double>(&value)) return py::float_(*d);
  py::list out;
  for (const auto& cell : std::get<std::vector<Cell>>(value)) out.append(cell_to_py(cell));
  return out;
}

py::dict epoch_to_py(const EpochLog& log) {
  py::dict d;
  d["epoch"] = log.epoch;
  d["phase"] = log.phase;
  d["loss"] = log.loss;
  d["max_word_grad_norm"] = log.max_word_grad_norm;
  d["max_char_grad_norm"] = log.max_char_grad_norm;
  d["dev"] = log.dev ? py::object(py::str(log.dev->to_json())) : py::object(py::none());
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sketch-based NL-to-SQL parser core";

  auto load_error = py::register_exception<LoadError>(m, "LoadError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", load_error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<ExecutionError>(m, "ExecutionError", PyExc_RuntimeError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.def("tokenize", &tokenize, py::arg("text"), "Lowercased question tokens");

  py::class_<Tables>(m, "Tables")
      .def_static("load", [](const std::string& path) { return Tables{load_tables_file(path)}; }, py::arg("path"))
      .def_static("from_jsonl",
                  [](const std::string& text) {
                    std::istringstream in(text);
                    return Tables{load_tables(in)};
                  },
                  py::arg("text"))
      .def("ids",
           [](const Tables& t) {
             std::vector<std::string> ids;
             for (const auto& [id, _] : t.map) ids.push_back(id);
             return ids;
           })
      .def("table_json", [](const Tables& t, const std::string& id) { return table_to_json(t.at(id)); })
      .def("__len__", [](const Tables& t) { return t.map.size(); })
      .def("__contains__", [](const Tables& t, const std::string& id) { return t.map.count(id) > 0; });

  py::class_<Examples>(m, "Examples")
      .def_static("load",
                  [](const std::string& path, const Tables& tables) {
                    return Examples{load_examples_file(path, tables.map)};
                  },
                  py::arg("path"), py::arg("tables"))
      .def_static("from_jsonl",
                  [](const std::string& text, const Tables& tables) {
                    std::istringstream in(text);
                    return Examples{load_examples(in, tables.map)};
                  },
                  py::arg("text"), py::arg("tables"))
      .def("__len__", [](const Examples& e) { return e.items.size(); })
      .def("example_json", [](const Examples& e, std::size_t i) { return example_to_json(e.items.at(i)); });

  py::class_<Model, std::unique_ptr<Model>>(m, "Model")
      .def_static("load", [](const std::string& dir) { return std::make_unique<Model>(load_checkpoint(dir)); },
                  py::arg("dir"))
      .def("save",
           [](const Model& model, const std::string& dir, bool float32, const std::string& meta) {
             save_checkpoint(model, dir, float32 ? Dtype::kFloat32 : Dtype::kFloat64, meta);
           },
           py::arg("dir"), py::arg("float32") = false, py::arg("meta") = "{}")
      .def("config_json", [](const Model& model) { return model.config().to_json(); })
      .def("num_parameters", [](const Model& model) { return model.params().total_size(); })
      .def("parameter_names",
           [](const Model& model) {
             std::vector<std::string> names;
             for (const auto& p : model.params().entries()) names.push_back(p.name);
             return names;
           })
      .def("predict_json",
           [](const Model& model, const std::string& question, const Tables& tables, const std::string& id) {
             const PreparedTable table = model.prepare_table(tables.at(id));
             const Prediction p = model.predict(model.prepare(question, table));
             return py::make_tuple(sketch_to_json(p.sketch), p.value_truncated);
           },
           py::arg("question"), py::arg("tables"), py::arg("table_id"))
      .def("evaluate_json",
           [](const Model& model, const Examples& examples, const Tables& tables) {
             return evaluate(model, examples.items, tables.map).to_json();
           },
           py::arg("examples"), py::arg("tables"));

  m.def("canonical_string",
        [](const std::string& sketch, const Tables& tables, const std::string& id) {
          return canonical_string(sketch_from_json(sketch), tables.at(id));
        },
        py::arg("sketch_json"), py::arg("tables"), py::arg("table_id"));
  m.def("sketches_match",
        [](const std::string& a, const std::string& b, const Tables& tables, const std::string& id) {
          return sketches_match(sketch_from_json(a), sketch_from_json(b), tables.at(id));
        },
        py::arg("a_json"), py::arg("b_json"), py::arg("tables"), py::arg("table_id"));
  m.def("execute",
        [](const std::string& sketch, const Tables& tables, const std::string& id) {
          return exec_to_py(execute(sketch_from_json(sketch), tables.at(id)));
        },
        py::arg("sketch_json"), py::arg("tables"), py::arg("table_id"));
  m.def("evaluate_predictions_json",
        [](const std::vector<std::string>& predictions, const Examples& examples, const Tables& tables) {
          std::vector<SqlSketch> sketches;
          for (const auto& p : predictions) sketches.push_back(sketch_from_json(p));
          return evaluate_predictions(sketches, examples.items, tables.map).to_json();
        },
        py::arg("predictions"), py::arg("examples"), py::arg("tables"));

  m.def("where_column_loss",
        [](const std::vector<double>& probs, const std::vector<std::size_t>& gold, double gamma) {
          return where_column_loss(Tensor::from_data({probs.size()}, probs), gold, gamma).item();
        },
        py::arg("probs"), py::arg("gold_columns"), py::arg("gamma") = 3.0);

  m.def("gradcheck",
        [](std::uint64_t seed, std::size_t seeds) {
          GradCheckOptions options;
          options.seed = seed;
          options.seeds = seeds;
          const GradCheckReport r = run_gradient_suite(options);
          py::dict d;
          d["passed"] = r.passed();
          d["max_error"] = r.max_error;
          d["tolerance"] = r.tolerance;
          d["worst_case"] = r.worst_case;
          d["checks"] = r.cases.size();
          d["seeds"] = r.seeds;
          d["seconds"] = r.seconds;
          return d;
        },
        py::arg("seed") = 0, py::arg("seeds") = 10);

  m.def("train_json",
        [](const std::string& config_json, const std::function<void(py::dict)>& on_epoch) {
          const TrainConfig config = TrainConfig::from_json(config_json);
          const TrainSummary summary = train(config, [&](const EpochLog& log) {
            if (on_epoch) on_epoch(epoch_to_py(log));
          });
          py::list epochs;
          for (const auto& log : summary.epochs) epochs.append(epoch_to_py(log));
          py::dict d;
          d["epochs"] = epochs;
          d["best_dev"] = summary.best_dev ? py::object(py::str(summary.best_dev->to_json())) : py::object(py::none());
          return d;
        },
        py::arg("config_json"), py::arg("on_epoch") = nullptr);

  m.def("write_synthetic_dataset",
        [](const std::string& dir, std::size_t count, std::size_t dev_count, std::uint64_t seed) {
          write_synthetic_dataset(dir, count, dev_count, seed);
        },
        py::arg("dir"), py::arg("count") = 32, py::arg("dev_count") = 16, py::arg("seed") = 1);
}
