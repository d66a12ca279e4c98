#include "nl2sql/metrics.hpp"

#include <fstream>
#include <map>

#include "json.hpp"
#include "nl2sql/model.hpp"

namespace nl2sql {

namespace {

const TableSchema& table_for(const Example& ex, const TableMap& tables) {
  const auto it = tables.find(ex.table_id);
  if (it == tables.end()) throw SchemaError("unknown table_id '" + ex.table_id + "'", 0);
  return it->second;
}

}  // namespace

std::vector<SqlSketch> load_predictions(std::istream& in) {
  std::vector<SqlSketch> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (normalize_text(line).empty()) continue;
    try {
      const auto obj = nlohmann::json::parse(line);
      out.push_back(sketch_from_json(obj.is_object() && obj.contains("sql") ? obj.at("sql").dump() : line));
    } catch (const std::exception& e) {
      throw LoadError(e.what(), number);
    }
  }
  return out;
}

std::vector<SqlSketch> load_predictions_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open predictions file '" + path + "'");
  return load_predictions(in);
}

void Metrics::add(const ExampleScore& score) {
  ++n;
  n_agg += score.agg;
  n_sel += score.sel;
  n_where += score.where;
  n_lf += score.lf;
  n_exec += score.exec;
}

std::string Metrics::to_json() const {
  nlohmann::ordered_json obj{{"acc_agg", acc_agg()},     {"acc_sel", acc_sel()},
                             {"acc_where", acc_where()}, {"lf_match", lf_match()},
                             {"exec_match", exec_match()}, {"n", n}};
  return obj.dump();
}

std::string Metrics::to_text() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "n=%zu agg=%.4f sel=%.4f where=%.4f lf=%.4f exec=%.4f", n, acc_agg(),
                acc_sel(), acc_where(), lf_match(), exec_match());
  return buf;
}

ExampleScore score_prediction(const SqlSketch& predicted, const SqlSketch& gold, const TableSchema& table) {
  ExampleScore s;
  s.agg = predicted.agg == gold.agg;
  const bool sel_valid = predicted.sel_col < table.num_columns();
  s.sel = sel_valid && canonical_column(predicted.sel_col, table) == canonical_column(gold.sel_col, table);
  try {
    s.where = canonical_conditions(predicted, table) == canonical_conditions(gold, table);
    s.lf = sketches_match(predicted, gold, table);
  } catch (const std::exception&) {
    s.where = false;
    s.lf = false;
  }
  s.exec = s.lf || results_match(try_execute(predicted, table), try_execute(gold, table));
  return s;
}

Metrics evaluate_predictions(std::span<const SqlSketch> predicted, std::span<const Example> examples,
                             const TableMap& tables) {
  if (predicted.size() != examples.size()) {
    throw ContractError("evaluate: " + std::to_string(predicted.size()) + " predictions for " +
                        std::to_string(examples.size()) + " examples");
  }
  Metrics m;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    m.add(score_prediction(predicted[i], examples[i].gold, table_for(examples[i], tables)));
  }
  return m;
}

std::vector<SqlSketch> predict_all(const Model& model, std::span<const Example> examples,
                                   const TableMap& tables) {
  std::map<std::string, PreparedTable, std::less<>> prepared;
  std::vector<SqlSketch> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const TableSchema& table = table_for(ex, tables);
    auto it = prepared.find(ex.table_id);
    if (it == prepared.end()) it = prepared.emplace(ex.table_id, model.prepare_table(table)).first;
    out.push_back(model.predict(model.prepare(ex.question, it->second)).sketch);
  }
  return out;
}

Metrics evaluate(const Model& model, std::span<const Example> examples, const TableMap& tables) {
  const auto predicted = predict_all(model, examples, tables);
  return evaluate_predictions(predicted, examples, tables);
}

}  // namespace nl2sql
