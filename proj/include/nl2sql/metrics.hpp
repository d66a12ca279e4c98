#pragma once

#include <cstddef>
#include <istream>
#include <span>
#include <string>
#include <vector>

#include "nl2sql/sql.hpp"

namespace nl2sql {

class Model;

struct ExampleScore {
  bool agg = false;
  bool sel = false;
  bool where = false;  // condition sets equal
  bool lf = false;     // canonical query strings equal
  bool exec = false;   // lf, or both sketches execute to equal results
};

/// Counts and fractions over a dataset; fractions are 0 for an empty one.
struct Metrics {
  std::size_t n = 0;
  std::size_t n_agg = 0;
  std::size_t n_sel = 0;
  std::size_t n_where = 0;
  std::size_t n_lf = 0;
  std::size_t n_exec = 0;

  double acc_agg() const { return fraction(n_agg); }
  double acc_sel() const { return fraction(n_sel); }
  double acc_where() const { return fraction(n_where); }
  double lf_match() const { return fraction(n_lf); }
  double exec_match() const { return fraction(n_exec); }

  void add(const ExampleScore& score);
  std::string to_json() const;
  std::string to_text() const;

 private:
  double fraction(std::size_t k) const { return n == 0 ? 0.0 : static_cast<double>(k) / n; }
};

// One sketch per line, either bare or wrapped as {"sql": ...}.
std::vector<SqlSketch> load_predictions(std::istream& in);
std::vector<SqlSketch> load_predictions_file(const std::string& path);

ExampleScore score_prediction(const SqlSketch& predicted, const SqlSketch& gold, const TableSchema& table);

Metrics evaluate_predictions(std::span<const SqlSketch> predicted, std::span<const Example> examples,
                             const TableMap& tables);

std::vector<SqlSketch> predict_all(const Model& model, std::span<const Example> examples,
                                   const TableMap& tables);

Metrics evaluate(const Model& model, std::span<const Example> examples, const TableMap& tables);

}  // namespace nl2sql
