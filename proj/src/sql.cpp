#include "nl2sql/sql.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <sstream>

#include "json.hpp"

namespace nl2sql {

using nlohmann::json;

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 128 && std::ispunct(u) != 0;
}

bool is_alpha(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 128 && std::isalpha(u) != 0;
}

char lower_char(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

void emit(std::vector<Token>& out, std::string_view text, std::size_t begin, std::size_t end) {
  std::string lowered(text.substr(begin, end - begin));
  for (char& c : lowered) c = lower_char(c);
  out.push_back(Token{std::move(lowered), begin, end});
}

}  // namespace

std::vector<Token> tokenize_with_offsets(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t pos = 0;
  const std::size_t n = text.size();
  while (pos < n) {
    while (pos < n && is_space(text[pos])) ++pos;
    if (pos >= n) break;
    std::size_t chunk_end = pos;
    while (chunk_end < n && !is_space(text[chunk_end])) ++chunk_end;

    std::size_t begin = pos;
    while (begin < chunk_end && is_punct(text[begin])) {
      emit(tokens, text, begin, begin + 1);
      ++begin;
    }
    std::size_t core_end = chunk_end;
    while (core_end > begin && is_punct(text[core_end - 1])) --core_end;
    if (core_end > begin && core_end < chunk_end && text[core_end] == '.' &&
        is_alpha(text[core_end - 1])) {
      std::size_t next = core_end + 1;
      while (next < n && is_space(text[next])) ++next;
      if (next >= n || !is_alpha(text[next])) ++core_end;
    }
    if (core_end > begin) emit(tokens, text, begin, core_end);
    for (std::size_t p = core_end; p < chunk_end && p >= begin; ++p) emit(tokens, text, p, p + 1);
    pos = chunk_end;
  }
  return tokens;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (auto& token : tokenize_with_offsets(text)) out.push_back(std::move(token.text));
  return out;
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = lower_char(c);
  return out;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(lower_char(c));
  }
  return out;
}

std::optional<double> parse_number(std::string_view text) {
  std::size_t b = 0;
  std::size_t e = text.size();
  while (b < e && is_space(text[b])) ++b;
  while (e > b && is_space(text[e - 1])) --e;
  if (b < e && text[b] == '+') ++b;
  if (b >= e) return std::nullopt;
  double value = 0.0;
  const char* first = text.data() + b;
  const char* last = text.data() + e;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::string format_number(double value) {
  if (std::isfinite(value) && std::floor(value) == value && std::abs(value) < 1e15) {
    return std::to_string(static_cast<long long>(value));
  }
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.15g", value);
  return buffer;
}

// ---------------------------------------------------------------------------

std::string_view aggregator_name(Aggregator agg) {
  switch (agg) {
    case Aggregator::kNone: return "";
    case Aggregator::kMax: return "max";
    case Aggregator::kMin: return "min";
    case Aggregator::kCount: return "count";
    case Aggregator::kSum: return "sum";
    case Aggregator::kAvg: return "avg";
  }
  return "";
}

std::string_view operator_symbol(Operator op) {
  switch (op) {
    case Operator::kEql: return "=";
    case Operator::kGt: return ">";
    case Operator::kLt: return "<";
  }
  return "?";
}

std::optional<Aggregator> aggregator_from_index(long index) {
  if (index < 0 || index >= static_cast<long>(kNumAggregators)) return std::nullopt;
  return static_cast<Aggregator>(index);
}

std::optional<Operator> operator_from_index(long index) {
  if (index < 0 || index >= static_cast<long>(kNumOperators)) return std::nullopt;
  return static_cast<Operator>(index);
}

// ---------------------------------------------------------------------------
// Loading

LoadError::LoadError(const std::string& what, std::size_t line)
    : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
      line_(line) {}

namespace {

std::string json_scalar_to_string(const json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number()) return format_number(value.get<double>());
  if (value.is_boolean()) return value.get<bool>() ? "true" : "false";
  if (value.is_null()) return "";
  return value.dump();
}

json parse_line(const std::string& line, std::size_t line_no) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw LoadError(std::string("malformed JSON: ") + e.what(), line_no);
  }
}

template <typename T>
T require(const json& obj, const char* key, std::size_t line_no) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw LoadError(std::string("missing field '") + key + "'", line_no);
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw LoadError(std::string("field '") + key + "' has the wrong type: " + e.what(), line_no);
  }
}

SqlSketch sketch_from_object(const json& sql, std::size_t line_no) {
  SqlSketch sketch;
  const long sel = require<long>(sql, "sel", line_no);
  const long agg = require<long>(sql, "agg", line_no);
  if (sel < 0) throw SchemaError("negative select column", line_no);
  sketch.sel_col = static_cast<std::size_t>(sel);
  auto agg_enum = aggregator_from_index(agg);
  if (!agg_enum) throw SchemaError("aggregator index " + std::to_string(agg) + " out of range", line_no);
  sketch.agg = *agg_enum;
  const json conds = sql.contains("conds") ? sql.at("conds") : json::array();
  if (!conds.is_array()) throw LoadError("'conds' must be an array", line_no);
  for (const auto& cond : conds) {
    if (!cond.is_array() || cond.size() != 3 || !cond[0].is_number_integer() ||
        !cond[1].is_number_integer()) {
      throw LoadError("condition must be [column, operator, value]", line_no);
    }
    const long col = cond[0].get<long>();
    const long op = cond[1].get<long>();
    if (col < 0) throw SchemaError("negative condition column", line_no);
    auto op_enum = operator_from_index(op);
    if (!op_enum) throw SchemaError("operator index " + std::to_string(op) + " out of range", line_no);
    sketch.conds.push_back(Condition{static_cast<std::size_t>(col), *op_enum,
                                     json_scalar_to_string(cond[2])});
  }
  return sketch;
}

json sketch_to_object(const SqlSketch& sketch) {
  json conds = json::array();
  for (const auto& c : sketch.conds) {
    conds.push_back(json::array({c.column, static_cast<int>(c.op), c.value}));
  }
  return json{{"sel", sketch.sel_col}, {"agg", static_cast<int>(sketch.agg)}, {"conds", conds}};
}

}  // namespace

TableMap load_tables(std::istream& in) {
  TableMap tables;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (normalize_text(line).empty()) continue;
    const json obj = parse_line(line, line_no);
    TableSchema table;
    table.id = require<std::string>(obj, "id", line_no);
    table.headers = require<std::vector<std::string>>(obj, "header", line_no);
    const auto types = require<std::vector<std::string>>(obj, "types", line_no);
    if (types.size() != table.headers.size()) {
      throw SchemaError("table '" + table.id + "' has " + std::to_string(types.size()) +
                            " types for " + std::to_string(table.headers.size()) + " headers",
                        line_no);
    }
    for (const auto& t : types) {
      const std::string lowered = to_lower(t);
      if (lowered == "text") {
        table.types.push_back(ColumnType::kText);
      } else if (lowered == "real") {
        table.types.push_back(ColumnType::kReal);
      } else {
        throw SchemaError("unknown column type '" + t + "'", line_no);
      }
    }
    const json rows = obj.contains("rows") ? obj.at("rows") : json::array();
    if (!rows.is_array()) throw LoadError("'rows' must be an array", line_no);
    for (const auto& row : rows) {
      if (!row.is_array() || row.size() != table.headers.size()) {
        throw SchemaError("table '" + table.id + "' row of arity " +
                              std::to_string(row.is_array() ? row.size() : 0) + " for " +
                              std::to_string(table.headers.size()) + " columns",
                          line_no);
      }
      std::vector<Cell> cells;
      cells.reserve(row.size());
      for (std::size_t c = 0; c < row.size(); ++c) {
        const json& v = row[c];
        if (table.types[c] == ColumnType::kReal) {
          if (v.is_number()) {
            cells.emplace_back(v.get<double>());
          } else if (auto parsed = parse_number(json_scalar_to_string(v))) {
            cells.emplace_back(*parsed);
          } else {
            cells.emplace_back(json_scalar_to_string(v));
          }
        } else {
          cells.emplace_back(json_scalar_to_string(v));
        }
      }
      table.rows.push_back(std::move(cells));
    }
    const std::string id = table.id;
    if (!tables.emplace(id, std::move(table)).second) {
      throw SchemaError("duplicate table id '" + id + "'", line_no);
    }
  }
  return tables;
}

void validate_sketch(const SqlSketch& sketch, const TableSchema& table) {
  const std::size_t columns = table.num_columns();
  if (sketch.sel_col >= columns) {
    throw SchemaError("select column " + std::to_string(sketch.sel_col) + " out of range for " +
                      std::to_string(columns) + " columns");
  }
  if (sketch.conds.size() > kMaxConditions) {
    throw SchemaError(std::to_string(sketch.conds.size()) + " conditions exceed the maximum of " +
                      std::to_string(kMaxConditions));
  }
  for (const auto& c : sketch.conds) {
    if (c.column >= columns) {
      throw SchemaError("condition column " + std::to_string(c.column) + " out of range for " +
                        std::to_string(columns) + " columns");
    }
  }
}

std::vector<Example> load_examples(std::istream& in, const TableMap& tables) {
  std::vector<Example> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (normalize_text(line).empty()) continue;
    const json obj = parse_line(line, line_no);
    Example ex;
    ex.question = require<std::string>(obj, "question", line_no);
    ex.table_id = require<std::string>(obj, "table_id", line_no);
    if (!obj.contains("sql")) throw LoadError("missing field 'sql'", line_no);
    ex.gold = sketch_from_object(obj.at("sql"), line_no);
    auto table = tables.find(ex.table_id);
    if (table == tables.end()) throw LoadError("unknown table_id '" + ex.table_id + "'", line_no);
    try {
      validate_sketch(ex.gold, table->second);
    } catch (const SchemaError& e) {
      throw SchemaError(e.what(), line_no);
    }
    ex.tokens = tokenize(ex.question);
    examples.push_back(std::move(ex));
  }
  return examples;
}

TableMap load_tables_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open tables file '" + path + "'");
  return load_tables(in);
}

std::vector<Example> load_examples_file(const std::string& path, const TableMap& tables) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open examples file '" + path + "'");
  return load_examples(in, tables);
}

std::string sketch_to_json(const SqlSketch& sketch) { return sketch_to_object(sketch).dump(); }

SqlSketch sketch_from_json(std::string_view text) {
  return sketch_from_object(parse_line(std::string(text), 0), 0);
}

std::string example_to_json(const Example& example) {
  json obj{{"question", example.question},
           {"table_id", example.table_id},
           {"sql", sketch_to_object(example.gold)}};
  return obj.dump();
}

std::string table_to_json(const TableSchema& table) {
  json types = json::array();
  for (auto t : table.types) types.push_back(t == ColumnType::kReal ? "real" : "text");
  json rows = json::array();
  for (const auto& row : table.rows) {
    json r = json::array();
    for (const auto& cell : row) {
      if (const double* d = std::get_if<double>(&cell)) {
        r.push_back(*d);
      } else {
        r.push_back(std::get<std::string>(cell));
      }
    }
    rows.push_back(std::move(r));
  }
  return json{{"id", table.id}, {"header", table.headers}, {"types", types}, {"rows", rows}}.dump();
}

// ---------------------------------------------------------------------------
// Canonical form

std::string canonical_column(std::size_t column, const TableSchema& table) {
  const std::string label = normalize_text(table.headers.at(column));
  for (std::size_t other = 0; other < table.num_columns(); ++other) {
    if (other != column && normalize_text(table.headers[other]) == label) {
      return label + "#" + std::to_string(column);
    }
  }
  return label;
}

std::vector<std::string> canonical_conditions(const SqlSketch& sketch, const TableSchema& table) {
  std::vector<const Condition*> sorted;
  for (const auto& c : sketch.conds) sorted.push_back(&c);
  std::sort(sorted.begin(), sorted.end(), [](const Condition* a, const Condition* b) {
    if (a->column != b->column) return a->column < b->column;
    if (a->op != b->op) return a->op < b->op;
    return normalize_text(a->value) < normalize_text(b->value);
  });
  std::vector<std::string> rendered;
  for (const Condition* c : sorted) {
    rendered.push_back(canonical_column(c->column, table) + " " +
                       std::string(operator_symbol(c->op)) + " " + normalize_text(c->value));
  }
  return rendered;
}

std::string canonical_string(const SqlSketch& sketch, const TableSchema& table) {
  validate_sketch(sketch, table);
  std::string out = "select ";
  const std::string column = canonical_column(sketch.sel_col, table);
  if (sketch.agg == Aggregator::kNone) {
    out += column;
  } else {
    out += std::string(aggregator_name(sketch.agg)) + "(" + column + ")";
  }
  out += " from t";
  const auto conds = canonical_conditions(sketch, table);
  for (std::size_t i = 0; i < conds.size(); ++i) {
    out += i == 0 ? " where " : " and ";
    out += conds[i];
  }
  return out;
}

bool sketches_match(const SqlSketch& a, const SqlSketch& b, const TableSchema& table) {
  return canonical_string(a, table) == canonical_string(b, table);
}

// ---------------------------------------------------------------------------
// Execution

std::string_view exec_error_name(ExecErrorKind kind) {
  switch (kind) {
    case ExecErrorKind::kInvalidSketch: return "invalid_sketch";
    case ExecErrorKind::kComparisonOnText: return "comparison_on_text";
    case ExecErrorKind::kUnparsableNumber: return "unparsable_number";
    case ExecErrorKind::kEmptyAggregate: return "empty_aggregate";
  }
  return "unknown";
}

std::string cell_to_string(const Cell& cell) {
  if (const double* d = std::get_if<double>(&cell)) return format_number(*d);
  return std::get<std::string>(cell);
}

namespace {

bool reals_equal(double a, double b) {
  if (a == b) return true;
  return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b));
}

std::optional<double> cell_number(const Cell& cell) {
  if (const double* d = std::get_if<double>(&cell)) return *d;
  return parse_number(std::get<std::string>(cell));
}

struct PreparedCondition {
  const Condition* cond;
  std::optional<double> number;
  std::string text;
};

bool condition_holds(const PreparedCondition& pc, const Cell& cell, ColumnType type) {
  const Condition& c = *pc.cond;
  if (c.op == Operator::kEql) {
    if (type == ColumnType::kReal && pc.number) {
      if (const double* d = std::get_if<double>(&cell)) return reals_equal(*d, *pc.number);
    }
    return normalize_text(cell_to_string(cell)) == pc.text;
  }
  const double* d = std::get_if<double>(&cell);
  if (d == nullptr) {
    throw ExecutionError(ExecErrorKind::kUnparsableNumber,
                         "cell '" + cell_to_string(cell) + "' is not numeric");
  }
  return c.op == Operator::kGt ? *d > *pc.number : *d < *pc.number;
}

}  // namespace

ExecValue execute(const SqlSketch& sketch, const TableSchema& table) {
  try {
    validate_sketch(sketch, table);
  } catch (const SchemaError& e) {
    throw ExecutionError(ExecErrorKind::kInvalidSketch, e.what());
  }
  std::vector<PreparedCondition> prepared;
  for (const auto& c : sketch.conds) {
    PreparedCondition pc{&c, parse_number(c.value), normalize_text(c.value)};
    if (c.op != Operator::kEql) {
      if (table.types[c.column] == ColumnType::kText) {
        throw ExecutionError(ExecErrorKind::kComparisonOnText,
                             "ordering comparison on text column '" + table.headers[c.column] + "'");
      }
      if (!pc.number) {
        throw ExecutionError(ExecErrorKind::kUnparsableNumber,
                             "comparison value '" + c.value + "' is not numeric");
      }
    }
    prepared.push_back(std::move(pc));
  }

  std::vector<Cell> projected;
  for (const auto& row : table.rows) {
    bool keep = true;
    for (const auto& pc : prepared) {
      if (!condition_holds(pc, row[pc.cond->column], table.types[pc.cond->column])) {
        keep = false;
        break;
      }
    }
    if (keep) projected.push_back(row[sketch.sel_col]);
  }

  if (sketch.agg == Aggregator::kNone) return projected;
  if (sketch.agg == Aggregator::kCount) return static_cast<double>(projected.size());
  if (projected.empty()) {
    throw ExecutionError(ExecErrorKind::kEmptyAggregate,
                         std::string(aggregator_name(sketch.agg)) + " over zero rows");
  }
  std::vector<double> numbers;
  numbers.reserve(projected.size());
  for (const auto& cell : projected) {
    auto value = cell_number(cell);
    if (!value) {
      throw ExecutionError(ExecErrorKind::kUnparsableNumber,
                           "cannot aggregate non-numeric cell '" + cell_to_string(cell) + "'");
    }
    numbers.push_back(*value);
  }
  switch (sketch.agg) {
    case Aggregator::kMax: return *std::max_element(numbers.begin(), numbers.end());
    case Aggregator::kMin: return *std::min_element(numbers.begin(), numbers.end());
    case Aggregator::kSum: {
      double total = 0.0;
      for (double v : numbers) total += v;
      return total;
    }
    case Aggregator::kAvg: {
      double total = 0.0;
      for (double v : numbers) total += v;
      return total / static_cast<double>(numbers.size());
    }
    default: break;
  }
  throw ExecutionError(ExecErrorKind::kInvalidSketch, "unknown aggregator");
}

ExecOutcome try_execute(const SqlSketch& sketch, const TableSchema& table) {
  try {
    return execute(sketch, table);
  } catch (const ExecutionError& e) {
    return e.kind();
  }
}

namespace {

struct CellKey {
  bool numeric;
  double number;
  std::string text;
};

CellKey make_key(const Cell& cell) {
  if (auto n = cell_number(cell)) return CellKey{true, *n, {}};
  return CellKey{false, 0.0, normalize_text(cell_to_string(cell))};
}

bool key_less(const CellKey& a, const CellKey& b) {
  if (a.numeric != b.numeric) return a.numeric;
  if (a.numeric) return a.number < b.number;
  return a.text < b.text;
}

}  // namespace

bool results_match(const ExecValue& a, const ExecValue& b) {
  if (a.index() != b.index()) return false;
  if (const double* da = std::get_if<double>(&a)) return reals_equal(*da, std::get<double>(b));
  const auto& ca = std::get<std::vector<Cell>>(a);
  const auto& cb = std::get<std::vector<Cell>>(b);
  if (ca.size() != cb.size()) return false;
  std::vector<CellKey> ka;
  std::vector<CellKey> kb;
  for (const auto& c : ca) ka.push_back(make_key(c));
  for (const auto& c : cb) kb.push_back(make_key(c));
  std::sort(ka.begin(), ka.end(), key_less);
  std::sort(kb.begin(), kb.end(), key_less);
  for (std::size_t i = 0; i < ka.size(); ++i) {
    if (ka[i].numeric != kb[i].numeric) return false;
    if (ka[i].numeric ? !reals_equal(ka[i].number, kb[i].number) : ka[i].text != kb[i].text) {
      return false;
    }
  }
  return true;
}

bool results_match(const ExecOutcome& a, const ExecOutcome& b) {
  const auto* va = std::get_if<ExecValue>(&a);
  const auto* vb = std::get_if<ExecValue>(&b);
  if (va == nullptr || vb == nullptr) return false;
  return results_match(*va, *vb);
}

}  // namespace nl2sql
