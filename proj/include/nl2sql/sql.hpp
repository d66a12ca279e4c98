#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace nl2sql {

// ---------------------------------------------------------------------------
// Tokenizer

struct Token {
  std::string text;   // lowercased
  std::size_t begin;  // byte offsets into the source text
  std::size_t end;
};

/// Lowercases, splits on whitespace and peels leading/trailing punctuation
/// into single-character tokens. Internal punctuation ("3.5", "u.s") stays
/// intact, and a trailing '.' after a letter is kept when the next
/// non-space character is not a letter ("No. = 23" -> "no.", "=", "23").
std::vector<Token> tokenize_with_offsets(std::string_view text);
std::vector<std::string> tokenize(std::string_view text);

std::string to_lower(std::string_view text);
// Lowercase with runs of whitespace collapsed to one space and trimmed.
std::string normalize_text(std::string_view text);
std::optional<double> parse_number(std::string_view text);
std::string format_number(double value);

// ---------------------------------------------------------------------------
// Sketch types

enum class Aggregator { kNone = 0, kMax = 1, kMin = 2, kCount = 3, kSum = 4, kAvg = 5 };
enum class Operator { kEql = 0, kGt = 1, kLt = 2 };

inline constexpr std::size_t kNumAggregators = 6;
inline constexpr std::size_t kNumOperators = 3;
inline constexpr std::size_t kMaxConditions = 4;

std::string_view aggregator_name(Aggregator agg);
std::string_view operator_symbol(Operator op);
std::optional<Aggregator> aggregator_from_index(long index);
std::optional<Operator> operator_from_index(long index);

struct Condition {
  std::size_t column = 0;
  Operator op = Operator::kEql;
  std::string value;
};

/// SELECT [agg(]column[)] FROM t WHERE conjunction of conditions. Conditions
/// form a set: order carries no meaning.
struct SqlSketch {
  std::size_t sel_col = 0;
  Aggregator agg = Aggregator::kNone;
  std::vector<Condition> conds;
};

enum class ColumnType { kText, kReal };

using Cell = std::variant<std::string, double>;

struct TableSchema {
  std::string id;
  std::vector<std::string> headers;
  std::vector<ColumnType> types;
  std::vector<std::vector<Cell>> rows;

  std::size_t num_columns() const { return headers.size(); }
};

using TableMap = std::map<std::string, TableSchema, std::less<>>;

struct Example {
  std::string question;
  std::vector<std::string> tokens;
  std::string table_id;
  SqlSketch gold;
};

// ---------------------------------------------------------------------------
// Loading

/// Malformed input file; carries the 1-based line number when known.
class LoadError : public std::runtime_error {
 public:
  LoadError(const std::string& what, std::size_t line = 0);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Loaded data that violates a schema or sketch invariant.
class SchemaError : public LoadError {
 public:
  using LoadError::LoadError;
};

TableMap load_tables(std::istream& in);
std::vector<Example> load_examples(std::istream& in, const TableMap& tables);
TableMap load_tables_file(const std::string& path);
std::vector<Example> load_examples_file(const std::string& path, const TableMap& tables);

// Throws SchemaError when the sketch does not fit the table.
void validate_sketch(const SqlSketch& sketch, const TableSchema& table);

// WikiSQL "sql" object: {"sel": int, "agg": int, "conds": [[col, op, value], ...]}.
std::string sketch_to_json(const SqlSketch& sketch);
SqlSketch sketch_from_json(std::string_view json);
// One WikiSQL example line.
std::string example_to_json(const Example& example);
std::string table_to_json(const TableSchema& table);

// ---------------------------------------------------------------------------
// Canonical form and comparison

/// Lowercased rendering with conjuncts sorted by (column, operator, value),
/// e.g. "select count(player) from t where no. = 23". Column names are the
/// normalised headers, suffixed with "#index" only when two headers collide.
std::string canonical_string(const SqlSketch& sketch, const TableSchema& table);
std::string canonical_column(std::size_t column, const TableSchema& table);
// Sorted rendered conjuncts; equal vectors mean equal condition sets.
std::vector<std::string> canonical_conditions(const SqlSketch& sketch, const TableSchema& table);

bool sketches_match(const SqlSketch& a, const SqlSketch& b, const TableSchema& table);

// ---------------------------------------------------------------------------
// Execution

enum class ExecErrorKind {
  kInvalidSketch,
  kComparisonOnText,   // GT/LT against a text column
  kUnparsableNumber,   // GT/LT value or cell, or a numeric aggregate input
  kEmptyAggregate,     // SUM/AVG/MAX/MIN over zero rows
};

std::string_view exec_error_name(ExecErrorKind kind);

class ExecutionError : public std::runtime_error {
 public:
  ExecutionError(ExecErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ExecErrorKind kind() const { return kind_; }

 private:
  ExecErrorKind kind_;
};

/// Scalar for aggregates, multiset of projected cells otherwise.
using ExecValue = std::variant<double, std::vector<Cell>>;
using ExecOutcome = std::variant<ExecValue, ExecErrorKind>;

ExecValue execute(const SqlSketch& sketch, const TableSchema& table);
ExecOutcome try_execute(const SqlSketch& sketch, const TableSchema& table);

/// Reals compare with relative tolerance 1e-9, multisets order-insensitively.
/// Any error on either side is a non-match.
bool results_match(const ExecOutcome& a, const ExecOutcome& b);
bool results_match(const ExecValue& a, const ExecValue& b);

std::string cell_to_string(const Cell& cell);

}  // namespace nl2sql
