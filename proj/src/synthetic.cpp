#include "nl2sql/synthetic.hpp"

#include "nl2sql/train.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <stdexcept>
#include <string>

namespace nl2sql {

namespace {

TableSchema players_table() {
  TableSchema t;
  t.id = "1-players";
  t.headers = {"Player", "No.", "Position", "Years"};
  t.types = {ColumnType::kText, ColumnType::kReal, ColumnType::kText, ColumnType::kText};
  const std::array<std::array<const char*, 4>, 6> rows{{
      {"Antonio Lang", "21", "Guard", "1999-2000"},
      {"Voshon Lenard", "23", "Guard", "2002-03"},
      {"Martin Lewis", "32", "Forward", "1996-97"},
      {"Brad Lohaus", "33", "Center", "1996"},
      {"Art Long", "42", "Forward", "2002-03"},
      {"John Long", "25", "Guard", "1996-97"},
  }};
  for (const auto& r : rows) {
    t.rows.push_back({std::string(r[0]), *parse_number(r[1]), std::string(r[2]), std::string(r[3])});
  }
  return t;
}

TableSchema cities_table() {
  TableSchema t;
  t.id = "2-cities";
  t.headers = {"City", "Country", "Population", "Founded"};
  t.types = {ColumnType::kText, ColumnType::kText, ColumnType::kReal, ColumnType::kReal};
  const std::array<std::array<const char*, 4>, 6> rows{{
      {"Lyon", "France", "513000", "43"},
      {"Porto", "Portugal", "232000", "300"},
      {"Nantes", "France", "309000", "70"},
      {"Braga", "Portugal", "193000", "16"},
      {"Graz", "Austria", "291000", "1128"},
      {"Linz", "Austria", "206000", "799"},
  }};
  for (const auto& r : rows) {
    t.rows.push_back({std::string(r[0]), std::string(r[1]), *parse_number(r[2]), *parse_number(r[3])});
  }
  return t;
}

std::string agg_phrase(Aggregator agg) {
  switch (agg) {
    case Aggregator::kNone: return "what is the";
    case Aggregator::kMax: return "what is the highest";
    case Aggregator::kMin: return "what is the lowest";
    case Aggregator::kCount: return "how many";
    case Aggregator::kSum: return "what is the total";
    case Aggregator::kAvg: return "what is the average";
  }
  return {};
}

std::string op_phrase(Operator op) {
  switch (op) {
    case Operator::kEql: return "is";
    case Operator::kGt: return "is more than";
    case Operator::kLt: return "is less than";
  }
  return {};
}

std::size_t pick(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

Example make_example(const TableSchema& table, Rng& rng) {
  const std::size_t c = table.num_columns();
  Example ex;
  ex.table_id = table.id;
  SqlSketch& sql = ex.gold;
  sql.sel_col = pick(rng, c);
  if (table.types[sql.sel_col] == ColumnType::kReal) {
    sql.agg = static_cast<Aggregator>(pick(rng, kNumAggregators));
  } else {
    sql.agg = pick(rng, 2) == 0 ? Aggregator::kNone : Aggregator::kCount;
  }

  std::vector<std::size_t> candidates;
  for (std::size_t col = 0; col < c; ++col) {
    if (col != sql.sel_col) candidates.push_back(col);
  }
  std::shuffle(candidates.begin(), candidates.end(), rng);
  const std::size_t n_conds = 1 + pick(rng, 2);
  const auto& row = table.rows[pick(rng, table.rows.size())];
  for (std::size_t k = 0; k < n_conds; ++k) {
    Condition cond;
    cond.column = candidates[k];
    cond.value = cell_to_string(row[cond.column]);
    if (table.types[cond.column] == ColumnType::kReal) cond.op = static_cast<Operator>(pick(rng, 3));
    sql.conds.push_back(std::move(cond));
  }

  std::string q = agg_phrase(sql.agg) + " " + to_lower(table.headers[sql.sel_col]) + " when";
  for (std::size_t k = 0; k < sql.conds.size(); ++k) {
    const Condition& cond = sql.conds[k];
    if (k > 0) q += " and";
    q += " " + to_lower(table.headers[cond.column]) + " " + op_phrase(cond.op) + " " + cond.value;
  }
  q += " ?";
  ex.question = q;
  ex.tokens = tokenize(q);
  return ex;
}

}  // namespace

Corpus make_synthetic_corpus(std::size_t count, std::uint64_t seed) {
  Corpus corpus;
  const TableSchema tables[] = {players_table(), cities_table()};
  for (const auto& t : tables) corpus.tables.emplace(t.id, t);
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    corpus.examples.push_back(make_example(tables[i % 2], rng));
  }
  return corpus;
}

Tensor random_word_table(const Vocab& vocab, std::size_t dim, Rng& rng) {
  Tensor table = uniform_tensor({vocab.size(), dim}, 0.5, rng);
  auto values = table.mutable_data();
  std::fill_n(values.begin(), Vocab::kNumSpecials * dim, 0.0);
  return table;
}

namespace {

void write_jsonl(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace

void write_synthetic_dataset(const std::filesystem::path& dir, std::size_t count, std::size_t dev_count,
                             std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const Corpus train = make_synthetic_corpus(count, seed);
  const Corpus dev = make_synthetic_corpus(dev_count, seed + 1);
  std::vector<std::string> lines;
  for (const auto& [id, t] : train.tables) lines.push_back(table_to_json(t));
  write_jsonl(dir / "tables.jsonl", lines);
  lines.clear();
  for (const auto& ex : train.examples) lines.push_back(example_to_json(ex));
  write_jsonl(dir / "train.jsonl", lines);
  lines.clear();
  for (const auto& ex : dev.examples) lines.push_back(example_to_json(ex));
  write_jsonl(dir / "dev.jsonl", lines);

  TrainConfig config;
  std::vector<Example> all = train.examples;
  all.insert(all.end(), dev.examples.begin(), dev.examples.end());
  const Vocab words = build_word_vocab(all, train.tables);
  Rng rng(seed);
  const Tensor vectors = random_word_table(words, config.model.word_dim, rng);
  {
    std::ofstream out(dir / "word_vectors.txt");
    out.precision(6);
    for (std::size_t i = Vocab::kNumSpecials; i < words.size(); ++i) {
      out << words.token(i);
      for (std::size_t j = 0; j < config.model.word_dim; ++j) out << ' ' << vectors.at(i, j);
      out << '\n';
    }
  }
  config.word_vectors = (dir / "word_vectors.txt").string();
  config.model.hidden = 20;
  config.model.seed = seed;
  config.batch_size = 8;
  config.epochs_phase1 = 100;
  config.epochs_phase2 = 100;
  config.eval_every = 10;
  config.train_data = (dir / "train.jsonl").string();
  config.train_tables = (dir / "tables.jsonl").string();
  config.dev_data = (dir / "dev.jsonl").string();
  config.dev_tables = config.train_tables;
  config.checkpoint_dir = (dir / "checkpoints").string();
  std::ofstream(dir / "config.json") << config.to_json() << '\n';
}


}  // namespace nl2sql
