#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "nl2sql/checkpoint.hpp"
#include "nl2sql/model.hpp"
#include "nl2sql/synthetic.hpp"
#include "test_util.hpp"

using namespace nl2sql;
using namespace nl2sql::testing;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 1) {
  ModelConfig c;
  c.word_dim = 6;
  c.char_cnn.char_dim = 4;
  c.char_cnn.channels = 2;
  c.char_cnn.kernel_widths = {2, 3, 4};
  c.char_cnn.max_word_length = 6;
  c.hidden = 8;
  c.layers = 2;
  c.seed = seed;
  return c;
}

TableSchema wins_table() {
  TableSchema t;
  t.id = "t";
  t.headers = {"Season", "Wins", "Team"};
  t.types = {ColumnType::kReal, ColumnType::kReal, ColumnType::kText};
  t.rows = {{2003.0, 10.0, std::string("Boston")}, {2004.0, 12.0, std::string("New York")}};
  return t;
}

Model model_for(const std::vector<Example>& examples, const TableMap& tables, ModelConfig config) {
  Vocab words = build_word_vocab(examples, tables);
  Vocab chars = build_char_vocab(words);
  return Model(config, std::move(words), std::move(chars));
}

void zero_param(Model& m, const std::string& name) {
  for (auto& p : m.params().entries())
    if (p.name == name)
      for (double& v : p.tensor.mutable_data()) v = 0.0;
}

double total(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("nl2sql_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST(ModelConfig, Validation) {
  EXPECT_NO_THROW(tiny_config().validate());
  ModelConfig odd = tiny_config();
  odd.hidden = 7;
  EXPECT_THROW(odd.validate(), ConfigError);
  ModelConfig mismatch = tiny_config();
  mismatch.word_dim = 5;
  EXPECT_THROW(mismatch.validate(), ConfigError);
  ModelConfig drop = tiny_config();
  drop.dropout = 1.0;
  EXPECT_THROW(drop.validate(), ConfigError);
  ModelConfig gamma = tiny_config();
  gamma.gamma = 0.0;
  EXPECT_THROW(gamma.validate(), ConfigError);
  const ModelConfig back = ModelConfig::from_json(tiny_config(9).to_json());
  EXPECT_EQ(back.to_json(), tiny_config(9).to_json());
}

TEST(Prepare, ValueTargetsFromSpan) {
  TableMap tables{{"t", wins_table()}};
  SqlSketch gold{1, Aggregator::kNone, {{0, Operator::kEql, "2003"}}};
  std::vector<Example> examples{{"how many wins in 2003", {}, "t", gold}};
  const Model m = model_for(examples, tables, tiny_config());
  const PreparedTable table = m.prepare_table(tables.at("t"));
  const PreparedExample ex = m.prepare(examples[0].question, table, &gold);
  EXPECT_EQ(ex.q, 5u);
  ASSERT_EQ(ex.value_targets.size(), 1u);
  EXPECT_EQ(ex.value_targets[0], (std::vector<std::size_t>{4, 5}));
  EXPECT_FALSE(ex.value_fallback);
  EXPECT_EQ(ex.text.ids[5], Vocab::kEnd);
  EXPECT_EQ(ex.text.ids[6], Vocab::kStart);

  SqlSketch multi{1, Aggregator::kNone, {{2, Operator::kEql, "New York"}}};
  const PreparedExample ny = m.prepare("wins for new york", table, &multi);
  EXPECT_EQ(ny.value_targets[0], (std::vector<std::size_t>{2, 3, 4}));

  SqlSketch missing{1, Aggregator::kNone, {{2, Operator::kEql, "york city"}}};
  const PreparedExample fb = m.prepare("wins for new york", table, &missing);
  EXPECT_TRUE(fb.value_fallback);
  EXPECT_EQ(fb.value_targets[0], (std::vector<std::size_t>{3, 4}));
}

TEST(Prepare, Errors) {
  TableMap tables{{"t", wins_table()}};
  const Model m = model_for({}, tables, tiny_config());
  const PreparedTable table = m.prepare_table(tables.at("t"));
  EXPECT_THROW(m.prepare("", table), ContractError);
  EXPECT_THROW(m.prepare(" \t  ", table), ContractError);
  SqlSketch bad{7, Aggregator::kNone, {}};
  EXPECT_THROW(m.prepare("wins", table, &bad), SchemaError);
  EXPECT_THROW(m.predict("", tables.at("t")), ContractError);
}

TEST(Model, ZeroOutputHeadsPredictEmptySketch) {
  const Corpus corpus = make_synthetic_corpus(8, 3);
  Model m = model_for(corpus.examples, corpus.tables, tiny_config());
  zero_param(m, "agg.w2");
  zero_param(m, "cond_num.w2");
  for (const auto& ex : corpus.examples) {
    const SqlSketch s = m.predict(ex.question, corpus.tables.at(ex.table_id));
    EXPECT_EQ(s.agg, Aggregator::kNone);
    EXPECT_TRUE(s.conds.empty());
  }
}

TEST(Model, RandomModelsPredictValidSketches) {
  const Corpus corpus = make_synthetic_corpus(40, 5);
  Vocab words = build_word_vocab(corpus.examples, corpus.tables);
  Vocab chars = build_char_vocab(words);
  std::size_t with_conditions = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Model m(tiny_config(seed), words, chars);
    // Larger weights make the heads less uniform.
    for (auto& p : m.params().entries())
      for (double& v : p.tensor.mutable_data()) v *= 1.0 + static_cast<double>(seed % 4);
    const Example& ex = corpus.examples[seed % corpus.examples.size()];
    const TableSchema& table = corpus.tables.at(ex.table_id);
    const PreparedTable prepared = m.prepare_table(table);
    const PreparedExample pe = m.prepare(ex.question, prepared);
    const Prediction p = m.predict(pe);
    ASSERT_NO_THROW(validate_sketch(p.sketch, table)) << "seed " << seed;
    ASSERT_LE(p.sketch.conds.size(), kMaxConditions);
    std::set<std::size_t> columns;
    for (const auto& c : p.sketch.conds) {
      EXPECT_TRUE(columns.insert(c.column).second) << "seed " << seed;
      EXPECT_FALSE(normalize_text(c.value).empty()) << "seed " << seed;
      for (const auto& tok : tokenize(c.value)) {
        bool found = false;
        for (const auto& qt : pe.tokens) found = found || qt.text == tok;
        EXPECT_TRUE(found) << "value token '" << tok << "' not in question, seed " << seed;
      }
    }
    with_conditions += p.sketch.conds.empty() ? 0 : 1;
  }
  EXPECT_GT(with_conditions, 0u);
}

TEST(Model, DistributionsNormalizeAndFollowColumnOrder) {
  const Corpus corpus = make_synthetic_corpus(4, 7);
  const Model m = model_for(corpus.examples, corpus.tables, tiny_config(3));
  const Example& ex = corpus.examples[0];
  const TableSchema& table = corpus.tables.at(ex.table_id);
  const PreparedTable prepared = m.prepare_table(table);
  const HeadDistributions d = m.distributions(m.prepare(ex.question, prepared));
  EXPECT_NEAR(total(d.sel), 1.0, 1e-6);
  EXPECT_NEAR(total(d.agg), 1.0, 1e-6);
  EXPECT_NEAR(total(d.cond_num), 1.0, 1e-6);
  EXPECT_NEAR(total(d.where_col), 1.0, 1e-6);
  EXPECT_NEAR(total(d.op), static_cast<double>(kMaxConditions), 1e-6);
  for (const auto& v : d.value) EXPECT_NEAR(total(v), static_cast<double>(v.dim(0)), 1e-6);

  TableSchema swapped = table;
  std::swap(swapped.headers[0], swapped.headers[2]);
  std::swap(swapped.types[0], swapped.types[2]);
  const PreparedTable prepared2 = m.prepare_table(swapped);
  const HeadDistributions e = m.distributions(m.prepare(ex.question, prepared2));
  const std::size_t perm[] = {2, 1, 0, 3};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(e.sel.at(i), d.sel.at(perm[i]), 1e-12);
    EXPECT_NEAR(e.where_col.at(i), d.where_col.at(perm[i]), 1e-12);
  }
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(e.agg.at(k), d.agg.at(k), 1e-12);
}

TEST(Model, LossIsFiniteAndDifferentiable) {
  const Corpus corpus = make_synthetic_corpus(4, 8);
  Model m = model_for(corpus.examples, corpus.tables, tiny_config(2));
  const Example& ex = corpus.examples[1];
  const PreparedTable prepared = m.prepare_table(corpus.tables.at(ex.table_id));
  const PreparedExample pe = m.prepare(ex.question, prepared, &ex.gold);
  Rng rng(1);
  GradTape tape;
  const LossParts parts = m.loss(pe, true, &rng);
  for (const Tensor* t : {&parts.agg, &parts.sel, &parts.cond_num, &parts.where_col, &parts.op, &parts.value}) {
    EXPECT_TRUE(std::isfinite(t->item()));
    EXPECT_GE(t->item(), 0.0);
  }
  const auto grads = tape.gradients(parts.total());
  double norm = 0.0;
  for (const auto& p : m.params().entries())
    for (double g : grads.of(p.tensor)) norm += g * g;
  EXPECT_GT(norm, 0.0);
  EXPECT_THROW(m.loss(m.prepare(ex.question, prepared), false, nullptr), ContractError);
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  const Corpus corpus = make_synthetic_corpus(12, 9);
  const Model m = model_for(corpus.examples, corpus.tables, tiny_config(4));
  const auto dir = temp_dir("roundtrip");
  save_checkpoint(m, dir, Dtype::kFloat64, R"({"epoch": 3})");
  for (const char* f : {"manifest.json", "weights.bin", "vocab.txt", "chars.txt"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  const Model back = load_checkpoint(dir);
  ASSERT_EQ(back.params().entries().size(), m.params().entries().size());
  for (std::size_t i = 0; i < m.params().entries().size(); ++i) {
    const auto& a = m.params().entries()[i];
    const auto& b = back.params().entries()[i];
    EXPECT_EQ(a.name, b.name);
    EXPECT_EQ(max_abs_diff(a.tensor.data(), b.tensor.data()), 0.0) << a.name;
  }
  EXPECT_EQ(back.config().to_json(), m.config().to_json());
  for (const auto& ex : corpus.examples) {
    const TableSchema& t = corpus.tables.at(ex.table_id);
    EXPECT_EQ(canonical_string(back.predict(ex.question, t), t), canonical_string(m.predict(ex.question, t), t));
  }
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, Float32AndCorruption) {
  const Corpus corpus = make_synthetic_corpus(4, 10);
  const Model m = model_for(corpus.examples, corpus.tables, tiny_config(5));
  const auto dir = temp_dir("f32");
  save_checkpoint(m, dir, Dtype::kFloat32);
  const Model back = load_checkpoint(dir);
  for (std::size_t i = 0; i < m.params().entries().size(); ++i)
    EXPECT_LT(max_abs_diff(m.params().entries()[i].tensor.data(), back.params().entries()[i].tensor.data()), 1e-6);

  std::filesystem::resize_file(dir / "weights.bin", std::filesystem::file_size(dir / "weights.bin") / 2);
  EXPECT_THROW(load_checkpoint(dir), CheckpointError);
  EXPECT_THROW(load_checkpoint(temp_dir("missing")), CheckpointError);
  EXPECT_THROW(save_checkpoint(m, dir, Dtype::kFloat64, "[1]"), CheckpointError);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CopyWeights) {
  const Corpus corpus = make_synthetic_corpus(4, 11);
  const Model a = model_for(corpus.examples, corpus.tables, tiny_config(6));
  Model b = model_for(corpus.examples, corpus.tables, tiny_config(7));
  copy_weights(a, b);
  for (std::size_t i = 0; i < a.params().entries().size(); ++i)
    EXPECT_EQ(max_abs_diff(a.params().entries()[i].tensor.data(), b.params().entries()[i].tensor.data()), 0.0);
  ModelConfig other = tiny_config(6);
  other.hidden = 10;
  Model c = model_for(corpus.examples, corpus.tables, other);
  EXPECT_THROW(copy_weights(a, c), CheckpointError);
}
