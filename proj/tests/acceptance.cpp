// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "attention_oracle.hpp"
#include "nl2sql/bi_attention.hpp"
#include "nl2sql/gradcheck.hpp"
#include "nl2sql/heads.hpp"
#include "nl2sql/metrics.hpp"
#include "nl2sql/synthetic.hpp"
#include "nl2sql/train.hpp"
#include "sql_fixtures.hpp"
#include "test_util.hpp"

using namespace nl2sql;
using namespace nl2sql::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome gradient_suite() {
  const GradCheckReport report = run_gradient_suite(GradCheckOptions{});
  const bool fast = report.seconds < 60.0;
  return {report.passed() && fast && report.seeds >= 10,
          fmt("%zu checks over %zu seeds, max rel error %.3g (limit %.0e, worst %s), %.1fs (limit 60s)",
              report.cases.size(), report.seeds, report.max_error, report.tolerance, report.worst_case.c_str(),
              report.seconds)};
}

Outcome biattention_oracle() {
  const auto start = Clock::now();
  const std::size_t lengths[] = {1, 2, 3, 5, 8};
  double worst = 0.0;
  std::size_t runs = 0;
  for (std::size_t k1 : lengths)
    for (std::size_t k2 : lengths)
      for (std::size_t h : {4u, 6u})
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
          Rng rng(seed * 7919 + k1 * 131 + k2 * 17 + h);
          const Tensor s1 = random_tensor({k1, h}, rng, -2.0, 2.0);
          const Tensor s2 = random_tensor({k2, h}, rng, -2.0, 2.0);
          const Tensor w = random_tensor({h, h}, rng);
          const BiAttnOutput got = biattend(s1, s2, w);
          const Oracle want = scalar_biattention(to_mat(s1), to_mat(s2), to_mat(w));
          worst = std::max({worst, max_diff(got.coattention, want.m), max_diff(got.forward, want.fwd),
                            max_diff(got.backward, want.bwd)});
          ++runs;
        }
  return {worst < 1e-6, fmt("%zu shape/seed runs, max abs diff %.3g (limit 1e-6), %.2fs", runs, worst,
                            seconds_since(start))};
}

ModelConfig tiny_config(std::uint64_t seed) {
  ModelConfig c;
  c.word_dim = 6;
  c.char_cnn.char_dim = 4;
  c.char_cnn.channels = 2;
  c.char_cnn.kernel_widths = {2, 3, 4};
  c.char_cnn.max_word_length = 6;
  c.hidden = 8;
  c.seed = seed;
  return c;
}

Outcome normalization() {
  const Corpus corpus = make_synthetic_corpus(50, 12);
  const Vocab words = build_word_vocab(corpus.examples, corpus.tables);
  const Vocab chars = build_char_vocab(words);
  double worst = 0.0;
  std::size_t distributions = 0;
  auto check_rows = [&](const Tensor& t) {
    const std::size_t rows = t.rank() == 1 ? 1 : t.dim(0);
    const std::size_t cols = t.numel() / rows;
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += t.data()[r * cols + j];
      worst = std::max(worst, std::abs(s - 1.0));
      ++distributions;
    }
  };
  for (std::uint64_t trial = 0; trial < 1000; ++trial) {
    Model m(tiny_config(trial), words, chars);
    const double scale = 1.0 + static_cast<double>(trial % 8);
    for (auto& p : m.params().entries())
      for (double& v : p.tensor.mutable_data()) v *= scale;
    const Example& ex = corpus.examples[trial % corpus.examples.size()];
    const PreparedTable table = m.prepare_table(corpus.tables.at(ex.table_id));
    const HeadDistributions d = m.distributions(m.prepare(ex.question, table));
    for (const Tensor* t : {&d.sel, &d.agg, &d.cond_num, &d.where_col, &d.op}) check_rows(*t);
    for (const Tensor& v : d.value) check_rows(v);
  }
  return {worst <= 1e-6, fmt("1000 random-weight models, %zu distributions, max |sum-1| %.3g (limit 1e-6)",
                             distributions, worst)};
}

Outcome where_loss_closed_form() {
  const Tensor p = Tensor::from_data({2}, {0.5, 0.5});
  const std::size_t gold[] = {0};
  const double loss = where_column_loss(p, gold, 3.0).item();
  const double want = 4.0 * std::log(2.0);
  return {std::abs(loss - want) <= 1e-9, fmt("loss %.12f vs 4 ln 2 = %.12f (tol 1e-9)", loss, want)};
}

struct OverfitRun {
  Outcome overfit;
  Outcome schedule;
  Metrics train_metrics;
  std::vector<Example> examples;
  TableMap tables;
  std::vector<SqlSketch> predictions;
};

OverfitRun overfit() {
  const auto start = Clock::now();
  OverfitRun run;
  Corpus corpus = make_synthetic_corpus(32, 1);
  run.examples = corpus.examples;
  run.tables = corpus.tables;
  Vocab words = build_word_vocab(run.examples, run.tables);
  Vocab chars = build_char_vocab(words);
  TrainConfig config;
  config.batch_size = 8;
  config.epochs_phase1 = 100;
  config.epochs_phase2 = 100;
  config.model.hidden = 20;
  config.model.dropout = 0.0;
  Rng rng(config.model.seed);
  Tensor table = random_word_table(words, config.model.word_dim, rng);
  Model model(config.model, std::move(words), std::move(chars), table);
  Trainer trainer(model, config, Dataset{&run.examples, &run.tables});
  const std::vector<EpochLog> logs = trainer.run();

  run.predictions = predict_all(model, run.examples, run.tables);
  run.train_metrics = evaluate_predictions(run.predictions, run.examples, run.tables);
  const double secs = seconds_since(start);
  run.overfit = {run.train_metrics.lf_match() >= 0.95 && secs < 300.0,
                 fmt("32 examples, 2 tables x 4 columns, h=20, 200 epochs, batch 8: train lf %.4f (need >= 0.95), "
                     "exec %.4f, final loss %.4g, %.0fs (limit 300s)",
                     run.train_metrics.lf_match(), run.train_metrics.exec_match(), logs.back().loss, secs)};

  bool words_frozen = true, chars_move = false, words_move = false;
  for (const auto& log : logs) {
    if (log.phase == 1) {
      words_frozen = words_frozen && log.max_word_grad_norm == 0.0;
      chars_move = chars_move || log.max_char_grad_norm > 0.0;
    } else {
      words_move = words_move || log.max_word_grad_norm > 0.0;
    }
  }
  run.schedule = {words_frozen && chars_move && words_move,
                  fmt("phase 1 word grad norm identically 0: %s; char grad norm > 0 in phase 1: %s; "
                      "word grads flow in phase 2: %s",
                      words_frozen ? "yes" : "no", chars_move ? "yes" : "no", words_move ? "yes" : "no")};
  return run;
}

Outcome executor_goldens() {
  const TableSchema t = roster();
  const SqlSketch by_player = sketch(0, Aggregator::kCount, {{1, Operator::kEql, "23"}});
  const SqlSketch by_number = sketch(1, Aggregator::kCount, {{1, Operator::kEql, "23"}});
  const bool form = !sketches_match(by_player, by_number, t);
  const bool result = results_match(try_execute(by_player, t), try_execute(by_number, t));
  std::size_t agree = 0;
  const auto cases = hand_built_cases();
  for (const auto& c : cases) {
    const ExecOutcome got = try_execute(c, t);
    const ExecOutcome want = brute_force(c, t);
    if (got.index() != want.index()) continue;
    if (const auto* kind = std::get_if<ExecErrorKind>(&want)) {
      agree += std::get<ExecErrorKind>(got) == *kind;
    } else {
      agree += results_match(std::get<ExecValue>(got), std::get<ExecValue>(want));
    }
  }
  return {form && result && agree == cases.size() && cases.size() == 20,
          fmt("COUNT(Player) vs COUNT(No.) where No. = 23: sketches_match=%s results_match=%s; "
              "%zu/%zu hand-built cases agree with brute force",
              form ? "false" : "true", result ? "true" : "false", agree, cases.size())};
}

SqlSketch random_sketch(const TableSchema& t, std::mt19937_64& rng, std::size_t min_conds) {
  SqlSketch s;
  s.sel_col = rng() % t.num_columns();
  s.agg = static_cast<Aggregator>(rng() % kNumAggregators);
  const std::size_t n = min_conds + rng() % (kMaxConditions - min_conds + 1);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t col = rng() % t.num_columns();
    const auto& row = t.rows[rng() % t.rows.size()];
    const Operator op = t.types[col] == ColumnType::kReal ? static_cast<Operator>(rng() % 3) : Operator::kEql;
    s.conds.push_back({col, op, cell_to_string(row[col])});
  }
  return s;
}

Outcome order_invariance() {
  const TableSchema t = roster();
  TableMap tables{{t.id, t}};
  std::mt19937_64 rng(2718);
  std::size_t violations = 0;
  std::vector<SqlSketch> gold, predicted, permuted;
  std::vector<Example> examples;
  for (int trial = 0; trial < 200; ++trial) {
    const SqlSketch s = random_sketch(t, rng, 2);
    SqlSketch p = s;
    std::shuffle(p.conds.begin(), p.conds.end(), rng);
    if (canonical_string(s, t) != canonical_string(p, t)) ++violations;
    const ExecOutcome a = try_execute(s, t), b = try_execute(p, t);
    if (a.index() != b.index()) {
      ++violations;
    } else if (a.index() == 0 && !results_match(a, b)) {
      ++violations;
    } else if (a.index() == 1 && std::get<ExecErrorKind>(a) != std::get<ExecErrorKind>(b)) {
      ++violations;
    }
    // Score the same predictions against gold in both condition orders.
    const SqlSketch guess = random_sketch(t, rng, 0);
    examples.push_back(Example{"q", {}, t.id, s});
    gold.push_back(s);
    predicted.push_back(guess);
    permuted.push_back(p);
  }
  const Metrics base = evaluate_predictions(predicted, examples, tables);
  std::vector<Example> shuffled_gold = examples;
  for (std::size_t i = 0; i < shuffled_gold.size(); ++i) shuffled_gold[i].gold = permuted[i];
  const Metrics by_gold_order = evaluate_predictions(predicted, shuffled_gold, tables);
  const Metrics self = evaluate_predictions(permuted, examples, tables);
  const bool metrics_same = base.to_json() == by_gold_order.to_json() && self.lf_match() == 1.0 &&
                            self.acc_where() == 1.0 && self.exec_match() == 1.0;
  return {violations == 0 && metrics_same,
          fmt("200 sketches with 2-4 conditions: %zu canonical/execute differences; metrics unchanged: %s", violations,
              metrics_same ? "yes" : "no")};
}

Outcome metric_consistency(const OverfitRun& run) {
  std::vector<std::pair<std::string, Metrics>> datasets{{"overfit train", run.train_metrics}};
  std::mt19937_64 rng(99);
  const Corpus dev = make_synthetic_corpus(64, 77);
  for (int d = 0; d < 20; ++d) {
    std::vector<SqlSketch> predicted;
    for (const auto& ex : dev.examples) {
      const TableSchema& t = dev.tables.at(ex.table_id);
      SqlSketch p = ex.gold;
      if (rng() % 3 == 0) p.agg = static_cast<Aggregator>(rng() % kNumAggregators);
      if (rng() % 3 == 0) p.sel_col = rng() % t.num_columns();
      if (rng() % 3 == 0) p = random_sketch(t, rng, 0);
      predicted.push_back(p);
    }
    datasets.emplace_back("perturbed gold " + std::to_string(d),
                          evaluate_predictions(predicted, dev.examples, dev.tables));
  }
  // Per-example implication on the overfit run.
  std::size_t implication_failures = 0;
  for (std::size_t i = 0; i < run.examples.size(); ++i) {
    const ExampleScore s = score_prediction(run.predictions[i], run.examples[i].gold,
                                            run.tables.at(run.examples[i].table_id));
    if (s.lf && !(s.agg && s.sel && s.where && s.exec)) ++implication_failures;
  }
  std::size_t failures = 0;
  std::string first;
  for (const auto& [name, m] : datasets) {
    const bool ok = m.exec_match() >= m.lf_match() &&
                    m.lf_match() <= std::min({m.acc_agg(), m.acc_sel(), m.acc_where()});
    if (!ok) {
      ++failures;
      if (first.empty()) first = " first: " + name + " " + m.to_json();
    }
  }
  return {failures == 0 && implication_failures == 0,
          fmt("%zu datasets, %zu violate exec >= lf or lf <= min(agg, sel, where); %zu per-example violations%s",
              datasets.size(), failures, implication_failures, first.c_str())};
}

}  // namespace

int main() {
  bool all = true;
  auto report = [&](const char* name, const Outcome& o) {
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  };
  report("gradient-suite", gradient_suite());
  report("bi-attention-oracle", biattention_oracle());
  report("distribution-normalization", normalization());
  report("where-column-loss-closed-form", where_loss_closed_form());
  const OverfitRun run = overfit();
  report("overfit-synthetic-corpus", run.overfit);
  report("executor-goldens", executor_goldens());
  report("condition-order-invariance", order_invariance());
  report("metric-consistency", metric_consistency(run));
  report("phase-schedule", run.schedule);
  std::printf("%s\n", all ? "ALL PASS" : "SOME CRITERIA FAILED");
  return all ? 0 : 1;
}
