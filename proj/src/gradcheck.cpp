#include "nl2sql/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>

#include "nl2sql/bi_attention.hpp"
#include "nl2sql/embeddings.hpp"
#include "nl2sql/encoders.hpp"
#include "nl2sql/heads.hpp"
#include "nl2sql/model.hpp"

namespace nl2sql {

std::string GradCheckReport::summary() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu checks over %zu seeds, max relative error %.3e (%s), tolerance %.0e, %.1fs",
                cases.size(), seeds, max_error, worst_case.c_str(), tolerance, seconds);
  return buf;
}

namespace {

class Checker {
 public:
  Checker(const GradCheckOptions& options, GradCheckReport& report) : options_(options), report_(report) {}

  void set_seed(std::uint64_t seed) {
    seed_ = seed;
    rng_.seed(seed * 7919 + 17);
  }
  Rng& rng() { return rng_; }

  Tensor leaf(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = dist(rng_);
    return Tensor::from_data(std::move(shape), std::move(values), true);
  }

  // Scalar probe sum(y * R) with a fixed random R per check.
  std::function<Tensor(const Tensor&)> probe(const Shape& shape) {
    Tensor r = leaf(shape);
    r.set_requires_grad(false);
    return [r](const Tensor& y) { return sum_all(broadcast_mul(y, r)); };
  }

  void check(const std::string& name, std::vector<Tensor> leaves, const std::function<Tensor()>& build) {
    GradientMap analytic;
    {
      GradTape tape;
      analytic = tape.gradients(build());
    }
    GradCheckCase result{name, seed_, 0, 0.0};
    for (Tensor& x : leaves) {
      std::vector<std::size_t> entries(x.numel());
      std::iota(entries.begin(), entries.end(), std::size_t{0});
      if (entries.size() > options_.coordinates_per_tensor) {
        std::shuffle(entries.begin(), entries.end(), rng_);
        entries.resize(options_.coordinates_per_tensor);
      }
      const std::vector<double> numeric = finite_diff_grad_inplace(
          [&] { return build().item(); }, x, entries, options_.eps);
      const std::vector<double> full = analytic.of(x);
      std::vector<double> picked;
      for (std::size_t i : entries) picked.push_back(full[i]);
      for (std::size_t j = 0; j < picked.size(); ++j) {
        const double err = max_relative_error(std::span(&picked[j], 1), std::span(&numeric[j], 1), options_.floor);
        if (err > result.max_error) {
          result.max_error = err;
          char buf[160];
          std::snprintf(buf, sizeof buf, "tensor %zu entry %zu: analytic %.9e numeric %.9e",
                        static_cast<std::size_t>(&x - leaves.data()), entries[j], picked[j], numeric[j]);
          result.detail = buf;
        }
      }
      result.coordinates += entries.size();
    }
    if (report_.worst_case.empty() || result.max_error > report_.max_error) {
      report_.max_error = result.max_error;
      report_.worst_case = name;
    }
    report_.cases.push_back(std::move(result));
  }

 private:
  const GradCheckOptions& options_;
  GradCheckReport& report_;
  Rng rng_;
  std::uint64_t seed_ = 0;
};

// Pushes entries of x at least `gap` away from lo and hi.
void keep_away(Tensor& x, double lo, double hi, double gap) {
  for (double& v : x.mutable_data()) {
    if (std::abs(v - lo) < gap) v = lo + (v < lo ? -gap : gap);
    if (std::abs(v - hi) < gap) v = hi + (v < hi ? -gap : gap);
  }
}

void check_ops(Checker& c) {
  {
    Tensor a = c.leaf({3, 4}), b = c.leaf({4, 2});
    auto p = c.probe({3, 2});
    c.check("matmul", {a, b}, [=] { return p(matmul(a, b)); });
  }
  {
    Tensor a = c.leaf({3, 5});
    auto p = c.probe({5, 3});
    c.check("transpose", {a}, [=] { return p(transpose(a)); });
    Tensor b = c.leaf({2, 3, 4});
    auto q = c.probe({4, 2, 3});
    c.check("transpose_axes", {b}, [=] { return q(transpose(b, {2, 0, 1})); });
    auto r = c.probe({4, 6});
    c.check("reshape", {b}, [=] { return r(reshape(b, {4, 6})); });
  }
  {
    Tensor a = c.leaf({2, 3}), b = c.leaf({4, 3}), d = c.leaf({2, 2});
    auto p = c.probe({6, 3});
    c.check("concat_rows", {a, b}, [=] { return p(concat({a, b}, 0)); });
    auto q = c.probe({2, 5});
    c.check("concat_cols", {a, d}, [=] { return q(concat({a, d}, 1)); });
    auto r = c.probe({2, 3});
    c.check("slice", {b}, [=] { return r(slice(b, 0, 1, 2)); });
    auto s = c.probe({4, 2});
    c.check("slice_cols", {b}, [=] { return s(slice(b, 1, 1, 2)); });
    const std::vector<std::size_t> rows{3, 0, 3, 1, 2};
    auto g = c.probe({5, 3});
    c.check("gather_rows", {b}, [=] { return g(gather_rows(b, rows)); });
  }
  {
    Tensor a = c.leaf({3, 4}, -2.0, 2.0);
    auto p0 = c.probe({3, 4});
    c.check("softmax_axis0", {a}, [=] { return p0(softmax(a, 0)); });
    auto p1 = c.probe({3, 4});
    c.check("softmax_axis1", {a}, [=] { return p1(softmax(a, 1)); });
    Tensor b = c.leaf({2, 3, 4}, -2.0, 2.0);
    auto p2 = c.probe({2, 3, 4});
    c.check("softmax_3d", {b}, [=] { return p2(softmax(b, 1)); });
    auto s0 = c.probe({3, 1, 4});
    c.check("reduce_sum_keepdim", {b}, [=] { return s0(reduce_sum(transpose(b, {1, 0, 2}), 1, true)); });
    auto s1 = c.probe({2, 4});
    c.check("reduce_sum", {b}, [=] { return s1(reduce_sum(b, 1)); });
    auto m0 = c.probe({1, 4});
    c.check("reduce_max_axis0", {a}, [=] { return m0(reduce_max(a, 0, true)); });
    auto m1 = c.probe({3});
    c.check("reduce_max_axis1", {a}, [=] { return m1(reduce_max(a, 1)); });
    c.check("sum_all", {b}, [=] { return scale(sum_all(b), 1.5); });
  }
  {
    Tensor a = c.leaf({3, 1}), b = c.leaf({1, 4}), d = c.leaf({2, 3, 4});
    auto p = c.probe({3, 4});
    c.check("add_broadcast", {a, b}, [=] { return p(add(a, b)); });
    auto q = c.probe({3, 4});
    c.check("sub_broadcast", {a, b}, [=] { return q(sub(a, b)); });
    auto r = c.probe({2, 3, 4});
    c.check("mul_broadcast", {a, d}, [=] { return r(broadcast_mul(d, a)); });
    auto s = c.probe({2, 3, 4});
    c.check("mul_same", {d}, [=] { return s(broadcast_mul(d, d)); });
  }
  {
    Tensor a = c.leaf({3, 4}, -2.0, 2.0);
    auto p = c.probe({3, 4});
    c.check("tanh", {a}, [=] { return p(tanh(a)); });
    c.check("sigmoid", {a}, [=] { return p(sigmoid(a)); });
    c.check("neg", {a}, [=] { return p(neg(a)); });
    c.check("scale", {a}, [=] { return p(scale(a, -0.7)); });
    Tensor clamped = c.leaf({3, 4}, -2.0, 2.0);
    keep_away(clamped, -1.0, 1.0, 1e-2);
    c.check("clamp", {clamped}, [=] { return p(clamp(clamped, -1.0, 1.0)); });
    Tensor positive = c.leaf({3, 4}, 0.5, 2.0);
    c.check("log", {positive}, [=] { return p(log(positive)); });
  }
}

void check_layers(Checker& c) {
  Rng& rng = c.rng();
  {
    ParamSet params;
    const LstmWeights w = make_lstm_weights(params, "cell", 5, 4, rng);
    Tensor x = c.leaf({1, 5});
    const LstmState prev{c.leaf({1, 4}), c.leaf({1, 4})};
    auto ph = c.probe({1, 4});
    auto pc = c.probe({1, 4});
    c.check("lstm_cell", {x, prev.h, prev.c, w.input_weights, w.recurrent_weights, w.bias}, [=] {
      const LstmState next = lstm_cell_step(x, prev, w);
      return add(ph(next.h), pc(next.c));
    });
  }
  {
    ParamSet params;
    const LstmSpec spec{5, 3, 2, 0.3, true};
    const BiLstm lstm(params, "bilstm", spec, rng);
    Tensor seq = c.leaf({4, 5});
    std::vector<Tensor> leaves{seq};
    for (const auto& p : params.entries()) leaves.push_back(p.tensor);
    auto p = c.probe({4, 6});
    const std::uint64_t mask_seed = rng();
    c.check("bilstm_dropout", leaves, [=, &lstm] {
      Rng masks(mask_seed);
      return p(lstm.encode(seq, true, &masks));
    });
    auto f = c.probe({1, 6});
    c.check("bilstm_final_state", leaves, [=, &lstm] { return f(lstm.final_state(seq, false, nullptr)); });
  }
  {
    ParamSet params;
    const LstmDecoder decoder(params, "dec", 5, 4, 2, rng);
    Tensor inputs = c.leaf({3, 5});
    std::vector<Tensor> leaves{inputs};
    for (const auto& p : params.entries()) leaves.push_back(p.tensor);
    auto p = c.probe({3, 4});
    const std::uint64_t mask_seed = rng();
    c.check("lstm_decoder", leaves, [=, &decoder] {
      Rng masks(mask_seed);
      return p(decoder.run(inputs, true, 0.3, &masks));
    });
  }
  {
    std::uniform_int_distribution<std::size_t> dim(1, 5);
    const std::size_t k1 = dim(rng), k2 = dim(rng), h = 4;
    Tensor s1 = c.leaf({k1, h}), s2 = c.leaf({k2, h}), w = c.leaf({h, h});
    auto pf = c.probe({k1, h});
    auto pb = c.probe({k1, h});
    auto pm = c.probe({k1, k2});
    c.check("biattention", {s1, s2, w}, [=] {
      const BiAttnOutput out = biattend(s1, s2, w);
      return add(add(pf(out.forward), pb(out.backward)), pm(out.coattention));
    });
  }
  {
    ParamSet params;
    CharCnnConfig config;
    config.char_dim = 4;
    config.channels = 3;
    config.kernel_widths = {2, 3};
    config.max_word_length = 6;
    const CharCnnWeights w = make_char_cnn_weights(params, "cnn", config, rng);
    Vocab chars;
    for (char ch : std::string("abcdefgh")) chars.add(std::string(1, ch));
    Tensor table = c.leaf({chars.size(), config.char_dim});
    const std::vector<std::string> words{"a", "bead", "cafe", "hedgehog", "fig"};
    const CharGrid grid = make_char_grid(words, chars, config.max_word_length);
    std::vector<Tensor> leaves{table};
    for (const auto& p : params.entries()) leaves.push_back(p.tensor);
    auto p = c.probe({words.size(), config.output_dim()});
    c.check("char_cnn", leaves, [=] { return p(char_cnn_embed(grid, table, w, config)); });
  }
  {
    const std::size_t h = 4, steps = 3, positions = 5;
    Tensor out = c.leaf({steps, h}), hq = c.leaf({positions, h}), col = c.leaf({1, h});
    PointerWeights w{c.leaf({h, h}), c.leaf({h, h}), c.leaf({h, h}), c.leaf({h, 1})};
    auto p = c.probe({steps, positions});
    c.check("pointer", {out, hq, col, w.w1, w.w2, w.w3, w.w4},
            [=] { return p(pointer_probs(out, hq, col, w)); });
  }
  {
    Tensor logits = c.leaf({5});
    const std::vector<std::size_t> gold{1, 3};
    c.check("where_column_loss", {logits},
            [=] { return where_column_loss(softmax(logits, 0), gold, 3.0); });
    c.check("cross_entropy", {logits}, [=] { return cross_entropy(softmax(logits, 0), 2); });
    Tensor rows = c.leaf({4, 3});
    const std::vector<std::size_t> targets{2, 0};
    c.check("masked_cross_entropy", {rows},
            [=] { return masked_cross_entropy(softmax(rows, 1), targets); });
  }
}

void check_model(Checker& c) {
  Rng& rng = c.rng();
  static const char* const kWords[] = {"what", "is", "the", "name", "team", "year", "score", "of", "when", "11"};
  static const char* const kHeaders[] = {"Name", "Team", "Year", "Score", "Home city"};
  std::uniform_int_distribution<std::size_t> word(0, std::size(kWords) - 1);

  const std::size_t q = std::uniform_int_distribution<std::size_t>(3, 6)(rng);
  const std::size_t cols = std::uniform_int_distribution<std::size_t>(2, 4)(rng);
  TableSchema table;
  table.id = "gc";
  for (std::size_t i = 0; i < cols; ++i) {
    table.headers.push_back(kHeaders[(i + rng()) % std::size(kHeaders)]);
    table.types.push_back(ColumnType::kText);
  }
  std::string question;
  for (std::size_t i = 0; i < q; ++i) question += std::string(i ? " " : "") + kWords[word(rng)];
  const std::vector<std::string> question_tokens = tokenize(question);

  SqlSketch gold;
  gold.sel_col = rng() % cols;
  gold.agg = static_cast<Aggregator>(rng() % kNumAggregators);
  std::vector<std::size_t> columns(cols);
  std::iota(columns.begin(), columns.end(), std::size_t{0});
  std::shuffle(columns.begin(), columns.end(), rng);
  const std::size_t n_conds = rng() % (std::min<std::size_t>(cols, 3) + 1);
  for (std::size_t k = 0; k < n_conds; ++k) {
    const std::size_t start = rng() % q;
    const std::size_t len = std::min<std::size_t>(1 + rng() % 2, q - start);
    std::string value;
    for (std::size_t j = 0; j < len; ++j) value += (j ? " " : "") + question_tokens[start + j];
    gold.conds.push_back({columns[k], static_cast<Operator>(rng() % kNumOperators), value});
  }

  ModelConfig config;
  config.char_cnn.char_dim = 4;
  config.char_cnn.channels = 2;
  config.char_cnn.kernel_widths = {2, 3, 4};
  config.char_cnn.max_word_length = 6;
  config.word_dim = config.char_cnn.output_dim();
  config.hidden = 8;
  config.max_conditions = 4;
  config.seed = rng();

  Example ex{question, question_tokens, table.id, gold};
  TableMap tables{{table.id, table}};
  Vocab words = build_word_vocab({ex}, tables);
  Vocab chars = build_char_vocab(words);
  Tensor word_table = uniform_tensor({words.size(), config.word_dim}, 0.5, rng);
  Model model(config, std::move(words), std::move(chars), word_table);

  const PreparedTable prepared_table = model.prepare_table(tables.at(table.id));
  const PreparedExample prepared = model.prepare(question, prepared_table, &gold);
  std::vector<Tensor> leaves;
  for (const auto& p : model.params().entries()) leaves.push_back(p.tensor);
  const std::uint64_t mask_seed = rng();
  c.check("model_loss", leaves, [&] {
    Rng masks(mask_seed);
    return model.loss(prepared, true, &masks).total();
  });
}

}  // namespace

GradCheckReport run_gradient_suite(const GradCheckOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  GradCheckReport report;
  report.tolerance = options.tolerance;
  report.seeds = options.seeds;
  Checker checker(options, report);
  for (std::size_t s = 0; s < options.seeds; ++s) {
    checker.set_seed(options.seed + s);
    check_ops(checker);
    check_layers(checker);
    check_model(checker);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace nl2sql
