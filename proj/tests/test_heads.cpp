#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "nl2sql/heads.hpp"
#include "nl2sql/sql.hpp"
#include "test_util.hpp"

using namespace nl2sql;
using namespace nl2sql::testing;

namespace {

void zero(const Tensor& t) {
  Tensor copy = t;
  for (double& v : copy.mutable_data()) v = 0.0;
}

double row_sum(const Tensor& t, std::size_t row) {
  double s = 0.0;
  for (std::size_t j = 0; j < t.dim(1); ++j) s += t.at(row, j);
  return s;
}

double total(const Tensor& t) { return std::accumulate(t.data().begin(), t.data().end(), 0.0); }

struct Heads {
  ParamSet params;
  SlotScorerWeights sel, where, op;
  ClassifierWeights agg, num;
  ValueDecoder value;

  Heads(std::size_t h, std::size_t d, Rng& rng) {
    sel = make_slot_scorer(params, "sel", h, 1, rng);
    where = make_slot_scorer(params, "where", h, 1, rng);
    op = make_slot_scorer(params, "op", h, 3, rng);
    agg = make_classifier(params, "agg", h, 6, rng);
    num = make_classifier(params, "num", h, kMaxConditions + 1, rng);
    value = ValueDecoder(params, "value", d, h, 2, rng);
  }
};

}  // namespace

TEST(Heads, DistributionsNormalizeUnderRandomWeights) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = 2 + trial % 5, d = 3 + trial % 4;
    const std::size_t q = 1 + trial % 9, c = 1 + trial % 6;
    Heads heads(h, d, rng);
    // Inflate some weights so softmax inputs cover a wide range.
    const double scale = 1.0 + (trial % 10);
    for (auto& p : heads.params.entries())
      for (double& v : p.tensor.mutable_data()) v *= scale;
    const Tensor hq = random_tensor({q, h}, rng, -3.0, 3.0);
    const Tensor hcol = random_tensor({c, h}, rng, -3.0, 3.0);
    const std::size_t k = std::min<std::size_t>(c, trial % (kMaxConditions + 1));

    EXPECT_NEAR(total(column_select(hq, hcol, heads.sel)), 1.0, 1e-6);
    EXPECT_NEAR(total(aggregator_select(hq, heads.agg)), 1.0, 1e-6);
    EXPECT_NEAR(total(condition_number_probs(hq, heads.num)), 1.0, 1e-6);
    const WhereColumns wc = where_columns(hq, hcol, heads.where, k, kMaxConditions);
    EXPECT_NEAR(total(wc.probs), 1.0, 1e-6);
    const Tensor p_op = operator_slots(hq, wc.topcol, heads.op);
    ASSERT_EQ(p_op.shape(), (Shape{kMaxConditions, 3}));
    for (std::size_t r = 0; r < kMaxConditions; ++r) EXPECT_NEAR(row_sum(p_op, r), 1.0, 1e-6);

    const Tensor hq_end = random_tensor({q + 1, h}, rng, -3.0, 3.0);
    const std::size_t steps = 1 + trial % 4;
    const Tensor p_val = heads.value.teacher_forced(hq_end, slice(wc.topcol, 0, 0, 1),
                                                    random_tensor({steps, d}, rng), false, 0.0, nullptr);
    ASSERT_EQ(p_val.shape(), (Shape{steps, q + 1}));
    for (std::size_t r = 0; r < steps; ++r) EXPECT_NEAR(row_sum(p_val, r), 1.0, 1e-6);
    if (::testing::Test::HasFailure()) FAIL() << "trial " << trial;
  }
}

TEST(ColumnSelect, SingleColumnAndZeroOutput) {
  Rng rng(1);
  Heads heads(4, 3, rng);
  const Tensor hq = random_tensor({3, 4}, rng);
  EXPECT_DOUBLE_EQ(column_select(hq, random_tensor({1, 4}, rng), heads.sel).item(), 1.0);
  zero(heads.sel.w3);
  const Tensor p = column_select(hq, random_tensor({5, 4}, rng), heads.sel);
  for (double v : p.data()) EXPECT_NEAR(v, 0.2, 1e-15);
  EXPECT_THROW(column_select(hq, Tensor::zeros({0, 4}), heads.sel), ContractError);
}

TEST(ColumnSelect, PermutingColumnsPermutesProbabilities) {
  Rng rng(2);
  Heads heads(4, 3, rng);
  const Tensor hq = random_tensor({3, 4}, rng);
  const Tensor hcol = random_tensor({4, 4}, rng);
  const std::size_t perm[] = {3, 1, 0, 2};
  const Tensor p = column_select(hq, hcol, heads.sel);
  const Tensor pp = column_select(hq, gather_rows(hcol, perm), heads.sel);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(pp.at(i), p.at(perm[i]), 1e-14);
  const Tensor agg = aggregator_select(hq, heads.agg);
  EXPECT_EQ(agg.numel(), 6u);
}

TEST(Aggregator, ZeroOutputIsUniformAndLogitsAreSummed) {
  Rng rng(3);
  Heads heads(4, 3, rng);
  const Tensor hq = random_tensor({3, 4}, rng);
  const Tensor once = summed_class_logits(hq, heads.agg);
  const Tensor twice = summed_class_logits(concat({hq, hq}, 0), heads.agg);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(twice.at(k), 2.0 * once.at(k), 1e-13);
  zero(heads.agg.w2);
  const Tensor uniform = aggregator_select(hq, heads.agg);
  for (double v : uniform.data()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
}

TEST(ConditionNumber, TieGoesToZeroAndHandSetWeightsPickClass) {
  Rng rng(4);
  Heads heads(4, 3, rng);
  const Tensor hq = random_tensor({2, 4}, rng, 0.1, 1.0);
  zero(heads.num.w2);
  EXPECT_EQ(condition_number(hq, heads.num), 0u);

  // Identity W1 and a W2 column that only rewards class 2.
  ClassifierWeights w{Tensor::zeros({4, 4}), Tensor::zeros({4, kMaxConditions + 1})};
  for (std::size_t i = 0; i < 4; ++i) w.w1.mutable_data()[i * 4 + i] = 1.0;
  for (std::size_t i = 0; i < 4; ++i) w.w2.mutable_data()[i * (kMaxConditions + 1) + 2] = 1.0;
  EXPECT_EQ(condition_number(hq, w), 2u);
  EXPECT_EQ(condition_number_probs(hq, w).numel(), kMaxConditions + 1);
}

TEST(TopK, OrderingAndTies) {
  const double p[] = {0.3, 0.7};
  EXPECT_EQ(top_k_indices(p, 1), (std::vector<std::size_t>{1}));
  const double tie[] = {0.5, 0.5};
  EXPECT_EQ(top_k_indices(tie, 1), (std::vector<std::size_t>{0}));
  const double many[] = {0.1, 0.4, 0.1, 0.4};
  EXPECT_EQ(top_k_indices(many, 3), (std::vector<std::size_t>{1, 3, 0}));
  EXPECT_TRUE(top_k_indices(many, 0).empty());
  EXPECT_THROW(top_k_indices(tie, 3), ContractError);
  const double arg[] = {2.0, 5.0, 5.0};
  EXPECT_EQ(argmax(arg), 1u);
  EXPECT_THROW(argmax(std::span<const double>{}), ContractError);
}

TEST(WhereColumns, PaddingAndContract) {
  Rng rng(5);
  Heads heads(4, 3, rng);
  const Tensor hq = random_tensor({3, 4}, rng);
  const Tensor hcol = random_tensor({3, 4}, rng);
  const WhereColumns none = where_columns(hq, hcol, heads.where, 0, kMaxConditions);
  EXPECT_TRUE(none.chosen.empty());
  for (double v : none.topcol.data()) EXPECT_EQ(v, 0.0);

  const WhereColumns two = where_columns(hq, hcol, heads.where, 2, kMaxConditions);
  ASSERT_EQ(two.topcol.shape(), (Shape{kMaxConditions, 4}));
  EXPECT_NE(two.chosen[0], two.chosen[1]);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(two.topcol.at(k, j), hcol.at(two.chosen[k], j));
  for (std::size_t k = 2; k < kMaxConditions; ++k)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(two.topcol.at(k, j), 0.0);
  EXPECT_GE(two.probs.at(two.chosen[0]), two.probs.at(two.chosen[1]));
  EXPECT_THROW(where_columns(hq, hcol, heads.where, 4, kMaxConditions), ContractError);
}

TEST(Operators, ZeroOutputIsUniform) {
  Rng rng(6);
  Heads heads(4, 3, rng);
  zero(heads.op.w3);
  const Tensor p = operator_slots(random_tensor({3, 4}, rng), random_tensor({kMaxConditions, 4}, rng), heads.op);
  ASSERT_EQ(p.shape(), (Shape{4, 3}));
  for (double v : p.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(ValueDecoder, ZeroPointerIsUniformAndGreedyTruncates) {
  Rng rng(7);
  Heads heads(4, 3, rng);
  zero(heads.value.pointer().w4);
  const std::size_t q = 4;
  const Tensor hq_end = random_tensor({q + 1, 4}, rng);
  const Tensor column = random_tensor({1, 4}, rng);
  const Tensor p = heads.value.teacher_forced(hq_end, column, random_tensor({3, 3}, rng), false, 0.0, nullptr);
  for (double v : p.data()) EXPECT_NEAR(v, 1.0 / (q + 1), 1e-15);

  // Uniform scores: ties go to position 0, never END, so the cap is hit.
  const DecodedValue d = heads.value.greedy(hq_end, column, random_tensor({q + 1, 3}, rng),
                                            random_tensor({1, 3}, rng), q + 2);
  EXPECT_TRUE(d.truncated);
  EXPECT_EQ(d.positions, std::vector<std::size_t>(q + 2, 0));
}

TEST(ValueDecoder, GreedyStopsAtEnd) {
  Rng rng(8);
  Heads heads(4, 3, rng);
  // Score only depends on the question-state term; END's state is largest.
  const PointerWeights& w = heads.value.pointer();
  zero(w.w1);
  zero(w.w3);
  zero(w.w2);
  zero(w.w4);
  Tensor(w.w2).mutable_data()[0] = 1.0;
  Tensor(w.w4).mutable_data()[0] = 1.0;
  Tensor hq_end = Tensor::from_data({4, 4}, {0.5, 0, 0, 0, 0.9, 0, 0, 0, 0.1, 0, 0, 0, 2.0, 0, 0, 0});
  const DecodedValue d = heads.value.greedy(hq_end, random_tensor({1, 4}, rng), random_tensor({4, 3}, rng),
                                            random_tensor({1, 3}, rng), 5);
  // First step cannot pick END, so position 1 wins; then END.
  EXPECT_FALSE(d.truncated);
  EXPECT_EQ(d.positions, (std::vector<std::size_t>{1}));
}

TEST(Losses, WhereColumnClosedForm) {
  const Tensor p = Tensor::from_data({2}, {0.5, 0.5});
  const std::size_t gold[] = {0};
  EXPECT_NEAR(where_column_loss(p, gold, 3.0).item(), 4.0 * std::log(2.0), 1e-9);

  // gamma = 1 is the plain bernoulli cross-entropy sum.
  Rng rng(9);
  const Tensor q = random_tensor({5}, rng, 0.05, 0.95);
  const std::size_t golds[] = {1, 3};
  double want = 0.0;
  for (std::size_t j = 0; j < 5; ++j) {
    const bool pos = j == 1 || j == 3;
    want -= pos ? std::log(q.at(j)) : std::log(1.0 - q.at(j));
  }
  EXPECT_NEAR(where_column_loss(q, golds, 1.0).item(), want, 1e-12);

  const Tensor perfect = Tensor::from_data({3}, {1.0, 0.0, 1.0});
  const std::size_t both[] = {0, 2};
  EXPECT_LT(where_column_loss(perfect, both, 3.0).item(), 1e-5);
  EXPECT_THROW(where_column_loss(p, std::vector<std::size_t>{2}, 3.0), ContractError);
}

TEST(Losses, CrossEntropyAndMasking) {
  const Tensor p = Tensor::from_data({3}, {0.2, 0.3, 0.5});
  EXPECT_NEAR(cross_entropy(p, 1).item(), -std::log(0.3), 1e-15);
  EXPECT_THROW(cross_entropy(p, 3), ContractError);

  Rng rng(10);
  const Tensor rows = softmax(random_tensor({4, 3}, rng), 1);
  const std::size_t targets[] = {2, 0};
  EXPECT_NEAR(masked_cross_entropy(rows, targets).item(), -std::log(rows.at(0, 2)) - std::log(rows.at(1, 0)),
              1e-14);
  const auto g = tape_grad([&](const Tensor& x) { return masked_cross_entropy(x, targets); }, rows);
  for (std::size_t i = 2 * 3; i < 4 * 3; ++i) EXPECT_EQ(g[i], 0.0);
  EXPECT_EQ(masked_cross_entropy(rows, std::span<const std::size_t>{}).item(), 0.0);
  EXPECT_THROW(masked_cross_entropy(rows, std::vector<std::size_t>{0, 0, 0, 0, 0}), ContractError);
}

TEST(Losses, UniformHeadsGiveLogClassCount) {
  const Tensor six = Tensor::full({6}, 1.0 / 6.0);
  EXPECT_NEAR(cross_entropy(six, 4).item(), std::log(6.0), 1e-12);
  const Tensor ops = Tensor::full({4, 3}, 1.0 / 3.0);
  const std::size_t t[] = {0, 1};
  EXPECT_NEAR(masked_cross_entropy(ops, t).item(), 2.0 * std::log(3.0), 1e-12);
}

TEST(Losses, TotalIsSumOfParts) {
  LossParts parts{Tensor::scalar(1.0), Tensor::scalar(2.0), Tensor::scalar(3.0),
                  Tensor::scalar(4.0), Tensor::scalar(5.0), Tensor::scalar(6.0)};
  EXPECT_DOUBLE_EQ(parts.where().item(), 18.0);
  EXPECT_DOUBLE_EQ(parts.total().item(), 21.0);
  LossParts empty{Tensor::scalar(0.0), Tensor::scalar(0.0), Tensor::scalar(0.0),
                  Tensor::scalar(0.0), Tensor::scalar(0.0), Tensor::scalar(0.0)};
  EXPECT_EQ(empty.total().item(), 0.0);
}

TEST(Pointer, ShapeErrors) {
  Rng rng(11);
  Heads heads(4, 3, rng);
  const PointerWeights& w = heads.value.pointer();
  EXPECT_THROW(pointer_probs(random_tensor({2, 4}, rng), random_tensor({3, 4}, rng), random_tensor({2, 4}, rng), w),
               DimensionError);
  EXPECT_THROW(pointer_probs(Tensor::zeros({0, 4}), random_tensor({3, 4}, rng), random_tensor({1, 4}, rng), w),
               ContractError);
  EXPECT_THROW(padded_rows(random_tensor({3, 4}, rng), std::vector<std::size_t>{0, 1, 2}, 2), ContractError);
}
