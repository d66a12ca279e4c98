#include "nl2sql/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nl2sql/bi_attention.hpp"

namespace nl2sql {

namespace {

Tensor init_matrix(ParamSet& params, const std::string& name, std::size_t rows, std::size_t cols,
                   Rng& rng) {
  return params.add(name, uniform_tensor({rows, cols}, 1.0 / std::sqrt(static_cast<double>(rows)), rng));
}

void require_rows(const Tensor& t, const char* what, const char* op) {
  if (t.rank() != 2 || t.dim(0) == 0) {
    throw ContractError(std::string(op) + ": " + what + " must be a non-empty 2-D tensor, got " +
                        shape_to_string(t.shape()));
  }
}

}  // namespace

SlotScorerWeights make_slot_scorer(ParamSet& params, const std::string& prefix, std::size_t hidden,
                                   std::size_t outputs, Rng& rng) {
  SlotScorerWeights w;
  w.attention = make_biattention_weights(params, prefix + ".attn", hidden, rng);
  w.w1 = init_matrix(params, prefix + ".w1", 2 * hidden, hidden, rng);
  w.w2 = init_matrix(params, prefix + ".w2", hidden, hidden, rng);
  w.w3 = init_matrix(params, prefix + ".w3", hidden, outputs, rng);
  return w;
}

Tensor slot_scores(const Tensor& items, const Tensor& question, const SlotScorerWeights& w) {
  const BiAttnOutput attn = biattend(items, question, w.attention);
  const Tensor joined = concat({attn.forward, attn.backward}, 1);
  const Tensor hidden = tanh(add(matmul(joined, w.w1), matmul(items, w.w2)));
  return matmul(hidden, w.w3);
}

ClassifierWeights make_classifier(ParamSet& params, const std::string& prefix, std::size_t hidden,
                                  std::size_t classes, Rng& rng) {
  ClassifierWeights w;
  w.w1 = init_matrix(params, prefix + ".w1", hidden, hidden, rng);
  w.w2 = init_matrix(params, prefix + ".w2", hidden, classes, rng);
  return w;
}

Tensor summed_class_logits(const Tensor& hq, const ClassifierWeights& w) {
  require_rows(hq, "question states", "classifier");
  return reduce_sum(matmul(tanh(matmul(hq, w.w1)), w.w2), 0);
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ContractError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k) {
  if (k > values.size()) {
    throw ContractError("top_k: k=" + std::to_string(k) + " exceeds " + std::to_string(values.size()) +
                        " candidates");
  }
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  order.resize(k);
  return order;
}

Tensor column_select(const Tensor& hq, const Tensor& hcol, const SlotScorerWeights& w) {
  require_rows(hq, "question states", "column_select");
  require_rows(hcol, "column states", "column_select");
  const Tensor logits = slot_scores(hcol, hq, w);
  return softmax(reshape(logits, {hcol.dim(0)}), 0);
}

Tensor aggregator_select(const Tensor& hq, const ClassifierWeights& w) {
  return softmax(summed_class_logits(hq, w), 0);
}

Tensor condition_number_probs(const Tensor& hq, const ClassifierWeights& w) {
  return softmax(summed_class_logits(hq, w), 0);
}

std::size_t condition_number(const Tensor& hq, const ClassifierWeights& w) {
  return argmax(summed_class_logits(hq, w).data());
}

Tensor padded_rows(const Tensor& hcol, std::span<const std::size_t> rows, std::size_t slots) {
  if (rows.size() > slots) {
    throw ContractError("padded_rows: " + std::to_string(rows.size()) + " rows exceed " +
                        std::to_string(slots) + " slots");
  }
  const std::size_t hidden = hcol.dim(1);
  if (rows.empty()) return Tensor::zeros({slots, hidden});
  Tensor chosen = gather_rows(hcol, rows);
  if (rows.size() == slots) return chosen;
  return concat({chosen, Tensor::zeros({slots - rows.size(), hidden})}, 0);
}

WhereColumns where_columns(const Tensor& hq, const Tensor& hcol, const SlotScorerWeights& w,
                           std::size_t k, std::size_t max_conditions) {
  require_rows(hcol, "column states", "where_columns");
  if (k > hcol.dim(0) || k > max_conditions) {
    throw ContractError("where_columns: K=" + std::to_string(k) + " exceeds " +
                        std::to_string(hcol.dim(0)) + " columns or " +
                        std::to_string(max_conditions) + " slots");
  }
  WhereColumns out;
  out.probs = column_select(hq, hcol, w);
  out.chosen = top_k_indices(out.probs.data(), k);
  out.topcol = padded_rows(hcol, out.chosen, max_conditions);
  return out;
}

Tensor operator_slots(const Tensor& hq, const Tensor& topcol, const SlotScorerWeights& w) {
  require_rows(hq, "question states", "operator_slots");
  require_rows(topcol, "slot columns", "operator_slots");
  return softmax(slot_scores(topcol, hq, w), 1);
}

Tensor pointer_probs(const Tensor& decoder_out, const Tensor& hq_end, const Tensor& column,
                     const PointerWeights& w) {
  require_rows(decoder_out, "decoder states", "pointer");
  require_rows(hq_end, "question states", "pointer");
  if (column.rank() != 2 || column.dim(0) != 1) {
    throw DimensionError("pointer: column must be 1 x h, got " + shape_to_string(column.shape()));
  }
  const std::size_t steps = decoder_out.dim(0);
  const std::size_t positions = hq_end.dim(0);
  const std::size_t hidden = w.w1.dim(1);
  const Tensor from_decoder = reshape(matmul(decoder_out, w.w1), {steps, 1, hidden});
  const Tensor from_question = reshape(matmul(hq_end, w.w2), {1, positions, hidden});
  const Tensor from_column = reshape(matmul(column, w.w3), {1, 1, hidden});
  const Tensor joint = tanh(add(add(from_decoder, from_question), from_column));
  const Tensor scores = matmul(reshape(joint, {steps * positions, hidden}), w.w4);
  return softmax(reshape(scores, {steps, positions}), 1);
}

ValueDecoder::ValueDecoder(ParamSet& params, const std::string& prefix, std::size_t input_dim,
                           std::size_t hidden, std::size_t layers, Rng& rng)
    : lstm_(params, prefix + ".lstm", input_dim, hidden, layers, rng) {
  pointer_.w1 = init_matrix(params, prefix + ".w1", hidden, hidden, rng);
  pointer_.w2 = init_matrix(params, prefix + ".w2", hidden, hidden, rng);
  pointer_.w3 = init_matrix(params, prefix + ".w3", hidden, hidden, rng);
  pointer_.w4 = init_matrix(params, prefix + ".w4", hidden, 1, rng);
}

Tensor ValueDecoder::teacher_forced(const Tensor& hq_end, const Tensor& column, const Tensor& inputs,
                                    bool training, double dropout_rate, Rng* rng) const {
  return pointer_probs(lstm_.run(inputs, training, dropout_rate, rng), hq_end, column, pointer_);
}

DecodedValue ValueDecoder::greedy(const Tensor& hq_end, const Tensor& column,
                                  const Tensor& question_end, const Tensor& start,
                                  std::size_t max_steps) const {
  DecodedValue value;
  const std::size_t end_position = hq_end.dim(0) - 1;
  std::vector<LstmState> state = lstm_.initial_state();
  Tensor input = start;
  for (std::size_t step = 0; step < max_steps; ++step) {
    const Tensor out = lstm_.step(input, state);
    const Tensor probs = pointer_probs(out, hq_end, column, pointer_);
    auto scores = probs.data();
    std::size_t pick = argmax(step == 0 ? scores.first(end_position) : scores);
    if (pick == end_position) return value;
    value.positions.push_back(pick);
    input = slice(question_end, 0, pick, 1);
  }
  value.truncated = true;
  return value;
}

std::vector<Tensor> decode_values(const ValueDecoder& decoder, const Tensor& hq_end,
                                  const Tensor& topcol, std::span<const Tensor> slot_inputs,
                                  bool training, double dropout_rate, Rng* rng) {
  if (slot_inputs.size() > topcol.dim(0)) {
    throw ContractError("decode_values: more supervised slots than condition slots");
  }
  std::vector<Tensor> out;
  out.reserve(slot_inputs.size());
  for (std::size_t k = 0; k < slot_inputs.size(); ++k) {
    out.push_back(decoder.teacher_forced(hq_end, slice(topcol, 0, k, 1), slot_inputs[k], training,
                                         dropout_rate, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor cross_entropy(const Tensor& probs, std::size_t target) {
  if (target >= probs.numel()) {
    throw ContractError("cross_entropy: target " + std::to_string(target) + " out of range for " +
                        std::to_string(probs.numel()) + " classes");
  }
  const std::size_t picked[] = {target};
  const Tensor p = gather_rows(reshape(probs, {probs.numel(), 1}), picked);
  return neg(sum_all(log(clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor))));
}

Tensor masked_cross_entropy(const Tensor& probs, std::span<const std::size_t> targets) {
  if (probs.rank() != 2 || targets.size() > probs.dim(0)) {
    throw ContractError("masked_cross_entropy: " + std::to_string(targets.size()) +
                        " targets for probabilities " + shape_to_string(probs.shape()));
  }
  if (targets.empty()) return Tensor::scalar(0.0);
  const std::size_t classes = probs.dim(1);
  std::vector<std::size_t> flat;
  flat.reserve(targets.size());
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] >= classes) throw ContractError("masked_cross_entropy: target out of range");
    flat.push_back(r * classes + targets[r]);
  }
  const Tensor p = gather_rows(reshape(probs, {probs.numel(), 1}), flat);
  return neg(sum_all(log(clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor))));
}

Tensor where_column_loss(const Tensor& p_col, std::span<const std::size_t> gold_columns, double gamma) {
  const std::size_t c = p_col.numel();
  std::vector<double> positive(c, 0.0);
  std::vector<double> negative(c, 1.0);
  for (std::size_t col : gold_columns) {
    if (col >= c) throw ContractError("where_column_loss: gold column out of range");
    positive[col] = gamma;
    negative[col] = 0.0;
  }
  const Tensor p = clamp(reshape(p_col, {c}), kProbabilityFloor, 1.0 - kProbabilityFloor);
  const Tensor log_p = log(p);
  const Tensor log_not_p = log(sub(Tensor::scalar(1.0), p));
  const Tensor terms = add(broadcast_mul(Tensor::from_data({c}, std::move(positive)), log_p),
                           broadcast_mul(Tensor::from_data({c}, std::move(negative)), log_not_p));
  return neg(sum_all(terms));
}

Tensor LossParts::where() const { return add(add(add(cond_num, where_col), op), value); }

Tensor LossParts::total() const { return add(add(agg, sel), where()); }

}  // namespace nl2sql
