#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nl2sql/encoders.hpp"
#include "nl2sql/params.hpp"
#include "nl2sql/tensor.hpp"

namespace nl2sql {

inline constexpr double kProbabilityFloor = 1e-7;

/// Bi-attention over (items, question) followed by
/// W3 * tanh(W1 * [B_f : B_b] + W2 * items). Shared form of the column-select,
/// where-column and operator heads.
struct SlotScorerWeights {
  Tensor attention;  // h x h
  Tensor w1;         // 2h x h
  Tensor w2;         // h x h
  Tensor w3;         // h x outputs
};

SlotScorerWeights make_slot_scorer(ParamSet& params, const std::string& prefix, std::size_t hidden,
                                   std::size_t outputs, Rng& rng);

// items: n x h (first attention sequence), question: q x h. Returns n x outputs.
Tensor slot_scores(const Tensor& items, const Tensor& question, const SlotScorerWeights& w);

/// W2 * tanh(W1 * H_Q), summed over question tokens.
struct ClassifierWeights {
  Tensor w1;  // h x h
  Tensor w2;  // h x classes
};

ClassifierWeights make_classifier(ParamSet& params, const std::string& prefix, std::size_t hidden,
                                  std::size_t classes, Rng& rng);

Tensor summed_class_logits(const Tensor& hq, const ClassifierWeights& w);  // [classes]

// Lowest index wins ties.
std::size_t argmax(std::span<const double> values);
// Indices of the k largest values, in descending order; ties go to the lower index.
std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k);

Tensor column_select(const Tensor& hq, const Tensor& hcol, const SlotScorerWeights& w);  // [c]
Tensor aggregator_select(const Tensor& hq, const ClassifierWeights& w);                // [6]
Tensor condition_number_probs(const Tensor& hq, const ClassifierWeights& w);           // [N+1]
std::size_t condition_number(const Tensor& hq, const ClassifierWeights& w);

struct WhereColumns {
  Tensor probs;                      // [c]
  std::vector<std::size_t> chosen;   // K column indices
  Tensor topcol;                     // N x h, rows K.. are zero
};

/// Column rows of hcol in the given order, zero-padded to `slots` rows.
Tensor padded_rows(const Tensor& hcol, std::span<const std::size_t> rows, std::size_t slots);

WhereColumns where_columns(const Tensor& hq, const Tensor& hcol, const SlotScorerWeights& w,
                           std::size_t k, std::size_t max_conditions);

Tensor operator_slots(const Tensor& hq, const Tensor& topcol, const SlotScorerWeights& w);  // N x 3

struct PointerWeights {
  Tensor w1;  // h x h, decoder output
  Tensor w2;  // h x h, question states
  Tensor w3;  // h x h, chosen column
  Tensor w4;  // h x 1
};

/// softmax over question positions (including END) of
/// W4 * tanh(W1 * G_o + W2 * H_Q + W3 * H_topcol) for every decoder step.
Tensor pointer_probs(const Tensor& decoder_out, const Tensor& hq_end, const Tensor& column,
                     const PointerWeights& w);  // T x (q+1)

struct DecodedValue {
  std::vector<std::size_t> positions;  // question token positions, END excluded
  bool truncated = false;              // step cap reached before END
};

/// Two-layer unidirectional LSTM decoder with a pointer output layer.
class ValueDecoder {
 public:
  ValueDecoder() = default;
  ValueDecoder(ParamSet& params, const std::string& prefix, std::size_t input_dim,
               std::size_t hidden, std::size_t layers, Rng& rng);

  // inputs: T x d embedded teacher tokens (start token first). Returns T x (q+1).
  Tensor teacher_forced(const Tensor& hq_end, const Tensor& column, const Tensor& inputs,
                        bool training, double dropout_rate, Rng* rng) const;

  // question_end: (q+1) x d embeddings of the question tokens followed by END.
  // The first step never selects END, so every value has at least one token.
  DecodedValue greedy(const Tensor& hq_end, const Tensor& column, const Tensor& question_end,
                      const Tensor& start, std::size_t max_steps) const;

  const PointerWeights& pointer() const { return pointer_; }

 private:
  LstmDecoder lstm_;
  PointerWeights pointer_;
};

/// Per condition slot teacher-forced pointer distributions, one T_k x (q+1)
/// tensor per supervised slot.
std::vector<Tensor> decode_values(const ValueDecoder& decoder, const Tensor& hq_end,
                                  const Tensor& topcol, std::span<const Tensor> slot_inputs,
                                  bool training, double dropout_rate, Rng* rng);

// ---------------------------------------------------------------------------
// Losses. Probabilities are clamped to [1e-7, 1 - 1e-7] before logs.

Tensor cross_entropy(const Tensor& probs, std::size_t target);
// Sum of -log p[row, target[row]] over the first targets.size() rows of a
// rows x classes matrix; remaining rows contribute nothing.
Tensor masked_cross_entropy(const Tensor& probs, std::span<const std::size_t> targets);
Tensor where_column_loss(const Tensor& p_col, std::span<const std::size_t> gold_columns, double gamma);

struct LossParts {
  Tensor agg;
  Tensor sel;
  Tensor cond_num;
  Tensor where_col;
  Tensor op;
  Tensor value;

  Tensor where() const;
  Tensor total() const;
};

}  // namespace nl2sql
