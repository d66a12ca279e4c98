#pragma once

#include <string>
#include <vector>

#include "nl2sql/params.hpp"
#include "nl2sql/tensor.hpp"

namespace nl2sql {

struct LstmSpec {
  std::size_t input_dim = 300;
  std::size_t hidden = 50;  // per direction
  std::size_t layers = 2;
  double dropout = 0.3;     // between layers, training only
  bool bidirectional = true;

  std::size_t output_dim() const { return bidirectional ? 2 * hidden : hidden; }
};

/// One layer, one direction. Gate blocks are ordered input, forget,
/// candidate, output along the 4*hidden axis.
struct LstmWeights {
  Tensor input_weights;      // input_dim x 4H
  Tensor recurrent_weights;  // H x 4H
  Tensor bias;               // 1 x 4H

  std::size_t hidden() const { return recurrent_weights.dim(0); }
  std::size_t input_dim() const { return input_weights.dim(0); }
};

struct LstmState {
  Tensor h;  // rows x H
  Tensor c;
};

// uniform(-1/sqrt(H), 1/sqrt(H)) everywhere, forget-gate bias 1.
LstmWeights make_lstm_weights(ParamSet& params, const std::string& prefix, std::size_t input_dim,
                              std::size_t hidden, Rng& rng);

LstmState zero_lstm_state(std::size_t rows, std::size_t hidden);

LstmState lstm_cell_step(const Tensor& x_t, const LstmState& prev, const LstmWeights& w);
// Same step when x_t * input_weights + bias has already been computed.
LstmState lstm_cell_step_projected(const Tensor& projected, const LstmState& prev,
                                   const LstmWeights& w);

// Inverted dropout; identity when rate is 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

/// Multi-layer bidirectional LSTM. Row t of the output is the concatenation of
/// the forward state at t and the backward state at t of the top layer.
class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(ParamSet& params, const std::string& prefix, const LstmSpec& spec, Rng& rng);

  // rng may be null when training is false.
  Tensor encode(const Tensor& seq, bool training, Rng* rng) const;
  // [forward state after the last step : backward state after the first step].
  Tensor final_state(const Tensor& seq, bool training, Rng* rng) const;

  const LstmSpec& spec() const { return spec_; }

 private:
  struct Directions {
    std::vector<Tensor> forward;   // per step, 1 x H
    std::vector<Tensor> backward;  // per step (original order), 1 x H
  };
  Directions run(const Tensor& seq, bool training, Rng* rng) const;

  LstmSpec spec_;
  std::vector<LstmWeights> forward_;
  std::vector<LstmWeights> backward_;
};

/// Multi-layer unidirectional LSTM driven one step at a time.
class LstmDecoder {
 public:
  LstmDecoder() = default;
  LstmDecoder(ParamSet& params, const std::string& prefix, std::size_t input_dim,
              std::size_t hidden, std::size_t layers, Rng& rng);

  std::vector<LstmState> initial_state() const;
  // Returns the top-layer hidden state (1 x H).
  Tensor step(const Tensor& x, std::vector<LstmState>& state) const;
  // Teacher-forced run over T input rows; returns T x H.
  Tensor run(const Tensor& inputs, bool training, double dropout_rate, Rng* rng) const;

  std::size_t hidden() const { return layers_.empty() ? 0 : layers_.front().hidden(); }

 private:
  std::vector<LstmWeights> layers_;
};

}  // namespace nl2sql
