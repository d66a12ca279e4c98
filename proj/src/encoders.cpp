#include "nl2sql/encoders.hpp"

#include <cmath>

namespace nl2sql {

LstmWeights make_lstm_weights(ParamSet& params, const std::string& prefix, std::size_t input_dim,
                              std::size_t hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  LstmWeights w;
  w.input_weights = params.add(prefix + ".w_ih", uniform_tensor({input_dim, 4 * hidden}, bound, rng));
  w.recurrent_weights = params.add(prefix + ".w_hh", uniform_tensor({hidden, 4 * hidden}, bound, rng));
  Tensor bias = uniform_tensor({1, 4 * hidden}, bound, rng);
  auto b = bias.mutable_data();
  for (std::size_t i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;
  w.bias = params.add(prefix + ".bias", bias);
  return w;
}

LstmState zero_lstm_state(std::size_t rows, std::size_t hidden) {
  return LstmState{Tensor::zeros({rows, hidden}), Tensor::zeros({rows, hidden})};
}

LstmState lstm_cell_step_projected(const Tensor& projected, const LstmState& prev,
                                   const LstmWeights& w) {
  const std::size_t hidden = w.hidden();
  if (projected.rank() != 2 || projected.dim(1) != 4 * hidden || prev.h.rank() != 2 ||
      prev.h.dim(1) != hidden || prev.c.shape() != prev.h.shape() ||
      prev.h.dim(0) != projected.dim(0)) {
    throw DimensionError("lstm_cell_step: gate pre-activations " +
                         shape_to_string(projected.shape()) + " do not fit state " +
                         shape_to_string(prev.h.shape()) + " with hidden size " +
                         std::to_string(hidden));
  }
  const Tensor gates = add(projected, matmul(prev.h, w.recurrent_weights));
  const Tensor input_gate = sigmoid(slice(gates, 1, 0, hidden));
  const Tensor forget_gate = sigmoid(slice(gates, 1, hidden, hidden));
  const Tensor candidate = tanh(slice(gates, 1, 2 * hidden, hidden));
  const Tensor output_gate = sigmoid(slice(gates, 1, 3 * hidden, hidden));
  Tensor c = add(broadcast_mul(forget_gate, prev.c), broadcast_mul(input_gate, candidate));
  Tensor h = broadcast_mul(output_gate, tanh(c));
  return LstmState{std::move(h), std::move(c)};
}

LstmState lstm_cell_step(const Tensor& x_t, const LstmState& prev, const LstmWeights& w) {
  if (x_t.rank() != 2 || x_t.dim(1) != w.input_dim()) {
    throw DimensionError("lstm_cell_step: input " + shape_to_string(x_t.shape()) +
                         " does not match input size " + std::to_string(w.input_dim()));
  }
  return lstm_cell_step_projected(add(matmul(x_t, w.input_weights), w.bias), prev, w);
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ContractError("dropout: rate must be below 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const double kept_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = keep(rng) ? kept_scale : 0.0;
  return broadcast_mul(x, Tensor::from_data(x.shape(), std::move(mask)));
}

// ---------------------------------------------------------------------------

BiLstm::BiLstm(ParamSet& params, const std::string& prefix, const LstmSpec& spec, Rng& rng)
    : spec_(spec) {
  if (spec.layers == 0 || spec.hidden == 0) throw ContractError("BiLstm: empty spec");
  std::size_t input = spec.input_dim;
  for (std::size_t l = 0; l < spec.layers; ++l) {
    const std::string layer = prefix + ".l" + std::to_string(l);
    forward_.push_back(make_lstm_weights(params, layer + ".fwd", input, spec.hidden, rng));
    if (spec.bidirectional) {
      backward_.push_back(make_lstm_weights(params, layer + ".bwd", input, spec.hidden, rng));
    }
    input = spec.output_dim();
  }
}

BiLstm::Directions BiLstm::run(const Tensor& seq, bool training, Rng* rng) const {
  if (seq.rank() != 2 || seq.dim(0) == 0) {
    throw ContractError("bilstm_encode: expected a non-empty q x d sequence, got " +
                        shape_to_string(seq.shape()));
  }
  if (seq.dim(1) != spec_.input_dim) {
    throw DimensionError("bilstm_encode: feature size " + std::to_string(seq.dim(1)) +
                         " != input size " + std::to_string(spec_.input_dim));
  }
  const std::size_t steps = seq.dim(0);
  Tensor input = seq;
  Directions out;
  for (std::size_t l = 0; l < spec_.layers; ++l) {
    if (l > 0 && training && spec_.dropout > 0.0) {
      if (rng == nullptr) throw ContractError("bilstm_encode: training needs an rng");
      input = dropout(input, spec_.dropout, *rng);
    }
    out.forward.assign(steps, Tensor());
    out.backward.assign(steps, Tensor());
    {
      const LstmWeights& w = forward_[l];
      const Tensor projected = add(matmul(input, w.input_weights), w.bias);
      LstmState state = zero_lstm_state(1, spec_.hidden);
      for (std::size_t t = 0; t < steps; ++t) {
        state = lstm_cell_step_projected(slice(projected, 0, t, 1), state, w);
        out.forward[t] = state.h;
      }
    }
    if (spec_.bidirectional) {
      const LstmWeights& w = backward_[l];
      const Tensor projected = add(matmul(input, w.input_weights), w.bias);
      LstmState state = zero_lstm_state(1, spec_.hidden);
      for (std::size_t t = steps; t-- > 0;) {
        state = lstm_cell_step_projected(slice(projected, 0, t, 1), state, w);
        out.backward[t] = state.h;
      }
    }
    if (l + 1 < spec_.layers) {
      if (spec_.bidirectional) {
        input = concat({concat(out.forward, 0), concat(out.backward, 0)}, 1);
      } else {
        input = concat(out.forward, 0);
      }
    }
  }
  return out;
}

Tensor BiLstm::encode(const Tensor& seq, bool training, Rng* rng) const {
  Directions dirs = run(seq, training, rng);
  if (!spec_.bidirectional) return concat(dirs.forward, 0);
  return concat({concat(dirs.forward, 0), concat(dirs.backward, 0)}, 1);
}

Tensor BiLstm::final_state(const Tensor& seq, bool training, Rng* rng) const {
  Directions dirs = run(seq, training, rng);
  if (!spec_.bidirectional) return dirs.forward.back();
  return concat({dirs.forward.back(), dirs.backward.front()}, 1);
}

// ---------------------------------------------------------------------------

LstmDecoder::LstmDecoder(ParamSet& params, const std::string& prefix, std::size_t input_dim,
                         std::size_t hidden, std::size_t layers, Rng& rng) {
  std::size_t input = input_dim;
  for (std::size_t l = 0; l < layers; ++l) {
    layers_.push_back(make_lstm_weights(params, prefix + ".l" + std::to_string(l), input, hidden, rng));
    input = hidden;
  }
}

std::vector<LstmState> LstmDecoder::initial_state() const {
  std::vector<LstmState> state;
  for (const auto& w : layers_) state.push_back(zero_lstm_state(1, w.hidden()));
  return state;
}

Tensor LstmDecoder::step(const Tensor& x, std::vector<LstmState>& state) const {
  Tensor input = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    state[l] = lstm_cell_step(input, state[l], layers_[l]);
    input = state[l].h;
  }
  return input;
}

Tensor LstmDecoder::run(const Tensor& inputs, bool training, double dropout_rate, Rng* rng) const {
  if (inputs.rank() != 2 || inputs.dim(0) == 0) {
    throw ContractError("decoder: expected a non-empty T x d input, got " +
                        shape_to_string(inputs.shape()));
  }
  Tensor layer_input = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (l > 0 && training && dropout_rate > 0.0) {
      if (rng == nullptr) throw ContractError("decoder: training needs an rng");
      layer_input = dropout(layer_input, dropout_rate, *rng);
    }
    const LstmWeights& w = layers_[l];
    const Tensor projected = add(matmul(layer_input, w.input_weights), w.bias);
    LstmState state = zero_lstm_state(1, w.hidden());
    std::vector<Tensor> outputs;
    outputs.reserve(inputs.dim(0));
    for (std::size_t t = 0; t < inputs.dim(0); ++t) {
      state = lstm_cell_step_projected(slice(projected, 0, t, 1), state, w);
      outputs.push_back(state.h);
    }
    layer_input = concat(outputs, 0);
  }
  return layer_input;
}

}  // namespace nl2sql
