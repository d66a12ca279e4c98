#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nl2sql/metrics.hpp"
#include "nl2sql/model.hpp"

namespace nl2sql {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update of `param` at step t >= 1. Weight decay is
/// added to the gradient as an L2 term.
void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state, std::size_t t,
               const AdamConfig& config);

/// Adam over every parameter of a set that currently requires gradients.
class Adam {
 public:
  Adam(ParamSet& params, AdamConfig config);
  void step();
  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  ParamSet* params_;
  AdamConfig config_;
  std::vector<AdamState> states_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 64;
  std::size_t epochs_phase1 = 100;  // word embeddings frozen
  std::size_t epochs_phase2 = 100;  // everything trainable
  std::size_t eval_every = 1;
  ModelConfig model;

  std::string train_data;
  std::string train_tables;
  std::string dev_data;
  std::string dev_tables;
  std::string word_vectors;
  std::string char_vectors;
  std::string checkpoint_dir;

  void validate() const;
  static TrainConfig from_json(std::string_view text);
  std::string to_json() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BatchStats {
  double loss = 0.0;              // mean over the batch
  double word_grad_norm = 0.0;    // word embedding table
  double char_grad_norm = 0.0;    // character table and character CNN
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based, across both phases
  int phase = 1;
  double loss = 0.0;      // mean example loss
  double max_word_grad_norm = 0.0;
  double max_char_grad_norm = 0.0;
  std::optional<Metrics> dev;
};

struct Dataset {
  const std::vector<Example>* examples = nullptr;
  const TableMap* tables = nullptr;
};

/// Runs the two-phase schedule on a built model. `on_epoch` sees every epoch
/// log after it is complete (and after dev evaluation).
class Trainer {
 public:
  Trainer(Model& model, const TrainConfig& config, Dataset train, std::optional<Dataset> dev = {});
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  BatchStats train_batch(std::span<const std::size_t> batch);
  EpochLog run_epoch(int phase);
  std::vector<EpochLog> run(const std::function<void(const EpochLog&)>& on_epoch = {});

  std::size_t epoch() const { return epoch_; }
  const std::vector<PreparedExample>& prepared() const { return prepared_; }

 private:
  Model* model_;
  TrainConfig config_;
  std::optional<Dataset> dev_;
  std::vector<PreparedTable> tables_;
  std::vector<PreparedExample> prepared_;
  Adam adam_;
  Rng rng_;
  std::size_t epoch_ = 0;
};

struct TrainSummary {
  std::vector<EpochLog> epochs;
  std::optional<Metrics> best_dev;
};

/// Loads data and vectors, builds the model, trains and writes checkpoints to
/// config.checkpoint_dir: last/, best_agg/, best_sel/, best_where/ and
/// best_overall/ (by dev query-string match).
TrainSummary train(const TrainConfig& config, const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace nl2sql
