#include "nl2sql/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"
#include "nl2sql/checkpoint.hpp"

namespace nl2sql {

using nlohmann::json;

void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state, std::size_t t,
               const AdamConfig& config) {
  if (t == 0) throw ContractError("adam_step: step counter starts at 1");
  if (grad.size() != param.size()) throw DimensionError("adam_step: gradient and parameter sizes differ");
  if (state.m.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  if (state.m.size() != param.size() || state.v.size() != param.size()) {
    throw DimensionError("adam_step: optimizer state does not match the parameter");
  }
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + config.weight_decay * param[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    param[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

Adam::Adam(ParamSet& params, AdamConfig config)
    : params_(&params), config_(config), states_(params.entries().size()) {}

void Adam::step() {
  ++t_;
  auto& entries = params_->entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& p = entries[i].tensor;
    if (!p.requires_grad()) continue;
    adam_step(p.mutable_data(), p.grad(), states_[i], t_, config_);
  }
}

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  if (!(adam.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (adam.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs_phase1 + epochs_phase2 == 0) throw ConfigError("at least one epoch is required");
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
  model.validate();
}

TrainConfig TrainConfig::from_json(std::string_view text) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!obj.is_object()) throw ConfigError("config must be a JSON object");
  static const char* const kKnown[] = {
      "learning_rate", "weight_decay",  "batch_size",   "epochs_phase1", "epochs_phase2", "eval_every",
      "dropout",       "hidden",        "layers",       "max_conditions", "gamma",        "seed",
      "word_dim",      "char_dim",      "char_channels", "kernel_widths", "max_word_length",
      "train_data",    "train_tables",  "dev_data",     "dev_tables",    "word_vectors",  "char_vectors",
      "checkpoint_dir"};
  for (const auto& [key, value] : obj.items()) {
    if (std::find_if(std::begin(kKnown), std::end(kKnown), [&](const char* k) { return key == k; }) ==
        std::end(kKnown)) {
      throw ConfigError("unknown config field '" + key + "'");
    }
  }
  TrainConfig c;
  try {
    c.adam.learning_rate = obj.value("learning_rate", c.adam.learning_rate);
    c.adam.weight_decay = obj.value("weight_decay", c.adam.weight_decay);
    c.batch_size = obj.value("batch_size", c.batch_size);
    c.epochs_phase1 = obj.value("epochs_phase1", c.epochs_phase1);
    c.epochs_phase2 = obj.value("epochs_phase2", c.epochs_phase2);
    c.eval_every = obj.value("eval_every", c.eval_every);
    ModelConfig& m = c.model;
    m.dropout = obj.value("dropout", m.dropout);
    m.hidden = obj.value("hidden", m.hidden);
    m.layers = obj.value("layers", m.layers);
    m.max_conditions = obj.value("max_conditions", m.max_conditions);
    m.gamma = obj.value("gamma", m.gamma);
    m.seed = obj.value("seed", m.seed);
    m.word_dim = obj.value("word_dim", m.word_dim);
    m.char_cnn.char_dim = obj.value("char_dim", m.char_cnn.char_dim);
    m.char_cnn.channels = obj.value("char_channels", m.char_cnn.channels);
    m.char_cnn.kernel_widths = obj.value("kernel_widths", m.char_cnn.kernel_widths);
    m.char_cnn.max_word_length = obj.value("max_word_length", m.char_cnn.max_word_length);
    c.train_data = obj.value("train_data", "");
    c.train_tables = obj.value("train_tables", "");
    c.dev_data = obj.value("dev_data", "");
    c.dev_tables = obj.value("dev_tables", "");
    c.word_vectors = obj.value("word_vectors", "");
    c.char_vectors = obj.value("char_vectors", "");
    c.checkpoint_dir = obj.value("checkpoint_dir", "");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config field: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainConfig::to_json() const {
  json obj{{"learning_rate", adam.learning_rate},
           {"weight_decay", adam.weight_decay},
           {"batch_size", batch_size},
           {"epochs_phase1", epochs_phase1},
           {"epochs_phase2", epochs_phase2},
           {"eval_every", eval_every},
           {"dropout", model.dropout},
           {"hidden", model.hidden},
           {"layers", model.layers},
           {"max_conditions", model.max_conditions},
           {"gamma", model.gamma},
           {"seed", model.seed},
           {"word_dim", model.word_dim},
           {"char_dim", model.char_cnn.char_dim},
           {"char_channels", model.char_cnn.channels},
           {"kernel_widths", model.char_cnn.kernel_widths},
           {"max_word_length", model.char_cnn.max_word_length},
           {"train_data", train_data},
           {"train_tables", train_tables},
           {"dev_data", dev_data},
           {"dev_tables", dev_tables},
           {"word_vectors", word_vectors},
           {"char_vectors", char_vectors},
           {"checkpoint_dir", checkpoint_dir}};
  return obj.dump(2);
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

double norm_of(std::span<const double> values) {
  double sum = 0.0;
  for (double v : values) sum += v * v;
  return std::sqrt(sum);
}

double char_grad_norm(const EmbeddingLayer& embed) {
  double sum = 0.0;
  auto accumulate = [&](const Tensor& t) {
    const double n = norm_of(t.grad());
    sum += n * n;
  };
  accumulate(embed.char_table());
  accumulate(embed.cnn().projection);
  for (const auto& k : embed.cnn().kernels) accumulate(k);
  for (const auto& b : embed.cnn().biases) accumulate(b);
  return std::sqrt(sum);
}

void zero_padding_row(const Tensor& table) {
  if (!table.requires_grad()) return;
  auto grad = const_cast<Tensor&>(table).mutable_grad();
  std::fill_n(grad.begin(), table.dim(1), 0.0);
}

}  // namespace

Trainer::Trainer(Model& model, const TrainConfig& config, Dataset train, std::optional<Dataset> dev)
    : model_(&model), config_(config), dev_(dev), adam_(model.params(), config.adam), rng_(config.model.seed) {
  config_.validate();
  if (train.examples == nullptr || train.tables == nullptr || train.examples->empty()) {
    throw ConfigError("training set is empty");
  }
  std::map<std::string, std::size_t, std::less<>> table_index;
  tables_.reserve(train.tables->size());
  for (const auto& [id, table] : *train.tables) {
    table_index.emplace(id, tables_.size());
    tables_.push_back(model.prepare_table(table));
  }
  prepared_.reserve(train.examples->size());
  for (std::size_t i = 0; i < train.examples->size(); ++i) {
    const Example& ex = (*train.examples)[i];
    const auto it = table_index.find(ex.table_id);
    if (it == table_index.end()) {
      throw SchemaError("training example " + std::to_string(i + 1) + " names unknown table_id '" +
                        ex.table_id + "'", i + 1);
    }
    prepared_.push_back(model.prepare(ex.question, tables_[it->second], &ex.gold));
  }
}

BatchStats Trainer::train_batch(std::span<const std::size_t> batch) {
  BatchStats stats;
  ParamSet& params = model_->params();
  params.zero_grad();
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (std::size_t index : batch) {
    const PreparedExample& ex = prepared_.at(index);
    GradTape tape;
    const LossParts parts = model_->loss(ex, /*training=*/true, &rng_);
    const Tensor total = parts.total();
    const double value = total.item();
    if (!std::isfinite(value)) {
      std::string dump = "non-finite loss in batch:";
      for (std::size_t j : batch) dump += "\n  #" + std::to_string(j) + " " + prepared_[j].question;
      dump += "\noffending example #" + std::to_string(index) + ": agg=" +
              std::to_string(parts.agg.item()) + " sel=" + std::to_string(parts.sel.item()) +
              " cond_num=" + std::to_string(parts.cond_num.item()) + " where_col=" +
              std::to_string(parts.where_col.item()) + " op=" + std::to_string(parts.op.item()) +
              " value=" + std::to_string(parts.value.item());
      throw TrainingError(dump);
    }
    stats.loss += value * weight;
    tape.backward(scale(total, weight));
  }
  const EmbeddingLayer& embed = model_->embeddings();
  zero_padding_row(embed.word_table());
  zero_padding_row(embed.char_table());
  stats.word_grad_norm = norm_of(embed.word_table().grad());
  stats.char_grad_norm = char_grad_norm(embed);
  adam_.step();
  return stats;
}

EpochLog Trainer::run_epoch(int phase) {
  model_->embeddings().set_word_trainable(phase != 1);
  EpochLog log;
  log.epoch = ++epoch_;
  log.phase = phase;
  std::vector<std::size_t> order(prepared_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng_);
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
    const std::size_t len = std::min(config_.batch_size, order.size() - start);
    const BatchStats stats = train_batch(std::span(order).subspan(start, len));
    total += stats.loss * static_cast<double>(len);
    log.max_word_grad_norm = std::max(log.max_word_grad_norm, stats.word_grad_norm);
    log.max_char_grad_norm = std::max(log.max_char_grad_norm, stats.char_grad_norm);
  }
  log.loss = total / static_cast<double>(order.size());
  if (dev_ && dev_->examples != nullptr && !dev_->examples->empty() && log.epoch % config_.eval_every == 0) {
    log.dev = evaluate(*model_, *dev_->examples, *dev_->tables);
  }
  return log;
}

std::vector<EpochLog> Trainer::run(const std::function<void(const EpochLog&)>& on_epoch) {
  std::vector<EpochLog> logs;
  for (std::size_t e = 0; e < config_.epochs_phase1 + config_.epochs_phase2; ++e) {
    logs.push_back(run_epoch(e < config_.epochs_phase1 ? 1 : 2));
    if (on_epoch) on_epoch(logs.back());
  }
  return logs;
}

// ---------------------------------------------------------------------------

namespace {

PretrainedVectors read_vectors(const std::string& path, std::size_t dim, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open vectors file " + path);
  return load_pretrained_vectors(in, dim, &vocab);
}

}  // namespace

TrainSummary train(const TrainConfig& config, const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (config.train_data.empty() || config.train_tables.empty()) {
    throw ConfigError("train_data and train_tables are required");
  }
  const TableMap train_tables = load_tables_file(config.train_tables);
  const std::vector<Example> train_examples = load_examples_file(config.train_data, train_tables);
  TableMap dev_tables;
  std::vector<Example> dev_examples;
  if (!config.dev_data.empty()) {
    dev_tables = load_tables_file(config.dev_tables.empty() ? config.train_tables : config.dev_tables);
    dev_examples = load_examples_file(config.dev_data, dev_tables);
  }

  std::vector<Example> all = train_examples;
  all.insert(all.end(), dev_examples.begin(), dev_examples.end());
  TableMap all_tables = train_tables;
  all_tables.insert(dev_tables.begin(), dev_tables.end());
  Vocab words = build_word_vocab(all, all_tables);
  Vocab chars = build_char_vocab(words);

  Rng rng(config.model.seed);
  std::optional<Tensor> word_table;
  if (!config.word_vectors.empty()) {
    word_table = read_vectors(config.word_vectors, config.model.word_dim, words).matrix;
  }
  std::optional<PretrainedVectors> char_vectors;
  if (!config.char_vectors.empty()) {
    char_vectors = read_vectors(config.char_vectors, config.model.char_cnn.char_dim, chars);
  }
  Tensor char_table = init_char_table(chars, config.model.char_cnn.char_dim,
                                      char_vectors ? &*char_vectors : nullptr, rng);

  Model model(config.model, std::move(words), std::move(chars), word_table, char_table);
  std::optional<Dataset> dev;
  if (!dev_examples.empty()) dev = Dataset{&dev_examples, &dev_tables};
  Trainer trainer(model, config, Dataset{&train_examples, &train_tables}, dev);

  TrainSummary summary;
  const std::filesystem::path dir = config.checkpoint_dir;
  std::map<std::string, double> best;
  auto keep = [&](const std::string& name, double score, const EpochLog& log) {
    auto it = best.find(name);
    if (it != best.end() && score <= it->second) return;
    best[name] = score;
    if (!dir.empty()) {
      save_checkpoint(model, dir / name, Dtype::kFloat64,
                      json{{"epoch", log.epoch}, {"phase", log.phase}, {"score", score}}.dump());
    }
  };
  summary.epochs = trainer.run([&](const EpochLog& log) {
    if (log.dev) {
      keep("best_agg", log.dev->acc_agg(), log);
      keep("best_sel", log.dev->acc_sel(), log);
      keep("best_where", log.dev->acc_where(), log);
      if (!summary.best_dev || log.dev->lf_match() > summary.best_dev->lf_match()) summary.best_dev = log.dev;
      keep("best_overall", log.dev->lf_match(), log);
    }
    if (on_epoch) on_epoch(log);
  });
  if (!dir.empty()) {
    const EpochLog& last = summary.epochs.back();
    save_checkpoint(model, dir / "last", Dtype::kFloat64,
                    json{{"epoch", last.epoch}, {"phase", last.phase}, {"loss", last.loss}}.dump());
  }
  return summary;
}

}  // namespace nl2sql
