#include "nl2sql/model.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace nl2sql {

using nlohmann::json;

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  char_cnn.validate();
  if (hidden == 0 || hidden % 2 != 0) throw ConfigError("hidden size must be a positive even number");
  if (word_dim != char_cnn.output_dim()) {
    throw ConfigError("word dimension " + std::to_string(word_dim) + " must equal channels x kernels = " +
                      std::to_string(char_cnn.output_dim()));
  }
  if (layers == 0) throw ConfigError("at least one LSTM layer is required");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (max_conditions == 0) throw ConfigError("max_conditions must be positive");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
}

std::string ModelConfig::to_json() const {
  json obj{{"word_dim", word_dim},
           {"char_dim", char_cnn.char_dim},
           {"char_channels", char_cnn.channels},
           {"kernel_widths", char_cnn.kernel_widths},
           {"max_word_length", char_cnn.max_word_length},
           {"hidden", hidden},
           {"layers", layers},
           {"dropout", dropout},
           {"max_conditions", max_conditions},
           {"gamma", gamma},
           {"seed", seed}};
  return obj.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  const json obj = json::parse(text);
  ModelConfig c;
  c.word_dim = obj.value("word_dim", c.word_dim);
  c.char_cnn.char_dim = obj.value("char_dim", c.char_cnn.char_dim);
  c.char_cnn.channels = obj.value("char_channels", c.char_cnn.channels);
  c.char_cnn.kernel_widths = obj.value("kernel_widths", c.char_cnn.kernel_widths);
  c.char_cnn.max_word_length = obj.value("max_word_length", c.char_cnn.max_word_length);
  c.hidden = obj.value("hidden", c.hidden);
  c.layers = obj.value("layers", c.layers);
  c.dropout = obj.value("dropout", c.dropout);
  c.max_conditions = obj.value("max_conditions", c.max_conditions);
  c.gamma = obj.value("gamma", c.gamma);
  c.seed = obj.value("seed", c.seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Vocabulary helpers

Vocab build_word_vocab(const std::vector<Example>& examples, const TableMap& tables) {
  Vocab vocab;
  for (const auto& [id, table] : tables) {
    for (const auto& header : table.headers) {
      for (const auto& token : tokenize(header)) vocab.add(token);
    }
  }
  for (const auto& ex : examples) {
    for (const auto& token : ex.tokens) vocab.add(token);
  }
  return vocab;
}

Vocab build_char_vocab(const Vocab& words) {
  Vocab chars;
  for (const auto& token : words.tokens()) {
    for (char c : token) chars.add(std::string_view(&c, 1));
  }
  return chars;
}

Tensor init_char_table(const Vocab& chars, std::size_t dim, const PretrainedVectors* vectors, Rng& rng) {
  Tensor table = uniform_tensor({chars.size(), dim}, 0.1, rng);
  auto values = table.mutable_data();
  std::fill_n(values.begin(), dim, 0.0);
  if (vectors != nullptr) {
    if (vectors->dim != dim || vectors->vocab.size() != chars.size()) {
      throw ConfigError("character vectors do not match the character vocabulary");
    }
    const auto source = vectors->matrix.data();
    for (std::size_t row = Vocab::kNumSpecials; row < chars.size(); ++row) {
      const auto begin = source.begin() + static_cast<std::ptrdiff_t>(row * dim);
      if (std::any_of(begin, begin + static_cast<std::ptrdiff_t>(dim), [](double v) { return v != 0.0; })) {
        std::copy_n(begin, dim, values.begin() + static_cast<std::ptrdiff_t>(row * dim));
      }
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelConfig config, Vocab words, Vocab chars, std::optional<Tensor> word_table,
             std::optional<Tensor> char_table)
    : config_(std::move(config)), words_(std::move(words)), chars_(std::move(chars)) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t d = config_.word_dim;
  const std::size_t h = config_.hidden;
  Tensor words_init = word_table ? word_table->clone() : Tensor::zeros({words_.size(), d});
  if (words_init.shape() != Shape{words_.size(), d}) {
    throw ConfigError("word table " + shape_to_string(words_init.shape()) + " does not match vocabulary " +
                      std::to_string(words_.size()) + " x " + std::to_string(d));
  }
  Tensor chars_init = char_table ? char_table->clone()
                                 : init_char_table(chars_, config_.char_cnn.char_dim, nullptr, rng);
  embed_ = EmbeddingLayer(params_, std::move(words_init), std::move(chars_init), config_.char_cnn, rng);

  LstmSpec question_spec{d, h / 2, config_.layers, config_.dropout, true};
  auto bilstm = [&](const std::string& name) { return BiLstm(params_, name, question_spec, rng); };

  select_.question = bilstm("sel.question");
  select_.columns = bilstm("sel.columns");
  select_.scorer = make_slot_scorer(params_, "sel.scorer", h, 1, rng);

  aggregator_.question = bilstm("agg.question");
  aggregator_.classifier = make_classifier(params_, "agg", h, kNumAggregators, rng);

  cond_num_.question = bilstm("cond_num.question");
  cond_num_.classifier = make_classifier(params_, "cond_num", h, config_.max_conditions + 1, rng);

  where_col_.question = bilstm("where_col.question");
  where_col_.columns = bilstm("where_col.columns");
  where_col_.scorer = make_slot_scorer(params_, "where_col.scorer", h, 1, rng);

  operator_.question = bilstm("op.question");
  operator_.scorer = make_slot_scorer(params_, "op.scorer", h, kNumOperators, rng);

  value_.question = bilstm("value.question");
  value_.decoder = ValueDecoder(params_, "value.decoder", d, h, config_.layers, rng);
}

EncodedText Model::encode_tokens(std::span<const std::string> tokens) const {
  EncodedText out;
  out.ids.reserve(tokens.size());
  for (const auto& t : tokens) out.ids.push_back(words_.index_of(t));
  out.chars = make_char_grid(tokens, chars_, config_.char_cnn.max_word_length);
  return out;
}

PreparedTable Model::prepare_table(const TableSchema& table) const {
  PreparedTable out;
  out.schema = &table;
  std::vector<std::string> all;
  for (const auto& header : table.headers) {
    auto tokens = tokenize(header);
    if (tokens.empty()) tokens.push_back(Vocab::pad_token());
    out.offsets.push_back(all.size());
    out.lengths.push_back(tokens.size());
    all.insert(all.end(), tokens.begin(), tokens.end());
  }
  out.tokens = encode_tokens(all);
  // The padding token always embeds as id 0 with no characters.
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i] == Vocab::pad_token()) {
      out.tokens.ids[i] = Vocab::kPad;
      out.tokens.chars.lengths[i] = 0;
      std::fill_n(out.tokens.chars.ids.begin() + static_cast<std::ptrdiff_t>(i * out.tokens.chars.width),
                  out.tokens.chars.width, Vocab::kPad);
    }
  }
  return out;
}

namespace {

std::optional<std::size_t> find_span(const std::vector<Token>& haystack,
                                     const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return std::nullopt;
  for (std::size_t start = 0; start + needle.size() <= haystack.size(); ++start) {
    bool match = true;
    for (std::size_t j = 0; j < needle.size() && match; ++j) {
      match = haystack[start + j].text == needle[j];
    }
    if (match) return start;
  }
  return std::nullopt;
}

}  // namespace

PreparedExample Model::prepare(std::string_view question, const PreparedTable& table,
                               const SqlSketch* gold) const {
  PreparedExample ex;
  ex.table = &table;
  ex.question = std::string(question);
  ex.tokens = tokenize_with_offsets(question);
  if (ex.tokens.empty()) throw ContractError("predict: empty question");
  ex.q = ex.tokens.size();
  std::vector<std::string> text;
  for (const auto& t : ex.tokens) text.push_back(t.text);
  text.push_back(Vocab::end_token());
  text.push_back(Vocab::start_token());
  ex.text = encode_tokens(text);
  ex.text.ids[ex.q] = Vocab::kEnd;
  ex.text.ids[ex.q + 1] = Vocab::kStart;

  if (gold != nullptr) {
    validate_sketch(*gold, *table.schema);
    if (gold->conds.size() > config_.max_conditions) {
      throw SchemaError("gold sketch has more conditions than the model supports");
    }
    ex.gold = *gold;
    for (const auto& cond : gold->conds) {
      const auto value_tokens = tokenize(cond.value);
      std::vector<std::size_t> targets;
      if (auto start = find_span(ex.tokens, value_tokens)) {
        for (std::size_t j = 0; j < value_tokens.size(); ++j) targets.push_back(*start + j);
      } else {
        ex.value_fallback = true;
        for (const auto& vt : value_tokens) {
          for (std::size_t p = 0; p < ex.q; ++p) {
            if (ex.tokens[p].text == vt) {
              targets.push_back(p);
              break;
            }
          }
        }
      }
      targets.push_back(ex.q);
      ex.value_targets.push_back(std::move(targets));
    }
  }
  return ex;
}

Model::Embedded Model::embed_example(const PreparedExample& example) const {
  Embedded e;
  const std::size_t q = example.q;
  e.all = embed_.embed(example.text.ids, example.text.chars);
  e.question = slice(e.all, 0, 0, q);
  e.question_end = slice(e.all, 0, 0, q + 1);
  e.start = slice(e.all, 0, q + 1, 1);
  const PreparedTable& table = *example.table;
  const Tensor columns = embed_.embed(table.tokens.ids, table.tokens.chars);
  for (std::size_t c = 0; c < table.offsets.size(); ++c) {
    e.columns.push_back(slice(columns, 0, table.offsets[c], table.lengths[c]));
  }
  return e;
}

Tensor Model::encode_columns(const BiLstm& encoder, const std::vector<Tensor>& columns, bool training,
                             Rng* rng) const {
  if (columns.empty()) throw ContractError("table has no columns");
  std::vector<Tensor> rows;
  rows.reserve(columns.size());
  for (const auto& col : columns) {
    rows.push_back(training ? encoder.final_state(col, true, rng) : encode_column(col, encoder));
  }
  return concat(rows, 0);
}

LossParts Model::loss(const PreparedExample& example, bool training, Rng* rng) const {
  if (!example.gold) throw ContractError("loss: example has no gold sketch");
  const SqlSketch& gold = *example.gold;
  const Embedded e = embed_example(example);
  LossParts parts;

  const Tensor sel_q = select_.question.encode(e.question, training, rng);
  const Tensor sel_cols = encode_columns(select_.columns, e.columns, training, rng);
  parts.sel = cross_entropy(column_select(sel_q, sel_cols, select_.scorer), gold.sel_col);

  const Tensor agg_q = aggregator_.question.encode(e.question, training, rng);
  parts.agg = cross_entropy(aggregator_select(agg_q, aggregator_.classifier),
                            static_cast<std::size_t>(gold.agg));

  const Tensor cn_q = cond_num_.question.encode(e.question, training, rng);
  parts.cond_num = cross_entropy(condition_number_probs(cn_q, cond_num_.classifier), gold.conds.size());

  const Tensor wc_q = where_col_.question.encode(e.question, training, rng);
  const Tensor wc_cols = encode_columns(where_col_.columns, e.columns, training, rng);
  std::vector<std::size_t> slot_columns;
  std::vector<std::size_t> gold_set;
  std::vector<std::size_t> gold_ops;
  for (const auto& cond : gold.conds) {
    slot_columns.push_back(cond.column);
    gold_ops.push_back(static_cast<std::size_t>(cond.op));
    if (std::find(gold_set.begin(), gold_set.end(), cond.column) == gold_set.end()) {
      gold_set.push_back(cond.column);
    }
  }
  parts.where_col = where_column_loss(column_select(wc_q, wc_cols, where_col_.scorer), gold_set,
                                      config_.gamma);

  const Tensor topcol = padded_rows(wc_cols, slot_columns, config_.max_conditions);
  const Tensor op_q = operator_.question.encode(e.question, training, rng);
  parts.op = masked_cross_entropy(operator_slots(op_q, topcol, operator_.scorer), gold_ops);

  parts.value = Tensor::scalar(0.0);
  if (!gold.conds.empty()) {
    const Tensor val_q = value_.question.encode(e.question_end, training, rng);
    std::vector<Tensor> inputs;
    for (const auto& targets : example.value_targets) {
      std::vector<std::size_t> rows{example.q + 1};
      rows.insert(rows.end(), targets.begin(), targets.end() - 1);
      inputs.push_back(gather_rows(e.all, rows));
    }
    const auto probs = decode_values(value_.decoder, val_q, topcol, inputs, training, config_.dropout, rng);
    for (std::size_t k = 0; k < probs.size(); ++k) {
      parts.value = add(parts.value, masked_cross_entropy(probs[k], example.value_targets[k]));
    }
  }
  return parts;
}

std::string Model::render_value(const PreparedExample& example,
                                const std::vector<std::size_t>& positions) const {
  if (positions.empty()) return {};
  bool contiguous = true;
  for (std::size_t i = 1; i < positions.size(); ++i) {
    if (positions[i] != positions[i - 1] + 1) contiguous = false;
  }
  if (contiguous) {
    const std::size_t begin = example.tokens[positions.front()].begin;
    const std::size_t end = example.tokens[positions.back()].end;
    return example.question.substr(begin, end - begin);
  }
  std::string out;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (i > 0) out += ' ';
    out += example.tokens[positions[i]].text;
  }
  return out;
}

Prediction Model::predict(const PreparedExample& example) const {
  const Embedded e = embed_example(example);
  Prediction out;
  SqlSketch& sketch = out.sketch;

  const Tensor sel_q = select_.question.encode(e.question, false, nullptr);
  const Tensor sel_cols = encode_columns(select_.columns, e.columns, false, nullptr);
  sketch.sel_col = argmax(column_select(sel_q, sel_cols, select_.scorer).data());

  const Tensor agg_q = aggregator_.question.encode(e.question, false, nullptr);
  sketch.agg = static_cast<Aggregator>(argmax(aggregator_select(agg_q, aggregator_.classifier).data()));

  const Tensor cn_q = cond_num_.question.encode(e.question, false, nullptr);
  const std::size_t columns = e.columns.size();
  const std::size_t k = std::min(condition_number(cn_q, cond_num_.classifier), columns);
  if (k == 0) return out;

  const Tensor wc_q = where_col_.question.encode(e.question, false, nullptr);
  const Tensor wc_cols = encode_columns(where_col_.columns, e.columns, false, nullptr);
  const WhereColumns where = where_columns(wc_q, wc_cols, where_col_.scorer, k, config_.max_conditions);

  const Tensor op_q = operator_.question.encode(e.question, false, nullptr);
  const Tensor ops = operator_slots(op_q, where.topcol, operator_.scorer);

  const Tensor val_q = value_.question.encode(e.question_end, false, nullptr);
  for (std::size_t slot = 0; slot < k; ++slot) {
    Condition cond;
    cond.column = where.chosen[slot];
    cond.op = static_cast<Operator>(argmax(ops.data().subspan(slot * kNumOperators, kNumOperators)));
    const DecodedValue value = value_.decoder.greedy(val_q, slice(where.topcol, 0, slot, 1),
                                                     e.question_end, e.start, example.q + 2);
    out.value_truncated = out.value_truncated || value.truncated;
    cond.value = render_value(example, value.positions);
    sketch.conds.push_back(std::move(cond));
  }
  return out;
}

SqlSketch Model::predict(std::string_view question, const TableSchema& table) const {
  const PreparedTable prepared = prepare_table(table);
  return predict(prepare(question, prepared)).sketch;
}

HeadDistributions Model::distributions(const PreparedExample& example) const {
  const Embedded e = embed_example(example);
  HeadDistributions out;
  const Tensor sel_q = select_.question.encode(e.question, false, nullptr);
  out.sel = column_select(sel_q, encode_columns(select_.columns, e.columns, false, nullptr), select_.scorer);
  out.agg = aggregator_select(aggregator_.question.encode(e.question, false, nullptr), aggregator_.classifier);
  const Tensor cn_q = cond_num_.question.encode(e.question, false, nullptr);
  out.cond_num = condition_number_probs(cn_q, cond_num_.classifier);
  const std::size_t k = std::min(condition_number(cn_q, cond_num_.classifier), e.columns.size());

  const Tensor wc_q = where_col_.question.encode(e.question, false, nullptr);
  const Tensor wc_cols = encode_columns(where_col_.columns, e.columns, false, nullptr);
  const WhereColumns where = where_columns(wc_q, wc_cols, where_col_.scorer, k, config_.max_conditions);
  out.where_col = where.probs;
  out.op = operator_slots(operator_.question.encode(e.question, false, nullptr), where.topcol, operator_.scorer);

  // Every slot decodes the question prefix, START first.
  const Tensor val_q = value_.question.encode(e.question_end, false, nullptr);
  std::vector<std::size_t> rows{example.q + 1};
  for (std::size_t p = 0; p < std::min<std::size_t>(example.q, 2); ++p) rows.push_back(p);
  const Tensor inputs = gather_rows(e.all, rows);
  for (std::size_t slot = 0; slot < config_.max_conditions; ++slot) {
    out.value.push_back(value_.decoder.teacher_forced(val_q, slice(where.topcol, 0, slot, 1), inputs,
                                                      false, 0.0, nullptr));
  }
  return out;
}

}  // namespace nl2sql
