#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nl2sql/embeddings.hpp"
#include "nl2sql/encoders.hpp"
#include "nl2sql/heads.hpp"
#include "nl2sql/params.hpp"
#include "nl2sql/sql.hpp"

namespace nl2sql {

struct ModelConfig {
  std::size_t word_dim = 300;
  CharCnnConfig char_cnn;
  std::size_t hidden = 100;  // bi-LSTM output size h; each direction has h/2
  std::size_t layers = 2;
  double dropout = 0.3;
  std::size_t max_conditions = kMaxConditions;
  double gamma = 3.0;
  std::uint64_t seed = 1;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);
};

struct EncodedText {
  std::vector<std::size_t> ids;
  CharGrid chars;
};

/// Column names of one table, encoded once and reused by every example.
struct PreparedTable {
  const TableSchema* schema = nullptr;
  EncodedText tokens;                // all column tokens back to back
  std::vector<std::size_t> offsets;  // first token of each column
  std::vector<std::size_t> lengths;  // at least 1 (empty names use the padding token)
};

struct PreparedExample {
  const PreparedTable* table = nullptr;
  std::string question;
  std::vector<Token> tokens;
  EncodedText text;  // question tokens, then END, then START
  std::size_t q = 0;

  std::optional<SqlSketch> gold;
  // Per gold condition: pointer targets over question positions, END (= q) last.
  std::vector<std::vector<std::size_t>> value_targets;
  bool value_fallback = false;  // some gold value was not a span of the question
};

struct Prediction {
  SqlSketch sketch;
  bool value_truncated = false;
};

/// Every distribution the heads emit for one example.
struct HeadDistributions {
  Tensor sel;        // [c]
  Tensor agg;        // [6]
  Tensor cond_num;   // [N+1]
  Tensor where_col;  // [c]
  Tensor op;         // N x 3
  std::vector<Tensor> value;  // per slot T x (q+1)
};

/// Embedding layer plus the four prediction modules, each with its own
/// encoders. Only the word embedding table is shared between heads.
class Model {
 public:
  Model(ModelConfig config, Vocab words, Vocab chars, std::optional<Tensor> word_table = {},
        std::optional<Tensor> char_table = {});
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  const Vocab& words() const { return words_; }
  const Vocab& chars() const { return chars_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  EmbeddingLayer& embeddings() { return embed_; }
  const EmbeddingLayer& embeddings() const { return embed_; }

  EncodedText encode_tokens(std::span<const std::string> tokens) const;
  PreparedTable prepare_table(const TableSchema& table) const;
  PreparedExample prepare(std::string_view question, const PreparedTable& table,
                          const SqlSketch* gold = nullptr) const;

  /// Joint objective with teacher forcing on the gold sketch.
  LossParts loss(const PreparedExample& example, bool training, Rng* rng) const;

  Prediction predict(const PreparedExample& example) const;
  SqlSketch predict(std::string_view question, const TableSchema& table) const;

  HeadDistributions distributions(const PreparedExample& example) const;

 private:
  struct ColumnHead {
    BiLstm question;
    BiLstm columns;
    SlotScorerWeights scorer;
  };
  struct ClassHead {
    BiLstm question;
    ClassifierWeights classifier;
  };
  struct OperatorHead {
    BiLstm question;
    SlotScorerWeights scorer;
  };
  struct ValueHead {
    BiLstm question;
    ValueDecoder decoder;
  };
  struct Embedded {
    Tensor all;       // (q+2) x d
    Tensor question;  // q x d
    Tensor question_end;  // (q+1) x d
    Tensor start;     // 1 x d
    std::vector<Tensor> columns;
  };

  Embedded embed_example(const PreparedExample& example) const;
  Tensor encode_columns(const BiLstm& encoder, const std::vector<Tensor>& columns, bool training,
                        Rng* rng) const;
  std::string render_value(const PreparedExample& example,
                           const std::vector<std::size_t>& positions) const;

  ModelConfig config_;
  Vocab words_;
  Vocab chars_;
  ParamSet params_;
  EmbeddingLayer embed_;
  ColumnHead select_;
  ClassHead aggregator_;
  ClassHead cond_num_;
  ColumnHead where_col_;
  OperatorHead operator_;
  ValueHead value_;
};

/// Words of questions and headers, in first-seen order.
Vocab build_word_vocab(const std::vector<Example>& examples, const TableMap& tables);
/// Characters of every vocabulary token.
Vocab build_char_vocab(const Vocab& words);

/// Character table: rows from `vectors` where present, small uniform noise
/// otherwise, zero for padding.
Tensor init_char_table(const Vocab& chars, std::size_t dim, const PretrainedVectors* vectors, Rng& rng);

}  // namespace nl2sql
