#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nl2sql/encoders.hpp"
#include "nl2sql/params.hpp"
#include "nl2sql/tensor.hpp"

namespace nl2sql {

/// Bijective token <-> index map with fixed special entries. Also used for
/// characters, where each token is a single character.
class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kEnd = 2;
  static constexpr std::size_t kStart = 3;
  static constexpr std::size_t kNumSpecials = 4;
  static const std::string& pad_token();
  static const std::string& end_token();
  static const std::string& start_token();

  Vocab();

  std::size_t add(std::string_view token);
  std::optional<std::size_t> find(std::string_view token) const;
  // kUnk when absent.
  std::size_t index_of(std::string_view token) const;
  const std::string& token(std::size_t index) const { return tokens_.at(index); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }

  // One token per line.
  void save(std::ostream& out) const;
  static Vocab load(std::istream& in);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// A line whose field count disagrees with the expected dimension.
class FormatError : public ParseError {
 public:
  using ParseError::ParseError;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PretrainedVectors {
  Vocab vocab;
  std::size_t dim = 0;
  Tensor matrix;  // vocab.size() x dim; specials are zero
  std::size_t loaded = 0;
};

/// Reads "token v_1 ... v_dim" lines. With `restrict_to`, only tokens of that
/// vocabulary are kept and the result uses its indexing; tokens missing from
/// the source embed to zero.
PretrainedVectors load_pretrained_vectors(std::istream& source, std::size_t dim,
                                          const Vocab* restrict_to = nullptr);

Tensor embed_words(std::span<const std::size_t> ids, const Tensor& table);

// Character ids for q words, padded with Vocab::kPad / truncated to `width`.
struct CharGrid {
  std::size_t width = 0;
  std::vector<std::size_t> ids;      // words x width
  std::vector<std::size_t> lengths;  // real characters per word, after truncation

  std::size_t words() const { return lengths.size(); }
};

CharGrid make_char_grid(std::span<const std::string> words, const Vocab& chars, std::size_t width);

struct CharCnnConfig {
  std::size_t char_dim = 300;
  std::size_t channels = 100;
  std::vector<std::size_t> kernel_widths{3, 4, 5};
  std::size_t max_word_length = 16;

  std::size_t output_dim() const { return channels * kernel_widths.size(); }
  std::size_t widest_kernel() const;
  void validate() const;
};

struct CharCnnWeights {
  Tensor projection;            // char_dim x channels
  std::vector<Tensor> kernels;  // (width * channels) x channels
  std::vector<Tensor> biases;   // 1 x channels
};

CharCnnWeights make_char_cnn_weights(ParamSet& params, const std::string& prefix,
                                     const CharCnnConfig& config, Rng& rng);

/// Projects character embeddings to `channels`, runs each kernel width along
/// the character axis, max-pools per word and concatenates the pooled
/// channels. Only windows that start inside the word and end inside it (or at
/// position 0 for words shorter than the kernel) compete in the max, so the
/// output does not depend on padding beyond the word.
Tensor char_cnn_embed(const CharGrid& grid, const Tensor& char_table, const CharCnnWeights& w,
                      const CharCnnConfig& config);

Tensor combine_embeddings(const Tensor& word_emb, const Tensor& char_emb);

/// Last state of a column-name encoder. A zero-length name is encoded as the
/// single (zero) padding embedding.
Tensor encode_column(const Tensor& name_embeddings, const BiLstm& encoder);

/// Word table, character table and character CNN shared by all heads.
class EmbeddingLayer {
 public:
  EmbeddingLayer() = default;
  EmbeddingLayer(ParamSet& params, Tensor word_table, Tensor char_table, const CharCnnConfig& config,
                 Rng& rng);

  // q x d: word rows plus character-CNN rows.
  Tensor embed(std::span<const std::size_t> word_ids, const CharGrid& chars) const;

  // Frozen word embeddings receive no gradient at all.
  void set_word_trainable(bool trainable);
  bool word_trainable() const { return word_table_.requires_grad(); }

  const Tensor& word_table() const { return word_table_; }
  const Tensor& char_table() const { return char_table_; }
  const CharCnnWeights& cnn() const { return cnn_; }
  const CharCnnConfig& config() const { return config_; }
  std::size_t dim() const { return word_table_.dim(1); }

 private:
  Tensor word_table_;
  Tensor char_table_;
  CharCnnWeights cnn_;
  CharCnnConfig config_;
};

}  // namespace nl2sql
