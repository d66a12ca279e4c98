#include "nl2sql/embeddings.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace nl2sql {

namespace {

const std::string kPadToken = "<pad>";
const std::string kUnkToken = "<unk>";
const std::string kEndToken = "<end>";
const std::string kStartToken = "<start>";

}  // namespace

const std::string& Vocab::pad_token() { return kPadToken; }
const std::string& Vocab::end_token() { return kEndToken; }
const std::string& Vocab::start_token() { return kStartToken; }

Vocab::Vocab() {
  for (const auto* special : {&kPadToken, &kUnkToken, &kEndToken, &kStartToken}) add(*special);
}

std::size_t Vocab::add(std::string_view token) {
  std::string key(token);
  auto it = index_.find(key);
  if (it != index_.end()) return it->second;
  const std::size_t id = tokens_.size();
  tokens_.push_back(key);
  index_.emplace(std::move(key), id);
  return id;
}

std::optional<std::size_t> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocab::index_of(std::string_view token) const { return find(token).value_or(kUnk); }

void Vocab::save(std::ostream& out) const {
  for (const auto& token : tokens_) out << token << '\n';
}

Vocab Vocab::load(std::istream& in) {
  Vocab vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no <= kNumSpecials) {
      if (line != vocab.tokens_[line_no - 1]) {
        throw ParseError("vocabulary must start with the special tokens", line_no);
      }
      continue;
    }
    if (vocab.find(line)) throw ParseError("duplicate vocabulary entry '" + line + "'", line_no);
    vocab.add(line);
  }
  return vocab;
}

ParseError::ParseError(const std::string& what, std::size_t line)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

// ---------------------------------------------------------------------------

PretrainedVectors load_pretrained_vectors(std::istream& source, std::size_t dim,
                                          const Vocab* restrict_to) {
  if (dim == 0) throw ConfigError("load_pretrained_vectors: dimension must be positive");
  PretrainedVectors result;
  result.dim = dim;
  if (restrict_to != nullptr) result.vocab = *restrict_to;
  std::vector<double> matrix(result.vocab.size() * dim, 0.0);
  std::vector<bool> seen(result.vocab.size(), false);

  std::string line;
  std::size_t line_no = 0;
  std::vector<double> values;
  while (std::getline(source, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream fields(line);
    std::string token;
    fields >> token;
    values.clear();
    std::string field;
    while (fields >> field) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) {
        throw ParseError("malformed number '" + field + "' for token '" + token + "'", line_no);
      }
      values.push_back(v);
    }
    if (values.size() != dim) {
      throw FormatError("token '" + token + "' has " + std::to_string(values.size()) +
                            " values, expected " + std::to_string(dim),
                        line_no);
    }
    std::size_t row = 0;
    if (restrict_to != nullptr) {
      auto found = result.vocab.find(token);
      if (!found) continue;
      row = *found;
    } else {
      row = result.vocab.add(token);
      if (row >= seen.size()) {
        seen.resize(row + 1, false);
        matrix.resize((row + 1) * dim, 0.0);
      }
    }
    if (row < Vocab::kNumSpecials || seen[row]) continue;
    seen[row] = true;
    std::copy(values.begin(), values.end(), matrix.begin() + static_cast<std::ptrdiff_t>(row * dim));
    ++result.loaded;
  }
  result.matrix = Tensor::from_data({result.vocab.size(), dim}, std::move(matrix));
  return result;
}

Tensor embed_words(std::span<const std::size_t> ids, const Tensor& table) {
  if (table.rank() != 2) throw DimensionError("embed_words: table must be 2-D");
  return gather_rows(table, ids);
}

CharGrid make_char_grid(std::span<const std::string> words, const Vocab& chars, std::size_t width) {
  CharGrid grid;
  grid.width = width;
  grid.ids.assign(words.size() * width, Vocab::kPad);
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::size_t length = std::min(words[i].size(), width);
    grid.lengths.push_back(length);
    for (std::size_t j = 0; j < length; ++j) {
      grid.ids[i * width + j] = chars.index_of(std::string_view(&words[i][j], 1));
    }
  }
  return grid;
}

std::size_t CharCnnConfig::widest_kernel() const {
  return kernel_widths.empty() ? 0 : *std::max_element(kernel_widths.begin(), kernel_widths.end());
}

void CharCnnConfig::validate() const {
  if (kernel_widths.empty() || channels == 0 || char_dim == 0) {
    throw ConfigError("char CNN needs kernels, channels and a character dimension");
  }
  if (std::find(kernel_widths.begin(), kernel_widths.end(), std::size_t{0}) != kernel_widths.end()) {
    throw ConfigError("char CNN kernel width must be positive");
  }
  if (max_word_length < widest_kernel()) {
    throw ConfigError("max word length " + std::to_string(max_word_length) +
                      " is below the widest kernel " + std::to_string(widest_kernel()));
  }
}

CharCnnWeights make_char_cnn_weights(ParamSet& params, const std::string& prefix,
                                     const CharCnnConfig& config, Rng& rng) {
  config.validate();
  CharCnnWeights w;
  w.projection = params.add(prefix + ".projection",
                            uniform_tensor({config.char_dim, config.channels},
                                           1.0 / std::sqrt(static_cast<double>(config.char_dim)), rng));
  for (std::size_t k : config.kernel_widths) {
    const std::size_t fan_in = k * config.channels;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    const std::string name = prefix + ".conv" + std::to_string(k);
    w.kernels.push_back(params.add(name + ".weight", uniform_tensor({fan_in, config.channels}, bound, rng)));
    w.biases.push_back(params.add(name + ".bias", uniform_tensor({1, config.channels}, bound, rng)));
  }
  return w;
}

Tensor char_cnn_embed(const CharGrid& grid, const Tensor& char_table, const CharCnnWeights& w,
                      const CharCnnConfig& config) {
  config.validate();
  const std::size_t widest = config.widest_kernel();
  if (grid.width < widest) {
    throw ConfigError("char grid width " + std::to_string(grid.width) +
                      " is below the widest kernel " + std::to_string(widest));
  }
  if (char_table.rank() != 2 || char_table.dim(1) != config.char_dim) {
    throw DimensionError("char_cnn_embed: character table " + shape_to_string(char_table.shape()) +
                         " does not have " + std::to_string(config.char_dim) + " columns");
  }
  const std::size_t words = grid.words();
  const std::size_t channels = config.channels;
  if (words == 0) return Tensor::zeros({0, config.output_dim()});

  // Every word contributes max(length, widest) character rows.
  std::vector<std::size_t> char_ids;
  std::vector<std::size_t> offsets(words);
  std::vector<std::size_t> lengths(words);
  for (std::size_t i = 0; i < words; ++i) {
    lengths[i] = std::max<std::size_t>(grid.lengths[i], 1);
    const std::size_t span = std::max(lengths[i], widest);
    offsets[i] = char_ids.size();
    for (std::size_t j = 0; j < span; ++j) char_ids.push_back(grid.ids[i * grid.width + j]);
  }
  const Tensor projected = matmul(gather_rows(char_table, char_ids), w.projection);

  std::vector<Tensor> pooled;
  for (std::size_t kernel = 0; kernel < config.kernel_widths.size(); ++kernel) {
    const std::size_t width = config.kernel_widths[kernel];
    std::size_t max_positions = 0;
    for (std::size_t i = 0; i < words; ++i) {
      max_positions = std::max(max_positions, std::max(lengths[i], width) - width + 1);
    }
    // Words with fewer windows repeat their last window; duplicates cannot
    // change a max.
    std::vector<std::size_t> windows;
    windows.reserve(words * max_positions * width);
    for (std::size_t i = 0; i < words; ++i) {
      const std::size_t positions = std::max(lengths[i], width) - width + 1;
      for (std::size_t p = 0; p < max_positions; ++p) {
        const std::size_t start = offsets[i] + std::min(p, positions - 1);
        for (std::size_t j = 0; j < width; ++j) windows.push_back(start + j);
      }
    }
    Tensor unfolded = reshape(gather_rows(projected, windows), {words * max_positions, width * channels});
    Tensor conv = add(matmul(unfolded, w.kernels[kernel]), w.biases[kernel]);
    pooled.push_back(reduce_max(reshape(conv, {words, max_positions, channels}), 1));
  }
  return concat(pooled, 1);
}

Tensor combine_embeddings(const Tensor& word_emb, const Tensor& char_emb) {
  if (word_emb.shape() != char_emb.shape()) {
    throw DimensionError("combine_embeddings: word " + shape_to_string(word_emb.shape()) +
                         " vs char " + shape_to_string(char_emb.shape()));
  }
  return add(word_emb, char_emb);
}

Tensor encode_column(const Tensor& name_embeddings, const BiLstm& encoder) {
  if (name_embeddings.rank() == 2 && name_embeddings.dim(0) == 0) {
    return encoder.final_state(Tensor::zeros({1, name_embeddings.dim(1)}), false, nullptr);
  }
  return encoder.final_state(name_embeddings, false, nullptr);
}

// ---------------------------------------------------------------------------

EmbeddingLayer::EmbeddingLayer(ParamSet& params, Tensor word_table, Tensor char_table,
                               const CharCnnConfig& config, Rng& rng)
    : config_(config) {
  config.validate();
  if (word_table.rank() != 2 || word_table.dim(1) != config.output_dim()) {
    throw ConfigError("word embedding size " +
                      (word_table.rank() == 2 ? std::to_string(word_table.dim(1)) : std::string("?")) +
                      " must equal char CNN output " + std::to_string(config.output_dim()));
  }
  if (char_table.rank() != 2 || char_table.dim(1) != config.char_dim) {
    throw ConfigError("character table must have " + std::to_string(config.char_dim) + " columns");
  }
  word_table_ = params.add("embed.words", std::move(word_table));
  char_table_ = params.add("embed.chars", std::move(char_table));
  cnn_ = make_char_cnn_weights(params, "embed.char_cnn", config, rng);
}

Tensor EmbeddingLayer::embed(std::span<const std::size_t> word_ids, const CharGrid& chars) const {
  if (word_ids.size() != chars.words()) {
    throw DimensionError("embed: " + std::to_string(word_ids.size()) + " word ids but " +
                         std::to_string(chars.words()) + " character rows");
  }
  return combine_embeddings(embed_words(word_ids, word_table_),
                            char_cnn_embed(chars, char_table_, cnn_, config_));
}

void EmbeddingLayer::set_word_trainable(bool trainable) { word_table_.set_requires_grad(trainable); }

}  // namespace nl2sql
