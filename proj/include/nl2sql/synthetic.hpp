#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nl2sql/embeddings.hpp"
#include "nl2sql/params.hpp"
#include "nl2sql/sql.hpp"

namespace nl2sql {

struct Corpus {
  TableMap tables;
  std::vector<Example> examples;
};

/// Two small tables (players, cities) with template questions over them.
/// Every condition value occurs verbatim in its question.
Corpus make_synthetic_corpus(std::size_t count, std::uint64_t seed);

/// Random word vectors for every non-special entry of `vocab`.
Tensor random_word_table(const Vocab& vocab, std::size_t dim, Rng& rng);

/// Writes tables.jsonl, train.jsonl, dev.jsonl, word_vectors.txt (random
/// stand-ins for pretrained vectors) and a config.json pointing at them.
void write_synthetic_dataset(const std::filesystem::path& dir, std::size_t count, std::size_t dev_count,
                             std::uint64_t seed);

}  // namespace nl2sql
