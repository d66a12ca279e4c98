#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "nl2sql/model.hpp"

namespace nl2sql {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Dtype { kFloat64, kFloat32 };

/// Writes dir/manifest.json, dir/weights.bin (raw little-endian floats in
/// manifest order), dir/vocab.txt and dir/chars.txt. `meta_json` is stored
/// verbatim under "meta" and must be a JSON object.
void save_checkpoint(const Model& model, const std::filesystem::path& dir, Dtype dtype = Dtype::kFloat64,
                     const std::string& meta_json = "{}");

Model load_checkpoint(const std::filesystem::path& dir);

/// Copies every weight of `from` into `to`; names and shapes must agree.
void copy_weights(const Model& from, Model& to);

}  // namespace nl2sql
