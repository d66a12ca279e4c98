#include "nl2sql/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"

namespace nl2sql {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "nl2sql-checkpoint";
constexpr int kVersion = 1;

template <typename T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
}

void write_values(std::ostream& out, std::span<const double> values, Dtype dtype) {
  for (double v : values) {
    if (dtype == Dtype::kFloat64) {
      const double le = to_little(v);
      out.write(reinterpret_cast<const char*>(&le), sizeof le);
    } else {
      const float le = to_little(static_cast<float>(v));
      out.write(reinterpret_cast<const char*>(&le), sizeof le);
    }
  }
}

std::ifstream open_input(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  return out;
}

}  // namespace

void save_checkpoint(const Model& model, const fs::path& dir, Dtype dtype, const std::string& meta_json) {
  const json meta = json::parse(meta_json, nullptr, false);
  if (!meta.is_object()) throw CheckpointError("checkpoint metadata must be a JSON object");
  fs::create_directories(dir);
  const std::size_t width = dtype == Dtype::kFloat64 ? 8 : 4;
  json tensors = json::array();
  std::size_t offset = 0;
  {
    auto out = open_output(dir / "weights.bin", std::ios::binary);
    for (const auto& p : model.params().entries()) {
      tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset},
                         {"count", p.tensor.numel()}});
      write_values(out, p.tensor.data(), dtype);
      offset += p.tensor.numel() * width;
    }
    if (!out) throw CheckpointError("failed writing weights.bin");
  }
  {
    auto out = open_output(dir / "vocab.txt");
    model.words().save(out);
  }
  {
    auto out = open_output(dir / "chars.txt");
    model.chars().save(out);
  }
  json manifest{{"format", kFormat},
                {"version", kVersion},
                {"dtype", dtype == Dtype::kFloat64 ? "float64" : "float32"},
                {"byte_order", "little"},
                {"config", json::parse(model.config().to_json())},
                {"weights", "weights.bin"},
                {"vocab", "vocab.txt"},
                {"chars", "chars.txt"},
                {"total_bytes", offset},
                {"tensors", tensors},
                {"meta", meta}};
  auto out = open_output(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

Model load_checkpoint(const fs::path& dir) {
  json manifest;
  try {
    auto in = open_input(dir / "manifest.json");
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("bad manifest in " + dir.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat) throw CheckpointError(dir.string() + " is not a checkpoint");
  if (manifest.value("byte_order", "") != "little") throw CheckpointError("unsupported byte order");
  const std::string dtype = manifest.value("dtype", "");
  if (dtype != "float64" && dtype != "float32") throw CheckpointError("unsupported dtype '" + dtype + "'");
  const std::size_t width = dtype == "float64" ? 8 : 4;

  auto vocab_in = open_input(dir / manifest.value("vocab", "vocab.txt"));
  auto chars_in = open_input(dir / manifest.value("chars", "chars.txt"));
  Model model(ModelConfig::from_json(manifest.at("config").dump()), Vocab::load(vocab_in),
              Vocab::load(chars_in));

  const fs::path weights_path = dir / manifest.value("weights", "weights.bin");
  auto in = open_input(weights_path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::map<std::string, const json*> by_name;
  for (const auto& t : manifest.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
  for (auto& p : model.params().entries()) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor '" + p.name + "'");
    const json& t = *it->second;
    const Shape shape = t.at("shape").get<Shape>();
    if (shape != p.tensor.shape()) {
      throw CheckpointError("tensor '" + p.name + "' has shape " + shape_to_string(shape) + ", model expects " +
                            shape_to_string(p.tensor.shape()));
    }
    const std::size_t offset = t.at("offset").get<std::size_t>();
    const std::size_t count = t.at("count").get<std::size_t>();
    if (count != p.tensor.numel() || offset + count * width > bytes.size()) {
      throw CheckpointError("tensor '" + p.name + "' runs past the end of " + weights_path.string());
    }
    auto values = p.tensor.mutable_data();
    for (std::size_t i = 0; i < count; ++i) {
      const char* src = bytes.data() + offset + i * width;
      if (width == 8) {
        double v;
        std::memcpy(&v, src, 8);
        values[i] = to_little(v);
      } else {
        float v;
        std::memcpy(&v, src, 4);
        values[i] = to_little(v);
      }
    }
    by_name.erase(it);
  }
  if (!by_name.empty()) throw CheckpointError("checkpoint has unknown tensor '" + by_name.begin()->first + "'");
  return model;
}

void copy_weights(const Model& from, Model& to) {
  const auto& src = from.params().entries();
  auto& dst = to.params().entries();
  if (src.size() != dst.size()) throw CheckpointError("models have different weight inventories");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].name != dst[i].name || src[i].tensor.shape() != dst[i].tensor.shape()) {
      throw CheckpointError("weight '" + dst[i].name + "' does not match '" + src[i].name + "'");
    }
    auto values = dst[i].tensor.mutable_data();
    std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), values.begin());
  }
}

}  // namespace nl2sql
