#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hdnn/corpus.hpp"
#include "hdnn/losses.hpp"
#include "hdnn/network.hpp"

namespace hdnn {

enum class TensorPrecision : std::uint32_t { kFloat32 = 4, kFloat64 = 8 };

struct NamedTensor {
  std::string name;
  Matrix value;
};

// Binary container shared by model, feature and soft-target files:
//   "HDNN" magic, u32 version, u32 element width (4 or 8), u32 metadata
//   count, (key, value) strings, u32 tensor count, per tensor (name, u64
//   rows, u64 cols, little-endian reals row-major), then a u64 FNV-1a
//   checksum of every preceding byte. Strings are u32 length + bytes.
struct TensorContainer {
  std::map<std::string, std::string> metadata;
  std::vector<NamedTensor> tensors;

  const Matrix& tensor(std::string_view name) const;
};

inline constexpr std::uint32_t kContainerVersion = 1;

std::vector<std::uint8_t> encode_container(const TensorContainer& c, TensorPrecision precision);
TensorContainer decode_container(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, const TensorContainer& c, TensorPrecision precision);
TensorContainer read_container(const std::filesystem::path& path);

// Float64 by default so the round trip is bit-exact for any parameters;
// Float32 matches compact 32-bit model files and is exact for parameters
// already representable in single precision.
void save_model(const Network& net, const std::filesystem::path& path,
                TensorPrecision precision = TensorPrecision::kFloat64);
Network load_model(const std::filesystem::path& path);
TensorContainer model_to_container(const Network& net);
Network model_from_container(const TensorContainer& c);

void save_soft_targets(const SoftTargets& targets, const std::filesystem::path& path);
SoftTargets load_soft_targets(const std::filesystem::path& path);

// "key = value" lines; '#' starts a comment.
std::map<std::string, std::string> parse_key_values(std::istream& is);
std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path);
void write_key_value_file(const std::filesystem::path& path, const std::map<std::string, std::string>& kv);

// Corpus directory: <root>/corpus.conf plus one directory per split holding
// <id>.feats, <id>.ali, optional <id>.lat and a manifest.tsv written last.
void write_corpus(const std::filesystem::path& root, const CorpusSpec& spec, const Corpus& corpus);
void write_split(const std::filesystem::path& dir, const std::vector<Utterance>& utterances);
std::vector<Utterance> read_split(const std::filesystem::path& dir);
CorpusSpec read_corpus_spec(const std::filesystem::path& root);

}  // namespace hdnn
