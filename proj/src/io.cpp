#include "hdnn/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hdnn/sequence.hpp"

namespace hdnn {

namespace {

constexpr char kMagic[4] = {'H', 'D', 'N', 'N'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void real(Real v, TensorPrecision p) {
    if (p == TensorPrecision::kFloat32) {
      u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      u64(std::bit_cast<std::uint64_t>(v));
    }
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    require(pos_ + n <= bytes_.size(), ErrorKind::kChecksum, "container truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Real real(TensorPrecision p) {
    if (p == TensorPrecision::kFloat32) return static_cast<Real>(std::bit_cast<float>(u32()));
    return std::bit_cast<Real>(u64());
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t checksum(std::span<const std::uint8_t> bytes) {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace

const Matrix& TensorContainer::tensor(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  fail(ErrorKind::kParse, "container has no tensor '" + std::string(name) + "'");
}

std::vector<std::uint8_t> encode_container(const TensorContainer& c, TensorPrecision precision) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(precision));
  w.u32(static_cast<std::uint32_t>(c.metadata.size()));
  for (const auto& [k, v] : c.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.str(t.name);
    w.u64(t.value.rows());
    w.u64(t.value.cols());
    for (Real v : t.value.data()) w.real(v, precision);
  }
  const std::uint64_t sum = checksum(w.buffer());
  w.u64(sum);
  return std::move(w.buffer());
}

TensorContainer decode_container(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 4 + 8 && std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorKind::kChecksum,
          "not a tensor container (bad magic or truncated)");
  const auto body = bytes.first(bytes.size() - 8);
  Reader tail(bytes.subspan(bytes.size() - 8));
  require(tail.u64() == checksum(body), ErrorKind::kChecksum, "container checksum mismatch");

  Reader r(body);
  r.need(4);
  r.u32();  // magic, already checked
  const std::uint32_t version = r.u32();
  require(version == kContainerVersion, ErrorKind::kVersion, "unsupported container version " + std::to_string(version));
  const std::uint32_t width = r.u32();
  require(width == 4 || width == 8, ErrorKind::kParse, "unsupported element width " + std::to_string(width));
  const auto precision = static_cast<TensorPrecision>(width);
  TensorContainer c;
  const std::uint32_t nmeta = r.u32();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    c.metadata[k] = r.str();
  }
  const std::uint32_t ntensors = r.u32();
  for (std::uint32_t i = 0; i < ntensors; ++i) {
    NamedTensor t;
    t.name = r.str();
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    require(cols == 0 || rows <= r.remaining() / width / cols, ErrorKind::kParse, "tensor larger than container");
    t.value = Matrix(rows, cols);
    for (Real& v : t.value.data()) v = r.real(precision);
    c.tensors.push_back(std::move(t));
  }
  require(r.remaining() == 0, ErrorKind::kParse, "trailing bytes in container");
  return c;
}

void write_container(const std::filesystem::path& path, const TensorContainer& c, TensorPrecision precision) {
  const auto bytes = encode_container(c, precision);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(os), ErrorKind::kIo, "write failed for " + path.string());
}

TensorContainer read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::kIo, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

TensorContainer model_to_container(const Network& net) {
  const auto& cfg = net.config();
  TensorContainer c;
  c.metadata = {
      {"kind", "model"},
      {"architecture", to_string(cfg.architecture)},
      {"input_dim", std::to_string(cfg.input_dim)},
      {"hidden_dim", std::to_string(cfg.hidden_dim)},
      {"num_hidden_layers", std::to_string(cfg.num_hidden_layers)},
      {"output_dim", std::to_string(cfg.output_dim)},
  };
  for (const auto& t : net.params().tensors()) {
    c.tensors.push_back({t.name, Matrix(t.rows, t.cols, std::vector<Real>(t.values.begin(), t.values.end()))});
  }
  return c;
}

namespace {

std::size_t meta_count(const TensorContainer& c, const std::string& key) {
  auto it = c.metadata.find(key);
  require(it != c.metadata.end(), ErrorKind::kParse, "model file lacks '" + key + "'");
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    fail(ErrorKind::kParse, "model file has bad '" + key + "'");
  }
}

Vector as_vector(const Matrix& m) { return m.data(); }

}  // namespace

Network model_from_container(const TensorContainer& c) {
  auto kind = c.metadata.find("kind");
  require(kind != c.metadata.end() && kind->second == "model", ErrorKind::kParse, "container is not a model");
  NetworkConfig cfg;
  cfg.architecture = parse_architecture(c.metadata.at("architecture"));
  cfg.input_dim = meta_count(c, "input_dim");
  cfg.hidden_dim = meta_count(c, "hidden_dim");
  cfg.num_hidden_layers = meta_count(c, "num_hidden_layers");
  cfg.output_dim = meta_count(c, "output_dim");
  cfg.validate();
  ParameterSet p;
  for (std::size_t l = 0; l < cfg.num_hidden_layers; ++l) {
    const std::string prefix = "hidden." + std::to_string(l + 1);
    p.hidden_weights.push_back(c.tensor(prefix + ".weight"));
    p.hidden_biases.push_back(as_vector(c.tensor(prefix + ".bias")));
  }
  if (cfg.architecture == Architecture::kHighway) {
    p.transform_gate = c.tensor("gate.transform");
    p.carry_gate = c.tensor("gate.carry");
  }
  p.output_weight = c.tensor("output.weight");
  p.output_bias = as_vector(c.tensor("output.bias"));
  Network net(cfg, std::move(p));
  require(c.tensors.size() == net.params().tensors().size(), ErrorKind::kParse, "model file has unexpected tensors");
  return net;
}

void save_model(const Network& net, const std::filesystem::path& path, TensorPrecision precision) {
  write_container(path, model_to_container(net), precision);
}

Network load_model(const std::filesystem::path& path) { return model_from_container(read_container(path)); }

void save_soft_targets(const SoftTargets& targets, const std::filesystem::path& path) {
  TensorContainer c;
  std::ostringstream t;
  t.precision(17);
  t << targets.temperature_used;
  c.metadata = {{"kind", "soft_targets"}, {"temperature", t.str()}};
  c.tensors.push_back({"posteriors", targets.posteriors});
  write_container(path, c, TensorPrecision::kFloat64);
}

SoftTargets load_soft_targets(const std::filesystem::path& path) {
  const TensorContainer c = read_container(path);
  require(c.metadata.count("kind") && c.metadata.at("kind") == "soft_targets", ErrorKind::kParse,
          "container is not a soft-target file");
  SoftTargets s{c.tensor("posteriors"), std::stod(c.metadata.at("temperature"))};
  validate_soft_targets(s);
  return s;
}

std::map<std::string, std::string> parse_key_values(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::kParse, "line " + std::to_string(lineno) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::kIo, "cannot read " + path.string());
  return parse_key_values(is);
}

void write_key_value_file(const std::filesystem::path& path, const std::map<std::string, std::string>& kv) {
  std::ofstream os(path, std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
}

void write_split(const std::filesystem::path& dir, const std::vector<Utterance>& utterances) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  for (const auto& u : utterances) {
    TensorContainer feats;
    feats.metadata = {{"kind", "features"}, {"id", u.id}};
    feats.tensors.push_back({"features", u.features});
    write_container(dir / (u.id + ".feats"), feats, TensorPrecision::kFloat64);
    {
      std::ofstream ali(dir / (u.id + ".ali"), std::ios::trunc);
      require(static_cast<bool>(ali), ErrorKind::kIo, "cannot write alignment for " + u.id);
      write_alignment(ali, u.alignment);
    }
    if (u.lattice) {
      std::ofstream lat(dir / (u.id + ".lat"), std::ios::trunc);
      require(static_cast<bool>(lat), ErrorKind::kIo, "cannot write lattice for " + u.id);
      write_lattice(lat, *u.lattice);
    } else {
      std::filesystem::remove(dir / (u.id + ".lat"));
    }
    manifest << u.id << '\t' << u.speaker << '\t' << u.features.rows() << '\n';
  }
  // The manifest is the commit point for the split.
  std::ofstream m(dir / "manifest.tsv", std::ios::trunc);
  require(static_cast<bool>(m), ErrorKind::kIo, "cannot write manifest in " + dir.string());
  m << manifest.str();
}

std::vector<Utterance> read_split(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest.tsv");
  require(static_cast<bool>(m), ErrorKind::kIo, "no manifest in " + dir.string());
  std::vector<Utterance> out;
  std::string line;
  while (std::getline(m, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Utterance u;
    std::size_t frames = 0;
    require(static_cast<bool>(ls >> u.id >> u.speaker >> frames), ErrorKind::kParse, "bad manifest line: " + line);
    u.features = read_container(dir / (u.id + ".feats")).tensor("features");
    std::ifstream ali(dir / (u.id + ".ali"));
    require(static_cast<bool>(ali), ErrorKind::kIo, "missing alignment for " + u.id);
    u.alignment = read_alignment(ali);
    require(u.features.rows() == frames && u.alignment.size() == frames, ErrorKind::kParse,
            "frame count mismatch for " + u.id);
    if (std::ifstream lat(dir / (u.id + ".lat")); lat) {
      u.lattice = read_lattice(lat);
      require(u.lattice->num_frames == frames, ErrorKind::kParse, "lattice frame count mismatch for " + u.id);
    }
    out.push_back(std::move(u));
  }
  return out;
}

void write_corpus(const std::filesystem::path& root, const CorpusSpec& spec, const Corpus& corpus) {
  std::filesystem::create_directories(root);
  write_key_value_file(root / "corpus.conf", spec.to_map());
  write_split(root / "train", corpus.train);
  write_split(root / "cv", corpus.cv);
  write_split(root / "adapt", corpus.adapt);
}

CorpusSpec read_corpus_spec(const std::filesystem::path& root) {
  return CorpusSpec::from_map(read_key_value_file(root / "corpus.conf"));
}

}  // namespace hdnn
