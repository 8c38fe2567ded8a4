#include "fusecap/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fusecap/checksum.hpp"
#include "fusecap/errors.hpp"

namespace fusecap {
namespace {

constexpr char kMagic[8] = {'F', 'C', 'A', 'P', 'C', 'K', 'P', 'T'};
constexpr std::size_t kDigestSize = 32;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
    }
  }
  void f64(double d) { le(std::bit_cast<std::uint64_t>(d)); }
  std::vector<unsigned char>& data() { return out_; }

 private:
  std::vector<unsigned char> out_;
};

class Reader {
 public:
  Reader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}
  const unsigned char* take(std::size_t k) {
    if (k > n_ - pos_) throw LoadError("checkpoint is truncated");
    const unsigned char* at = p_ + pos_;
    pos_ += k;
    return at;
  }
  template <typename T>
  T le() {
    const unsigned char* b = take(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return static_cast<T>(v);
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  bool done() const { return pos_ == n_; }

 private:
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> encode(const std::string& type, const nlohmann::json& config,
                                  const ParameterStore& store, const nlohmann::json& meta) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.le<std::uint32_t>(kCheckpointVersion);
  const nlohmann::json header{{"model_type", type}, {"config", config}, {"meta", meta}};
  const std::string text = header.dump();
  w.le<std::uint64_t>(text.size());
  w.bytes(text.data(), text.size());
  const auto params = store.all();
  w.le<std::uint64_t>(params.size());
  for (const auto* p : params) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(p->name.size()));
    w.bytes(p->name.data(), p->name.size());
    w.le<std::uint8_t>(p->frozen ? 1 : 0);
    const auto& shape = p->tensor.shape();
    w.le<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.le<std::uint64_t>(d);
    for (double v : p->tensor.values()) w.f64(v);
  }
  const auto digest = sha256(w.data());
  w.bytes(digest.data(), digest.size());
  return std::move(w.data());
}

struct RawParam {
  std::string name;
  bool frozen;
  Shape shape;
  std::vector<double> values;
};

struct Decoded {
  std::string type;
  nlohmann::json config;
  nlohmann::json meta;
  std::vector<RawParam> params;
};

Decoded decode(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < sizeof kMagic + 4 + kDigestSize ||
      std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw LoadError("not a fusecap checkpoint (bad magic)");
  }
  const std::size_t body = bytes.size() - kDigestSize;
  const auto digest = sha256({bytes.data(), body});
  if (std::memcmp(digest.data(), bytes.data() + body, kDigestSize) != 0) {
    throw LoadError("checkpoint checksum mismatch (file is corrupt)");
  }
  Reader r(bytes.data(), body);
  r.take(sizeof kMagic);
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw LoadError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  Decoded out;
  const auto header_len = r.le<std::uint64_t>();
  const auto* h = r.take(header_len);
  try {
    const auto header = nlohmann::json::parse(h, h + header_len);
    out.type = header.at("model_type").get<std::string>();
    out.config = header.at("config");
    out.meta = header.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("bad checkpoint header: ") + e.what());
  }
  const auto count = r.le<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    RawParam p;
    const auto name_len = r.le<std::uint32_t>();
    const auto* name = r.take(name_len);
    p.name.assign(reinterpret_cast<const char*>(name), name_len);
    p.frozen = r.le<std::uint8_t>() != 0;
    const auto rank = r.le<std::uint32_t>();
    std::size_t size = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      p.shape.push_back(r.le<std::uint64_t>());
      size *= p.shape.back();
    }
    p.values.resize(size);
    for (auto& v : p.values) v = r.f64();
    out.params.push_back(std::move(p));
  }
  if (!r.done()) throw LoadError("trailing bytes after the parameter block");
  return out;
}

void restore_into(ParameterStore& store, const std::vector<RawParam>& raw, bool want_frozen) {
  if (raw.size() != store.size()) {
    throw LoadError("checkpoint has " + std::to_string(raw.size()) + " parameters, model expects " +
                    std::to_string(store.size()));
  }
  for (const auto& rp : raw) {
    Parameter* p = store.find(rp.name);
    if (!p) throw LoadError("unexpected parameter " + rp.name);
    if (p->tensor.shape() != rp.shape) {
      throw LoadError("shape mismatch for " + rp.name + ": " + shape_string(rp.shape) + " vs " +
                      shape_string(p->tensor.shape()));
    }
    if (rp.frozen != want_frozen) {
      throw LoadError("parameter " + rp.name + (want_frozen ? " is not frozen" : " is frozen"));
    }
    auto dst = p->tensor.mutable_values();
    std::copy(rp.values.begin(), rp.values.end(), dst.begin());
    if (rp.frozen) p->freeze();
  }
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing " + path.string());
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void expect_type(const Decoded& d, const std::string& type) {
  if (d.type != type) {
    throw LoadError("checkpoint holds a '" + d.type + "' model, expected '" + type + "'");
  }
}

}  // namespace

nlohmann::json mlm_config_to_json(const MlmConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"embed_dim", c.embed_dim},
          {"hidden_dim", c.hidden_dim},
          {"num_layers", c.num_layers},
          {"seed", c.seed}};
}

MlmConfig mlm_config_from_json(const nlohmann::json& j) {
  MlmConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::vector<unsigned char> checkpoint_bytes(const CaptionModel& model, const nlohmann::json& meta) {
  return encode("caption", model.config().to_json(), model.params(), meta);
}

std::vector<unsigned char> checkpoint_bytes(const ToyMLM& mlm, const nlohmann::json& meta) {
  return encode("mlm", mlm_config_to_json(mlm.config()), mlm.params(), meta);
}

void save_checkpoint(const CaptionModel& model, const std::filesystem::path& path,
                     const nlohmann::json& meta) {
  write_file(path, checkpoint_bytes(model, meta));
}

void save_checkpoint(const ToyMLM& mlm, const std::filesystem::path& path,
                     const nlohmann::json& meta) {
  write_file(path, checkpoint_bytes(mlm, meta));
}

std::string checkpoint_model_type(const std::filesystem::path& path) {
  return decode(read_file(path)).type;
}

LoadedCaptionModel parse_caption_model(const std::vector<unsigned char>& bytes) {
  Decoded d = decode(bytes);
  expect_type(d, "caption");
  CaptionModelConfig config;
  try {
    config = CaptionModelConfig::from_json(d.config);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("bad caption model config: ") + e.what());
  }
  CaptionModel model(config);
  restore_into(model.params(), d.params, false);
  return {std::move(model), std::move(d.meta)};
}

LoadedMlm parse_mlm(const std::vector<unsigned char>& bytes) {
  Decoded d = decode(bytes);
  expect_type(d, "mlm");
  MlmConfig config;
  try {
    config = mlm_config_from_json(d.config);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("bad MLM config: ") + e.what());
  }
  ToyMLM mlm(config);
  restore_into(mlm.params(), d.params, true);
  return {std::move(mlm), std::move(d.meta)};
}

LoadedCaptionModel load_caption_model(const std::filesystem::path& path) {
  return parse_caption_model(read_file(path));
}

LoadedMlm load_mlm(const std::filesystem::path& path) { return parse_mlm(read_file(path)); }

}  // namespace fusecap
