#include "fusecap/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fusecap/errors.hpp"
#include "fusecap/rng.hpp"

namespace fusecap {
namespace {

using nlohmann::json;

constexpr std::size_t kSlotWidth = kShapeNames.size() + kColorNames.size() + kSizeNames.size() + 3;
constexpr std::size_t kMaxObjects = 3;

std::string noun_phrase(const SceneObject& o) {
  std::string np = std::string(kCountWords[o.count - 1]) + " " + kSizeNames[o.size] + " " +
                   kColorNames[o.color] + " " + kShapeNames[o.shape];
  if (o.count > 1) np += "s";
  return np;
}

const char* be_verb(const SceneObject& o) { return o.count > 1 ? "are" : "is"; }

int inverse_relation(int r) {
  switch (r) {
    case 0: return 1;
    case 1: return 0;
    case 2: return 3;
    case 3: return 2;
    default: return 4;
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

json scene_to_json(const Scene& s) {
  json objs = json::array();
  for (const auto& o : s.objects) {
    objs.push_back({{"shape", kShapeNames[o.shape]},
                    {"color", kColorNames[o.color]},
                    {"size", kSizeNames[o.size]},
                    {"count", o.count}});
  }
  json j = {{"objects", objs}};
  if (s.relation) j["relation"] = kRelationNames[*s.relation];
  return j;
}

template <std::size_t N>
int lookup(const std::array<const char*, N>& table, const std::string& name) {
  for (std::size_t i = 0; i < N; ++i) {
    if (name == table[i]) return static_cast<int>(i);
  }
  throw InputError("unknown attribute value '" + name + "'");
}

Scene scene_from_json(const json& j) {
  Scene s;
  for (const auto& o : j.at("objects")) {
    SceneObject obj;
    obj.shape = lookup(kShapeNames, o.at("shape").get<std::string>());
    obj.color = lookup(kColorNames, o.at("color").get<std::string>());
    obj.size = lookup(kSizeNames, o.at("size").get<std::string>());
    obj.count = o.at("count").get<int>();
    s.objects.push_back(obj);
  }
  if (j.contains("relation")) s.relation = lookup(kRelationNames, j.at("relation").get<std::string>());
  return s;
}

}  // namespace

void DatasetConfig::validate() const {
  if (n_scenes < 10) throw ConfigError("dataset needs at least 10 scenes");
  if (refs_per_scene < 3 || refs_per_scene > 5) throw ConfigError("refs per scene must be 3..5");
  double total = 0.0;
  for (double f : split_fractions) {
    if (f < 0.0) throw ConfigError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (std::llround(split_fractions[0] * static_cast<double>(n_scenes)) < 1) {
    throw ConfigError("training split would be empty");
  }
  if (feature_dim < kMinFeatureDim) {
    throw ConfigError("feature_dim must be at least " + std::to_string(kMinFeatureDim));
  }
  if (noise < 0.0) throw ConfigError("feature noise must be non-negative");
}

Scene generate_scene(std::uint64_t seed, std::size_t index) {
  Rng rng = Rng::derive(seed, index, 0);
  Scene s;
  const std::size_t n = 1 + rng.index(kMaxObjects);
  while (s.objects.size() < n) {
    SceneObject o;
    o.shape = static_cast<int>(rng.index(kShapeNames.size()));
    o.color = static_cast<int>(rng.index(kColorNames.size()));
    o.size = static_cast<int>(rng.index(kSizeNames.size()));
    o.count = 1 + static_cast<int>(rng.index(3));
    // distinct (shape, color) pairs keep every caption unambiguous
    bool clash = std::any_of(s.objects.begin(), s.objects.end(), [&](const SceneObject& p) {
      return p.shape == o.shape && p.color == o.color;
    });
    if (!clash) s.objects.push_back(o);
  }
  if (n >= 2) s.relation = static_cast<int>(rng.index(kRelationNames.size()));
  return s;
}

std::vector<double> scene_features(const Scene& scene, std::uint64_t seed, std::size_t index,
                                   std::size_t feature_dim, double noise) {
  if (feature_dim < kMinFeatureDim) throw ConfigError("feature_dim too small for scene encoding");
  std::vector<double> f(feature_dim, 0.0);
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    const auto& o = scene.objects[k];
    const std::size_t base = k * kSlotWidth;
    f[base + o.shape] = 1.0;
    f[base + kShapeNames.size() + o.color] = 1.0;
    f[base + kShapeNames.size() + kColorNames.size() + o.size] = 1.0;
    f[base + kShapeNames.size() + kColorNames.size() + kSizeNames.size() + (o.count - 1)] = 1.0;
    f[kMaxObjects * kSlotWidth + kRelationNames.size() + k] = 1.0;
  }
  if (scene.relation) f[kMaxObjects * kSlotWidth + *scene.relation] = 1.0;
  Rng rng = Rng::derive(seed, index, 1);
  for (auto& v : f) v += rng.normal(0.0, noise);
  return f;
}

std::size_t template_count(std::size_t arity) {
  if (arity < 1 || arity > kMaxObjects) throw InputError("scene arity must be 1..3");
  return 5;
}

std::string render_caption(const Scene& scene, std::size_t t) {
  const auto& obj = scene.objects;
  const std::size_t arity = obj.size();
  if (t >= template_count(arity)) throw InputError("template index out of range");
  if (arity == 1) {
    const auto np = noun_phrase(obj[0]);
    switch (t) {
      case 0: return np;
      case 1: return std::string("there ") + be_verb(obj[0]) + " " + np;
      case 2: return "an image of " + np;
      case 3: return "a picture showing " + np;
      default: return np + " in the picture";
    }
  }
  const std::string np0 = noun_phrase(obj[0]), np1 = noun_phrase(obj[1]);
  const std::string rel = kRelationNames[*scene.relation];
  const std::string inv = kRelationNames[inverse_relation(*scene.relation)];
  const std::string tail = arity == 3 ? " and " + noun_phrase(obj[2]) : "";
  switch (t) {
    case 0: return np0 + " " + rel + " " + np1 + tail;
    case 1: return std::string("there ") + be_verb(obj[0]) + " " + np0 + " " + rel + " " + np1 + tail;
    case 2: return "an image of " + np0 + " " + rel + " " + np1 + tail;
    case 3:
      return arity == 3 ? noun_phrase(obj[2]) + " and " + np1 + " " + inv + " " + np0
                        : np1 + " " + inv + " " + np0;
    default: return "a picture showing " + np1 + " " + inv + " " + np0 + tail;
  }
}

std::vector<CaptionExample> generate_dataset(const DatasetConfig& config) {
  config.validate();
  const auto n = config.n_scenes;
  const auto n_train = static_cast<std::size_t>(std::llround(config.split_fractions[0] * n));
  const auto n_val = std::min(
      n - n_train, static_cast<std::size_t>(std::llround(config.split_fractions[1] * n)));

  std::vector<CaptionExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    CaptionExample ex;
    char id[32];
    std::snprintf(id, sizeof id, "s%06zu", i);
    ex.id = id;
    ex.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    Scene scene = generate_scene(config.seed, i);
    ex.features = scene_features(scene, config.seed, i, config.feature_dim, config.noise);

    std::vector<std::size_t> templates(template_count(scene.objects.size()));
    std::iota(templates.begin(), templates.end(), 0);
    Rng pick = Rng::derive(config.seed, i, 2);
    for (std::size_t k = 0; k < config.refs_per_scene; ++k) {
      std::size_t j = k + pick.index(templates.size() - k);
      std::swap(templates[k], templates[j]);
      ex.references.push_back(render_caption(scene, templates[k]));
    }
    ex.scene = std::move(scene);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<CaptionExample> select_split(const std::vector<CaptionExample>& all,
                                         const std::string& split) {
  std::vector<CaptionExample> out;
  std::copy_if(all.begin(), all.end(), std::back_inserter(out),
               [&](const CaptionExample& e) { return e.split == split; });
  return out;
}

std::string to_jsonl(const std::vector<CaptionExample>& examples) {
  std::string text;
  for (const auto& e : examples) {
    json j = {{"id", e.id}, {"split", e.split}, {"features", e.features}, {"references", e.references}};
    if (e.scene) j["scene"] = scene_to_json(*e.scene);
    text += j.dump();
    text += '\n';
  }
  return text;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<CaptionExample>& examples) {
  write_file(path, to_jsonl(examples));
}

std::vector<CaptionExample> parse_jsonl(const std::string& text) {
  std::vector<CaptionExample> out;
  std::set<std::string> ids;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      CaptionExample e;
      e.id = j.at("id").get<std::string>();
      e.split = j.at("split").get<std::string>();
      if (e.split != "train" && e.split != "val" && e.split != "test") {
        throw InputError("unknown split '" + e.split + "'");
      }
      e.features = j.at("features").get<std::vector<double>>();
      e.references = j.at("references").get<std::vector<std::string>>();
      if (e.features.empty()) throw InputError("empty feature vector");
      if (e.references.empty()) throw InputError("no references");
      if (j.contains("scene")) e.scene = scene_from_json(j.at("scene"));
      if (!ids.insert(e.id).second) throw InputError("duplicate id " + e.id);
      out.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw ParseError(std::string("malformed dataset record: ") + ex.what(), lineno);
    }
  }
  return out;
}

std::vector<CaptionExample> read_jsonl(const std::filesystem::path& path) {
  return parse_jsonl(read_file(path));
}

void write_captions(const std::filesystem::path& path, const std::vector<CaptionRecord>& records) {
  std::string text;
  for (const auto& r : records) {
    text += json{{"id", r.id}, {"caption", r.caption}}.dump();
    text += '\n';
  }
  write_file(path, text);
}

std::vector<CaptionRecord> read_captions(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  std::vector<CaptionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("caption").get<std::string>()});
    } catch (const std::exception& ex) {
      throw ParseError(std::string("malformed caption record: ") + ex.what(), lineno);
    }
  }
  return out;
}

}  // namespace fusecap
