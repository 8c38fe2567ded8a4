#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fusecap {

// Attribute tables of the synthetic scene world.
inline constexpr std::array<const char*, 4> kShapeNames = {"circle", "square", "triangle", "star"};
inline constexpr std::array<const char*, 7> kColorNames = {"red",    "blue",  "green", "yellow",
                                                           "purple", "black", "white"};
inline constexpr std::array<const char*, 2> kSizeNames = {"small", "large"};
inline constexpr std::array<const char*, 3> kCountWords = {"a", "two", "three"};
inline constexpr std::array<const char*, 5> kRelationNames = {"left of", "right of", "above",
                                                              "below", "next to"};

struct SceneObject {
  int shape = 0;
  int color = 0;
  int size = 0;
  int count = 1;  // 1..3

  bool operator==(const SceneObject&) const = default;
};

/// 1-3 objects; when there are at least two, `relation` relates object 0 to object 1.
struct Scene {
  std::vector<SceneObject> objects;
  std::optional<int> relation;

  bool operator==(const Scene&) const = default;
};

struct CaptionExample {
  std::string id;
  std::string split;  // "train" | "val" | "test"
  std::vector<double> features;
  std::vector<std::string> references;
  std::optional<Scene> scene;

  bool operator==(const CaptionExample&) const = default;
};

struct DatasetConfig {
  std::uint64_t seed = 7;
  std::size_t n_scenes = 2400;
  std::size_t refs_per_scene = 3;
  std::array<double, 3> split_fractions = {2000.0 / 2400.0, 200.0 / 2400.0, 200.0 / 2400.0};
  std::size_t feature_dim = 64;
  double noise = 0.05;

  void validate() const;
};

/// Minimum feature width holding the one-hot scene encoding.
inline constexpr std::size_t kMinFeatureDim = 56;

Scene generate_scene(std::uint64_t seed, std::size_t index);
/// Per-slot one-hot attributes + relation + presence bits, plus N(0, noise²).
std::vector<double> scene_features(const Scene& scene, std::uint64_t seed, std::size_t index,
                                   std::size_t feature_dim, double noise);
/// Number of distinct caption templates available for a scene of this arity.
std::size_t template_count(std::size_t arity);
std::string render_caption(const Scene& scene, std::size_t template_index);

/// Deterministic in (config); ids "s000000"...; splits are contiguous id ranges.
std::vector<CaptionExample> generate_dataset(const DatasetConfig& config);

std::vector<CaptionExample> select_split(const std::vector<CaptionExample>& all,
                                         const std::string& split);

std::string to_jsonl(const std::vector<CaptionExample>& examples);
void write_jsonl(const std::filesystem::path& path, const std::vector<CaptionExample>& examples);
/// Throws ParseError carrying the 1-based line of the first malformed record.
std::vector<CaptionExample> parse_jsonl(const std::string& text);
std::vector<CaptionExample> read_jsonl(const std::filesystem::path& path);

/// One generated or emended caption per example id.
struct CaptionRecord {
  std::string id;
  std::string caption;

  bool operator==(const CaptionRecord&) const = default;
};

void write_captions(const std::filesystem::path& path, const std::vector<CaptionRecord>& records);
std::vector<CaptionRecord> read_captions(const std::filesystem::path& path);

}  // namespace fusecap
