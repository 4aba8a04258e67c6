#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "farmlight/domain.h"
#include "farmlight/rng.h"

namespace farmlight::synth {

struct ClassSpec {
  int class_id = 0;
  double texture_freq = 0.0;   // cycles per image width
  double texture_angle = 0.0;  // radians
  double texture_amp = 0.0;    // [0, 0.45]
  std::array<double, 4> sensor_mean{};  // ph, temperature, humidity, light
  std::array<double, 4> sensor_std{};
  double pixel_noise = 0.0;
};

struct World {
  ClassCatalog catalog;
  std::vector<ClassSpec> specs;
};

/// The built-in eight-class farm world.
World default_world();

/// One labeled observation drawn from `spec`.
Observation gen_observation(const ClassSpec& spec, Rng& rng, std::int64_t timestamp_ms = 0);

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct DatasetManifest {
  std::string name;
  std::uint64_t seed = 0;
  std::string catalog_digest;
  std::vector<int> counts;
  Split split = Split::train;
  std::string file_digest;
  std::size_t record_count = 0;

  bool operator==(const DatasetManifest&) const = default;
};

void to_json(Json& j, const DatasetManifest& m);
void from_json(const Json& j, DatasetManifest& m);

struct Dataset {
  std::vector<Observation> observations;
  DatasetManifest manifest;
  Bytes file_bytes;  // compressed NDJSON, exactly what is written to disk
};

/// Stratified generation; each split draws from its own substream of `seed`.
Dataset gen_dataset(const World& world, std::span<const int> counts, std::uint64_t seed, Split split);

/// Writes `<dir>/<split>.ndjson.z` and `<dir>/<split>.manifest.json`.
DatasetManifest write_dataset_files(const std::filesystem::path& dir, const Dataset& dataset);
/// Loads a split and checks it against its manifest.
std::vector<Observation> load_split(const std::filesystem::path& dir, Split split,
                                    DatasetManifest* manifest_out = nullptr);

/// Generates train/val/test into `dir`. Returns the three manifests.
std::vector<DatasetManifest> gen_all_splits(const std::filesystem::path& dir, const World& world,
                                            std::uint64_t seed, int train_per_class,
                                            int val_per_class, int test_per_class);

enum class VqaKind { closed, open };

inline constexpr const char* kClosedQuestion = "Is the crop in this image diseased?";
inline constexpr const char* kOpenQuestion = "Describe the symptoms and recommend a treatment.";

struct VqaRecord {
  std::string vqa_id;
  std::string obs_id;
  VqaKind kind = VqaKind::closed;
  std::string question;
  std::string gold_answer;                 // closed: "yes" / "no"
  std::vector<std::string> gold_keywords;  // open: sorted, unique
  int gold_class = 0;

  bool operator==(const VqaRecord&) const = default;
};

void to_json(Json& j, const VqaRecord& r);
void from_json(const Json& j, VqaRecord& r);

/// One closed-set and one open-set record per labeled observation.
std::vector<VqaRecord> gen_vqa_pairs(const ClassCatalog& catalog,
                                     std::span<const Observation> observations, Rng& rng);

}  // namespace farmlight::synth
