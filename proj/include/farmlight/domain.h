#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "farmlight/codec_util.h"
#include "farmlight/errors.h"

namespace farmlight {

inline constexpr int kNumClasses = 8;
inline constexpr int kImageSide = 24;
inline constexpr int kImagePixels = kImageSide * kImageSide;

struct SensorReading {
  double ph = 6.5;
  double temperature_c = 20.0;
  double humidity_pct = 50.0;
  double light_klux = 0.0;
  std::int64_t timestamp_ms = 0;
  std::string sensor_id;

  /// Throws ContractViolation when a field leaves its physical range.
  void validate() const;
  bool operator==(const SensorReading&) const = default;
};

struct PatchImage {
  int width = kImageSide;
  int height = kImageSide;
  std::vector<double> pixels = std::vector<double>(kImagePixels, 0.0);  // row-major

  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y * width + x)]; }
  void validate() const;
  bool operator==(const PatchImage&) const = default;
};

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
  bool operator==(const GeoPoint&) const = default;
};

struct Observation {
  std::string obs_id;
  PatchImage image;
  SensorReading sensors;
  GeoPoint location;
  std::optional<int> label;

  bool operator==(const Observation&) const = default;
};

enum class Urgency { low, medium, high };

std::string to_string(Urgency u);
Urgency urgency_from_string(const std::string& s);

struct ClassInfo {
  int class_id = 0;
  std::string name;
  bool is_healthy = false;
  std::vector<std::string> symptoms;
  std::vector<std::string> treatment;
  Urgency urgency = Urgency::low;

  bool operator==(const ClassInfo&) const = default;
};

class ClassCatalog {
 public:
  ClassCatalog() = default;
  /// Validates ids 0..K-1, a single healthy class at id 0, and keyword counts.
  explicit ClassCatalog(std::vector<ClassInfo> classes);

  std::size_t size() const { return classes_.size(); }
  const ClassInfo& at(int class_id) const;
  const std::vector<ClassInfo>& classes() const { return classes_; }
  /// Joined treatment list, or "No action required." for the healthy class.
  std::string recommendation(int class_id) const;
  /// Hex SHA-256 of the canonical JSON encoding.
  std::string digest() const;

  bool operator==(const ClassCatalog&) const = default;

 private:
  std::vector<ClassInfo> classes_;
};

inline constexpr const char* kNoActionRequired = "No action required.";

struct Diagnosis {
  std::string obs_id;
  std::vector<double> probs;
  int predicted = 0;
  double confidence = 0.0;
  std::string recommendation;
  std::string model_version;

  /// Renormalizes `raw` and derives predicted (lowest index wins ties) and
  /// confidence. An already-normalized vector is kept as is.
  static Diagnosis from_probs(std::string obs_id, std::span<const double> raw,
                              std::string recommendation, std::string model_version);

  bool operator==(const Diagnosis&) const = default;
};

/// Index of the maximum; ties resolve to the lowest index.
int argmax(std::span<const double> values);

// Canonical JSON encodings (nlohmann ADL hooks).
void to_json(Json& j, const SensorReading& v);
void from_json(const Json& j, SensorReading& v);
void to_json(Json& j, const PatchImage& v);
void from_json(const Json& j, PatchImage& v);
void to_json(Json& j, const GeoPoint& v);
void from_json(const Json& j, GeoPoint& v);
void to_json(Json& j, const Observation& v);
void from_json(const Json& j, Observation& v);
void to_json(Json& j, const ClassInfo& v);
void from_json(const Json& j, ClassInfo& v);
void to_json(Json& j, const ClassCatalog& v);
void from_json(const Json& j, ClassCatalog& v);
void to_json(Json& j, const Diagnosis& v);
void from_json(const Json& j, Diagnosis& v);

/// Converts JSON to T, mapping any schema or range error to FormatError.
template <typename T>
T decode_json(const Json& j) {
  try {
    return j.get<T>();
  } catch (const Json::exception& e) {
    throw FormatError(std::string("schema error: ") + e.what());
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("invalid value: ") + e.what());
  }
}

template <typename T>
T decode_json(std::string_view text) {
  return decode_json<T>(parse_json(text));
}

/// Newline-delimited canonical JSON; DEFLATE-compressed when the path ends in ".z".
Bytes encode_dataset(std::span<const Observation> observations, bool compressed);
std::vector<Observation> decode_dataset(std::span<const std::uint8_t> bytes, bool compressed);
void write_dataset(const std::filesystem::path& path, std::span<const Observation> observations);
std::vector<Observation> read_dataset(const std::filesystem::path& path);

/// UUIDv4 layout over 16 random bytes.
std::string uuid_from_bytes(std::span<const std::uint8_t, 16> bytes);

}  // namespace farmlight
