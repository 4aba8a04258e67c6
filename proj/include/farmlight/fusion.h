#pragma once

#include <array>
#include <string>

#include "farmlight/domain.h"
#include "farmlight/tensor.h"

namespace farmlight::fusion {

inline constexpr int kPatchSide = 6;
inline constexpr int kGridSide = kImageSide / kPatchSide;    // 4
inline constexpr int kTokens = kGridSide * kGridSide;         // 16
inline constexpr int kPatchDim = kPatchSide * kPatchSide;     // 36
inline constexpr int kSensorDim = 4;

using SensorFeatures = std::array<double, kSensorDim>;

struct FieldRange {
  double lo;
  double hi;
};

/// Fixed normalization ranges for (ph, temperature, humidity, light).
inline constexpr std::array<FieldRange, kSensorDim> kFieldRanges{
    {{3.0, 9.0}, {-10.0, 50.0}, {0.0, 100.0}, {0.0, 120.0}}};

struct Prompt {
  std::string text;
  SensorFeatures features{};
};

/// Renders sensor values into the textual prompt and min-max normalizes them.
Prompt build_prompt(const SensorReading& sensors);
SensorFeatures normalize(const SensorReading& sensors);

/// 24×24 image → 16×36: a 4×4 grid of 6×6 patches, both row-major.
Matrix patchify(const PatchImage& image);
PatchImage unpatchify(const Matrix& patches);

}  // namespace farmlight::fusion
