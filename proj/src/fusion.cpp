#include "farmlight/fusion.h"
#include "farmlight/errors.h"

#include <algorithm>
#include <cstdio>

namespace farmlight::fusion {

namespace {

std::string one_decimal(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

}  // namespace

SensorFeatures normalize(const SensorReading& s) {
  const std::array<double, kSensorDim> raw{s.ph, s.temperature_c, s.humidity_pct, s.light_klux};
  SensorFeatures out{};
  for (int i = 0; i < kSensorDim; ++i) {
    const auto [lo, hi] = kFieldRanges[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] = std::clamp((raw[static_cast<std::size_t>(i)] - lo) / (hi - lo), 0.0, 1.0);
  }
  return out;
}

Prompt build_prompt(const SensorReading& s) {
  Prompt p;
  p.text = "Current sensor data: pH=" + one_decimal(s.ph) +
           ", temperature=" + one_decimal(s.temperature_c) + "°C" +
           ", humidity=" + one_decimal(s.humidity_pct) + "%" +
           ", light=" + one_decimal(s.light_klux) + "klx." +
           " Analyze whether the crops in this image exhibit abnormalities.";
  p.features = normalize(s);
  return p;
}

Matrix patchify(const PatchImage& image) {
  if (image.width != kImageSide || image.height != kImageSide ||
      image.pixels.size() != static_cast<std::size_t>(kImagePixels)) {
    throw ContractViolation("patchify expects a 24x24 image");
  }
  Matrix out(kTokens, kPatchDim);
  for (int gy = 0; gy < kGridSide; ++gy) {
    for (int gx = 0; gx < kGridSide; ++gx) {
      const auto token = static_cast<std::size_t>(gy * kGridSide + gx);
      for (int py = 0; py < kPatchSide; ++py) {
        for (int px = 0; px < kPatchSide; ++px) {
          out(token, static_cast<std::size_t>(py * kPatchSide + px)) =
              image.at(gx * kPatchSide + px, gy * kPatchSide + py);
        }
      }
    }
  }
  return out;
}

PatchImage unpatchify(const Matrix& patches) {
  if (patches.rows != kTokens || patches.cols != kPatchDim) {
    throw ContractViolation("unpatchify expects a 16x36 patch matrix");
  }
  PatchImage img;
  for (int gy = 0; gy < kGridSide; ++gy) {
    for (int gx = 0; gx < kGridSide; ++gx) {
      const auto token = static_cast<std::size_t>(gy * kGridSide + gx);
      for (int py = 0; py < kPatchSide; ++py) {
        for (int px = 0; px < kPatchSide; ++px) {
          const int x = gx * kPatchSide + px;
          const int y = gy * kPatchSide + py;
          img.pixels[static_cast<std::size_t>(y * kImageSide + x)] =
              patches(token, static_cast<std::size_t>(py * kPatchSide + px));
        }
      }
    }
  }
  return img;
}

}  // namespace farmlight::fusion
