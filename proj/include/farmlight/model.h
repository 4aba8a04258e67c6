#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "farmlight/codec_util.h"
#include "farmlight/fusion.h"
#include "farmlight/tensor.h"

namespace farmlight::model {

enum class Role { teacher, student };

std::string to_string(Role r);

struct ModelConfig {
  Role role = Role::student;
  int visual_dim = 32;     // encoder output width
  int projected_dim = 24;  // projector output width
  int hidden = 32;         // head width
  int classes = kNumClasses;
  int tokens = fusion::kTokens;
  double temperature = 1.0;

  static ModelConfig teacher();
  static ModelConfig student();
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(Json& j, const ModelConfig& c);
void from_json(const Json& j, ModelConfig& c);

/// Parameter tensors in their fixed serialization order.
enum class TensorId : int {
  enc_w, enc_b,    // visual encoder (frozen everywhere)
  proj_w, proj_b,  // projector
  txt_w, txt_b,    // text embedding
  h1_w, h1_b,      // head layer 1
  h2_w, h2_b,      // head layer 2
};

inline constexpr std::array<TensorId, 10> kAllTensors{
    TensorId::enc_w, TensorId::enc_b, TensorId::proj_w, TensorId::proj_b, TensorId::txt_w,
    TensorId::txt_b, TensorId::h1_w,  TensorId::h1_b,   TensorId::h2_w,   TensorId::h2_b};

const char* tensor_name(TensorId id);

struct ModelParams {
  std::array<Matrix, kAllTensors.size()> tensors;

  Matrix& operator[](TensorId id) { return tensors[static_cast<std::size_t>(id)]; }
  const Matrix& operator[](TensorId id) const { return tensors[static_cast<std::size_t>(id)]; }

  static ModelParams zeros(const ModelConfig& config);
  /// Throws ContractViolation on any shape mismatch or non-finite value.
  void check(const ModelConfig& config) const;
  std::size_t parameter_count() const;
  /// Round every value to the nearest f32 (the storage precision).
  void round_to_storage();

  bool operator==(const ModelParams&) const = default;
};

/// Glorot-uniform weights, zero biases, drawn from Rng(seed).
ModelParams init(const ModelConfig& config, std::uint64_t seed);

/// Everything forward computes, kept for inspection and for backprop.
struct ForwardTrace {
  Matrix encoded;                   // tokens × visual_dim
  Matrix projected;                 // tokens × projected_dim
  std::vector<double> token_norms;  // ‖projected row‖₂
  std::vector<double> visual_dist;  // softmax of token norms
  Matrix autocorr;                  // tokens × tokens cosine Gram
  std::vector<double> pooled;       // mean projected token
  std::vector<double> text_embed;   // tanh(features·W_txt + b)
  std::vector<double> hidden_pre;
  std::vector<double> hidden;       // relu(hidden_pre)
  std::vector<double> logits;
  std::vector<double> response;     // softmax(logits / temperature)
};

/// Frozen encoder alone: tanh(patches·W_enc + b_enc).
Matrix encode(const ModelParams& params, const ModelConfig& config, const Matrix& patches);

ForwardTrace forward(const ModelParams& params, const ModelConfig& config, const Matrix& patches,
                     const fusion::SensorFeatures& features);

/// Forward from a precomputed encoder output. The encoder is frozen, so
/// training caches it once per sample.
ForwardTrace forward_encoded(const ModelParams& params, const ModelConfig& config, Matrix encoded,
                             const fusion::SensorFeatures& features);

std::vector<double> softmax(std::span<const double> x, double temperature = 1.0);

inline constexpr double kNormFloor = 1e-12;

// ---- artifact ----

struct ArtifactMeta {
  std::string version_id;
  std::string stage;
  std::string catalog_digest;
  bool operator==(const ArtifactMeta&) const = default;
};

struct Artifact {
  ModelConfig config;
  ModelParams params;
  ArtifactMeta meta;
};

/// Little-endian f32 bytes of the given tensors, in the given order.
Bytes tensor_bytes(const ModelParams& params, std::span<const TensorId> ids);
std::string tensor_digest(const ModelParams& params, std::span<const TensorId> ids);

/// 16 hex chars: first 8 bytes of SHA-256(config ++ stage ++ all tensors).
std::string compute_version_id(const ModelParams& params, const ModelConfig& config,
                               const std::string& stage);

/// Serializes to the .flsm layout. An empty meta.version_id is filled in.
Bytes save(const ModelParams& params, const ModelConfig& config, ArtifactMeta meta);
/// Verifies magic, version and trailer digest before reading tensors.
Artifact load(std::span<const std::uint8_t> bytes);

Artifact load_file(const std::string& path);
void save_file(const std::string& path, const Artifact& artifact);

}  // namespace farmlight::model
