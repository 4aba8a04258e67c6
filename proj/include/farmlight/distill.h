#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "farmlight/model.h"

namespace farmlight::distill {

enum class Stage { teacher_pretrain, dpt, sft, dft };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

/// Which way the KL terms point; forward means KL(teacher ‖ student).
enum class KlDirection { forward, reverse };

struct LossWeights {
  double response_kl = 1.0;   // alpha
  double visual_kl = 1.0;     // beta
  double autocorr = 1.0;      // gamma
  double ground_truth = 1.0;  // delta, DFT only
};

/// Per-epoch learning-rate schedule. Cosine anneals from lr toward 0.
enum class LrSchedule { constant, cosine };

struct StageConfig {
  Stage stage = Stage::sft;
  int epochs = 15;
  int batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  LossWeights weights;
  KlDirection kl_direction = KlDirection::forward;
  LrSchedule schedule = LrSchedule::cosine;
  std::uint64_t seed = 0;

  double lr_at(int epoch) const;

  /// Defaults per stage: teacher 30 epochs, the student stages 15 each.
  static StageConfig defaults(Stage stage, std::uint64_t seed = 0);
  void validate() const;
};

/// Σ p·ln(p / max(q, 1e-12)); zero-probability terms of p contribute nothing.
double kl_div(std::span<const double> p, std::span<const double> q);

/// 1 − cosine similarity of the flattened matrices.
double corr_loss(const Matrix& student, const Matrix& teacher);

struct LossComponents {
  double response_kl = 0.0;
  double visual_kl = 0.0;
  double autocorr = 0.0;
  double cross_entropy = 0.0;
  double total = 0.0;
};

/// The subset of a teacher trace that distillation targets.
struct TeacherTarget {
  std::vector<double> response;
  std::vector<double> visual_dist;
  Matrix autocorr;
};

TeacherTarget make_target(const model::ForwardTrace& teacher_trace);

LossComponents stage_loss(Stage stage, const model::ForwardTrace& student,
                          const TeacherTarget* teacher, std::optional<int> label,
                          const LossWeights& weights = {},
                          KlDirection direction = KlDirection::forward);

/// DPT trains the projector only; every other stage adds the text embedding
/// and head. The encoder is never trainable.
std::vector<model::TensorId> trainable_tensors(Stage stage);

/// Gradients for exactly the trainable tensors of a stage.
struct Gradients {
  std::vector<model::TensorId> ids;
  std::vector<Matrix> values;

  static Gradients zeros_like(const model::ModelParams& params, std::span<const model::TensorId> ids);
  const Matrix* find(model::TensorId id) const;
  Matrix* find(model::TensorId id);
  void add(const Gradients& other);
  void scale(double factor);
  double norm() const;
};

/// One training example with its frozen-encoder output cached.
struct Sample {
  Matrix encoded;
  fusion::SensorFeatures features{};
  std::optional<int> label;
  const TeacherTarget* teacher = nullptr;
};

struct SampleResult {
  LossComponents loss;
  Gradients grad;
};

/// Loss and exact analytic gradient for one sample.
SampleResult sample_gradient(Stage stage, const model::ModelParams& params,
                             const model::ModelConfig& config, const Sample& sample,
                             const LossWeights& weights = {},
                             KlDirection direction = KlDirection::forward);

}  // namespace farmlight::distill
