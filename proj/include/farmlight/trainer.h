#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "farmlight/distill.h"
#include "farmlight/domain.h"
#include "farmlight/model.h"

namespace farmlight::distill {

struct EpochStats {
  int epoch = 0;
  LossComponents running;  // mean over the epoch's batches, taken before each step
  double train_loss = 0.0; // full training-set loss after the epoch
};

struct TrainReport {
  Stage stage = Stage::sft;
  std::vector<EpochStats> epochs;
  std::map<std::string, std::string> frozen_before;  // tensor name → SHA-256 hex
  std::map<std::string, std::string> frozen_after;
  double val_accuracy = 0.0;
  double wall_seconds = 0.0;

  bool frozen_intact() const { return frozen_before == frozen_after; }
};

void to_json(Json& j, const TrainReport& r);

/// Encodes observations with the model's frozen encoder.
std::vector<Sample> prepare_samples(const model::ModelParams& params, const model::ModelConfig& config,
                                    std::span<const Observation> observations);

/// Fraction of observations whose argmax class equals the label.
double accuracy(const model::ModelParams& params, const model::ModelConfig& config,
                std::span<const Observation> observations);

struct StageResult {
  model::Artifact artifact;
  TrainReport report;
};

/// SGD with momentum over the stage's trainable tensors. `teacher` is required
/// for dpt/dft and must be null for teacher_pretrain/sft.
StageResult train_stage(const model::Artifact& start, const model::Artifact* teacher,
                        std::span<const Observation> train, std::span<const Observation> val,
                        const StageConfig& config);

struct PipelineConfig {
  std::uint64_t seed = 0;
  StageConfig teacher = StageConfig::defaults(Stage::teacher_pretrain);
  StageConfig dpt = StageConfig::defaults(Stage::dpt);
  StageConfig sft = StageConfig::defaults(Stage::sft);
  StageConfig dft = StageConfig::defaults(Stage::dft);

  static PipelineConfig defaults(std::uint64_t seed);
};

struct PipelineResult {
  model::Artifact teacher;
  std::vector<model::Artifact> students;  // init, dpt, sft, dft
  std::vector<TrainReport> reports;       // teacher_pretrain, dpt, sft, dft
};

inline constexpr const char* kTeacherFile = "teacher.flsm";
std::string student_file(const std::string& stage);

/// teacher_pretrain, then DPT → SFT → DFT. When `out_dir` is given each stage's
/// artifact is written there as soon as it finishes.
PipelineResult run_pipeline(std::span<const Observation> train, std::span<const Observation> val,
                            const std::string& catalog_digest, const PipelineConfig& config,
                            const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct GradCheckResult {
  Stage stage = Stage::sft;
  std::size_t coordinates = 0;
  double max_relative_error = 0.0;
  std::string worst_coordinate;
  bool passed = false;
};

void to_json(Json& j, const GradCheckResult& r);

inline constexpr double kGradCheckStep = 1e-4;
inline constexpr double kGradCheckTolerance = 1e-4;

/// Central finite differences of the batch-mean stage loss, evaluated through
/// the full forward pass, against the analytic gradient.
GradCheckResult gradcheck(Stage stage, const model::Artifact& student, const model::Artifact* teacher,
                          std::span<const Observation> batch, std::size_t coordinates,
                          std::uint64_t seed);

}  // namespace farmlight::distill
