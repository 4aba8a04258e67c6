#pragma once

#include <span>
#include <vector>

#include "farmlight/distill.h"
#include "farmlight/model.h"

// Batched kernels. The default namespace runs the per-sample work in an
// OpenMP parallel loop; `serial` holds the single-threaded reference used by
// tests and the benchmark. Per-sample results land in fixed slots and are
// reduced in index order, so both produce bit-identical output for any
// thread count.
namespace farmlight::kernels {

struct BatchResult {
  distill::LossComponents loss;  // batch mean
  distill::Gradients grad;       // batch mean, trainable tensors only
};

BatchResult batch_gradient(distill::Stage stage, const model::ModelParams& params,
                           const model::ModelConfig& config, std::span<const distill::Sample> samples,
                           std::span<const std::size_t> indices, const distill::LossWeights& weights,
                           distill::KlDirection direction);

/// Mean stage loss over samples[indices] without gradients.
distill::LossComponents batch_loss(distill::Stage stage, const model::ModelParams& params,
                                   const model::ModelConfig& config,
                                   std::span<const distill::Sample> samples,
                                   std::span<const std::size_t> indices,
                                   const distill::LossWeights& weights,
                                   distill::KlDirection direction);

std::vector<Matrix> encode_batch(const model::ModelParams& params, const model::ModelConfig& config,
                                 std::span<const Matrix> patches);

std::vector<model::ForwardTrace> forward_batch(const model::ModelParams& params,
                                               const model::ModelConfig& config,
                                               std::span<const distill::Sample> samples);

/// Argmax class of the response distribution for every sample.
std::vector<int> predict_batch(const model::ModelParams& params, const model::ModelConfig& config,
                               std::span<const distill::Sample> samples);

namespace serial {

BatchResult batch_gradient(distill::Stage stage, const model::ModelParams& params,
                           const model::ModelConfig& config, std::span<const distill::Sample> samples,
                           std::span<const std::size_t> indices, const distill::LossWeights& weights,
                           distill::KlDirection direction);

distill::LossComponents batch_loss(distill::Stage stage, const model::ModelParams& params,
                                   const model::ModelConfig& config,
                                   std::span<const distill::Sample> samples,
                                   std::span<const std::size_t> indices,
                                   const distill::LossWeights& weights,
                                   distill::KlDirection direction);

std::vector<Matrix> encode_batch(const model::ModelParams& params, const model::ModelConfig& config,
                                 std::span<const Matrix> patches);

std::vector<model::ForwardTrace> forward_batch(const model::ModelParams& params,
                                               const model::ModelConfig& config,
                                               std::span<const distill::Sample> samples);

std::vector<int> predict_batch(const model::ModelParams& params, const model::ModelConfig& config,
                               std::span<const distill::Sample> samples);

}  // namespace serial

void accumulate(distill::LossComponents& into, const distill::LossComponents& add);
void scale(distill::LossComponents& c, double factor);

}  // namespace farmlight::kernels
