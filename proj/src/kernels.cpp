#include "farmlight/kernels.h"
#include "farmlight/errors.h"

#include <exception>
#include <optional>

namespace farmlight::kernels {

namespace {

/// Runs body(i) for i in [0, n) across OpenMP threads and rethrows the
/// lowest-index exception, if any, after the region.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

BatchResult batch_gradient(distill::Stage stage, const model::ModelParams& params,
                           const model::ModelConfig& config, std::span<const distill::Sample> samples,
                           std::span<const std::size_t> indices, const distill::LossWeights& weights,
                           distill::KlDirection direction) {
  if (indices.empty()) throw ContractViolation("empty batch");
  std::vector<std::optional<distill::SampleResult>> slots(indices.size());
  parallel_for(indices.size(), [&](std::size_t i) {
    slots[i] = distill::sample_gradient(stage, params, config, samples[indices[i]], weights, direction);
  });
  BatchResult out;
  out.grad = distill::Gradients::zeros_like(params, distill::trainable_tensors(stage));
  for (const auto& r : slots) {
    accumulate(out.loss, r->loss);
    out.grad.add(r->grad);
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  scale(out.loss, inv);
  out.grad.scale(inv);
  return out;
}

distill::LossComponents batch_loss(distill::Stage stage, const model::ModelParams& params,
                                   const model::ModelConfig& config,
                                   std::span<const distill::Sample> samples,
                                   std::span<const std::size_t> indices,
                                   const distill::LossWeights& weights,
                                   distill::KlDirection direction) {
  if (indices.empty()) throw ContractViolation("empty batch");
  std::vector<distill::LossComponents> slots(indices.size());
  parallel_for(indices.size(), [&](std::size_t i) {
    const auto& s = samples[indices[i]];
    const auto tr = model::forward_encoded(params, config, s.encoded, s.features);
    slots[i] = distill::stage_loss(stage, tr, s.teacher, s.label, weights, direction);
  });
  distill::LossComponents total;
  for (const auto& c : slots) accumulate(total, c);
  scale(total, 1.0 / static_cast<double>(indices.size()));
  return total;
}

std::vector<Matrix> encode_batch(const model::ModelParams& params, const model::ModelConfig& config,
                                 std::span<const Matrix> patches) {
  std::vector<Matrix> out(patches.size());
  parallel_for(patches.size(), [&](std::size_t i) { out[i] = model::encode(params, config, patches[i]); });
  return out;
}

std::vector<model::ForwardTrace> forward_batch(const model::ModelParams& params,
                                               const model::ModelConfig& config,
                                               std::span<const distill::Sample> samples) {
  std::vector<model::ForwardTrace> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    out[i] = model::forward_encoded(params, config, samples[i].encoded, samples[i].features);
  });
  return out;
}

std::vector<int> predict_batch(const model::ModelParams& params, const model::ModelConfig& config,
                               std::span<const distill::Sample> samples) {
  std::vector<int> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    out[i] = argmax(model::forward_encoded(params, config, samples[i].encoded, samples[i].features).response);
  });
  return out;
}

}  // namespace farmlight::kernels
