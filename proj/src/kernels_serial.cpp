#include "farmlight/kernels.h"
#include "farmlight/errors.h"

namespace farmlight::kernels {

void accumulate(distill::LossComponents& into, const distill::LossComponents& add) {
  into.response_kl += add.response_kl;
  into.visual_kl += add.visual_kl;
  into.autocorr += add.autocorr;
  into.cross_entropy += add.cross_entropy;
  into.total += add.total;
}

void scale(distill::LossComponents& c, double factor) {
  c.response_kl *= factor;
  c.visual_kl *= factor;
  c.autocorr *= factor;
  c.cross_entropy *= factor;
  c.total *= factor;
}

namespace serial {

BatchResult batch_gradient(distill::Stage stage, const model::ModelParams& params,
                           const model::ModelConfig& config, std::span<const distill::Sample> samples,
                           std::span<const std::size_t> indices, const distill::LossWeights& weights,
                           distill::KlDirection direction) {
  if (indices.empty()) throw ContractViolation("empty batch");
  BatchResult out;
  out.grad = distill::Gradients::zeros_like(params, distill::trainable_tensors(stage));
  for (std::size_t idx : indices) {
    const auto r = distill::sample_gradient(stage, params, config, samples[idx], weights, direction);
    accumulate(out.loss, r.loss);
    out.grad.add(r.grad);
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
  distill::LossComponents total;
  for (std::size_t idx : indices) {
    const auto& s = samples[idx];
    const auto tr = model::forward_encoded(params, config, s.encoded, s.features);
    accumulate(total, distill::stage_loss(stage, tr, s.teacher, s.label, weights, direction));
  }
  scale(total, 1.0 / static_cast<double>(indices.size()));
  return total;
}

std::vector<Matrix> encode_batch(const model::ModelParams& params, const model::ModelConfig& config,
                                 std::span<const Matrix> patches) {
  std::vector<Matrix> out;
  out.reserve(patches.size());
  for (const auto& p : patches) out.push_back(model::encode(params, config, p));
  return out;
}

std::vector<model::ForwardTrace> forward_batch(const model::ModelParams& params,
                                               const model::ModelConfig& config,
                                               std::span<const distill::Sample> samples) {
  std::vector<model::ForwardTrace> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model::forward_encoded(params, config, s.encoded, s.features));
  return out;
}

std::vector<int> predict_batch(const model::ModelParams& params, const model::ModelConfig& config,
                               std::span<const distill::Sample> samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    out.push_back(argmax(model::forward_encoded(params, config, s.encoded, s.features).response));
  }
  return out;
}

}  // namespace serial
}  // namespace farmlight::kernels
