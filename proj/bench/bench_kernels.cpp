// Parallel kernels against their serial reference on one shared workload.

#include <benchmark/benchmark.h>

#include <numeric>

#include "farmlight/kernels.h"
#include "farmlight/synthgen.h"
#include "farmlight/trainer.h"

using namespace farmlight;

namespace {

struct Workload {
  model::Artifact student;
  std::vector<Observation> obs;
  std::vector<Matrix> patches;
  std::vector<distill::TeacherTarget> targets;
  std::vector<distill::Sample> samples;
  std::vector<std::size_t> indices;

  Workload() {
    auto world = synth::default_world();
    auto cfg = model::ModelConfig::student();
    student = {cfg, model::init(cfg, 1), {}};
    auto tcfg = model::ModelConfig::teacher();
    model::Artifact teacher{tcfg, model::init(tcfg, 2), {}};
    std::vector<int> counts(kNumClasses, 32);
    obs = synth::gen_dataset(world, counts, 3, synth::Split::train).observations;
    for (const auto& o : obs) patches.push_back(fusion::patchify(o.image));
    samples = distill::prepare_samples(student.params, student.config, obs);
    for (const auto& o : obs)
      targets.push_back(distill::make_target(model::forward(teacher.params, teacher.config,
                                                            fusion::patchify(o.image),
                                                            fusion::normalize(o.sensors))));
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i].teacher = &targets[i];
    indices.resize(samples.size());
    std::iota(indices.begin(), indices.end(), 0);
  }
};

const Workload& workload() {
  static const Workload w;
  return w;
}

template <bool Parallel>
void BM_Gradient(benchmark::State& state) {
  const auto& w = workload();
  std::span<const std::size_t> idx(w.indices.data(), static_cast<std::size_t>(state.range(0)));
  auto stage = distill::Stage::dft;
  for (auto _ : state) {
    auto r = Parallel ? kernels::batch_gradient(stage, w.student.params, w.student.config, w.samples, idx, {},
                                                distill::KlDirection::forward)
                      : kernels::serial::batch_gradient(stage, w.student.params, w.student.config, w.samples,
                                                        idx, {}, distill::KlDirection::forward);
    benchmark::DoNotOptimize(r.loss.total);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_Encode(benchmark::State& state) {
  const auto& w = workload();
  for (auto _ : state) {
    auto r = Parallel ? kernels::encode_batch(w.student.params, w.student.config, w.patches)
                      : kernels::serial::encode_batch(w.student.params, w.student.config, w.patches);
    benchmark::DoNotOptimize(r.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.patches.size()));
}

template <bool Parallel>
void BM_Predict(benchmark::State& state) {
  const auto& w = workload();
  for (auto _ : state) {
    auto r = Parallel ? kernels::predict_batch(w.student.params, w.student.config, w.samples)
                      : kernels::serial::predict_batch(w.student.params, w.student.config, w.samples);
    benchmark::DoNotOptimize(r.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.samples.size()));
}

}  // namespace

BENCHMARK(BM_Gradient<false>)->Name("gradient/serial")->Arg(32)->Arg(256);
BENCHMARK(BM_Gradient<true>)->Name("gradient/openmp")->Arg(32)->Arg(256);
BENCHMARK(BM_Encode<false>)->Name("encode/serial");
BENCHMARK(BM_Encode<true>)->Name("encode/openmp");
BENCHMARK(BM_Predict<false>)->Name("predict/serial");
BENCHMARK(BM_Predict<true>)->Name("predict/openmp");

BENCHMARK_MAIN();
