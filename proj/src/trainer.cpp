#include "farmlight/trainer.h"
#include "farmlight/errors.h"
#include "farmlight/fusion.h"
#include "farmlight/kernels.h"
#include "farmlight/rng.h"

#include <chrono>
#include <cmath>
#include <numeric>

namespace farmlight::distill {

using model::TensorId;

namespace {

std::vector<TensorId> frozen_tensors(Stage stage) {
  const auto trainable = trainable_tensors(stage);
  std::vector<TensorId> out;
  for (TensorId id : model::kAllTensors) {
    if (std::find(trainable.begin(), trainable.end(), id) == trainable.end()) out.push_back(id);
  }
  return out;
}

std::map<std::string, std::string> digests(const model::ModelParams& p, std::span<const TensorId> ids) {
  std::map<std::string, std::string> out;
  for (TensorId id : ids) {
    const TensorId one[] = {id};
    out[model::tensor_name(id)] = model::tensor_digest(p, one);
  }
  return out;
}

Json loss_json(const LossComponents& c) {
  return Json{{"response_kl", c.response_kl},
              {"visual_kl", c.visual_kl},
              {"autocorr", c.autocorr},
              {"cross_entropy", c.cross_entropy},
              {"total", c.total}};
}

bool needs_teacher(Stage s) { return s == Stage::dpt || s == Stage::dft; }

std::vector<TeacherTarget> teacher_targets(const model::Artifact& teacher,
                                           std::span<const Observation> observations) {
  const auto samples = prepare_samples(teacher.params, teacher.config, observations);
  const auto traces = kernels::forward_batch(teacher.params, teacher.config, samples);
  std::vector<TeacherTarget> out;
  out.reserve(traces.size());
  for (const auto& t : traces) out.push_back(make_target(t));
  return out;
}

}  // namespace

void to_json(Json& j, const TrainReport& r) {
  Json epochs = Json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back(Json{{"epoch", e.epoch}, {"running", loss_json(e.running)}, {"train_loss", e.train_loss}});
  }
  j = Json{{"stage", to_string(r.stage)},
           {"epochs", epochs},
           {"frozen_before", r.frozen_before},
           {"frozen_after", r.frozen_after},
           {"frozen_intact", r.frozen_intact()},
           {"val_accuracy", r.val_accuracy},
           {"wall_seconds", r.wall_seconds}};
}

void to_json(Json& j, const GradCheckResult& r) {
  j = Json{{"stage", to_string(r.stage)},
           {"coordinates", r.coordinates},
           {"max_relative_error", r.max_relative_error},
           {"worst_coordinate", r.worst_coordinate},
           {"passed", r.passed}};
}

std::vector<Sample> prepare_samples(const model::ModelParams& params, const model::ModelConfig& config,
                                    std::span<const Observation> observations) {
  std::vector<Matrix> patches;
  patches.reserve(observations.size());
  for (const auto& o : observations) patches.push_back(fusion::patchify(o.image));
  auto encoded = kernels::encode_batch(params, config, patches);
  std::vector<Sample> out(observations.size());
  for (std::size_t i = 0; i < observations.size(); ++i) {
    out[i].encoded = std::move(encoded[i]);
    out[i].features = fusion::normalize(observations[i].sensors);
    out[i].label = observations[i].label;
  }
  return out;
}

double accuracy(const model::ModelParams& params, const model::ModelConfig& config,
                std::span<const Observation> observations) {
  if (observations.empty()) return 0.0;
  const auto samples = prepare_samples(params, config, observations);
  const auto predicted = kernels::predict_batch(params, config, samples);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].label && predicted[i] == *samples[i].label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

StageResult train_stage(const model::Artifact& start, const model::Artifact* teacher,
                        std::span<const Observation> train, std::span<const Observation> val,
                        const StageConfig& config) {
  config.validate();
  if (needs_teacher(config.stage) && teacher == nullptr) {
    throw ContractViolation(to_string(config.stage) + " requires a teacher model");
  }
  if (!needs_teacher(config.stage) && teacher != nullptr) {
    throw ContractViolation(to_string(config.stage) + " must not be given a teacher model");
  }
  if (train.empty()) throw ContractViolation("training set is empty");
  start.params.check(start.config);
  const auto clock_start = std::chrono::steady_clock::now();

  StageResult result;
  result.artifact = start;
  result.artifact.meta.stage = to_string(config.stage);
  result.artifact.meta.version_id.clear();
  model::ModelParams& params = result.artifact.params;
  const model::ModelConfig& mc = start.config;
  TrainReport& report = result.report;
  report.stage = config.stage;
  const auto frozen = frozen_tensors(config.stage);
  report.frozen_before = digests(params, frozen);

  std::vector<TeacherTarget> targets;
  auto samples = prepare_samples(params, mc, train);
  if (teacher) {
    targets = teacher_targets(*teacher, train);
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i].teacher = &targets[i];
  }

  const auto trainable = trainable_tensors(config.stage);
  Gradients velocity = Gradients::zeros_like(params, trainable);
  Rng rng(config.seed);
  std::vector<std::size_t> order(samples.size());
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    EpochStats stats;
    stats.epoch = epoch + 1;
    const auto batch = static_cast<std::size_t>(config.batch_size);
    const double lr = config.lr_at(epoch);
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const auto indices = std::span(order).subspan(begin, std::min(batch, order.size() - begin));
      auto step = kernels::batch_gradient(config.stage, params, mc, samples, indices, config.weights,
                                          config.kl_direction);
      kernels::scale(step.loss, static_cast<double>(indices.size()));
      kernels::accumulate(stats.running, step.loss);
      for (std::size_t t = 0; t < trainable.size(); ++t) {
        auto& v = velocity.values[t].data;
        auto& w = params[trainable[t]].data;
        const auto& g = step.grad.values[t].data;
        for (std::size_t k = 0; k < w.size(); ++k) {
          v[k] = config.momentum * v[k] + g[k];
          w[k] = static_cast<double>(static_cast<float>(w[k] - lr * v[k]));
        }
      }
    }
    kernels::scale(stats.running, 1.0 / static_cast<double>(order.size()));
    stats.train_loss =
        kernels::batch_loss(config.stage, params, mc, samples, all, config.weights, config.kl_direction).total;
    if (!std::isfinite(stats.train_loss)) throw NumericFault("train_loss");
    report.epochs.push_back(stats);
  }

  report.frozen_after = digests(params, frozen);
  if (!report.frozen_intact()) throw IntegrityError("frozen tensors changed during training");
  report.val_accuracy = accuracy(params, mc, val);
  result.artifact.meta.version_id = model::compute_version_id(params, mc, result.artifact.meta.stage);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  return result;
}

PipelineConfig PipelineConfig::defaults(std::uint64_t seed) {
  PipelineConfig c;
  c.seed = seed;
  SplitMix64 mix(seed);
  c.teacher = StageConfig::defaults(Stage::teacher_pretrain, mix.next());
  c.dpt = StageConfig::defaults(Stage::dpt, mix.next());
  c.sft = StageConfig::defaults(Stage::sft, mix.next());
  c.dft = StageConfig::defaults(Stage::dft, mix.next());
  return c;
}

std::string student_file(const std::string& stage) { return "student_" + stage + ".flsm"; }

PipelineResult run_pipeline(std::span<const Observation> train, std::span<const Observation> val,
                            const std::string& catalog_digest, const PipelineConfig& config,
                            const std::optional<std::filesystem::path>& out_dir) {
  if (out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*out_dir, ec);
    if (ec) throw IoError(out_dir->string(), "cannot create artifact directory");
  }
  auto persist = [&](const model::Artifact& a, const std::string& file) {
    if (out_dir) model::save_file((*out_dir / file).string(), a);
  };
  auto run = [&](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      throw Error(std::string("pipeline stage '") + name + "' failed: " + e.what());
    }
  };

  SplitMix64 init_seeds(config.seed ^ 0x5EED5EED5EED5EEDULL);
  PipelineResult out;

  model::Artifact teacher_init;
  teacher_init.config = model::ModelConfig::teacher();
  teacher_init.params = model::init(teacher_init.config, init_seeds.next());
  teacher_init.meta.catalog_digest = catalog_digest;
  auto teacher = run("teacher_pretrain", [&] { return train_stage(teacher_init, nullptr, train, val, config.teacher); });
  out.teacher = teacher.artifact;
  out.reports.push_back(teacher.report);
  persist(out.teacher, kTeacherFile);

  model::Artifact student;
  student.config = model::ModelConfig::student();
  student.params = model::init(student.config, init_seeds.next());
  student.meta.stage = "init";
  student.meta.catalog_digest = catalog_digest;
  student.meta.version_id = model::compute_version_id(student.params, student.config, "init");
  out.students.push_back(student);
  persist(student, student_file("init"));

  const std::pair<const StageConfig*, bool> plan[] = {{&config.dpt, true}, {&config.sft, false}, {&config.dft, true}};
  for (const auto& [stage_config, with_teacher] : plan) {
    const auto name = to_string(stage_config->stage);
    auto r = run(name.c_str(), [&] {
      return train_stage(out.students.back(), with_teacher ? &out.teacher : nullptr, train, val, *stage_config);
    });
    out.students.push_back(r.artifact);
    out.reports.push_back(r.report);
    persist(r.artifact, student_file(name));
  }
  return out;
}

GradCheckResult gradcheck(Stage stage, const model::Artifact& student, const model::Artifact* teacher,
                          std::span<const Observation> batch, std::size_t coordinates,
                          std::uint64_t seed) {
  if (batch.empty()) throw ContractViolation("gradcheck needs a non-empty batch");
  if (needs_teacher(stage) && teacher == nullptr) {
    throw ContractViolation(to_string(stage) + " gradcheck needs a teacher");
  }
  const LossWeights weights;
  std::vector<TeacherTarget> targets;
  auto samples = prepare_samples(student.params, student.config, batch);
  if (needs_teacher(stage)) {
    targets = teacher_targets(*teacher, batch);
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i].teacher = &targets[i];
  }
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto analytic = kernels::serial::batch_gradient(stage, student.params, student.config, samples,
                                                        all, weights, KlDirection::forward);

  // Finite-difference route: full forward from patches, no cached encodings.
  std::vector<Matrix> patches;
  for (const auto& o : batch) patches.push_back(fusion::patchify(o.image));
  auto loss_at = [&](const model::ModelParams& p) {
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto tr = model::forward(p, student.config, patches[i], fusion::normalize(batch[i].sensors));
      total += stage_loss(stage, tr, samples[i].teacher, batch[i].label, weights).total;
    }
    return total / static_cast<double>(batch.size());
  };

  GradCheckResult r;
  r.stage = stage;
  r.coordinates = coordinates;
  Rng rng(seed);
  model::ModelParams probe = student.params;
  for (std::size_t c = 0; c < coordinates; ++c) {
    const std::size_t t = rng.below(analytic.grad.ids.size());
    const TensorId id = analytic.grad.ids[t];
    const std::size_t k = rng.below(probe[id].data.size());
    const double original = probe[id].data[k];
    probe[id].data[k] = original + kGradCheckStep;
    const double up = loss_at(probe);
    probe[id].data[k] = original - kGradCheckStep;
    const double down = loss_at(probe);
    probe[id].data[k] = original;
    const double numeric = (up - down) / (2.0 * kGradCheckStep);
    const double exact = analytic.grad.values[t].data[k];
    const double rel = std::abs(exact - numeric) / std::max({std::abs(exact), std::abs(numeric), 1e-6});
    if (rel >= r.max_relative_error) {
      r.max_relative_error = rel;
      r.worst_coordinate = std::string(model::tensor_name(id)) + "[" + std::to_string(k) + "]";
    }
  }
  r.passed = r.max_relative_error <= kGradCheckTolerance;
  return r;
}

}  // namespace farmlight::distill
