#include "farmlight/distill.h"
#include "farmlight/errors.h"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace farmlight::distill {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kDistTolerance = 1e-6;

void require_distribution(std::span<const double> p, const char* name) {
  double total = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ContractViolation(std::string(name) + " has a negative or non-finite entry");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > kDistTolerance) {
    throw ContractViolation(std::string(name) + " does not sum to 1");
  }
}

double cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw ContractViolation("label out of range");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double l : logits) total += std::exp(l - peak);
  return -(logits[static_cast<std::size_t>(label)] - peak - std::log(total));
}

}  // namespace

std::string to_string(Stage s) {
  switch (s) {
    case Stage::teacher_pretrain: return "teacher_pretrain";
    case Stage::dpt: return "dpt";
    case Stage::sft: return "sft";
    case Stage::dft: return "dft";
  }
  return "sft";
}

Stage stage_from_string(const std::string& s) {
  if (s == "teacher_pretrain") return Stage::teacher_pretrain;
  if (s == "dpt") return Stage::dpt;
  if (s == "sft") return Stage::sft;
  if (s == "dft") return Stage::dft;
  throw ContractViolation("unknown stage '" + s + "'");
}

StageConfig StageConfig::defaults(Stage stage, std::uint64_t seed) {
  StageConfig c;
  c.stage = stage;
  c.epochs = stage == Stage::teacher_pretrain ? 30 : 15;
  // With the teacher terms active, momentum at 0.05 drags the projector away
  // from the head faster than the head can follow.
  if (stage == Stage::dft) c.lr = 0.01;
  if (stage == Stage::teacher_pretrain) c.lr = 0.02;
  c.seed = seed;
  return c;
}

double StageConfig::lr_at(int epoch) const {
  if (schedule == LrSchedule::constant) return lr;
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / epochs));
}

void StageConfig::validate() const {
  if (epochs < 1) throw ContractViolation("epochs must be >= 1");
  if (batch_size < 1) throw ContractViolation("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ContractViolation("lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractViolation("momentum must be in [0,1)");
  for (double w : {weights.response_kl, weights.visual_kl, weights.autocorr, weights.ground_truth}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ContractViolation("loss weights must be >= 0");
  }
}

double kl_div(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ContractViolation("kl_div: size mismatch");
  require_distribution(p, "p");
  require_distribution(q, "q");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    total += p[i] * std::log(p[i] / std::max(q[i], kProbFloor));
  }
  return total;
}

double corr_loss(const Matrix& student, const Matrix& teacher) {
  if (student.rows != teacher.rows || student.cols != teacher.cols) {
    throw ContractViolation("corr_loss: shape mismatch");
  }
  double dot = 0.0, ss = 0.0, tt = 0.0;
  for (std::size_t i = 0; i < student.data.size(); ++i) {
    dot += student.data[i] * teacher.data[i];
    ss += student.data[i] * student.data[i];
    tt += teacher.data[i] * teacher.data[i];
  }
  const double denom = std::max(std::sqrt(ss) * std::sqrt(tt), kProbFloor);
  return 1.0 - dot / denom;
}

TeacherTarget make_target(const model::ForwardTrace& t) {
  return TeacherTarget{t.response, t.visual_dist, t.autocorr};
}

LossComponents stage_loss(Stage stage, const model::ForwardTrace& student,
                          const TeacherTarget* teacher, std::optional<int> label,
                          const LossWeights& w, KlDirection direction) {
  const bool distills = stage == Stage::dpt || stage == Stage::dft;
  const bool supervised = stage != Stage::dpt;
  if (distills && teacher == nullptr) {
    throw ContractViolation(to_string(stage) + " needs a teacher trace");
  }
  if (supervised && !label) throw ContractViolation(to_string(stage) + " needs a label");

  LossComponents c;
  if (distills) {
    if (direction == KlDirection::forward) {
      c.response_kl = kl_div(teacher->response, student.response);
      c.visual_kl = kl_div(teacher->visual_dist, student.visual_dist);
    } else {
      c.response_kl = kl_div(student.response, teacher->response);
      c.visual_kl = kl_div(student.visual_dist, teacher->visual_dist);
    }
    c.autocorr = corr_loss(student.autocorr, teacher->autocorr);
    c.total = w.response_kl * c.response_kl + w.visual_kl * c.visual_kl + w.autocorr * c.autocorr;
  }
  if (supervised) {
    c.cross_entropy = cross_entropy(student.logits, *label);
    c.total += (stage == Stage::dft ? w.ground_truth : 1.0) * c.cross_entropy;
  }
  return c;
}

std::vector<model::TensorId> trainable_tensors(Stage stage) {
  using model::TensorId;
  if (stage == Stage::dpt) return {TensorId::proj_w, TensorId::proj_b};
  return {TensorId::proj_w, TensorId::proj_b, TensorId::txt_w, TensorId::txt_b,
          TensorId::h1_w,   TensorId::h1_b,   TensorId::h2_w,  TensorId::h2_b};
}

}  // namespace farmlight::distill
