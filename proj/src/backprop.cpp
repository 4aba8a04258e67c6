#include "farmlight/distill.h"
#include "farmlight/errors.h"

#include <algorithm>
#include <cmath>

namespace farmlight::distill {

using model::TensorId;

namespace {

constexpr double kProbFloor = 1e-12;

/// d KL / d z where the student distribution is softmax(z).
/// Forward: KL(target ‖ s) → s − target. Reverse: KL(s ‖ target) → s ⊙ (ln s − ln target − KL).
std::vector<double> kl_grad_wrt_logits(std::span<const double> student, std::span<const double> target,
                                       KlDirection direction) {
  std::vector<double> g(student.size());
  if (direction == KlDirection::forward) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = student[i] - target[i];
    return g;
  }
  double kl = 0.0;
  std::vector<double> log_ratio(student.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (student[i] == 0.0) continue;
    log_ratio[i] = std::log(student[i] / std::max(target[i], kProbFloor));
    kl += student[i] * log_ratio[i];
  }
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = student[i] * (log_ratio[i] - kl);
  return g;
}

void require_finite(const Gradients& g) {
  for (std::size_t i = 0; i < g.ids.size(); ++i) {
    for (double v : g.values[i].data) {
      if (!std::isfinite(v)) throw NumericFault(std::string("grad ") + model::tensor_name(g.ids[i]));
    }
  }
}

}  // namespace

Gradients Gradients::zeros_like(const model::ModelParams& params, std::span<const TensorId> ids) {
  Gradients g;
  for (TensorId id : ids) {
    g.ids.push_back(id);
    g.values.emplace_back(params[id].rows, params[id].cols);
  }
  return g;
}

const Matrix* Gradients::find(TensorId id) const {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == id) return &values[i];
  }
  return nullptr;
}

Matrix* Gradients::find(TensorId id) {
  return const_cast<Matrix*>(static_cast<const Gradients*>(this)->find(id));
}

void Gradients::add(const Gradients& other) {
  if (other.ids != ids) throw ContractViolation("gradient sets differ");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& dst = values[i].data;
    const auto& src = other.values[i].data;
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

void Gradients::scale(double factor) {
  for (auto& m : values) {
    for (auto& v : m.data) v *= factor;
  }
}

double Gradients::norm() const {
  double sq = 0.0;
  for (const auto& m : values) {
    for (double v : m.data) sq += v * v;
  }
  return std::sqrt(sq);
}

SampleResult sample_gradient(Stage stage, const model::ModelParams& params,
                             const model::ModelConfig& config, const Sample& sample,
                             const LossWeights& w, KlDirection direction) {
  const model::ForwardTrace tr = model::forward_encoded(params, config, sample.encoded, sample.features);
  SampleResult out;
  out.loss = stage_loss(stage, tr, sample.teacher, sample.label, w, direction);

  const bool distills = stage == Stage::dpt || stage == Stage::dft;
  const bool supervised = stage != Stage::dpt;
  const auto trainable = trainable_tensors(stage);
  out.grad = Gradients::zeros_like(params, trainable);

  const std::size_t T = tr.projected.rows;
  const std::size_t dh = tr.projected.cols;
  const std::size_t K = tr.logits.size();

  // ---- d loss / d logits ----
  std::vector<double> d_logits(K, 0.0);
  if (distills && w.response_kl != 0.0) {
    const auto g = kl_grad_wrt_logits(tr.response, sample.teacher->response, direction);
    for (std::size_t k = 0; k < K; ++k) d_logits[k] += w.response_kl * g[k] / config.temperature;
  }
  if (supervised) {
    const double ce_weight = stage == Stage::dft ? w.ground_truth : 1.0;
    const auto p = model::softmax(tr.logits, 1.0);
    for (std::size_t k = 0; k < K; ++k) {
      const double onehot = static_cast<int>(k) == *sample.label ? 1.0 : 0.0;
      d_logits[k] += ce_weight * (p[k] - onehot);
    }
  }

  // ---- head ----
  const Matrix& w1 = params[TensorId::h1_w];
  const Matrix& w2 = params[TensorId::h2_w];
  const Matrix& wt = params[TensorId::txt_w];
  if (Matrix* g = out.grad.find(TensorId::h2_w)) {
    for (std::size_t j = 0; j < w2.rows; ++j) {
      for (std::size_t k = 0; k < K; ++k) (*g)(j, k) = tr.hidden[j] * d_logits[k];
    }
  }
  if (Matrix* g = out.grad.find(TensorId::h2_b)) g->data = d_logits;

  std::vector<double> d_pre(w2.rows, 0.0);
  for (std::size_t j = 0; j < w2.rows; ++j) {
    if (tr.hidden_pre[j] <= 0.0) continue;
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) acc += w2(j, k) * d_logits[k];
    d_pre[j] = acc;
  }
  if (Matrix* g = out.grad.find(TensorId::h1_w)) {
    for (std::size_t i = 0; i < dh; ++i) {
      for (std::size_t j = 0; j < w1.cols; ++j) {
        (*g)(i, j) = tr.pooled[i] * d_pre[j];
        (*g)(dh + i, j) = tr.text_embed[i] * d_pre[j];
      }
    }
  }
  if (Matrix* g = out.grad.find(TensorId::h1_b)) g->data = d_pre;

  std::vector<double> d_pooled(dh, 0.0), d_text(dh, 0.0);
  for (std::size_t i = 0; i < dh; ++i) {
    double a = 0.0, b = 0.0;
    for (std::size_t j = 0; j < w1.cols; ++j) {
      a += w1(i, j) * d_pre[j];
      b += w1(dh + i, j) * d_pre[j];
    }
    d_pooled[i] = a;
    d_text[i] = b * (1.0 - tr.text_embed[i] * tr.text_embed[i]);
  }
  if (Matrix* g = out.grad.find(TensorId::txt_w)) {
    for (std::size_t i = 0; i < wt.rows; ++i) {
      for (std::size_t j = 0; j < dh; ++j) (*g)(i, j) = sample.features[i] * d_text[j];
    }
  }
  if (Matrix* g = out.grad.find(TensorId::txt_b)) g->data = d_text;

  // ---- projected tokens ----
  Matrix d_proj(T, dh);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < dh; ++j) d_proj(t, j) = d_pooled[j] / static_cast<double>(T);
  }

  if (distills) {
    std::vector<double> d_norm(T, 0.0);
    if (w.visual_kl != 0.0) {
      const auto g = kl_grad_wrt_logits(tr.visual_dist, sample.teacher->visual_dist, direction);
      for (std::size_t t = 0; t < T; ++t) d_norm[t] = w.visual_kl * g[t];
    }

    Matrix unit(T, dh);
    for (std::size_t t = 0; t < T; ++t) {
      const double n = std::max(tr.token_norms[t], kProbFloor);
      for (std::size_t j = 0; j < dh; ++j) unit(t, j) = tr.projected(t, j) / n;
    }

    Matrix d_unit(T, dh);
    if (w.autocorr != 0.0) {
      const Matrix& S = tr.autocorr;
      const Matrix& R = sample.teacher->autocorr;
      double dot = 0.0, ss = 0.0, rr = 0.0;
      for (std::size_t i = 0; i < S.data.size(); ++i) {
        dot += S.data[i] * R.data[i];
        ss += S.data[i] * S.data[i];
        rr += R.data[i] * R.data[i];
      }
      const double s_norm = std::sqrt(ss);
      const double r_norm = std::sqrt(rr);
      const double denom = s_norm * r_norm;
      Matrix d_auto(T, T);
      if (denom > kProbFloor) {
        const double cosine = dot / denom;
        for (std::size_t i = 0; i < S.data.size(); ++i) {
          d_auto.data[i] = -w.autocorr * (R.data[i] / denom - cosine * S.data[i] / ss);
        }
      } else {
        for (std::size_t i = 0; i < S.data.size(); ++i) {
          d_auto.data[i] = -w.autocorr * R.data[i] / kProbFloor;
        }
      }
      // autocorr = unit·unitᵀ
      for (std::size_t a = 0; a < T; ++a) {
        for (std::size_t b = 0; b < T; ++b) {
          const double g = d_auto(a, b) + d_auto(b, a);
          if (g == 0.0) continue;
          for (std::size_t j = 0; j < dh; ++j) d_unit(a, j) += g * unit(b, j);
        }
      }
    }

    for (std::size_t t = 0; t < T; ++t) {
      const double n = tr.token_norms[t];
      if (n > kProbFloor) {
        double radial = 0.0;
        for (std::size_t j = 0; j < dh; ++j) radial += unit(t, j) * d_unit(t, j);
        for (std::size_t j = 0; j < dh; ++j) {
          d_proj(t, j) += (d_unit(t, j) - unit(t, j) * radial) / n + d_norm[t] * unit(t, j);
        }
      } else {
        for (std::size_t j = 0; j < dh; ++j) d_proj(t, j) += d_unit(t, j) / kProbFloor;
      }
    }
  }

  if (Matrix* g = out.grad.find(TensorId::proj_w)) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < g->rows; ++i) {
        const double z = tr.encoded(t, i);
        for (std::size_t j = 0; j < dh; ++j) (*g)(i, j) += z * d_proj(t, j);
      }
    }
  }
  if (Matrix* g = out.grad.find(TensorId::proj_b)) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < dh; ++j) g->data[j] += d_proj(t, j);
    }
  }

  require_finite(out.grad);
  return out;
}

}  // namespace farmlight::distill
