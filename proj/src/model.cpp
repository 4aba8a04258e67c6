#include "farmlight/model.h"
#include "farmlight/digest.h"
#include "farmlight/errors.h"
#include "farmlight/rng.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

namespace farmlight::model {

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'L', 'S', 'M'};
constexpr std::uint8_t kFormatVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 1 + 4;
constexpr std::size_t kTrailerSize = 32;

std::array<std::pair<std::size_t, std::size_t>, kAllTensors.size()> shapes(const ModelConfig& c) {
  const auto v = static_cast<std::size_t>(c.visual_dim);
  const auto h = static_cast<std::size_t>(c.projected_dim);
  const auto w = static_cast<std::size_t>(c.hidden);
  const auto k = static_cast<std::size_t>(c.classes);
  const auto p = static_cast<std::size_t>(fusion::kPatchDim);
  const auto s = static_cast<std::size_t>(fusion::kSensorDim);
  return {{{p, v}, {1, v}, {v, h}, {1, h}, {s, h}, {1, h}, {2 * h, w}, {1, w}, {w, k}, {1, k}}};
}

void require_finite(std::span<const double> values, const char* tensor) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericFault(tensor);
  }
}

std::uint32_t f32_bits(double v) { return std::bit_cast<std::uint32_t>(static_cast<float>(v)); }

}  // namespace

std::string to_string(Role r) { return r == Role::teacher ? "teacher" : "student"; }

ModelConfig ModelConfig::teacher() {
  ModelConfig c;
  c.role = Role::teacher;
  c.visual_dim = 64;
  c.projected_dim = 48;
  c.hidden = 64;
  return c;
}

ModelConfig ModelConfig::student() { return ModelConfig{}; }

void ModelConfig::validate() const {
  if (visual_dim < 1 || projected_dim < 1 || hidden < 1 || classes < 1 || tokens < 1) {
    throw ContractViolation("model dimensions must be >= 1");
  }
  if (tokens != fusion::kTokens) throw ContractViolation("token count must match the patch grid");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ContractViolation("temperature must be > 0");
  }
}

void to_json(Json& j, const ModelConfig& c) {
  j = Json{{"role", to_string(c.role)}, {"d_v", c.visual_dim}, {"d_h", c.projected_dim},
           {"hidden", c.hidden},        {"K", c.classes},      {"T", c.tokens},
           {"temperature", c.temperature}};
}

void from_json(const Json& j, ModelConfig& c) {
  const auto role = j.at("role").get<std::string>();
  if (role != "teacher" && role != "student") throw ContractViolation("unknown role " + role);
  c.role = role == "teacher" ? Role::teacher : Role::student;
  j.at("d_v").get_to(c.visual_dim);
  j.at("d_h").get_to(c.projected_dim);
  j.at("hidden").get_to(c.hidden);
  j.at("K").get_to(c.classes);
  j.at("T").get_to(c.tokens);
  j.at("temperature").get_to(c.temperature);
  c.validate();
}

const char* tensor_name(TensorId id) {
  static constexpr const char* kNames[] = {"W_enc", "b_enc", "W_proj", "b_proj", "W_txt",
                                           "b_txt", "W_h1",  "b_h1",   "W_h2",   "b_h2"};
  return kNames[static_cast<int>(id)];
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  const auto sh = shapes(config);
  for (std::size_t i = 0; i < sh.size(); ++i) p.tensors[i] = Matrix(sh[i].first, sh[i].second);
  return p;
}

void ModelParams::check(const ModelConfig& config) const {
  config.validate();
  const auto sh = shapes(config);
  for (std::size_t i = 0; i < sh.size(); ++i) {
    const auto& t = tensors[i];
    if (t.rows != sh[i].first || t.cols != sh[i].second || t.data.size() != t.rows * t.cols) {
      throw ContractViolation(std::string("shape mismatch for ") + tensor_name(kAllTensors[i]));
    }
    for (double v : t.data) {
      if (!std::isfinite(v)) {
        throw ContractViolation(std::string("non-finite value in ") + tensor_name(kAllTensors[i]));
      }
    }
  }
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

void ModelParams::round_to_storage() {
  for (auto& t : tensors) {
    for (auto& v : t.data) v = static_cast<double>(static_cast<float>(v));
  }
}

ModelParams init(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(config);
  Rng rng(seed);
  for (TensorId id : {TensorId::enc_w, TensorId::proj_w, TensorId::txt_w, TensorId::h1_w, TensorId::h2_w}) {
    Matrix& w = p[id];
    const double bound = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
    for (auto& v : w.data) v = rng.uniform(-bound, bound);
  }
  p.round_to_storage();
  return p;
}

std::vector<double> softmax(std::span<const double> x, double temperature) {
  std::vector<double> out(x.size());
  if (x.empty()) return out;
  double peak = x[0] / temperature;
  for (double v : x) peak = std::max(peak, v / temperature);
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] / temperature - peak);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

Matrix encode(const ModelParams& params, const ModelConfig& config, const Matrix& patches) {
  const Matrix& w = params[TensorId::enc_w];
  const Matrix& b = params[TensorId::enc_b];
  if (patches.rows != static_cast<std::size_t>(config.tokens) || patches.cols != w.rows) {
    throw ContractViolation("patch matrix shape does not match the encoder");
  }
  Matrix z(patches.rows, w.cols);
  for (std::size_t t = 0; t < patches.rows; ++t) {
    for (std::size_t j = 0; j < w.cols; ++j) {
      double acc = b.data[j];
      for (std::size_t i = 0; i < w.rows; ++i) acc += patches(t, i) * w(i, j);
      z(t, j) = std::tanh(acc);
    }
  }
  require_finite(z.data, "encoded");
  return z;
}

ForwardTrace forward_encoded(const ModelParams& params, const ModelConfig& config, Matrix encoded,
                             const fusion::SensorFeatures& features) {
  const Matrix& wp = params[TensorId::proj_w];
  const Matrix& bp = params[TensorId::proj_b];
  const Matrix& wt = params[TensorId::txt_w];
  const Matrix& bt = params[TensorId::txt_b];
  const Matrix& w1 = params[TensorId::h1_w];
  const Matrix& b1 = params[TensorId::h1_b];
  const Matrix& w2 = params[TensorId::h2_w];
  const Matrix& b2 = params[TensorId::h2_b];
  const std::size_t T = encoded.rows;
  const std::size_t dh = wp.cols;
  if (encoded.cols != wp.rows || T != static_cast<std::size_t>(config.tokens)) {
    throw ContractViolation("encoded shape does not match the projector");
  }

  ForwardTrace tr;
  tr.encoded = std::move(encoded);

  tr.projected = Matrix(T, dh);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < dh; ++j) {
      double acc = bp.data[j];
      for (std::size_t i = 0; i < wp.rows; ++i) acc += tr.encoded(t, i) * wp(i, j);
      tr.projected(t, j) = acc;
    }
  }
  require_finite(tr.projected.data, "projected");

  tr.token_norms.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    double sq = 0.0;
    for (double v : tr.projected.row(t)) sq += v * v;
    tr.token_norms[t] = std::sqrt(sq);
  }
  tr.visual_dist = softmax(tr.token_norms);
  require_finite(tr.visual_dist, "visual_dist");

  Matrix unit(T, dh);
  for (std::size_t t = 0; t < T; ++t) {
    const double n = std::max(tr.token_norms[t], kNormFloor);
    for (std::size_t j = 0; j < dh; ++j) unit(t, j) = tr.projected(t, j) / n;
  }
  tr.autocorr = Matrix(T, T);
  for (std::size_t a = 0; a < T; ++a) {
    for (std::size_t b = a; b < T; ++b) {
      double acc = 0.0;
      for (std::size_t j = 0; j < dh; ++j) acc += unit(a, j) * unit(b, j);
      tr.autocorr(a, b) = acc;
      tr.autocorr(b, a) = acc;
    }
  }
  require_finite(tr.autocorr.data, "autocorr");

  tr.pooled.assign(dh, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < dh; ++j) tr.pooled[j] += tr.projected(t, j);
  }
  for (auto& v : tr.pooled) v /= static_cast<double>(T);

  tr.text_embed.resize(wt.cols);
  for (std::size_t j = 0; j < wt.cols; ++j) {
    double acc = bt.data[j];
    for (std::size_t i = 0; i < wt.rows; ++i) acc += features[i] * wt(i, j);
    tr.text_embed[j] = std::tanh(acc);
  }
  require_finite(tr.text_embed, "text_embed");

  tr.hidden_pre.resize(w1.cols);
  tr.hidden.resize(w1.cols);
  for (std::size_t j = 0; j < w1.cols; ++j) {
    double acc = b1.data[j];
    for (std::size_t i = 0; i < dh; ++i) acc += tr.pooled[i] * w1(i, j);
    for (std::size_t i = 0; i < dh; ++i) acc += tr.text_embed[i] * w1(dh + i, j);
    tr.hidden_pre[j] = acc;
    tr.hidden[j] = acc > 0.0 ? acc : 0.0;
  }
  require_finite(tr.hidden, "hidden");

  tr.logits.resize(w2.cols);
  for (std::size_t k = 0; k < w2.cols; ++k) {
    double acc = b2.data[k];
    for (std::size_t j = 0; j < w2.rows; ++j) acc += tr.hidden[j] * w2(j, k);
    tr.logits[k] = acc;
  }
  require_finite(tr.logits, "logits");
  tr.response = softmax(tr.logits, config.temperature);
  require_finite(tr.response, "response");
  return tr;
}

ForwardTrace forward(const ModelParams& params, const ModelConfig& config, const Matrix& patches,
                     const fusion::SensorFeatures& features) {
  return forward_encoded(params, config, encode(params, config, patches), features);
}

Bytes tensor_bytes(const ModelParams& params, std::span<const TensorId> ids) {
  Bytes out;
  for (TensorId id : ids) {
    for (double v : params[id].data) put_u32_le(out, f32_bits(v));
  }
  return out;
}

std::string tensor_digest(const ModelParams& params, std::span<const TensorId> ids) {
  return to_hex(sha256(tensor_bytes(params, ids)));
}

std::string compute_version_id(const ModelParams& params, const ModelConfig& config,
                               const std::string& stage) {
  Bytes material = to_bytes(canonical(Json(config)));
  material.insert(material.end(), stage.begin(), stage.end());
  const Bytes tensors = tensor_bytes(params, kAllTensors);
  material.insert(material.end(), tensors.begin(), tensors.end());
  const auto d = sha256(material);
  return to_hex(std::span(d).first(8));
}

Bytes save(const ModelParams& params, const ModelConfig& config, ArtifactMeta meta) {
  params.check(config);
  if (meta.version_id.empty()) meta.version_id = compute_version_id(params, config, meta.stage);
  const std::string meta_json = canonical(Json{{"config", config},
                                               {"version_id", meta.version_id},
                                               {"stage", meta.stage},
                                               {"catalog_digest", meta.catalog_digest}});
  Bytes out(kMagic, kMagic + 4);
  out.push_back(kFormatVersion);
  put_u32_le(out, static_cast<std::uint32_t>(meta_json.size()));
  out.insert(out.end(), meta_json.begin(), meta_json.end());
  const Bytes tensors = tensor_bytes(params, kAllTensors);
  out.insert(out.end(), tensors.begin(), tensors.end());
  const auto digest = sha256(out);
  out.insert(out.end(), digest.begin(), digest.end());
  return out;
}

namespace {

struct ParsedMeta {
  ModelConfig config;
  ArtifactMeta meta;
};

ParsedMeta parse_meta(std::span<const std::uint8_t> bytes) {
  try {
    const Json j = parse_json(as_text(bytes));
    ParsedMeta m;
    m.config = j.at("config").get<ModelConfig>();
    j.at("version_id").get_to(m.meta.version_id);
    j.at("stage").get_to(m.meta.stage);
    j.at("catalog_digest").get_to(m.meta.catalog_digest);
    return m;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("bad artifact metadata: ") + e.what());
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("bad artifact metadata: ") + e.what());
  }
}

std::size_t expected_size(std::size_t meta_len, const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& [r, c] : shapes(config)) n += r * c;
  return kHeaderSize + meta_len + 4 * n + kTrailerSize;
}

}  // namespace

Artifact load(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw TruncationError("artifact shorter than its magic");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw FormatError("bad artifact magic");
  if (bytes.size() < 5) throw TruncationError("artifact missing format version");
  if (bytes[4] != kFormatVersion) {
    throw FormatError("unsupported artifact format version " + std::to_string(bytes[4]));
  }
  if (bytes.size() < kHeaderSize + kTrailerSize) throw TruncationError("artifact header truncated");
  const std::size_t meta_len = get_u32_le(bytes.data() + 5);

  const auto body = bytes.first(bytes.size() - kTrailerSize);
  const auto digest = sha256(body);
  if (!std::equal(digest.begin(), digest.end(), bytes.end() - kTrailerSize)) {
    // A short file also fails the digest; report it as truncation when the
    // header still says how long the artifact should be.
    if (kHeaderSize + meta_len <= bytes.size()) {
      try {
        const auto m = parse_meta(bytes.subspan(kHeaderSize, meta_len));
        if (bytes.size() < expected_size(meta_len, m.config)) {
          throw TruncationError("artifact truncated");
        }
      } catch (const FormatError&) {
      }
    } else {
      throw TruncationError("artifact metadata truncated");
    }
    throw IntegrityError("artifact digest mismatch");
  }

  if (kHeaderSize + meta_len > body.size()) throw FormatError("metadata length exceeds artifact");
  ParsedMeta m = parse_meta(bytes.subspan(kHeaderSize, meta_len));
  if (bytes.size() != expected_size(meta_len, m.config)) {
    throw FormatError("tensor payload size does not match config");
  }

  Artifact a;
  a.config = m.config;
  a.meta = m.meta;
  a.params = ModelParams::zeros(a.config);
  const std::uint8_t* p = bytes.data() + kHeaderSize + meta_len;
  for (auto& t : a.params.tensors) {
    for (auto& v : t.data) {
      v = static_cast<double>(std::bit_cast<float>(get_u32_le(p)));
      p += 4;
    }
  }
  try {
    a.params.check(a.config);
  } catch (const ContractViolation& e) {
    throw FormatError(e.what());
  }
  return a;
}

Artifact load_file(const std::string& path) { return load(read_file(path)); }

void save_file(const std::string& path, const Artifact& artifact) {
  write_file(path, save(artifact.params, artifact.config, artifact.meta));
}

}  // namespace farmlight::model
