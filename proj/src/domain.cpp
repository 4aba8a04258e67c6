#include "farmlight/domain.h"
#include "farmlight/digest.h"

#include <cmath>
#include <numeric>

namespace farmlight {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void SensorReading::validate() const {
  require(std::isfinite(ph) && std::isfinite(temperature_c) && std::isfinite(humidity_pct) &&
              std::isfinite(light_klux),
          "sensor values must be finite");
  require(humidity_pct >= 0.0 && humidity_pct <= 100.0, "humidity_pct outside [0,100]");
  require(light_klux >= 0.0, "light_klux must be >= 0");
  require(timestamp_ms >= 0, "timestamp_ms must be >= 0");
}

void PatchImage::validate() const {
  require(width > 0 && height > 0, "image dimensions must be positive");
  require(pixels.size() == static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
          "pixel count does not match width*height");
  for (double p : pixels) require(p >= 0.0 && p <= 1.0, "pixel outside [0,1]");
}

std::string to_string(Urgency u) {
  switch (u) {
    case Urgency::low: return "low";
    case Urgency::medium: return "medium";
    case Urgency::high: return "high";
  }
  return "low";
}

Urgency urgency_from_string(const std::string& s) {
  if (s == "low") return Urgency::low;
  if (s == "medium") return Urgency::medium;
  if (s == "high") return Urgency::high;
  throw ContractViolation("unknown urgency '" + s + "'");
}

ClassCatalog::ClassCatalog(std::vector<ClassInfo> classes) : classes_(std::move(classes)) {
  require(!classes_.empty(), "catalog must not be empty");
  int healthy = 0;
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    const auto& c = classes_[i];
    require(c.class_id == static_cast<int>(i), "class ids must be 0..K-1 in order");
    if (c.is_healthy) {
      ++healthy;
      require(c.class_id == 0, "the healthy class must have id 0");
    } else {
      require(c.symptoms.size() >= 2 && c.treatment.size() >= 2,
              "class '" + c.name + "' needs >= 2 symptom and treatment keywords");
    }
  }
  require(healthy == 1, "exactly one class must be healthy");
}

const ClassInfo& ClassCatalog::at(int class_id) const {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= classes_.size()) {
    throw ContractViolation("class id out of range: " + std::to_string(class_id));
  }
  return classes_[static_cast<std::size_t>(class_id)];
}

std::string ClassCatalog::recommendation(int class_id) const {
  const auto& c = at(class_id);
  if (c.is_healthy) return kNoActionRequired;
  std::string out;
  for (std::size_t i = 0; i < c.treatment.size(); ++i) {
    if (i) out += "; ";
    out += c.treatment[i];
  }
  return out;
}

std::string ClassCatalog::digest() const {
  const auto d = sha256(canonical(Json(*this)));
  return to_hex(d);
}

int argmax(std::span<const double> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

Diagnosis Diagnosis::from_probs(std::string obs_id, std::span<const double> raw,
                                std::string recommendation, std::string model_version) {
  require(!raw.empty(), "probability vector must not be empty");
  double total = 0.0;
  for (double p : raw) {
    require(std::isfinite(p) && p >= 0.0, "probabilities must be finite and non-negative");
    total += p;
  }
  require(total > 0.0, "probabilities must not all be zero");
  Diagnosis d;
  d.obs_id = std::move(obs_id);
  d.probs.assign(raw.begin(), raw.end());
  // Re-dividing an already-normalized vector would perturb the last ulp.
  if (std::abs(total - 1.0) > 1e-15 * static_cast<double>(raw.size())) {
    for (auto& p : d.probs) p /= total;
  }
  d.predicted = argmax(d.probs);
  d.confidence = d.probs[static_cast<std::size_t>(d.predicted)];
  d.recommendation = std::move(recommendation);
  d.model_version = std::move(model_version);
  return d;
}

void to_json(Json& j, const SensorReading& v) {
  j = Json{{"ph", v.ph},
           {"temperature_c", v.temperature_c},
           {"humidity_pct", v.humidity_pct},
           {"light_klux", v.light_klux},
           {"timestamp_ms", v.timestamp_ms},
           {"sensor_id", v.sensor_id}};
}

void from_json(const Json& j, SensorReading& v) {
  j.at("ph").get_to(v.ph);
  j.at("temperature_c").get_to(v.temperature_c);
  j.at("humidity_pct").get_to(v.humidity_pct);
  j.at("light_klux").get_to(v.light_klux);
  j.at("timestamp_ms").get_to(v.timestamp_ms);
  j.at("sensor_id").get_to(v.sensor_id);
  v.validate();
}

void to_json(Json& j, const PatchImage& v) {
  j = Json{{"width", v.width}, {"height", v.height}, {"pixels", v.pixels}};
}

void from_json(const Json& j, PatchImage& v) {
  j.at("width").get_to(v.width);
  j.at("height").get_to(v.height);
  j.at("pixels").get_to(v.pixels);
  v.validate();
}

void to_json(Json& j, const GeoPoint& v) { j = Json{{"lat", v.lat}, {"lon", v.lon}}; }

void from_json(const Json& j, GeoPoint& v) {
  j.at("lat").get_to(v.lat);
  j.at("lon").get_to(v.lon);
}

void to_json(Json& j, const Observation& v) {
  j = Json{{"obs_id", v.obs_id},
           {"image", v.image},
           {"sensors", v.sensors},
           {"location", v.location}};
  if (v.label) j["label"] = *v.label;
}

void from_json(const Json& j, Observation& v) {
  j.at("obs_id").get_to(v.obs_id);
  j.at("image").get_to(v.image);
  j.at("sensors").get_to(v.sensors);
  j.at("location").get_to(v.location);
  if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
    v.label = it->get<int>();
  } else {
    v.label.reset();
  }
}

void to_json(Json& j, const ClassInfo& v) {
  j = Json{{"class_id", v.class_id},   {"name", v.name},
           {"is_healthy", v.is_healthy}, {"symptoms", v.symptoms},
           {"treatment", v.treatment},   {"urgency", to_string(v.urgency)}};
}

void from_json(const Json& j, ClassInfo& v) {
  j.at("class_id").get_to(v.class_id);
  j.at("name").get_to(v.name);
  j.at("is_healthy").get_to(v.is_healthy);
  j.at("symptoms").get_to(v.symptoms);
  j.at("treatment").get_to(v.treatment);
  v.urgency = urgency_from_string(j.at("urgency").get<std::string>());
}

void to_json(Json& j, const ClassCatalog& v) { j = Json{{"classes", v.classes()}}; }

void from_json(const Json& j, ClassCatalog& v) {
  v = ClassCatalog(j.at("classes").get<std::vector<ClassInfo>>());
}

void to_json(Json& j, const Diagnosis& v) {
  j = Json{{"obs_id", v.obs_id},
           {"probs", v.probs},
           {"predicted", v.predicted},
           {"confidence", v.confidence},
           {"recommendation", v.recommendation},
           {"model_version", v.model_version}};
}

void from_json(const Json& j, Diagnosis& v) {
  j.at("obs_id").get_to(v.obs_id);
  j.at("probs").get_to(v.probs);
  j.at("predicted").get_to(v.predicted);
  j.at("confidence").get_to(v.confidence);
  j.at("recommendation").get_to(v.recommendation);
  j.at("model_version").get_to(v.model_version);
}

Bytes encode_dataset(std::span<const Observation> observations, bool compressed) {
  std::string text;
  for (const auto& o : observations) {
    text += canonical(Json(o));
    text += '\n';
  }
  Bytes raw = to_bytes(text);
  return compressed ? deflate_raw(raw) : raw;
}

std::vector<Observation> decode_dataset(std::span<const std::uint8_t> bytes, bool compressed) {
  Bytes inflated;
  std::string_view text;
  if (compressed) {
    inflated = inflate_raw(bytes);
    text = as_text(inflated);
  } else {
    text = as_text(bytes);
  }
  std::vector<Observation> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    if (nl > pos) out.push_back(decode_json<Observation>(text.substr(pos, nl - pos)));
    pos = nl + 1;
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const Observation> observations) {
  write_file(path, encode_dataset(observations, ends_with(path.string(), ".z")));
}

std::vector<Observation> read_dataset(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  try {
    return decode_dataset(bytes, ends_with(path.string(), ".z"));
  } catch (const FormatError& e) {
    throw IoError(path.string(), std::string("bad dataset file (") + e.what() + ")");
  }
}

std::string uuid_from_bytes(std::span<const std::uint8_t, 16> bytes) {
  std::array<std::uint8_t, 16> b{};
  std::copy(bytes.begin(), bytes.end(), b.begin());
  b[6] = static_cast<std::uint8_t>((b[6] & 0x0F) | 0x40);
  b[8] = static_cast<std::uint8_t>((b[8] & 0x3F) | 0x80);
  const std::string hex = to_hex(b);
  return hex.substr(0, 8) + "-" + hex.substr(8, 4) + "-" + hex.substr(12, 4) + "-" +
         hex.substr(16, 4) + "-" + hex.substr(20, 12);
}

}  // namespace farmlight
