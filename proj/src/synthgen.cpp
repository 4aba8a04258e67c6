#include "farmlight/synthgen.h"
#include "farmlight/digest.h"
#include "farmlight/errors.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace farmlight::synth {

namespace {

constexpr std::int64_t kBaseTimestampMs = 1'700'000'000'000;
constexpr std::array<double, 4> kFieldLo{3.0, -10.0, 0.0, 0.0};
constexpr std::array<double, 4> kFieldHi{9.0, 50.0, 100.0, 120.0};

ClassCatalog default_catalog() {
  using U = Urgency;
  return ClassCatalog({
      {0, "healthy", true, {}, {}, U::low},
      {1, "leaf_blight", false, {"brown lesions", "leaf wilting"},
       {"copper fungicide", "remove infected leaves"}, U::high},
      {2, "powdery_mildew", false, {"white powder", "leaf curling"},
       {"sulfur spray", "improve airflow"}, U::medium},
      {3, "aphid_infestation", false, {"sticky residue", "curled shoots"},
       {"insecticidal soap", "release ladybugs"}, U::medium},
      {4, "root_rot", false, {"yellowing leaves", "stunted growth"},
       {"reduce irrigation", "improve drainage"}, U::high},
      {5, "leaf_rust", false, {"orange pustules", "leaf spots"},
       {"triazole fungicide", "remove crop debris"}, U::medium},
      {6, "spider_mites", false, {"leaf stippling", "fine webbing"},
       {"miticide spray", "raise humidity"}, U::low},
      {7, "late_blight", false, {"dark water-soaked lesions", "white mold"},
       {"copper fungicide", "destroy infected plants"}, U::high},
  });
}

std::uint64_t split_salt(Split s) {
  switch (s) {
    case Split::train: return 0x7472616E;
    case Split::val: return 0x76616C00;
    case Split::test: return 0x74657374;
  }
  return 0;
}

}  // namespace

World default_world() {
  World w;
  w.catalog = default_catalog();
  constexpr std::array<double, kNumClasses> kFreq{0, 2, 3, 4, 5, 6, 7, 8};
  // Sensor means sit on the corners of a cube in (ph, temperature, humidity)
  // space, ~6-7 standard deviations apart on each axis.
  for (int k = 0; k < kNumClasses; ++k) {
    ClassSpec s;
    s.class_id = k;
    s.texture_freq = kFreq[static_cast<std::size_t>(k)];
    s.texture_angle = k * std::numbers::pi / 8.0;
    s.texture_amp = k == 0 ? 0.0 : 0.20 + 0.03 * k;
    s.sensor_mean = {(k & 1) ? 5.2 : 7.0, (k & 2) ? 31.0 : 17.0, (k & 4) ? 78.0 : 45.0,
                     30.0 + 8.0 * k};
    s.sensor_std = {0.28, 2.0, 5.0, 6.0};
    s.pixel_noise = 0.05;
    w.specs.push_back(s);
  }
  return w;
}

Observation gen_observation(const ClassSpec& spec, Rng& rng, std::int64_t timestamp_ms) {
  Observation o;
  std::array<std::uint8_t, 16> id_bytes{};
  rng.fill(id_bytes);
  o.obs_id = uuid_from_bytes(id_bytes);

  const double c = std::cos(spec.texture_angle);
  const double s = std::sin(spec.texture_angle);
  for (int y = 0; y < kImageSide; ++y) {
    for (int x = 0; x < kImageSide; ++x) {
      const double phase = 2.0 * std::numbers::pi * spec.texture_freq * (x * c + y * s) / kImageSide;
      const double v = 0.5 + spec.texture_amp * std::sin(phase) + spec.pixel_noise * rng.normal();
      o.image.pixels[static_cast<std::size_t>(y * kImageSide + x)] = std::clamp(v, 0.0, 1.0);
    }
  }

  std::array<double, 4> v{};
  for (std::size_t i = 0; i < 4; ++i) {
    v[i] = std::clamp(rng.normal(spec.sensor_mean[i], spec.sensor_std[i]), kFieldLo[i], kFieldHi[i]);
  }
  o.sensors.ph = v[0];
  o.sensors.temperature_c = v[1];
  o.sensors.humidity_pct = v[2];
  o.sensors.light_klux = v[3];
  o.sensors.timestamp_ms = timestamp_ms;
  o.sensors.sensor_id = "sensor-" + std::to_string(rng.below(32));
  o.location.lat = 30.50 + rng.uniform(-0.01, 0.01);
  o.location.lon = 114.30 + rng.uniform(-0.01, 0.01);
  o.label = spec.class_id;
  return o;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ContractViolation("unknown split '" + s + "'");
}

void to_json(Json& j, const DatasetManifest& m) {
  j = Json{{"name", m.name},
           {"seed", m.seed},
           {"catalog_digest", m.catalog_digest},
           {"counts", m.counts},
           {"split", to_string(m.split)},
           {"file_digest", m.file_digest},
           {"record_count", m.record_count}};
}

void from_json(const Json& j, DatasetManifest& m) {
  j.at("name").get_to(m.name);
  j.at("seed").get_to(m.seed);
  j.at("catalog_digest").get_to(m.catalog_digest);
  j.at("counts").get_to(m.counts);
  m.split = split_from_string(j.at("split").get<std::string>());
  j.at("file_digest").get_to(m.file_digest);
  j.at("record_count").get_to(m.record_count);
}

Dataset gen_dataset(const World& world, std::span<const int> counts, std::uint64_t seed, Split split) {
  if (counts.size() != world.specs.size()) {
    throw ContractViolation("counts must have one entry per class");
  }
  Rng rng = Rng::substream(seed, split_salt(split));
  std::vector<Observation> generated;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] < 0) throw ContractViolation("counts must be >= 0");
    for (int n = 0; n < counts[k]; ++n) generated.push_back(gen_observation(world.specs[k], rng));
  }
  std::vector<std::size_t> order(generated.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);

  Dataset ds;
  ds.observations.reserve(generated.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    ds.observations.push_back(std::move(generated[order[i]]));
    ds.observations.back().sensors.timestamp_ms = kBaseTimestampMs + static_cast<std::int64_t>(i) * 1000;
  }
  ds.file_bytes = encode_dataset(ds.observations, true);
  ds.manifest.name = to_string(split);
  ds.manifest.seed = seed;
  ds.manifest.catalog_digest = world.catalog.digest();
  ds.manifest.counts.assign(counts.begin(), counts.end());
  ds.manifest.split = split;
  ds.manifest.file_digest = to_hex(sha256(ds.file_bytes));
  ds.manifest.record_count = ds.observations.size();
  return ds;
}

DatasetManifest write_dataset_files(const std::filesystem::path& dir, const Dataset& dataset) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "cannot create directory");
  const auto name = to_string(dataset.manifest.split);
  write_file(dir / (name + ".ndjson.z"), dataset.file_bytes);
  write_file(dir / (name + ".manifest.json"), canonical(Json(dataset.manifest)));
  return dataset.manifest;
}

std::vector<Observation> load_split(const std::filesystem::path& dir, Split split,
                                    DatasetManifest* manifest_out) {
  const auto name = to_string(split);
  const auto data_path = dir / (name + ".ndjson.z");
  const auto manifest_path = dir / (name + ".manifest.json");
  const Bytes manifest_bytes = read_file(manifest_path);
  DatasetManifest manifest;
  try {
    manifest = decode_json<DatasetManifest>(as_text(manifest_bytes));
  } catch (const FormatError& e) {
    throw IoError(manifest_path.string(), std::string("bad manifest (") + e.what() + ")");
  }
  const Bytes bytes = read_file(data_path);
  if (to_hex(sha256(bytes)) != manifest.file_digest) {
    throw IoError(data_path.string(), "dataset digest does not match manifest");
  }
  auto observations = read_dataset(data_path);
  if (observations.size() != manifest.record_count) {
    throw IoError(data_path.string(), "record count does not match manifest");
  }
  if (manifest_out) *manifest_out = manifest;
  return observations;
}

std::vector<DatasetManifest> gen_all_splits(const std::filesystem::path& dir, const World& world,
                                            std::uint64_t seed, int train_per_class,
                                            int val_per_class, int test_per_class) {
  std::vector<DatasetManifest> out;
  const std::array<std::pair<Split, int>, 3> plan{
      {{Split::train, train_per_class}, {Split::val, val_per_class}, {Split::test, test_per_class}}};
  for (const auto& [split, per_class] : plan) {
    const std::vector<int> counts(world.specs.size(), per_class);
    out.push_back(write_dataset_files(dir, gen_dataset(world, counts, seed, split)));
  }
  write_file(dir / "catalog.json", canonical(Json(world.catalog)));
  return out;
}

void to_json(Json& j, const VqaRecord& r) {
  j = Json{{"vqa_id", r.vqa_id},
           {"obs_id", r.obs_id},
           {"kind", r.kind == VqaKind::closed ? "closed" : "open"},
           {"question", r.question},
           {"gold_answer", r.gold_answer},
           {"gold_keywords", r.gold_keywords},
           {"gold_class", r.gold_class}};
}

void from_json(const Json& j, VqaRecord& r) {
  j.at("vqa_id").get_to(r.vqa_id);
  j.at("obs_id").get_to(r.obs_id);
  const auto kind = j.at("kind").get<std::string>();
  if (kind != "closed" && kind != "open") throw ContractViolation("unknown VQA kind " + kind);
  r.kind = kind == "closed" ? VqaKind::closed : VqaKind::open;
  j.at("question").get_to(r.question);
  j.at("gold_answer").get_to(r.gold_answer);
  j.at("gold_keywords").get_to(r.gold_keywords);
  j.at("gold_class").get_to(r.gold_class);
}

std::vector<VqaRecord> gen_vqa_pairs(const ClassCatalog& catalog,
                                     std::span<const Observation> observations, Rng& rng) {
  std::vector<VqaRecord> out;
  out.reserve(observations.size() * 2);
  auto next_id = [&rng] {
    std::array<std::uint8_t, 16> b{};
    rng.fill(b);
    return uuid_from_bytes(b);
  };
  for (const auto& o : observations) {
    if (!o.label) throw ContractViolation("VQA generation needs labeled observations");
    const auto& info = catalog.at(*o.label);

    VqaRecord closed;
    closed.vqa_id = next_id();
    closed.obs_id = o.obs_id;
    closed.kind = VqaKind::closed;
    closed.question = kClosedQuestion;
    closed.gold_answer = info.is_healthy ? "no" : "yes";
    closed.gold_class = info.class_id;
    out.push_back(std::move(closed));

    VqaRecord open;
    open.vqa_id = next_id();
    open.obs_id = o.obs_id;
    open.kind = VqaKind::open;
    open.question = kOpenQuestion;
    open.gold_keywords = info.symptoms;
    open.gold_keywords.insert(open.gold_keywords.end(), info.treatment.begin(), info.treatment.end());
    std::sort(open.gold_keywords.begin(), open.gold_keywords.end());
    open.gold_keywords.erase(std::unique(open.gold_keywords.begin(), open.gold_keywords.end()),
                             open.gold_keywords.end());
    open.gold_class = info.class_id;
    out.push_back(std::move(open));
  }
  return out;
}

}  // namespace farmlight::synth
