#include "support.h"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <mutex>

#include "farmlight/clock.h"
#include "farmlight/edge/api.h"
#include "farmlight/edge/sync.h"
#include "farmlight/netproto/cloud.h"

namespace farmlight::testing {

// ---- CentroidOracle ----

std::vector<double> CentroidOracle::features(const Observation& obs) const {
  std::vector<double> f(obs.image.pixels.begin(), obs.image.pixels.end());
  f.push_back(obs.sensors.ph);
  f.push_back(obs.sensors.temperature_c);
  f.push_back(obs.sensors.humidity_pct);
  f.push_back(obs.sensors.light_klux);
  return f;
}

void CentroidOracle::fit(std::span<const Observation> labeled) {
  const std::size_t dim = static_cast<std::size_t>(kImagePixels) + 4;
  mean_.assign(dim, 0.0);
  scale_.assign(dim, 0.0);
  for (const auto& o : labeled) {
    auto f = features(o);
    for (std::size_t i = 0; i < dim; ++i) mean_[i] += f[i];
  }
  for (double& m : mean_) m /= static_cast<double>(labeled.size());
  for (const auto& o : labeled) {
    auto f = features(o);
    for (std::size_t i = 0; i < dim; ++i) scale_[i] += (f[i] - mean_[i]) * (f[i] - mean_[i]);
  }
  for (double& s : scale_) s = std::sqrt(s / static_cast<double>(labeled.size()));
  for (double& s : scale_) s = s > 0.0 ? s : 1.0;

  centroids_.assign(kNumClasses, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> counts(kNumClasses, 0);
  for (const auto& o : labeled) {
    auto f = features(o);
    auto& c = centroids_[static_cast<std::size_t>(*o.label)];
    for (std::size_t i = 0; i < dim; ++i) c[i] += (f[i] - mean_[i]) / scale_[i];
    ++counts[static_cast<std::size_t>(*o.label)];
  }
  for (std::size_t k = 0; k < centroids_.size(); ++k)
    for (double& v : centroids_[k]) v /= static_cast<double>(std::max<std::size_t>(counts[k], 1));
}

int CentroidOracle::predict(const Observation& obs) const {
  auto f = features(obs);
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centroids_.size(); ++k) {
    double d = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      double z = (f[i] - mean_[i]) / scale_[i] - centroids_[k][i];
      d += z * z;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

double CentroidOracle::accuracy(std::span<const Observation> labeled) const {
  std::size_t hit = 0;
  for (const auto& o : labeled) hit += predict(o) == *o.label;
  return static_cast<double>(hit) / static_cast<double>(labeled.size());
}

// ---- scalar loss ----

namespace {

double scalar_kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) s += p[i] * (std::log(p[i]) - std::log(std::max(q[i], 1e-12)));
  return s;
}

double scalar_corr(const Matrix& a, const Matrix& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t r = 0; r < a.rows; ++r) {
    for (std::size_t c = 0; c < a.cols; ++c) {
      dot += a(r, c) * b(r, c);
      na += a(r, c) * a(r, c);
      nb += b(r, c) * b(r, c);
    }
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

distill::LossComponents scalar_stage_loss(distill::Stage stage, const model::ForwardTrace& s,
                                          const model::ForwardTrace* t, std::optional<int> label) {
  distill::LossComponents c;
  if (stage == distill::Stage::dpt || stage == distill::Stage::dft) {
    c.response_kl = scalar_kl(t->response, s.response);
    c.visual_kl = scalar_kl(t->visual_dist, s.visual_dist);
    c.autocorr = scalar_corr(s.autocorr, t->autocorr);
  }
  if (stage != distill::Stage::dpt) {
    double z = 0.0;
    for (double l : s.logits) z += std::exp(l);
    c.cross_entropy = std::log(z) - s.logits[static_cast<std::size_t>(*label)];
  }
  c.total = c.response_kl + c.visual_kl + c.autocorr + c.cross_entropy;
  return c;
}

// ---- fixtures ----

const Trained& trained() {
  static const Trained t = [] {
    Trained r;
    r.world = synth::default_world();
    std::vector<int> tr(kNumClasses, 250), va(kNumClasses, 50), te(kNumClasses, 50);
    r.train = synth::gen_dataset(r.world, tr, kPipelineSeed, synth::Split::train).observations;
    r.val = synth::gen_dataset(r.world, va, kPipelineSeed, synth::Split::val).observations;
    r.test = synth::gen_dataset(r.world, te, kPipelineSeed, synth::Split::test).observations;
    auto start = std::chrono::steady_clock::now();
    r.pipeline = distill::run_pipeline(r.train, r.val, r.world.catalog.digest(),
                                       distill::PipelineConfig::defaults(kPipelineSeed));
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
  }();
  return t;
}

model::Artifact init_student(std::uint64_t seed, const std::string& catalog_digest) {
  auto cfg = model::ModelConfig::student();
  model::Artifact a{cfg, model::init(cfg, seed), {}};
  a.params.round_to_storage();
  a.meta.stage = "init";
  a.meta.catalog_digest = catalog_digest;
  a.meta.version_id = model::compute_version_id(a.params, cfg, a.meta.stage);
  return a;
}

model::Artifact wide_artifact(std::uint64_t seed, const std::string& catalog_digest) {
  auto cfg = model::ModelConfig::student();
  cfg.visual_dim = 128;
  cfg.projected_dim = 256;
  cfg.hidden = 128;
  model::Artifact a{cfg, model::init(cfg, seed), {}};
  a.params.round_to_storage();
  a.meta.stage = "wide";
  a.meta.catalog_digest = catalog_digest;
  a.meta.version_id = model::compute_version_id(a.params, cfg, a.meta.stage);
  return a;
}

// ---- random messages ----

namespace {

std::string random_text(Rng& rng, std::size_t max_len) {
  static const std::string alphabet =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 -_.:/\"\\{}[],";
  std::size_t n = rng.below(max_len + 1);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.below(16) == 0) {
      s += "\xC2\xB0";  // a multibyte code point
    } else {
      s += alphabet[rng.below(alphabet.size())];
    }
  }
  return s;
}

Bytes random_bytes(Rng& rng, std::size_t max_len) {
  Bytes b(rng.below(max_len + 1));
  rng.fill(b);
  return b;
}

edge::Alert random_alert(Rng& rng) {
  edge::Alert a;
  a.alert_id = random_text(rng, 20);
  a.obs_id = random_text(rng, 36);
  a.sensor_id = random_text(rng, 12);
  a.location = {rng.uniform(-90, 90), rng.uniform(-180, 180)};
  a.class_id = static_cast<int>(rng.below(kNumClasses));
  a.class_name = random_text(rng, 16);
  a.confidence = rng.uniform();
  a.recommendation = random_text(rng, 40);
  a.urgency = static_cast<Urgency>(rng.below(3));
  a.created_ms = static_cast<std::int64_t>(rng.below(1ULL << 50));
  a.acked = rng.below(2) == 1;
  a.image_ref = random_text(rng, 30);
  return a;
}

}  // namespace

net::Message random_message(Rng& rng, std::size_t index) {
  auto u32 = [&] { return static_cast<std::uint32_t>(rng.next()); };
  switch (index) {
    case 0: return net::Hello{random_text(rng, 24), random_text(rng, 8)};
    case 1: return net::HelloAck{random_text(rng, 16)};
    case 2: {
      net::TelemetryBatch b;
      b.batch_id = random_text(rng, 20);
      b.edge_id = random_text(rng, 12);
      b.count = u32();
      b.records = random_bytes(rng, 4096);
      return b;
    }
    case 3: return net::BatchAck{random_text(rng, 20)};
    case 4: return net::ModelQuery{random_text(rng, 16)};
    case 5:
      return net::ModelManifest{random_text(rng, 16), rng.next() >> 11, u32(), u32(),
                                random_text(rng, 64)};
    case 6: return net::ModelChunkReq{random_text(rng, 16), u32()};
    case 7: return net::ModelChunk{random_text(rng, 16), u32(), random_bytes(rng, 8192)};
    case 8: return net::AlertMsg{random_alert(rng)};
    case 9: {
      net::Query q{random_text(rng, 60), std::nullopt};
      if (rng.below(2)) q.obs_id = random_text(rng, 36);
      return q;
    }
    case 10: {
      std::vector<double> raw(kNumClasses);
      for (double& v : raw) v = rng.uniform() + 1e-3;
      return net::Response{Diagnosis::from_probs(random_text(rng, 36), raw, random_text(rng, 40),
                                                 random_text(rng, 16))};
    }
    default: return net::ErrorMsg{random_text(rng, 12), random_text(rng, 40)};
  }
}

// ---- closed loop ----

std::pair<Observation, Observation> closed_loop_inputs(const synth::World& world, std::uint64_t seed) {
  Rng rng(seed);
  int cls = 1 + static_cast<int>(rng.below(kNumClasses - 1));
  Observation anomaly = synth::gen_observation(world.specs[static_cast<std::size_t>(cls)], rng);
  Observation next = synth::gen_observation(world.specs[0], rng);
  return {std::move(anomaly), std::move(next)};
}

ClosedLoopTrial closed_loop_trial(const model::Artifact& model, const ClassCatalog& catalog,
                                  const synth::World& world, std::uint64_t seed) {
  ManualClock clock(1'000);
  edge::EdgeOptions opts;
  opts.edge_id = "loop";
  edge::EdgeRuntime rt(opts, catalog, clock);
  rt.install_model(model);

  auto [anomaly, next] = closed_loop_inputs(world, seed);
  ClosedLoopTrial t;
  t.generated_class = *anomaly.label;
  anomaly.label.reset();
  next.label.reset();
  rt.ingest(anomaly);
  rt.ingest(next);

  auto first = rt.process_next();
  t.predicted = first->diagnosis.predicted;
  t.confidence = first->diagnosis.confidence;
  // Everything visible now was produced before the next observation started.
  auto visible = rt.alerts_since(0);
  rt.process_next();
  t.alerted_in_time = visible.size() == 1 && visible[0].obs_id == anomaly.obs_id &&
                      visible[0].class_id == t.generated_class;
  return t;
}

// ---- hot swap ----

namespace {

/// Edge-side link that rewrites one chunk on the way in while armed.
class TamperLink : public net::Transport {
 public:
  TamperLink(std::shared_ptr<net::Transport> inner, std::uint32_t chunk, std::size_t offset,
             std::uint8_t mask)
      : inner_(std::move(inner)), chunk_(chunk), offset_(offset), mask_(mask) {}

  bool send(std::span<const std::uint8_t> bytes) override { return inner_->send(bytes); }
  bool is_open() const override { return inner_->is_open(); }
  void close() override { inner_->close(); }

  Bytes receive() override {
    reader_.feed(inner_->receive());
    Bytes out;
    while (auto item = reader_.next()) {
      if (item->error) continue;
      Bytes frame = item->raw;
      if (armed) {
        auto d = net::decode(frame);
        if (d.ok()) {
          if (const auto* c = std::get_if<net::ModelChunk>(&d.message()); c && c->index == chunk_) {
            net::ModelChunk bad = *c;
            bad.bytes[offset_ % bad.bytes.size()] ^= mask_;
            frame = net::encode(bad);
            ++tampered;
          }
        }
      }
      out.insert(out.end(), frame.begin(), frame.end());
    }
    return out;
  }

  bool armed = true;
  int tampered = 0;

 private:
  std::shared_ptr<net::Transport> inner_;
  net::FrameReader reader_;
  std::uint32_t chunk_;
  std::size_t offset_;
  std::uint8_t mask_;
};

}  // namespace

HotSwapTrial hot_swap_trial(const model::Artifact& v0, const model::Artifact& v1,
                            const ClassCatalog& catalog, const Observation& probe, std::uint64_t seed) {
  ManualClock clock(0);
  net::SimNetwork network(seed, 0.0, 10);
  net::Registry registry;
  net::TelemetryStore store;
  net::CloudService cloud(registry, store);
  Bytes v1_bytes = model::save(v1.params, v1.config, v1.meta);
  auto entry = registry.publish(v1_bytes, 0);

  Rng rng(seed);
  HotSwapTrial t;
  t.corrupted_chunk = static_cast<std::uint32_t>(rng.below(entry->chunk_count()));
  std::size_t chunk_len = entry->chunk(t.corrupted_chunk).size();
  std::size_t within = rng.below(chunk_len);
  t.corrupted_offset = static_cast<std::size_t>(t.corrupted_chunk) * net::kChunkSize + within;
  auto mask = static_cast<std::uint8_t>(1 + rng.below(255));

  edge::EdgeOptions opts;
  opts.edge_id = "swap";
  opts.policy.idle_secs = 0.5;
  opts.policy.model_check_interval_secs = 2.0;
  edge::EdgeRuntime rt(opts, catalog, clock);
  rt.install_model(v0);
  const std::string v0_version = rt.model_version();

  auto [edge_side, cloud_side] = network.connect();
  cloud.attach(cloud_side);
  auto link = std::make_shared<TamperLink>(edge_side, t.corrupted_chunk, within, mask);
  edge::SyncClient sync(rt, link, seed ^ 0x5EEDULL);

  auto step = [&] {
    clock.advance(100);
    network.set_now(clock.now_ms());
    sync.tick();
    cloud.poll();
  };
  for (int i = 0; i < 600 && sync.stats().integrity_failures == 0 && sync.stats().swaps == 0; ++i) step();

  t.aborted = sync.stats().integrity_failures >= 1 && sync.stats().swaps == 0 && link->tampered >= 1;
  try {
    Diagnosis d = rt.diagnose(probe);
    t.prior_still_serving = rt.model_version() == v0_version && d.model_version == v0_version;
  } catch (const Error&) {
    t.prior_still_serving = false;
  }
  for (const auto& e : rt.events()) t.integrity_event = t.integrity_event || e.kind == "integrity_error";

  link->armed = false;
  for (int i = 0; i < 600 && sync.stats().swaps == 0; ++i) step();
  t.recovered = rt.model_version() == entry->version_id;
  return t;
}

// ---- dialogue ----

struct InProcessDialogue::Impl {
  explicit Impl(edge::EdgeRuntime& rt) : api(rt) {}
  edge::EdgeApi api;
};

InProcessDialogue::InProcessDialogue(edge::EdgeRuntime& runtime)
    : impl_(std::make_unique<Impl>(runtime)) {}
InProcessDialogue::~InProcessDialogue() = default;

eval::DialogueTransport::Reply InProcessDialogue::post(const std::string& target,
                                                       const std::string& body) {
  auto r = impl_->api.handle("POST", target, body);
  return Reply{true, r.status, canonical(r.body), ""};
}

std::string temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto p = std::filesystem::temp_directory_path() /
           ("farmlight-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace farmlight::testing
