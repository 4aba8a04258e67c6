#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "farmlight/distill.h"
#include "farmlight/domain.h"
#include "farmlight/edge/runtime.h"
#include "farmlight/evalbench.h"
#include "farmlight/netproto/messages.h"
#include "farmlight/netproto/transport.h"
#include "farmlight/rng.h"
#include "farmlight/synthgen.h"
#include "farmlight/trainer.h"

namespace farmlight::testing {

// ---- independent oracles ----

/// Nearest class mean over z-scored pixels and sensor values. Shares no code
/// with the model; it only sees raw observation fields.
class CentroidOracle {
 public:
  void fit(std::span<const Observation> labeled);
  int predict(const Observation& obs) const;
  double accuracy(std::span<const Observation> labeled) const;

 private:
  std::vector<double> features(const Observation& obs) const;
  std::vector<double> mean_, scale_;
  std::vector<std::vector<double>> centroids_;
};

/// Loss components recomputed with plain loops from the traces alone.
distill::LossComponents scalar_stage_loss(distill::Stage stage, const model::ForwardTrace& student,
                                          const model::ForwardTrace* teacher,
                                          std::optional<int> label);

// ---- fixtures ----

inline constexpr std::uint64_t kPipelineSeed = 1;

struct Trained {
  synth::World world;
  std::vector<Observation> train, val, test;
  distill::PipelineResult pipeline;
  double seconds = 0.0;  // wall time of the full pipeline

  const model::Artifact& final_student() const { return pipeline.students.back(); }
};

/// Default world at CLI dataset sizes (250/50/50 per class), trained once per
/// process on first use.
const Trained& trained();

/// A valid student artifact large enough to span several transfer chunks.
model::Artifact wide_artifact(std::uint64_t seed, const std::string& catalog_digest);

model::Artifact init_student(std::uint64_t seed, const std::string& catalog_digest);

/// A randomized message of the given variant index (0..11).
net::Message random_message(Rng& rng, std::size_t index);

// ---- harnesses shared by unit tests and the acceptance run ----

struct ClosedLoopTrial {
  int generated_class = 0;
  bool alerted_in_time = false;  // alert with the generating class before the next observation finished
  int predicted = 0;
  double confidence = 0.0;
};

/// The labeled anomalous observation of trial `seed` and the healthy one
/// queued behind it.
std::pair<Observation, Observation> closed_loop_inputs(const synth::World& world, std::uint64_t seed);

/// Ingests one anomalous observation followed by another, then processes
/// the queue one item at a time.
ClosedLoopTrial closed_loop_trial(const model::Artifact& model, const ClassCatalog& catalog,
                                  const synth::World& world, std::uint64_t seed);

struct HotSwapTrial {
  std::uint32_t corrupted_chunk = 0;
  std::size_t corrupted_offset = 0;  // within the artifact
  bool aborted = false;              // integrity failure counted, no swap
  bool prior_still_serving = false;  // version unchanged and diagnose works
  bool integrity_event = false;      // "integrity_error" recorded
  bool recovered = false;            // clean retry after tampering stops swaps to v1
};

/// Edge on v0 syncs against a cloud holding v1 through a link that flips one
/// byte of one chunk in flight (re-framed with a valid CRC).
HotSwapTrial hot_swap_trial(const model::Artifact& v0, const model::Artifact& v1,
                            const ClassCatalog& catalog, const Observation& probe, std::uint64_t seed);

/// Routes dialogue requests straight into an EdgeApi.
class InProcessDialogue : public eval::DialogueTransport {
 public:
  explicit InProcessDialogue(class edge::EdgeRuntime& runtime);
  ~InProcessDialogue() override;
  Reply post(const std::string& target, const std::string& body) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Fresh empty directory under the system temp dir.
std::string temp_dir(const std::string& tag);

}  // namespace farmlight::testing
