#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "farmlight/domain.h"
#include "farmlight/model.h"
#include "farmlight/synthgen.h"

namespace farmlight::eval {

/// Per-record F1 over exact keyword matches. Both empty → 1; one empty → 0.
/// Duplicates count once.
double keyword_f1(std::span<const std::string> predicted, std::span<const std::string> gold);

using Confusion = std::vector<std::vector<std::size_t>>;  // [gold][predicted]

Confusion confusion_matrix(std::span<const int> gold, std::span<const int> predicted, int classes);

struct ClosedResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
};

/// Scores "yes"/"no" answers on closed records; ContractViolation when there
/// are none.
ClosedResult eval_closed(std::span<const synth::VqaRecord> records,
                         const std::function<std::string(const synth::VqaRecord&)>& answer);

/// Mean keyword F1 on open records; ContractViolation when there are none.
double eval_open(std::span<const synth::VqaRecord> records,
                 const std::function<std::vector<std::string>(const synth::VqaRecord&)>& keywords);

struct EvalReport {
  double closed_accuracy = 0.0;
  double open_f1 = 0.0;
  double class_accuracy = 0.0;  // trace / total of the confusion matrix
  std::vector<double> per_class_accuracy;
  std::vector<std::size_t> per_class_counts;
  Confusion confusion;
  std::size_t n_samples = 0;
  std::string model_version;
  std::uint64_t seed = 0;
};

void to_json(Json& j, const EvalReport& r);

/// Runs the model over labeled observations and their VQA records. The model
/// answers "yes" exactly when it predicts a non-healthy class; its open answer
/// is the symptoms and treatments of the predicted class.
EvalReport evaluate(const model::Artifact& model, const ClassCatalog& catalog,
                    std::span<const Observation> observations,
                    std::span<const synth::VqaRecord> records, std::uint64_t seed);

// ---- dialogue ----

inline constexpr const char* kFollowUpQuestion = "What treatment do you recommend for it?";

struct DialogueRound {
  std::string question;
  bool transport_ok = false;
  int status = 0;
  std::string error;
  Json response;
};

struct DialogueSession {
  std::string obs_id;
  std::vector<DialogueRound> rounds;
  bool names_class = false;       // answer names the diagnosed class
  bool has_treatment = false;     // ≥1 treatment keyword, or the no-action text when healthy
  bool same_context = false;      // the follow-up answered for the same obs_id
  bool passed() const { return names_class && has_treatment && same_context; }
};

void to_json(Json& j, const DialogueSession& s);

/// Abstract request path so the harness runs against a socket or in process.
struct DialogueTransport {
  struct Reply {
    bool ok = false;
    int status = 0;
    std::string body;
    std::string error;
  };
  virtual ~DialogueTransport() = default;
  virtual Reply post(const std::string& target, const std::string& body) = 0;
};

/// Ingests the observation, asks the closed question, then the follow-up.
DialogueSession run_dialogue(DialogueTransport& api, const ClassCatalog& catalog,
                             const Observation& obs);

struct DialogueReport {
  std::vector<DialogueSession> sessions;
  std::size_t passed = 0;
  std::size_t transport_failures = 0;  // rounds that never reached the edge
  double pass_rate() const;
};

void to_json(Json& j, const DialogueReport& r);

DialogueReport eval_dialogue(DialogueTransport& api, const ClassCatalog& catalog,
                             std::span<const Observation> script);

}  // namespace farmlight::eval
