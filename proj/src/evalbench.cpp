#include "farmlight/evalbench.h"

#include <algorithm>
#include <set>

#include "farmlight/trainer.h"
#include "farmlight/kernels.h"

namespace farmlight::eval {

double keyword_f1(std::span<const std::string> predicted, std::span<const std::string> gold) {
  std::set<std::string> p(predicted.begin(), predicted.end());
  std::set<std::string> g(gold.begin(), gold.end());
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& k : p) hit += g.count(k);
  if (hit == 0) return 0.0;
  double precision = static_cast<double>(hit) / static_cast<double>(p.size());
  double recall = static_cast<double>(hit) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

Confusion confusion_matrix(std::span<const int> gold, std::span<const int> predicted, int classes) {
  if (gold.size() != predicted.size())
    throw ContractViolation("gold and predicted label counts differ");
  Confusion m(static_cast<std::size_t>(classes), std::vector<std::size_t>(static_cast<std::size_t>(classes), 0));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || gold[i] >= classes || predicted[i] < 0 || predicted[i] >= classes)
      throw ContractViolation("label out of range");
    ++m[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(predicted[i])];
  }
  return m;
}

ClosedResult eval_closed(std::span<const synth::VqaRecord> records,
                         const std::function<std::string(const synth::VqaRecord&)>& answer) {
  ClosedResult r;
  for (const auto& rec : records) {
    if (rec.kind != synth::VqaKind::closed) continue;
    ++r.total;
    if (answer(rec) == rec.gold_answer) ++r.correct;
  }
  if (r.total == 0) throw ContractViolation("no closed-set records to evaluate");
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

double eval_open(std::span<const synth::VqaRecord> records,
                 const std::function<std::vector<std::string>(const synth::VqaRecord&)>& keywords) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& rec : records) {
    if (rec.kind != synth::VqaKind::open) continue;
    auto pred = keywords(rec);
    sum += keyword_f1(pred, rec.gold_keywords);
    ++n;
  }
  if (n == 0) throw ContractViolation("no open-set records to evaluate");
  return sum / static_cast<double>(n);
}

void to_json(Json& j, const EvalReport& r) {
  j = Json{{"closed_accuracy", r.closed_accuracy},
           {"open_f1", r.open_f1},
           {"class_accuracy", r.class_accuracy},
           {"per_class_accuracy", r.per_class_accuracy},
           {"per_class_counts", r.per_class_counts},
           {"confusion", r.confusion},
           {"n_samples", r.n_samples},
           {"model_version", r.model_version},
           {"seed", r.seed}};
}

EvalReport evaluate(const model::Artifact& model, const ClassCatalog& catalog,
                    std::span<const Observation> observations,
                    std::span<const synth::VqaRecord> records, std::uint64_t seed) {
  if (observations.empty()) throw ContractViolation("no observations to evaluate");
  auto samples = distill::prepare_samples(model.params, model.config, observations);
  std::vector<int> predicted = kernels::predict_batch(model.params, model.config, samples);
  std::vector<int> gold;
  std::map<std::string, int> by_obs;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    if (!observations[i].label) throw ContractViolation("evaluation needs labeled observations");
    gold.push_back(*observations[i].label);
    by_obs[observations[i].obs_id] = predicted[i];
  }
  auto predicted_for = [&](const synth::VqaRecord& rec) {
    auto it = by_obs.find(rec.obs_id);
    if (it == by_obs.end()) throw ContractViolation("VQA record for unknown observation " + rec.obs_id);
    return it->second;
  };

  EvalReport r;
  int k = static_cast<int>(catalog.size());
  r.confusion = confusion_matrix(gold, predicted, k);
  r.n_samples = observations.size();
  r.model_version = model.meta.version_id;
  r.seed = seed;
  std::size_t trace = 0;
  for (int c = 0; c < k; ++c) {
    const auto& row = r.confusion[static_cast<std::size_t>(c)];
    std::size_t count = 0;
    for (auto v : row) count += v;
    r.per_class_counts.push_back(count);
    std::size_t hit = row[static_cast<std::size_t>(c)];
    trace += hit;
    r.per_class_accuracy.push_back(count ? static_cast<double>(hit) / static_cast<double>(count) : 0.0);
  }
  r.class_accuracy = static_cast<double>(trace) / static_cast<double>(r.n_samples);
  r.closed_accuracy = eval_closed(records, [&](const synth::VqaRecord& rec) {
                        return catalog.at(predicted_for(rec)).is_healthy ? std::string("no")
                                                                           : std::string("yes");
                      }).accuracy;
  r.open_f1 = eval_open(records, [&](const synth::VqaRecord& rec) {
    const ClassInfo& info = catalog.at(predicted_for(rec));
    std::vector<std::string> kw = info.symptoms;
    kw.insert(kw.end(), info.treatment.begin(), info.treatment.end());
    return kw;
  });
  return r;
}

// ---- dialogue ----

namespace {

DialogueRound ask(DialogueTransport& api, const std::string& target, const Json& body,
                  std::string question) {
  DialogueRound round;
  round.question = std::move(question);
  auto reply = api.post(target, canonical(body));
  round.transport_ok = reply.ok;
  round.status = reply.status;
  round.error = reply.error;
  if (reply.ok) {
    try {
      round.response = parse_json(reply.body);
    } catch (const FormatError& e) {
      round.error = e.what();
    }
  }
  return round;
}

bool contains(const std::string& text, const std::string& needle) {
  return text.find(needle) != std::string::npos;
}

}  // namespace

void to_json(Json& j, const DialogueSession& s) {
  Json rounds = Json::array();
  for (const auto& r : s.rounds)
    rounds.push_back({{"question", r.question},
                      {"transport_ok", r.transport_ok},
                      {"status", r.status},
                      {"error", r.error},
                      {"response", r.response}});
  j = Json{{"obs_id", s.obs_id},
           {"rounds", rounds},
           {"names_class", s.names_class},
           {"has_treatment", s.has_treatment},
           {"same_context", s.same_context},
           {"passed", s.passed()}};
}

DialogueSession run_dialogue(DialogueTransport& api, const ClassCatalog& catalog,
                             const Observation& obs) {
  DialogueSession s;
  s.obs_id = obs.obs_id;
  Observation unlabeled = obs;
  unlabeled.label.reset();
  s.rounds.push_back(ask(api, "/v1/observations", Json(unlabeled), "ingest"));
  s.rounds.push_back(ask(api, "/v1/query", Json{{"text", synth::kClosedQuestion}, {"obs_id", obs.obs_id}},
                         synth::kClosedQuestion));
  const Json first = s.rounds.back().response;
  // The follow-up names the observation the previous answer was about.
  Json follow{{"text", kFollowUpQuestion}};
  if (first.is_object() && first.contains("obs_id")) follow["obs_id"] = first["obs_id"];
  s.rounds.push_back(ask(api, "/v1/query", follow, kFollowUpQuestion));
  const Json& second = s.rounds.back().response;

  bool ok = std::all_of(s.rounds.begin(), s.rounds.end(), [](const DialogueRound& r) {
    return r.transport_ok && r.status >= 200 && r.status < 300;
  });
  if (!ok) return s;
  try {
    int predicted = first.at("diagnosis").at("predicted").get<int>();
    const ClassInfo& info = catalog.at(predicted);
    std::string answer = first.at("answer").get<std::string>();
    s.names_class = contains(answer, info.name) && first.at("class_name") == info.name;
    std::string follow_answer = second.at("answer").get<std::string>();
    if (info.is_healthy) {
      s.has_treatment = contains(follow_answer, kNoActionRequired);
    } else {
      s.has_treatment = std::any_of(info.treatment.begin(), info.treatment.end(),
                                    [&](const std::string& t) { return contains(follow_answer, t); });
    }
    s.same_context = first.at("obs_id") == obs.obs_id && second.at("obs_id") == obs.obs_id;
  } catch (const std::exception&) {
    s.names_class = s.has_treatment = s.same_context = false;
  }
  return s;
}

double DialogueReport::pass_rate() const {
  return sessions.empty() ? 0.0 : static_cast<double>(passed) / static_cast<double>(sessions.size());
}

void to_json(Json& j, const DialogueReport& r) {
  j = Json{{"sessions", r.sessions},
           {"passed", r.passed},
           {"total", r.sessions.size()},
           {"pass_rate", r.pass_rate()},
           {"transport_failures", r.transport_failures}};
}

DialogueReport eval_dialogue(DialogueTransport& api, const ClassCatalog& catalog,
                             std::span<const Observation> script) {
  if (script.empty()) throw ContractViolation("dialogue script is empty");
  DialogueReport report;
  for (const auto& obs : script) {
    report.sessions.push_back(run_dialogue(api, catalog, obs));
    const auto& s = report.sessions.back();
    if (s.passed()) ++report.passed;
    for (const auto& r : s.rounds) report.transport_failures += r.transport_ok ? 0 : 1;
  }
  return report;
}

}  // namespace farmlight::eval
