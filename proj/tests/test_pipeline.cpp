#include <doctest.h>

#include <filesystem>

#include "farmlight/clock.h"
#include "farmlight/edge/runtime.h"
#include "farmlight/evalbench.h"
#include "support.h"

using namespace farmlight;
using model::TensorId;

namespace {

constexpr std::array<TensorId, 2> kEncoder{TensorId::enc_w, TensorId::enc_b};
constexpr std::array<TensorId, 6> kLanguage{TensorId::txt_w, TensorId::txt_b, TensorId::h1_w,
                                            TensorId::h1_b,  TensorId::h2_w,  TensorId::h2_b};

}  // namespace

TEST_CASE("teacher, oracle and student accuracy gates") {
  const auto& t = testing::trained();
  testing::CentroidOracle oracle;
  oracle.fit(t.train);
  double oracle_acc = oracle.accuracy(t.test);
  double teacher_acc = distill::accuracy(t.pipeline.teacher.params, t.pipeline.teacher.config, t.test);
  const auto& student = t.final_student();
  double student_acc = distill::accuracy(student.params, student.config, t.test);
  MESSAGE("oracle " << oracle_acc << " teacher " << teacher_acc << " student " << student_acc
                    << " pipeline " << t.seconds << " s");
  CHECK(oracle_acc >= 0.99);
  CHECK(teacher_acc >= 0.90);
  CHECK(student_acc >= 0.80);
  CHECK(student_acc >= teacher_acc - 0.10);
  CHECK(t.seconds < 120.0);
}

TEST_CASE("freeze schedule holds across the pipeline") {
  const auto& t = testing::trained();
  REQUIRE(t.pipeline.students.size() == 4);
  REQUIRE(t.pipeline.reports.size() == 4);
  for (const auto& r : t.pipeline.reports) CHECK(r.frozen_intact());

  const auto& init = t.pipeline.students[0];
  const auto& dpt = t.pipeline.students[1];
  std::string enc = model::tensor_digest(init.params, kEncoder);
  for (const auto& s : t.pipeline.students) CHECK(model::tensor_digest(s.params, kEncoder) == enc);
  CHECK(model::tensor_digest(dpt.params, kLanguage) == model::tensor_digest(init.params, kLanguage));
  CHECK(dpt.params[TensorId::proj_w] != init.params[TensorId::proj_w]);
  CHECK(t.pipeline.students[2].params[TensorId::h2_w] != dpt.params[TensorId::h2_w]);
}

TEST_CASE("distilled fine-tuning does not regress supervised fine-tuning") {
  const auto& t = testing::trained();
  const auto& r = t.pipeline.reports;
  REQUIRE(distill::to_string(r[2].stage) == "sft");
  REQUIRE(distill::to_string(r[3].stage) == "dft");
  CHECK(r[3].val_accuracy >= r[2].val_accuracy - 0.02);
}

TEST_CASE("trained student recognizes healthy crops") {
  const auto& t = testing::trained();
  ManualClock clock(0);
  edge::EdgeRuntime rt(edge::EdgeOptions{}, t.world.catalog, clock);
  rt.install_model(t.final_student());
  std::size_t healthy = 0, good = 0;
  for (const auto& o : t.test) {
    if (*o.label != 0) continue;
    ++healthy;
    auto d = rt.diagnose(o);
    good += d.predicted == 0 && d.confidence > 0.5;
    CHECK(rt.diagnose(o) == d);
  }
  REQUIRE(healthy == 50);
  CHECK(static_cast<double>(good) >= 0.95 * static_cast<double>(healthy));
}

TEST_CASE("evaluation report on the test split") {
  const auto& t = testing::trained();
  Rng rng(testing::kPipelineSeed);
  auto records = synth::gen_vqa_pairs(t.world.catalog, t.test, rng);
  auto report = eval::evaluate(t.final_student(), t.world.catalog, t.test, records, testing::kPipelineSeed);
  MESSAGE("closed " << report.closed_accuracy << " open " << report.open_f1 << " class "
                    << report.class_accuracy);
  CHECK(report.closed_accuracy >= 0.80);
  CHECK(report.n_samples == t.test.size());
  std::size_t diagonal = 0;
  for (std::size_t k = 0; k < report.confusion.size(); ++k) {
    std::size_t row = 0;
    for (auto v : report.confusion[k]) row += v;
    CHECK(row == report.per_class_counts[k]);
    diagonal += report.confusion[k][k];
  }
  CHECK(report.class_accuracy ==
        doctest::Approx(static_cast<double>(diagonal) / static_cast<double>(t.test.size())));
  CHECK(report.model_version == t.final_student().meta.version_id);
}

TEST_CASE("dialogue sessions against an in-process edge") {
  const auto& t = testing::trained();
  ManualClock clock(0);
  edge::EdgeRuntime rt(edge::EdgeOptions{}, t.world.catalog, clock);
  rt.install_model(t.final_student());
  testing::InProcessDialogue api(rt);

  std::vector<Observation> script;
  for (const auto& o : t.test)
    if (*o.label != 0 && script.size() < 50) script.push_back(o);
  auto report = eval::eval_dialogue(api, t.world.catalog, script);
  CHECK(report.sessions.size() == 50);
  CHECK(report.transport_failures == 0);
  CHECK(report.pass_rate() >= 0.90);

  const Observation* healthy = nullptr;
  for (const auto& o : t.test)
    if (*o.label == 0 && rt.diagnose(o).predicted == 0) {
      healthy = &o;
      break;
    }
  REQUIRE(healthy != nullptr);
  auto s = eval::run_dialogue(api, t.world.catalog, *healthy);
  CHECK(s.passed());
  CHECK(s.rounds.back().response["answer"].get<std::string>().find(kNoActionRequired) !=
        std::string::npos);
}

TEST_CASE("pipeline writes every stage artifact") {
  auto world = synth::default_world();
  std::vector<int> counts(kNumClasses, 4);
  auto train = synth::gen_dataset(world, counts, 3, synth::Split::train).observations;
  auto cfg = distill::PipelineConfig::defaults(3);
  for (auto* s : {&cfg.teacher, &cfg.dpt, &cfg.sft, &cfg.dft}) s->epochs = 1;
  auto dir = testing::temp_dir("pipeline");
  auto r = distill::run_pipeline(train, train, world.catalog.digest(), cfg, std::filesystem::path(dir));
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) files += e.path().extension() == ".flsm";
  CHECK(files == 5);
  CHECK(std::filesystem::exists(std::filesystem::path(dir) / distill::kTeacherFile));
  auto last = model::load_file((std::filesystem::path(dir) / distill::student_file("dft")).string());
  CHECK(last.params == r.students.back().params);
}
