#include "farmlight/cli.h"

#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "farmlight/edge/api.h"
#include "farmlight/edge/sync.h"
#include "farmlight/evalbench.h"
#include "farmlight/netproto/cloud.h"
#include "farmlight/netproto/gateway.h"
#include "farmlight/sim.h"
#include "farmlight/synthgen.h"
#include "farmlight/trainer.h"

namespace farmlight::cli {

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

/// Values from `--config`; a flag given on the command line wins.
template <typename T>
void merge(const CLI::Option* opt, T& value, const Json& cfg, const char* key) {
  if (opt->count() > 0 || !cfg.is_object() || !cfg.contains(key)) return;
  try {
    value = cfg.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw UsageError(std::string("config key '") + key + "': " + e.what());
  }
}

Json section(const Json& cfg, const char* key) {
  if (!cfg.is_object() || !cfg.contains(key)) return Json::object();
  if (!cfg[key].is_object()) throw UsageError(std::string("config key '") + key + "' must be an object");
  return cfg[key];
}

void apply_stage_overrides(distill::StageConfig& sc, const Json& j) {
  try {
    if (j.contains("epochs")) j.at("epochs").get_to(sc.epochs);
    if (j.contains("batch_size")) j.at("batch_size").get_to(sc.batch_size);
    if (j.contains("lr")) j.at("lr").get_to(sc.lr);
    if (j.contains("momentum")) j.at("momentum").get_to(sc.momentum);
    if (j.contains("schedule")) {
      auto s = j.at("schedule").get<std::string>();
      if (s != "cosine" && s != "constant") throw UsageError("schedule must be cosine or constant");
      sc.schedule = s == "cosine" ? distill::LrSchedule::cosine : distill::LrSchedule::constant;
    }
    if (j.contains("kl_direction")) {
      auto d = j.at("kl_direction").get<std::string>();
      if (d != "forward" && d != "reverse") throw UsageError("kl_direction must be forward or reverse");
      sc.kl_direction = d == "forward" ? distill::KlDirection::forward : distill::KlDirection::reverse;
    }
    if (j.contains("weights")) {
      const Json& w = j.at("weights");
      if (w.contains("response_kl")) w.at("response_kl").get_to(sc.weights.response_kl);
      if (w.contains("visual_kl")) w.at("visual_kl").get_to(sc.weights.visual_kl);
      if (w.contains("autocorr")) w.at("autocorr").get_to(sc.weights.autocorr);
      if (w.contains("ground_truth")) w.at("ground_truth").get_to(sc.weights.ground_truth);
    }
  } catch (const Json::exception& e) {
    throw UsageError(std::string("stage override: ") + e.what());
  }
  try {
    sc.validate();
  } catch (const ContractViolation& e) {
    throw UsageError(e.what());
  }
}

edge::EdgePolicy policy_from(const Json& cfg) {
  edge::EdgePolicy p;
  try {
    edge::from_json(section(cfg, "policy"), p);
  } catch (const Json::exception& e) {
    throw UsageError(std::string("policy: ") + e.what());
  } catch (const ContractViolation& e) {
    throw UsageError(std::string("policy: ") + e.what());
  }
  return p;
}

std::pair<std::string, std::uint16_t> address(const std::string& text, const char* what) {
  try {
    return net::parse_address(text);
  } catch (const ContractViolation& e) {
    throw UsageError(std::string(what) + ": " + e.what());
  }
}

void emit(std::ostream& out, bool json, const Json& summary, const std::string& text) {
  if (json)
    out << canonical(summary) << '\n';
  else
    out << text;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << std::fixed << v;
  return s.str();
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

std::string sci(double v) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << v;
  return s.str();
}

void sleep_ms(int ms) { std::this_thread::sleep_for(std::chrono::milliseconds(ms)); }

/// Live loops end on SIGINT/SIGTERM or after `duration_s` when positive.
bool keep_running(std::chrono::steady_clock::time_point start, double duration_s) {
  if (g_interrupted) return false;
  if (duration_s <= 0) return true;
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() < duration_s;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"farmlight: distilled crop-diagnosis model, edge runtime and sync stack", "farmlight"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  bool json = false;
  std::uint64_t seed = 1;
  app.add_option("--config", config_path, "canonical JSON config; flags override its values")
      ->check(CLI::ExistingFile);
  app.add_flag("--json", json, "print the summary as canonical JSON");
  auto* seed_opt = app.add_option("--seed", seed, "seed for every stochastic step");

  // synth gen
  auto* synth = app.add_subcommand("synth", "synthetic data");
  synth->require_subcommand(1);
  auto* gen = synth->add_subcommand("gen", "generate train/val/test splits and the catalog");
  std::string gen_out = "data";
  int n_train = 250, n_val = 50, n_test = 50;
  auto* gen_out_opt = gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--train", n_train, "training samples per class")->check(CLI::PositiveNumber);
  gen->add_option("--val", n_val, "validation samples per class")->check(CLI::PositiveNumber);
  gen->add_option("--test", n_test, "test samples per class")->check(CLI::PositiveNumber);

  // distill
  auto* distill_cmd = app.add_subcommand("distill", "train the teacher and distill the student");
  std::string data_dir = "data", out_dir = "artifacts", stage_name = "all", teacher_path, student_path;
  int epochs = 0;
  double lr = 0.0;
  auto* data_opt = distill_cmd->add_option("--data", data_dir, "dataset directory");
  auto* out_opt = distill_cmd->add_option("--out", out_dir, "artifact directory");
  distill_cmd->add_option("--stage", stage_name, "all, teacher_pretrain, dpt, sft or dft")
      ->check(CLI::IsMember({"all", "teacher_pretrain", "dpt", "sft", "dft"}));
  distill_cmd->add_option("--teacher", teacher_path, "teacher artifact (dpt, dft)");
  distill_cmd->add_option("--student", student_path, "starting student artifact");
  distill_cmd->add_option("--epochs", epochs, "epochs for a single stage")->check(CLI::PositiveNumber);
  distill_cmd->add_option("--lr", lr, "learning rate for a single stage")->check(CLI::PositiveNumber);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "compare analytic and numeric gradients");
  std::string gc_stage = "all";
  std::size_t coords = 50, gc_batch = 4;
  gc->add_option("--stage", gc_stage, "all, teacher_pretrain, dpt, sft or dft")
      ->check(CLI::IsMember({"all", "teacher_pretrain", "dpt", "sft", "dft"}));
  gc->add_option("--coords", coords, "random coordinates per stage")->check(CLI::PositiveNumber);
  gc->add_option("--batch", gc_batch, "samples in the checked batch")->check(CLI::PositiveNumber);

  // eval
  auto* ev = app.add_subcommand("eval", "closed/open VQA metrics and the dialogue check");
  std::string model_path, report_path, dialogue_addr;
  std::size_t sessions = 50;
  double min_pass = 0.9;
  ev->add_option("--model", model_path, "artifact to evaluate");
  auto* ev_data_opt = ev->add_option("--data", data_dir, "dataset directory (test split is used)");
  ev->add_option("--report", report_path, "write the report JSON here");
  ev->add_option("--dialogue", dialogue_addr, "edge API host:port for the dialogue check");
  ev->add_option("--sessions", sessions, "dialogue sessions")->check(CLI::PositiveNumber);
  ev->add_option("--min-pass", min_pass, "required dialogue pass rate")->check(CLI::Range(0.0, 1.0));

  // run cloud|gateway|edge
  auto* run_cmd = app.add_subcommand("run", "run a live node over TCP");
  run_cmd->require_subcommand(1);
  double duration = 0.0;
  run_cmd->add_option("--duration", duration, "stop after this many seconds (0 = until interrupted)");
  bool verbose = false;
  run_cmd->add_flag("--verbose", verbose, "log sync counters every few seconds");
  std::string listen, cloud_addr = "127.0.0.1:7400", gateway_addr = "127.0.0.1:7401",
                      api_addr = "127.0.0.1:8080", node_dir, edge_id = "edge-1", feed_path;
  std::vector<std::string> publish;
  int feed_interval = 1000;

  auto* run_cloud = run_cmd->add_subcommand("cloud", "registry and telemetry store");
  auto* cloud_listen_opt = run_cloud->add_option("--listen", listen, "host:port");
  auto* cloud_dir_opt = run_cloud->add_option("--data-dir", node_dir, "registry/ and telemetry/ live here");
  run_cloud->add_option("--publish", publish, "artifacts to publish at startup");

  auto* run_gw = run_cmd->add_subcommand("gateway", "frame relay between edges and the cloud");
  auto* gw_listen_opt = run_gw->add_option("--listen", listen, "host:port");
  auto* gw_cloud_opt = run_gw->add_option("--cloud", cloud_addr, "cloud host:port");

  auto* run_edge = run_cmd->add_subcommand("edge", "edge runtime with its HTTP API");
  auto* edge_gw_opt = run_edge->add_option("--gateway", gateway_addr, "gateway host:port");
  auto* edge_api_opt = run_edge->add_option("--api", api_addr, "HTTP API host:port");
  auto* edge_dir_opt = run_edge->add_option("--data-dir", node_dir, "telemetry.log and model.flsm");
  auto* edge_id_opt = run_edge->add_option("--edge-id", edge_id, "edge identifier");
  run_edge->add_option("--model", model_path, "artifact to load when none is stored");
  run_edge->add_option("--feed", feed_path, "dataset file streamed into the ingest queue");
  run_edge->add_option("--feed-interval-ms", feed_interval, "delay between fed observations")
      ->check(CLI::PositiveNumber);

  // sim e2e
  auto* sim_cmd = app.add_subcommand("sim", "deterministic multi-node simulation");
  sim_cmd->require_subcommand(1);
  auto* e2e = sim_cmd->add_subcommand("e2e", "cloud + gateway + N edges over lossy links");
  int edges = 3;
  double loss = 0.2;
  std::string v1_path;
  auto* edges_opt = e2e->add_option("--edges", edges, "edge count")->check(CLI::PositiveNumber);
  auto* loss_opt = e2e->add_option("--loss", loss, "frame loss per hop")->check(CLI::Range(0.0, 0.99));
  e2e->add_option("--model", v1_path, "artifact to publish as the new version");
  e2e->add_option("--summary", report_path, "write the summary JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << "\n\n" << (app.get_subcommands().empty() ? app.help() : "")
        << "run with --help for usage\n";
    return 2;
  }

  try {
    Json cfg = Json::object();
    if (!config_path.empty()) {
      try {
        cfg = parse_json(as_text(read_file(config_path)));
      } catch (const FormatError& e) {
        throw UsageError("config " + config_path + ": " + e.what());
      }
      if (!cfg.is_object()) throw UsageError("config must be a JSON object");
    }
    merge(seed_opt, seed, cfg, "seed");

    if (gen->parsed()) {
      merge(gen_out_opt, gen_out, cfg, "data_dir");
      auto world = synth::default_world();
      auto manifests = synth::gen_all_splits(gen_out, world, seed, n_train, n_val, n_test);
      Json summary{{"out", gen_out}, {"seed", seed}, {"manifests", manifests},
                   {"catalog_digest", world.catalog.digest()}};
      std::string text;
      for (const auto& m : manifests)
        text += to_string(m.split) + ": " + std::to_string(m.record_count) + " records, " + m.file_digest + "\n";
      emit(out, json, summary, text);
      return 0;
    }

    if (distill_cmd->parsed()) {
      merge(data_opt, data_dir, cfg, "data_dir");
      merge(out_opt, out_dir, cfg, "artifact_dir");
      Json stages = section(cfg, "stages");
      auto world = synth::default_world();
      auto train = synth::load_split(data_dir, synth::Split::train);
      auto val = synth::load_split(data_dir, synth::Split::val);
      std::filesystem::create_directories(out_dir);

      if (stage_name == "all") {
        auto pc = distill::PipelineConfig::defaults(seed);
        for (auto* sc : {&pc.teacher, &pc.dpt, &pc.sft, &pc.dft}) {
          std::string name = distill::to_string(sc->stage);
          if (stages.contains(name)) apply_stage_overrides(*sc, stages[name]);
        }
        auto result = distill::run_pipeline(train, val, world.catalog.digest(), pc, out_dir);
        Json reports = Json::array();
        std::string text;
        for (const auto& r : result.reports) {
          reports.push_back(r);
          text += distill::to_string(r.stage) + ": val_accuracy " + fmt(r.val_accuracy) +
                  ", frozen " + (r.frozen_intact() ? "intact" : "CHANGED") + ", " + fmt(r.wall_seconds) + " s\n";
        }
        write_file(std::filesystem::path(out_dir) / "train_report.json", canonical(reports));
        bool intact = std::all_of(result.reports.begin(), result.reports.end(),
                                  [](const auto& r) { return r.frozen_intact(); });
        emit(out, json, Json{{"reports", reports}, {"out", out_dir}}, text);
        return intact ? 0 : 1;
      }

      auto stage = distill::stage_from_string(stage_name);
      auto sc = distill::StageConfig::defaults(stage, seed);
      if (stages.contains(stage_name)) apply_stage_overrides(sc, stages[stage_name]);
      if (epochs > 0) sc.epochs = epochs;
      if (lr > 0) sc.lr = lr;
      bool needs_teacher = stage == distill::Stage::dpt || stage == distill::Stage::dft;
      if (needs_teacher && teacher_path.empty())
        throw ContractViolation("stage " + stage_name + " requires a teacher artifact (--teacher)");
      std::optional<model::Artifact> teacher;
      if (!teacher_path.empty()) {
        if (!needs_teacher) throw ContractViolation("stage " + stage_name + " takes no teacher");
        teacher = model::load_file(teacher_path);
      }
      model::Artifact start;
      if (!student_path.empty()) {
        start = model::load_file(student_path);
      } else if (stage == distill::Stage::teacher_pretrain) {
        auto cfg_t = model::ModelConfig::teacher();
        start = model::Artifact{cfg_t, model::init(cfg_t, SplitMix64(seed).next()), {}};
        start.params.round_to_storage();
        start.meta.stage = "init";
        start.meta.catalog_digest = world.catalog.digest();
      } else {
        start = init_student(SplitMix64(seed).next(), world.catalog.digest());
      }
      auto result = distill::train_stage(start, teacher ? &*teacher : nullptr, train, val, sc);
      std::string file = stage == distill::Stage::teacher_pretrain ? distill::kTeacherFile
                                                                    : distill::student_file(stage_name);
      model::save_file((std::filesystem::path(out_dir) / file).string(), result.artifact);
      Json summary{{"report", result.report}, {"artifact", (std::filesystem::path(out_dir) / file).string()},
                   {"version_id", result.artifact.meta.version_id}};
      emit(out, json, summary,
           stage_name + ": val_accuracy " + fmt(result.report.val_accuracy) + ", wrote " + file + "\n");
      return result.report.frozen_intact() ? 0 : 1;
    }

    if (gc->parsed()) {
      auto world = synth::default_world();
      Rng rng = Rng::substream(seed, 0x6C);
      std::vector<Observation> batch;
      for (std::size_t i = 0; i < gc_batch; ++i)
        batch.push_back(synth::gen_observation(world.specs[rng.below(kNumClasses)], rng));
      auto tcfg = model::ModelConfig::teacher();
      model::Artifact teacher{tcfg, model::init(tcfg, SplitMix64(seed ^ 0x7EAC).next()), {}};
      model::Artifact student = init_student(SplitMix64(seed ^ 0x57D).next(), world.catalog.digest());
      if (gc_stage == "teacher_pretrain") student = teacher;
      std::vector<std::string> names = gc_stage == "all"
          ? std::vector<std::string>{"teacher_pretrain", "dpt", "sft", "dft"}
          : std::vector<std::string>{gc_stage};
      Json results = Json::array();
      std::string text;
      bool ok = true;
      for (const auto& name : names) {
        auto stage = distill::stage_from_string(name);
        bool with_teacher = stage == distill::Stage::dpt || stage == distill::Stage::dft;
        const model::Artifact& subject = stage == distill::Stage::teacher_pretrain ? teacher : student;
        auto r = distill::gradcheck(stage, subject, with_teacher ? &teacher : nullptr, batch, coords, seed);
        ok = ok && r.passed;
        results.push_back(r);
        text += name + ": " + std::to_string(r.coordinates) + " coordinates, max relative error " +
                sci(r.max_relative_error) + (r.passed ? " ok" : " FAIL") + "\n";
      }
      emit(out, json, Json{{"results", results}, {"passed", ok}}, text);
      return ok ? 0 : 1;
    }

    if (ev->parsed()) {
      merge(ev_data_opt, data_dir, cfg, "data_dir");
      auto world = synth::default_world();
      Json summary = Json::object();
      std::string text;
      bool ok = true;
      if (model_path.empty() && dialogue_addr.empty())
        throw UsageError("eval needs --model, --dialogue or both");
      auto test = synth::load_split(data_dir, synth::Split::test);
      if (!model_path.empty()) {
        auto artifact = model::load_file(model_path);
        Rng rng(seed);
        auto vqa = synth::gen_vqa_pairs(world.catalog, test, rng);
        auto report = eval::evaluate(artifact, world.catalog, test, vqa, seed);
        summary["report"] = report;
        if (!report_path.empty()) write_file(report_path, canonical(Json(report)));
        text += "closed_accuracy " + fmt(report.closed_accuracy) + ", open_f1 " + fmt(report.open_f1) +
                ", class_accuracy " + fmt(report.class_accuracy) + " over " +
                std::to_string(report.n_samples) + " samples\n";
      }
      if (!dialogue_addr.empty()) {
        auto [host, port] = address(dialogue_addr, "--dialogue");
        edge::HttpClient client(host, port);
        struct Over : eval::DialogueTransport {
          edge::HttpClient& c;
          explicit Over(edge::HttpClient& cl) : c(cl) {}
          Reply post(const std::string& target, const std::string& body) override {
            auto r = c.post(target, body);
            return {r.transport_ok, r.status, r.body, r.error};
          }
        } transport(client);
        std::vector<Observation> script(test.begin(), test.begin() + static_cast<std::ptrdiff_t>(
                                                                        std::min(sessions, test.size())));
        auto report = eval::eval_dialogue(transport, world.catalog, script);
        summary["dialogue"] = report;
        for (std::size_t i = 0; i < report.sessions.size(); ++i)
          for (const auto& r : report.sessions[i].rounds)
            if (!r.transport_ok) err << "session " << i << " round '" << r.question << "': transport failure: " << r.error << "\n";
        text += "dialogue: " + std::to_string(report.passed) + "/" + std::to_string(report.sessions.size()) +
                " sessions passed, " + std::to_string(report.transport_failures) + " transport failures\n";
        ok = report.transport_failures == 0 && report.pass_rate() >= min_pass;
      }
      emit(out, json, summary, text);
      return ok ? 0 : 1;
    }

    if (run_cloud->parsed()) {
      merge(cloud_listen_opt, listen, cfg, "cloud");
      merge(cloud_dir_opt, node_dir, cfg, "cloud_data_dir");
      if (listen.empty()) listen = cloud_addr;
      auto [host, port] = address(listen, "--listen");
      std::optional<std::filesystem::path> base;
      if (!node_dir.empty()) base = node_dir;
      net::Registry registry(base ? std::optional(*base / "registry") : std::nullopt);
      net::TelemetryStore store(base ? std::optional(*base / "telemetry") : std::nullopt);
      SystemClock clock;
      for (const auto& path : publish) {
        try {
          auto e = registry.publish(read_file(path), clock.now_ms());
          err << "published " << e->version_id << " from " << path << "\n";
        } catch (const Conflict& e) {
          err << "skipped " << path << ": " << e.what() << "\n";
        }
      }
      net::CloudService cloud(registry, store);
      net::TcpListener listener(host, port);
      err << "cloud listening on " << host << ":" << listener.port() << "\n";
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      auto start = std::chrono::steady_clock::now();
      while (keep_running(start, duration)) {
        while (auto link = listener.accept()) cloud.attach(link);
        cloud.poll();
        sleep_ms(5);
      }
      emit(out, json, Json{{"batches", store.batch_count()}, {"records", store.record_count()},
                           {"models", registry.size()}},
           "cloud stopped: " + std::to_string(store.batch_count()) + " batches stored\n");
      return 0;
    }

    if (run_gw->parsed()) {
      merge(gw_listen_opt, listen, cfg, "gateway");
      merge(gw_cloud_opt, cloud_addr, cfg, "cloud");
      if (listen.empty()) listen = gateway_addr;
      auto [host, port] = address(listen, "--listen");
      auto [chost, cport] = address(cloud_addr, "--cloud");
      SystemClock clock;
      auto last_attempt = std::make_shared<std::int64_t>(-1'000'000);
      net::Gateway gateway(
          [&, last_attempt]() -> std::shared_ptr<net::Transport> {
            // Reconnects are throttled to one attempt per second.
            if (clock.now_ms() - *last_attempt < 1000) return nullptr;
            *last_attempt = clock.now_ms();
            try {
              return net::TcpTransport::connect(chost, cport);
            } catch (const IoError&) {
              return nullptr;
            }
          },
          clock);
      net::TcpListener listener(host, port);
      err << "gateway listening on " << host << ":" << listener.port() << "\n";
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      auto start = std::chrono::steady_clock::now();
      std::size_t logged = 0;
      while (keep_running(start, duration)) {
        while (auto link = listener.accept()) gateway.attach_edge(link);
        gateway.poll();
        for (; logged < gateway.log().size(); ++logged) {
          const auto& e = gateway.log()[logged];
          if (!e.error.empty())
            err << e.ts_ms << " session " << e.session << " rejected frame: " << e.error << "\n";
        }
        if (gateway.log().size() > 100'000) {
          gateway.clear_log();
          logged = 0;
        }
        sleep_ms(5);
      }
      return 0;
    }

    if (run_edge->parsed()) {
      merge(edge_gw_opt, gateway_addr, cfg, "gateway");
      merge(edge_api_opt, api_addr, cfg, "edge_api");
      merge(edge_dir_opt, node_dir, cfg, "edge_data_dir");
      merge(edge_id_opt, edge_id, cfg, "edge_id");
      if (!net::valid_node_id(edge_id)) throw UsageError("--edge-id must match [A-Za-z0-9_.-]+");
      auto [ghost, gport] = address(gateway_addr, "--gateway");
      auto [ahost, aport] = address(api_addr, "--api");
      auto world = synth::default_world();
      SystemClock clock;
      edge::EdgeOptions opts;
      opts.edge_id = edge_id;
      opts.policy = policy_from(cfg);
      if (!node_dir.empty()) {
        std::filesystem::create_directories(node_dir);
        opts.data_dir = node_dir;
      }
      edge::EdgeRuntime runtime(opts, world.catalog, clock);
      if (runtime.model_version().empty() && !model_path.empty()) runtime.install_model(read_file(model_path));
      std::vector<Observation> feed;
      if (!feed_path.empty()) feed = read_dataset(feed_path);
      edge::EdgeApi api(runtime);
      std::uint16_t bound = api.start(ahost, aport);
      err << "edge " << edge_id << " API on " << ahost << ":" << bound << ", model "
          << (runtime.model_version().empty() ? "(none)" : runtime.model_version()) << "\n";
      runtime.start_worker();

      auto connect = [&]() -> std::shared_ptr<net::Transport> {
        try {
          return net::TcpTransport::connect(ghost, gport);
        } catch (const IoError&) {
          return nullptr;
        }
      };
      edge::SyncClient sync(runtime, connect(), seed);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      auto start = std::chrono::steady_clock::now();
      std::size_t alerts_pushed = runtime.alert_count(), fed = 0;
      std::int64_t next_feed = clock.now_ms(), next_reconnect = 0, next_report = 0;
      Rng jitter(seed ^ 0xBAC0FFULL);
      int reconnects = 0;
      while (keep_running(start, duration)) {
        std::int64_t now = clock.now_ms();
        if (fed < feed.size() && now >= next_feed) {
          Observation o = feed[fed++];
          o.label.reset();
          try {
            runtime.ingest(std::move(o));
          } catch (const Backpressure&) {
            --fed;
          }
          next_feed = now + feed_interval;
        }
        sync.tick();
        auto alerts = runtime.alerts_since(0);
        for (; alerts_pushed < alerts.size(); ++alerts_pushed) sync.push_alert(alerts[alerts_pushed]);
        if (!sync.link_open() && now >= next_reconnect) {
          if (auto link = connect()) {
            sync.set_link(link);
            reconnects = 0;
          } else {
            next_reconnect = now + edge::Backoff{}.delay(reconnects++, jitter);
          }
        }
        if (verbose && now >= next_report) {
          const auto& st = sync.stats();
          err << now << " session=" << sync.session_established() << " hellos=" << st.hellos_sent
              << " batches=" << st.batches_sent << "/" << st.batches_acked << " queries=" << st.model_queries
              << " chunks=" << st.chunk_requests << " swaps=" << st.swaps
              << " integrity_failures=" << st.integrity_failures << " errors=" << st.errors_received
              << " send_failures=" << st.send_failures << " downloading=" << sync.downloading() << "\n";
          next_report = now + 2000;
        }
        sleep_ms(50);
      }
      runtime.stop_worker();
      api.stop();
      emit(out, json, runtime.status(), "edge stopped, model " + runtime.model_version() + "\n");
      return 0;
    }

    if (e2e->parsed()) {
      sim::SimConfig sc;
      try {
        // Top-level policy first; a policy inside "sim" refines it.
        sc.policy = policy_from(cfg);
        sim::from_json(section(cfg, "sim"), sc);
      } catch (const Json::exception& e) {
        throw UsageError(std::string("sim config: ") + e.what());
      } catch (const ContractViolation& e) {
        throw UsageError(std::string("sim config: ") + e.what());
      }
      if (edges_opt->count()) sc.edges = edges;
      if (loss_opt->count()) sc.loss = loss;
      sc.seed = seed;
      std::optional<model::Artifact> v1;
      if (!v1_path.empty()) v1 = model::load_file(v1_path);
      auto summary = sim::run_e2e(sc, std::nullopt, v1);
      Json j = summary;
      if (!report_path.empty()) write_file(report_path, canonical(j));
      std::string text = "edges " + std::to_string(sc.edges) + ", loss " + fmt(sc.loss) + ", seed " +
                         std::to_string(seed) + "\n";
      for (const auto& e : summary.edges)
        text += e.edge_id + ": version " + e.final_version + ", converged after " +
                fmt(e.intervals_to_converge) + " intervals, " + std::to_string(e.batches) + " batches, " +
                std::to_string(e.alerts) + " alerts\n";
      text += std::string("converged ") + (summary.converged ? "yes" : "NO") + ", telemetry exact " +
              (summary.telemetry_exact ? "yes" : "NO") + ", alerts delivered " +
              (summary.alerts_delivered ? "yes" : "NO") + "\n";
      emit(out, json, j, text);
      return summary.passed() ? 0 : 1;
    }
    throw UsageError("no command given");
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace farmlight::cli
