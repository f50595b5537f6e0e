#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "mpref/jsonl.hpp"
#include "mpref/orchestrator.hpp"
#include "support/stub_server.hpp"

using namespace mpref;
using namespace mpref::pipeline;
using mpref::test::StubChatServer;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// four parallel prompts in en (dominant), es and de, written so the built-in
// detector identifies each language
void write_prompt_fixture(const std::string& path) {
  std::vector<MultilingualPrompt> prompts;
  const std::map<LanguageCode, std::string> bases = {
      {"en", "the weather report said it was going to be sunny and they were right"},
      {"es", "los vecinos dicen que el tiempo es muy bueno para salir también"},
      {"de", "die nachbarn sagen dass das wetter gut ist und wir gerne rausgehen"},
  };
  for (int i = 0; i < 4; ++i) {
    for (const auto& [lang, base] : bases) {
      prompts.push_back({"p" + std::to_string(i), lang, base + " q" + std::to_string(i)});
    }
  }
  jsonl::write_prompts(path, prompts);
}

PipelineConfig stub_config(const StubChatServer& server, const fs::path& dir, Mode mode,
                           std::uint64_t seed = 42) {
  write_prompt_fixture((dir / "prompts.jsonl").string());
  PipelineConfig cfg;
  cfg.langs = {"en", {"es", "de"}, {"zh"}};
  cfg.prompts_path = (dir / "prompts.jsonl").string();
  cfg.workdir = (dir / "run").string();
  cfg.endpoint.base_url = server.base_url();
  cfg.endpoint.model_id = "stub-model";
  cfg.endpoint.max_retries = 1;
  cfg.endpoint.cache_enabled = false;
  cfg.judge = cfg.endpoint;
  cfg.hp.steps = 40;
  cfg.hp.learning_rate = 0.2;
  cfg.iterations = 2;
  cfg.seed = seed;
  cfg.mode = mode;
  cfg.reward_sample_size = 10;
  return cfg;
}

std::map<std::string, std::string> workdir_contents(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), root).string();
    if (rel == "run.log") continue;  // timestamps live here only
    files[rel] = jsonl::read_file(entry.path().string());
  }
  return files;
}

}  // namespace

TEST_CASE("config files parse into a validated pipeline config") {
  TempDir dir("mpref_cfg_test");
  const auto cfg_path = (dir.path / "pipeline.cfg").string();
  std::ofstream out(cfg_path);
  out << "# demo pipeline\n"
      << "prompts_path = " << (dir.path / "prompts.jsonl").string() << "\n"
      << "workdir = " << (dir.path / "run").string() << "\n"
      << "iterations = 2\n"
      << "seed = 99\n"
      << "mode = toy\n"
      << "filter_chosen_language = false\n"
      << "reward_sample_size = 25\n"
      << "langs.dominant = en\n"
      << "langs.non_dominant = es, de\n"
      << "langs.unseen = zh\n"
      << "endpoint.base_url = http://127.0.0.1:8099\n"
      << "endpoint.model_id = demo-model\n"
      << "endpoint.temperature = 0.5\n"
      << "endpoint.max_in_flight = 8\n"
      << "judge.base_url = http://127.0.0.1:8100\n"
      << "judge.model_id = judge-model\n"
      << "hp.beta = 0.2\n"
      << "hp.alpha = 0.0\n"
      << "hp.steps = 10\n";
  out.close();

  const auto cfg = PipelineConfig::load(cfg_path);
  CHECK(cfg.iterations == 2);
  CHECK(cfg.seed == 99);
  CHECK(cfg.mode == Mode::toy);
  CHECK_FALSE(cfg.filter_chosen_language);
  CHECK(cfg.reward_sample_size == 25);
  CHECK(cfg.langs.dominant == "en");
  CHECK(cfg.langs.non_dominant == std::vector<LanguageCode>{"es", "de"});
  CHECK(cfg.langs.unseen == std::vector<LanguageCode>{"zh"});
  CHECK(cfg.endpoint.model_id == "demo-model");
  CHECK(cfg.endpoint.temperature == 0.5);
  CHECK(cfg.endpoint.max_in_flight == 8);
  CHECK(cfg.judge.model_id == "judge-model");
  CHECK(cfg.hp.beta == 0.2);
  CHECK(cfg.hp.alpha == 0.0);
  CHECK(cfg.hp.steps == 10);
  CHECK(cfg.hp.seed == 99);  // inherits the pipeline seed when unset

  SUBCASE("unknown keys are rejected") {
    std::ofstream bad(cfg_path, std::ios::app);
    bad << "endpoint.typo_key = 1\n";
    bad.close();
    CHECK_THROWS_AS(PipelineConfig::load(cfg_path), UsageError);
  }

  SUBCASE("missing files are usage errors") {
    CHECK_THROWS_AS(PipelineConfig::load((dir.path / "nope.cfg").string()), UsageError);
  }
}

TEST_CASE("iteration state round-trips losslessly") {
  TempDir dir("mpref_state_test");
  IterationState state;
  state.seed = 7;
  state.model_tags = {"M0:base", "M1:toy-dpo"};
  IterationRecord rec;
  rec.t = 0;
  rec.status = Status::evaluated;
  rec.digests["pairs.jsonl"] = "abc123";
  rec.metrics_json = R"({"iteration":0,"off_target":{"en":0.0}})";
  state.iterations[0] = rec;

  const auto path = (dir.path / "state.json").string();
  state.save(path);
  const auto loaded = IterationState::load(path);
  CHECK(loaded.seed == 7);
  CHECK(loaded.model_tags == state.model_tags);
  CHECK(loaded.status_of(0) == Status::evaluated);
  CHECK(loaded.iterations.at(0).digests.at("pairs.jsonl") == "abc123");
  CHECK(json::parse(loaded.iterations.at(0).metrics_json) == json::parse(rec.metrics_json));

  // saving the loaded state reproduces the file byte for byte
  const auto first = jsonl::read_file(path);
  loaded.save(path);
  CHECK(jsonl::read_file(path) == first);

  CHECK(IterationState::load((dir.path / "absent.json").string()).iterations.empty());
}

TEST_CASE("one export-mode iteration produces the full artifact set") {
  StubChatServer server(mpref::test::pipeline_stub_reply);
  TempDir dir("mpref_iter_test");
  const auto cfg = stub_config(server, dir.path, Mode::export_data);

  auto state = run_iteration(cfg, IterationState{}, 0);
  CHECK(state.status_of(0) == Status::evaluated);

  const fs::path iter0 = fs::path(cfg.workdir) / "iter_0";
  for (const char* name : {"responses_native.jsonl", "responses_translations.jsonl",
                           "pairs.jsonl", "pairs.jsonl.meta.json", "drop_report.json",
                           "train_export.jsonl", "train_export.jsonl.meta.json",
                           "verdicts.jsonl", "metrics.json"}) {
    CAPTURE(name);
    CHECK(fs::exists(iter0 / name));
  }

  // 4 prompts, two non-dominant languages: 4 * (2 + 1) pairs, no drops
  const auto dataset = jsonl::read_dataset((iter0 / "pairs.jsonl").string());
  CHECK(dataset.pairs.size() == 12);
  const auto drops = jsonl::read_drop_report((iter0 / "drop_report.json").string());
  CHECK(drops.empty());

  const auto exported = jsonl::read_file((iter0 / "train_export.jsonl").string());
  CHECK(std::count(exported.begin(), exported.end(), '\n') == 12);

  const auto metrics = json::parse(jsonl::read_file((iter0 / "metrics.json").string()));
  CHECK(metrics.at("iteration") == 0);
  CHECK(metrics.at("reward_accuracy").contains("en"));
  CHECK(metrics.at("reward_accuracy").contains("es"));
  CHECK(metrics.at("reward_accuracy").contains("de"));
  CHECK(metrics.at("off_target").at("en") == 0.0);

  CHECK(state.model_tags.size() == 2);
  CHECK(state.model_tags[0] == "M0:stub-model");
  CHECK(state.model_tags[1] == "M1:external-finetune-pending");

  SUBCASE("rerun is a no-op with identical digests") {
    const auto digests = state.iterations.at(0).digests;
    const int requests_before = server.total_requests();
    auto again = run_iteration(cfg, state, 0);
    CHECK(server.total_requests() == requests_before);
    CHECK(again.iterations.at(0).digests == digests);
  }

  SUBCASE("the second iteration nests under iter_1 and extends the lineage") {
    auto next = run_iteration(cfg, state, 1);
    CHECK(next.status_of(1) == Status::evaluated);
    CHECK(fs::exists(fs::path(cfg.workdir) / "iter_1" / "pairs.jsonl"));
    CHECK(next.model_tags.size() == 3);
    CHECK(next.model_tags[2] == "M2:external-finetune-pending");
  }
}

TEST_CASE("toy mode trains a policy and records the curve") {
  StubChatServer server(mpref::test::pipeline_stub_reply);
  TempDir dir("mpref_toy_test");
  const auto cfg = stub_config(server, dir.path, Mode::toy);

  auto state = run_iteration(cfg, IterationState{}, 0);
  const fs::path iter0 = fs::path(cfg.workdir) / "iter_0";
  CHECK(fs::exists(iter0 / "toy_policy.json"));
  CHECK(fs::exists(iter0 / "training_curve.csv"));
  CHECK(state.model_tags[1] == "M1:toy-dpo");

  const auto curve = jsonl::read_file((iter0 / "training_curve.csv").string());
  CHECK(curve.starts_with("step,dpo,nll,total,margin_mean,implicit_reward_acc\n"));
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 41);  // header plus 40 steps

  const auto policy =
      dpo::policy_from_json(jsonl::read_file((iter0 / "toy_policy.json").string()));
  CHECK(policy.context_order == 1);
  CHECK(policy.model_tag == "M0+dpo");
}

TEST_CASE("interrupted rundirs resume from the last completed stage") {
  StubChatServer server(mpref::test::pipeline_stub_reply);
  TempDir dir("mpref_resume_test");
  const auto cfg = stub_config(server, dir.path, Mode::export_data);

  auto state = stage_generate(cfg, IterationState{}, 0);
  CHECK(state.status_of(0) == Status::generated);
  const int requests_after_generate = server.total_requests();

  // a fresh process picks the state file up and finishes the iteration
  auto resumed = run_iteration(cfg, IterationState::load((fs::path(cfg.workdir) / "state.json").string()), 0);
  CHECK(resumed.status_of(0) == Status::evaluated);
  // generation was not repeated
  CHECK(resumed.iterations.at(0).digests.at("responses_native.jsonl") ==
        state.iterations.at(0).digests.at("responses_native.jsonl"));
  CHECK(server.total_requests() > requests_after_generate);
}

TEST_CASE("two runs with one seed are byte-identical, a different seed is not") {
  StubChatServer server(mpref::test::pipeline_stub_reply);
  TempDir dir_a("mpref_det_a");
  TempDir dir_b("mpref_det_b");
  TempDir dir_c("mpref_det_c");

  const auto cfg_a = stub_config(server, dir_a.path, Mode::export_data, 42);
  const auto cfg_b = stub_config(server, dir_b.path, Mode::export_data, 42);
  const auto cfg_c = stub_config(server, dir_c.path, Mode::export_data, 43);
  run_iteration(cfg_a, IterationState{}, 0);
  run_iteration(cfg_b, IterationState{}, 0);
  run_iteration(cfg_c, IterationState{}, 0);

  const auto a = workdir_contents(cfg_a.workdir);
  const auto b = workdir_contents(cfg_b.workdir);
  REQUIRE_FALSE(a.empty());
  CHECK(a == b);

  const auto c = workdir_contents(cfg_c.workdir);
  CHECK(a != c);  // the nl->dl selection differs
}

TEST_CASE("workdir lock admits one run at a time") {
  StubChatServer server(mpref::test::pipeline_stub_reply);
  TempDir dir("mpref_lock_test");
  const auto cfg = stub_config(server, dir.path, Mode::export_data);

  fs::create_directories(cfg.workdir);
  std::ofstream(fs::path(cfg.workdir) / ".lock") << "held\n";
  CHECK_THROWS_WITH_AS(run_iteration(cfg, IterationState{}, 0), doctest::Contains("locked"),
                       Error);
  fs::remove(fs::path(cfg.workdir) / ".lock");
  CHECK_NOTHROW(run_iteration(cfg, IterationState{}, 0));
  CHECK_FALSE(fs::exists(fs::path(cfg.workdir) / ".lock"));
}

TEST_CASE("reports lay metrics out per iteration") {
  PipelineConfig cfg;
  cfg.langs = {"en", {"es", "de"}, {}};

  IterationState state;
  auto canned = [](double en, double es, double de, int t) {
    json m;
    m["iteration"] = t;
    m["reward_accuracy"] = {
        {"en", {{"accuracy", en}, {"n", 100}, {"errors", 0},
                {"classification", en > 0.6 ? "high_reward" : "low_reward"}}},
        {"es", {{"accuracy", es}, {"n", 100}, {"errors", 0},
                {"classification", es > 0.6 ? "high_reward" : "low_reward"}}},
        {"de", {{"accuracy", de}, {"n", 100}, {"errors", 0},
                {"classification", de > 0.6 ? "high_reward" : "low_reward"}}}};
    m["win_rate"] = {{"win", 0.6}, {"loss", 0.3}, {"tie", 0.1}, {"delta", 0.3}};
    m["off_target"] = {{"en", 0.0}, {"es", 0.01}, {"de", 0.02}};
    return m;
  };

  SUBCASE("nothing evaluated errors") {
    CHECK_THROWS_WITH_AS(report_text(state, cfg), doctest::Contains("nothing evaluated"), Error);
  }

  SUBCASE("single iteration table") {
    state.model_tags = {"M0:base", "M1:next"};
    state.iterations[0].status = Status::evaluated;
    state.iterations[0].metrics_json = canned(0.72, 0.57, 0.70, 0).dump();
    const auto text = report_text(state, cfg);
    CHECK(text.find("0.720") != std::string::npos);
    CHECK(text.find("0.570") != std::string::npos);
    CHECK(text.find("high") != std::string::npos);
    CHECK(text.find("low") != std::string::npos);
    CHECK(text.find("delta(W-L) = 0.300") != std::string::npos);
    // column order is dominant first
    CHECK(text.find("en") < text.find("es"));

    const auto j = json::parse(report_json(state, cfg));
    CHECK(j.at("languages")[0] == "en");
    CHECK(j.at("iterations").size() == 1);
  }

  SUBCASE("two iterations add delta rows") {
    state.iterations[0].status = Status::evaluated;
    state.iterations[0].metrics_json = canned(0.72, 0.57, 0.70, 0).dump();
    state.iterations[1].status = Status::evaluated;
    state.iterations[1].metrics_json = canned(0.68, 0.60, 0.62, 1).dump();
    const auto text = report_text(state, cfg);
    CHECK(text.find("delta_reward_acc") != std::string::npos);
    CHECK(text.find("-0.040") != std::string::npos);
    CHECK(text.find("+0.030") != std::string::npos);
  }
}

TEST_CASE("cli maps outcomes to exit codes") {
  StubChatServer server(mpref::test::pipeline_stub_reply);
  TempDir dir("mpref_cli_test");
  const auto cfg = stub_config(server, dir.path, Mode::export_data);

  // write the config used by the CLI invocations
  const auto cfg_path = (dir.path / "cli.cfg").string();
  std::ofstream out(cfg_path);
  out << "prompts_path = " << cfg.prompts_path << "\n"
      << "workdir = " << cfg.workdir << "\n"
      << "iterations = 2\nseed = 42\nmode = export\nreward_sample_size = 10\n"
      << "langs.dominant = en\nlangs.non_dominant = es, de\n"
      << "endpoint.base_url = " << server.base_url() << "\n"
      << "endpoint.model_id = stub-model\nendpoint.max_retries = 1\n"
      << "endpoint.cache_enabled = false\n"
      << "judge.base_url = " << server.base_url() << "\n"
      << "judge.model_id = stub-model\njudge.cache_enabled = false\n";
  out.close();

  CHECK(run_cli({"detect-lang", "--text", "Привет, как дела?"}) == 0);
  CHECK(run_cli({"run-iteration", "--config", cfg_path, "--iteration", "0"}) == 0);
  CHECK(run_cli({"report", "--config", cfg_path}) == 0);
  CHECK(fs::exists(fs::path(cfg.workdir) / "report.txt"));
  CHECK(fs::exists(fs::path(cfg.workdir) / "report.json"));

  SUBCASE("usage errors exit 1") {
    CHECK(run_cli({}) == 1);
    CHECK(run_cli({"not-a-command"}) == 1);
    CHECK(run_cli({"run-iteration"}) == 1);  // --config missing
    CHECK(run_cli({"detect-lang"}) == 1);    // --text or --input missing
    CHECK(run_cli({"run-iteration", "--config", (dir.path / "missing.cfg").string()}) == 1);
  }

  SUBCASE("pipeline errors exit 2") {
    // judge endpoint goes away between stages
    const auto bad_cfg_path = (dir.path / "bad.cfg").string();
    std::ofstream bad(bad_cfg_path);
    bad << "prompts_path = " << cfg.prompts_path << "\n"
        << "workdir = " << (dir.path / "bad_run").string() << "\n"
        << "iterations = 1\nseed = 42\nmode = export\nreward_sample_size = 4\n"
        << "langs.dominant = en\nlangs.non_dominant = es\n"
        << "endpoint.base_url = " << server.base_url() << "\n"
        << "endpoint.model_id = stub-model\nendpoint.max_retries = 0\n"
        << "endpoint.cache_enabled = false\n"
        << "judge.base_url = http://127.0.0.1:9\n"
        << "judge.model_id = stub-model\njudge.max_retries = 0\n"
        << "judge.cache_enabled = false\n";
    bad.close();
    CHECK(run_cli({"run-iteration", "--config", bad_cfg_path, "--iteration", "0"}) == 2);
  }

  SUBCASE("build-pairs prints the surviving pair count") {
    CHECK(run_cli({"build-pairs", "--config", cfg_path, "--iteration", "0"}) == 0);
  }

  SUBCASE("reward-accuracy writes a JSON report") {
    REQUIRE(run_cli({"run-iteration", "--config", cfg_path, "--iteration", "0"}) == 0);
    const auto out = (dir.path / "reward.json").string();
    CHECK(run_cli({"reward-accuracy", "--config", cfg_path, "--iteration", "0", "--output",
                   out}) == 0);
    const auto j = json::parse(jsonl::read_file(out));
    CHECK(j.at("per_language").contains("es"));
    CHECK(j.at("per_language").at("es").contains("classification"));
  }

  SUBCASE("score-reasoning consumes a JSONL of cases") {
    const auto cases = (dir.path / "cases.jsonl").string();
    std::ofstream c(cases);
    c << R"({"response": "the answer is 42 and that is it", "gold": "42", "lang": "en"})" << "\n"
      << R"({"response": "no number", "gold": "7", "lang": "en"})" << "\n";
    c.close();
    CHECK(run_cli({"score-reasoning", "--input", cases}) == 0);
  }
}
