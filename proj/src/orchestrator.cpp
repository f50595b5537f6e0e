#include "mpref/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mpref/client.hpp"
#include "mpref/evaluator.hpp"
#include "mpref/jsonl.hpp"
#include "mpref/lang_detect.hpp"
#include "mpref/log.hpp"
#include "mpref/rng.hpp"

namespace mpref::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw Error("config key " + key + " expects a boolean, got '" + value + "'");
}

// Artifact layout of one iteration directory.
struct IterPaths {
  fs::path dir;
  fs::path native;
  fs::path translations;
  fs::path pairs;
  fs::path drops;
  fs::path export_file;
  fs::path policy;
  fs::path curve;
  fs::path verdicts;
  fs::path metrics;
};

IterPaths iter_paths(const PipelineConfig& cfg, int t) {
  IterPaths p;
  p.dir = fs::path(cfg.workdir) / ("iter_" + std::to_string(t));
  p.native = p.dir / "responses_native.jsonl";
  p.translations = p.dir / "responses_translations.jsonl";
  p.pairs = p.dir / "pairs.jsonl";
  p.drops = p.dir / "drop_report.json";
  p.export_file = p.dir / "train_export.jsonl";
  p.policy = p.dir / "toy_policy.json";
  p.curve = p.dir / "training_curve.csv";
  p.verdicts = p.dir / "verdicts.jsonl";
  p.metrics = p.dir / "metrics.json";
  return p;
}

fs::path state_path(const PipelineConfig& cfg) { return fs::path(cfg.workdir) / "state.json"; }

// One pipeline run per workdir.
class WorkdirLock {
 public:
  explicit WorkdirLock(const std::string& workdir) : path_(fs::path(workdir) / ".lock") {
    fs::create_directories(workdir);
    std::error_code ec;
    if (fs::exists(path_)) {
      throw Error("workdir is locked by another run (remove " + path_.string() +
                  " if that run is gone)");
    }
    std::ofstream out(path_);
    out << "locked\n";
  }
  ~WorkdirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
};

void append_log(const PipelineConfig& cfg, const std::string& line) {
  std::ofstream out(fs::path(cfg.workdir) / "run.log", std::ios::app);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << " " << line << "\n";
}

void record_digest(IterationState& state, int t, const fs::path& file) {
  state.iterations[t].digests[file.filename().string()] =
      client::sha256_hex(jsonl::read_file(file.string()));
}

void persist(const PipelineConfig& cfg, IterationState& state) {
  state.save(state_path(cfg).string());
}

std::vector<MultilingualPrompt> load_training_prompts(const PipelineConfig& cfg) {
  auto all = jsonl::read_prompts(cfg.prompts_path);
  std::vector<MultilingualPrompt> kept;
  for (auto& p : all) {
    const bool is_dominant = p.lang == cfg.langs.dominant;
    const bool is_non_dominant =
        std::find(cfg.langs.non_dominant.begin(), cfg.langs.non_dominant.end(), p.lang) !=
        cfg.langs.non_dominant.end();
    if (is_dominant || is_non_dominant) kept.push_back(std::move(p));
  }
  if (kept.empty()) throw Error("no prompts for the configured languages in " + cfg.prompts_path);
  return kept;
}

std::vector<std::string> prompt_id_order(std::span<const MultilingualPrompt> prompts) {
  std::vector<std::string> order;
  for (const auto& p : prompts) {
    if (std::find(order.begin(), order.end(), p.prompt_id) == order.end()) {
      order.push_back(p.prompt_id);
    }
  }
  return order;
}

void ensure_model_tag(IterationState& state, const PipelineConfig& cfg, std::size_t index,
                      const std::string& tag) {
  if (state.model_tags.size() <= index) state.model_tags.resize(index + 1);
  if (state.model_tags[index].empty()) state.model_tags[index] = tag;
  (void)cfg;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (k >= n) return idx;
  std::mt19937_64 gen(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng::uniform_below(gen, n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

json metrics_to_json(const eval::RewardAccuracyReport& report, const eval::WinRate& wins,
                     const std::map<LanguageCode, double>& off_target, int t) {
  json m;
  m["iteration"] = t;
  json acc = json::object();
  for (const auto& [lang, a] : report.per_language) {
    acc[lang] = {{"accuracy", a.accuracy},
                 {"n", a.sample_count},
                 {"errors", a.error_count},
                 {"classification", a.high_reward ? "high_reward" : "low_reward"}};
  }
  m["reward_accuracy"] = std::move(acc);
  m["win_rate"] = {{"win", wins.win}, {"loss", wins.loss}, {"tie", wins.tie}, {"delta", wins.delta}};
  m["off_target"] = off_target;
  return m;
}

}  // namespace

const char* to_string(Mode m) { return m == Mode::toy ? "toy" : "export"; }

const char* to_string(Status s) {
  switch (s) {
    case Status::pending: return "pending";
    case Status::generated: return "generated";
    case Status::paired: return "paired";
    case Status::trained: return "trained";
    case Status::evaluated: return "evaluated";
  }
  return "pending";
}

Status status_from_string(const std::string& s) {
  if (s == "pending") return Status::pending;
  if (s == "generated") return Status::generated;
  if (s == "paired") return Status::paired;
  if (s == "trained") return Status::trained;
  if (s == "evaluated") return Status::evaluated;
  throw Error("unknown status: " + s);
}

void PipelineConfig::validate() const {
  langs.validate();
  if (prompts_path.empty()) throw Error("prompts_path must be set");
  if (!fs::exists(prompts_path)) throw Error("prompts_path does not exist: " + prompts_path);
  if (workdir.empty()) throw Error("workdir must be set");
  if (iterations < 1) throw Error("iterations must be >= 1");
  if (reward_sample_size < 1) throw Error("reward_sample_size must be >= 1");
  endpoint.validate();
  judge.validate();
  hp.validate();
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);

  PipelineConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line.erase(comment);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(lineno) + " is not key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    auto endpoint_key = [&](EndpointConfig& e, const std::string& sub) -> bool {
      if (sub == "base_url") e.base_url = value;
      else if (sub == "api_key_env") e.api_key_env = value;
      else if (sub == "model_id") e.model_id = value;
      else if (sub == "temperature") e.temperature = std::stod(value);
      else if (sub == "max_tokens") e.max_tokens = std::stoi(value);
      else if (sub == "max_in_flight") e.max_in_flight = std::stoi(value);
      else if (sub == "max_retries") e.max_retries = std::stoi(value);
      else if (sub == "timeout_s") e.timeout_s = std::stod(value);
      else if (sub == "cache_enabled") e.cache_enabled = parse_bool(value, key);
      else if (sub == "cache_dir") e.cache_dir = value;
      else return false;
      return true;
    };

    if (key == "prompts_path") cfg.prompts_path = value;
    else if (key == "workdir") cfg.workdir = value;
    else if (key == "iterations") cfg.iterations = std::stoi(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "mode") {
      if (value == "toy") cfg.mode = Mode::toy;
      else if (value == "export") cfg.mode = Mode::export_data;
      else throw UsageError("mode must be 'toy' or 'export'");
    } else if (key == "filter_chosen_language") {
      cfg.filter_chosen_language = parse_bool(value, key);
    } else if (key == "reward_sample_size") {
      cfg.reward_sample_size = std::stoi(value);
    } else if (key == "langs.dominant") {
      cfg.langs.dominant = value;
    } else if (key == "langs.non_dominant") {
      cfg.langs.non_dominant = split_list(value);
    } else if (key == "langs.unseen") {
      cfg.langs.unseen = split_list(value);
    } else if (key.starts_with("endpoint.")) {
      if (!endpoint_key(cfg.endpoint, key.substr(9))) throw UsageError("unknown config key " + key);
    } else if (key.starts_with("judge.")) {
      if (!endpoint_key(cfg.judge, key.substr(6))) throw UsageError("unknown config key " + key);
    } else if (key == "hp.beta") cfg.hp.beta = std::stod(value);
    else if (key == "hp.alpha") cfg.hp.alpha = std::stod(value);
    else if (key == "hp.learning_rate") cfg.hp.learning_rate = std::stod(value);
    else if (key == "hp.steps") cfg.hp.steps = std::stoi(value);
    else if (key == "hp.batch_size") cfg.hp.batch_size = std::stoi(value);
    else if (key == "hp.seed") cfg.hp.seed = std::stoull(value);
    else throw UsageError("unknown config key " + key);
  }
  if (cfg.hp.seed == 0) cfg.hp.seed = cfg.seed;
  return cfg;
}

Status IterationState::status_of(int t) const {
  auto it = iterations.find(t);
  return it == iterations.end() ? Status::pending : it->second.status;
}

IterationState IterationState::load(const std::string& path) {
  IterationState state;
  std::ifstream in(path);
  if (!in) return state;  // fresh workdir
  json j = json::parse(in);
  state.seed = j.value("seed", 0ull);
  state.model_tags = j.value("model_tags", std::vector<std::string>{});
  if (j.contains("iterations")) {
    for (const auto& [key, rec] : j.at("iterations").items()) {
      IterationRecord r;
      r.t = std::stoi(key);
      r.status = status_from_string(rec.at("status").get<std::string>());
      r.digests = rec.value("digests", std::map<std::string, std::string>{});
      if (rec.contains("metrics") && !rec.at("metrics").is_null()) {
        r.metrics_json = rec.at("metrics").dump();
      }
      state.iterations[r.t] = std::move(r);
    }
  }
  return state;
}

void IterationState::save(const std::string& path) const {
  json j;
  j["seed"] = seed;
  j["model_tags"] = model_tags;
  json iters = json::object();
  for (const auto& [t, rec] : iterations) {
    json r;
    r["status"] = to_string(rec.status);
    r["digests"] = rec.digests;
    r["metrics"] = rec.metrics_json.empty() ? json(nullptr) : json::parse(rec.metrics_json);
    iters[std::to_string(t)] = std::move(r);
  }
  j["iterations"] = std::move(iters);
  jsonl::write_file(path, j.dump(2) + "\n");
}

IterationState stage_generate(const PipelineConfig& cfg, IterationState state, int t) {
  if (state.status_of(t) != Status::pending) return state;

  const auto paths = iter_paths(cfg, t);
  const auto prompts = load_training_prompts(cfg);
  append_log(cfg, "iter " + std::to_string(t) + ": generating responses for " +
                      std::to_string(prompts.size()) + " prompts");

  client::ChatClient chat(cfg.endpoint);
  std::vector<ResponseRecord> records;
  std::vector<LanguageCode> langs{cfg.langs.dominant};
  langs.insert(langs.end(), cfg.langs.non_dominant.begin(), cfg.langs.non_dominant.end());
  for (const auto& lang : langs) {
    std::vector<MultilingualPrompt> subset;
    for (const auto& p : prompts) {
      if (p.lang == lang) subset.push_back(p);
    }
    if (subset.empty()) continue;
    auto generated = chat.generate(subset);
    records.insert(records.end(), std::make_move_iterator(generated.begin()),
                   std::make_move_iterator(generated.end()));
  }

  jsonl::write_records(paths.native.string(), records);
  state.seed = cfg.seed;
  ensure_model_tag(state, cfg, static_cast<std::size_t>(t),
                   "M" + std::to_string(t) + ":" + cfg.endpoint.model_id);
  state.iterations[t].t = t;
  state.iterations[t].status = Status::generated;
  record_digest(state, t, paths.native);
  persist(cfg, state);
  return state;
}

IterationState stage_translate(const PipelineConfig& cfg, IterationState state, int t) {
  const auto paths = iter_paths(cfg, t);
  if (state.status_of(t) == Status::pending) {
    throw Error("translate: iteration " + std::to_string(t) + " has no generated responses yet");
  }
  if (state.status_of(t) != Status::generated) return state;
  if (fs::exists(paths.translations) &&
      state.iterations[t].digests.contains(paths.translations.filename().string())) {
    return state;
  }

  const auto native = jsonl::read_records(paths.native.string());
  const auto prompts = load_training_prompts(cfg);
  const auto order = prompt_id_order(prompts);
  const auto sources = pairs::select_translation_sources(
      order, cfg.langs.non_dominant, rng::derive_seed(cfg.seed, t, "nl-selection"));

  std::vector<ResponseRecord> dominant_native;
  std::map<LanguageCode, std::vector<ResponseRecord>> native_by_lang;
  for (const auto& r : native) {
    if (r.lang == cfg.langs.dominant) dominant_native.push_back(r);
    else native_by_lang[r.lang].push_back(r);
  }

  append_log(cfg, "iter " + std::to_string(t) + ": self-translating responses");
  client::ChatClient chat(cfg.endpoint);
  std::vector<ResponseRecord> translations;

  // dl -> every nl
  for (const auto& nl : cfg.langs.non_dominant) {
    if (dominant_native.empty()) break;
    auto out = chat.self_translate(dominant_native, nl);
    translations.insert(translations.end(), std::make_move_iterator(out.begin()),
                        std::make_move_iterator(out.end()));
  }
  // selected nl -> dl, per prompt
  for (const auto& nl : cfg.langs.non_dominant) {
    std::vector<ResponseRecord> selected;
    for (const auto& r : native_by_lang[nl]) {
      auto it = sources.find(r.prompt_id);
      if (it != sources.end() && it->second == nl) selected.push_back(r);
    }
    if (selected.empty()) continue;
    auto out = chat.self_translate(selected, cfg.langs.dominant);
    translations.insert(translations.end(), std::make_move_iterator(out.begin()),
                        std::make_move_iterator(out.end()));
  }

  jsonl::write_records(paths.translations.string(), translations);
  record_digest(state, t, paths.translations);
  persist(cfg, state);
  return state;
}

IterationState stage_build_pairs(const PipelineConfig& cfg, IterationState state, int t) {
  const auto paths = iter_paths(cfg, t);
  if (state.status_of(t) == Status::pending) {
    throw Error("build-pairs: iteration " + std::to_string(t) + " has no responses yet");
  }
  if (state.status_of(t) != Status::generated) return state;
  if (!fs::exists(paths.translations)) {
    throw Error("build-pairs: translations missing, run the translate stage first");
  }

  const auto prompts = load_training_prompts(cfg);
  const auto native = jsonl::read_records(paths.native.string());
  const auto translations = jsonl::read_records(paths.translations.string());

  auto built = pairs::build_pairs(prompts, native, translations, cfg.langs,
                                  rng::derive_seed(cfg.seed, t, "nl-selection"), t);
  pairs::DropReport drops = built.drops;
  pairs::PairDataset dataset = std::move(built.dataset);

  if (cfg.filter_chosen_language) {
    auto filtered = pairs::filter_pairs(dataset, pairs::FilterPolicy{}, langid::Detector::builtin());
    for (const auto& [reason, count] : filtered.drops) drops[reason] += count;
    dataset = std::move(filtered.dataset);
  }

  append_log(cfg, "iter " + std::to_string(t) + ": built " + std::to_string(dataset.pairs.size()) +
                      " pairs");
  jsonl::write_dataset(paths.pairs.string(), dataset);
  jsonl::write_drop_report(paths.drops.string(), drops);

  state.iterations[t].status = Status::paired;
  record_digest(state, t, paths.pairs);
  record_digest(state, t, paths.drops);
  persist(cfg, state);
  return state;
}

IterationState stage_train_or_export(const PipelineConfig& cfg, IterationState state, int t) {
  const auto paths = iter_paths(cfg, t);
  if (state.status_of(t) < Status::paired) {
    throw Error("train/export: iteration " + std::to_string(t) + " has no pair dataset yet");
  }
  if (state.status_of(t) != Status::paired) return state;

  const auto dataset = jsonl::read_dataset(paths.pairs.string());
  if (dataset.pairs.empty()) throw Error("pair dataset is empty, nothing to train on");

  if (cfg.mode == Mode::export_data) {
    const auto summary =
        dpo::export_training_file(dataset, paths.export_file.string(), cfg.hp.beta, cfg.hp.alpha);
    append_log(cfg, "iter " + std::to_string(t) + ": exported " +
                        std::to_string(summary.pairs_written) + " pairs");
    record_digest(state, t, paths.export_file);
    record_digest(state, t, fs::path(summary.sidecar_path));
    ensure_model_tag(state, cfg, static_cast<std::size_t>(t) + 1,
                     "M" + std::to_string(t + 1) + ":external-finetune-pending");
  } else {
    std::vector<std::string> corpus;
    for (const auto& p : dataset.pairs) {
      corpus.push_back(p.prompt_text);
      corpus.push_back(p.chosen_text);
      corpus.push_back(p.rejected_text);
    }
    const auto vocab = dpo::build_vocab(corpus);
    const auto batch = dpo::tokenize_pairs(vocab, dataset.pairs);

    // continue from the previous iteration's policy when it still covers the
    // corpus, otherwise start fresh
    dpo::ToyPolicy initial;
    bool loaded = false;
    if (t > 0) {
      const auto prev = iter_paths(cfg, t - 1).policy;
      if (fs::exists(prev)) {
        dpo::ToyPolicy previous = dpo::policy_from_json(jsonl::read_file(prev.string()));
        const bool covers = std::all_of(vocab.tokens.begin(), vocab.tokens.end(),
                                        [&](const std::string& tok) {
                                          return std::find(previous.vocab.begin(),
                                                           previous.vocab.end(),
                                                           tok) != previous.vocab.end();
                                        });
        if (covers) {
          initial = std::move(previous);
          loaded = true;
        } else {
          logx::warn("previous toy policy does not cover the new corpus, starting fresh");
        }
      }
    }
    if (!loaded) {
      initial = dpo::make_uniform_policy(vocab.tokens, 1, "M" + std::to_string(t));
    }

    dpo::TrainingHyperparams hp = cfg.hp;
    hp.seed = rng::derive_seed(cfg.seed, t, "toy-train");
    auto result = dpo::train_toy(initial, batch, hp);
    append_log(cfg, "iter " + std::to_string(t) + ": toy training finished, final total " +
                        std::to_string(result.curve.back().total));
    jsonl::write_file(paths.policy.string(), dpo::policy_to_json(result.policy) + "\n");
    dpo::write_training_curve_csv(result.curve, paths.curve.string());
    record_digest(state, t, paths.policy);
    record_digest(state, t, paths.curve);
    ensure_model_tag(state, cfg, static_cast<std::size_t>(t) + 1,
                     "M" + std::to_string(t + 1) + ":toy-dpo");
  }

  state.iterations[t].status = Status::trained;
  persist(cfg, state);
  return state;
}

IterationState stage_evaluate(const PipelineConfig& cfg, IterationState state, int t) {
  const auto paths = iter_paths(cfg, t);
  if (state.status_of(t) < Status::trained) {
    throw Error("evaluate: iteration " + std::to_string(t) + " is not trained/exported yet");
  }
  if (state.status_of(t) != Status::trained) return state;

  const auto dataset = jsonl::read_dataset(paths.pairs.string());

  // deterministic per-language subsample of reward_sample_size pairs
  std::map<LanguageCode, std::vector<std::size_t>> by_lang;
  for (std::size_t i = 0; i < dataset.pairs.size(); ++i) {
    by_lang[dataset.pairs[i].prompt_lang].push_back(i);
  }
  std::vector<pairs::PreferencePair> sample;
  for (const auto& [lang, indices] : by_lang) {
    const auto picked =
        sample_indices(indices.size(), static_cast<std::size_t>(cfg.reward_sample_size),
                       rng::derive_seed(cfg.seed, t, "sample-" + lang));
    for (const auto i : picked) sample.push_back(dataset.pairs[indices[i]]);
  }

  append_log(cfg, "iter " + std::to_string(t) + ": judging " + std::to_string(sample.size()) +
                      " sampled pairs");
  client::ChatClient judge_client(cfg.judge);
  eval::JudgeFn judge = [&](const std::string& prompt) { return judge_client.chat("", prompt); };

  std::vector<eval::JudgeVerdict> verdicts;
  const auto report =
      eval::reward_accuracy(sample, judge, cfg.judge.max_retries, t, &verdicts);
  const auto wins = eval::win_rate(verdicts);

  // off-target rate of the model's own generations, per language
  const auto native = jsonl::read_records(paths.native.string());
  std::map<LanguageCode, std::vector<std::pair<std::string, LanguageCode>>> gen_by_lang;
  for (const auto& r : native) {
    if (r.ok()) gen_by_lang[r.lang].emplace_back(r.text, r.lang);
  }
  std::map<LanguageCode, double> off_target;
  for (const auto& [lang, records] : gen_by_lang) {
    off_target[lang] = langid::off_target_rate(langid::Detector::builtin(), records);
  }

  std::ostringstream verdict_lines;
  for (const auto& v : verdicts) verdict_lines << eval::verdict_to_json_line(v) << '\n';
  jsonl::write_file(paths.verdicts.string(), verdict_lines.str());

  const json metrics = metrics_to_json(report, wins, off_target, t);
  jsonl::write_file(paths.metrics.string(), metrics.dump(2) + "\n");

  state.iterations[t].status = Status::evaluated;
  state.iterations[t].metrics_json = metrics.dump();
  record_digest(state, t, paths.verdicts);
  record_digest(state, t, paths.metrics);
  persist(cfg, state);
  return state;
}

IterationState run_iteration(const PipelineConfig& cfg, IterationState state, int t) {
  cfg.validate();
  if (t < 0 || t >= cfg.iterations) {
    throw Error("iteration " + std::to_string(t) + " outside configured range");
  }
  if (state.status_of(t) == Status::evaluated) return state;  // idempotent rerun

  WorkdirLock lock(cfg.workdir);
  state = stage_generate(cfg, std::move(state), t);
  state = stage_translate(cfg, std::move(state), t);
  state = stage_build_pairs(cfg, std::move(state), t);
  state = stage_train_or_export(cfg, std::move(state), t);
  state = stage_evaluate(cfg, std::move(state), t);
  return state;
}

namespace {

std::vector<LanguageCode> report_languages(const IterationState& state,
                                           const PipelineConfig& cfg) {
  std::vector<LanguageCode> langs{cfg.langs.dominant};
  langs.insert(langs.end(), cfg.langs.non_dominant.begin(), cfg.langs.non_dominant.end());
  // any extra languages present in metrics (e.g. unseen evaluation) go last
  std::vector<LanguageCode> extra;
  for (const auto& [t, rec] : state.iterations) {
    if (rec.metrics_json.empty()) continue;
    const json m = json::parse(rec.metrics_json);
    for (const auto& [lang, v] : m.at("reward_accuracy").items()) {
      if (std::find(langs.begin(), langs.end(), lang) == langs.end() &&
          std::find(extra.begin(), extra.end(), lang) == extra.end()) {
        extra.push_back(lang);
      }
    }
  }
  std::sort(extra.begin(), extra.end());
  langs.insert(langs.end(), extra.begin(), extra.end());
  return langs;
}

std::string fmt3(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3) << v;
  return out.str();
}

}  // namespace

std::string report_text(const IterationState& state, const PipelineConfig& cfg) {
  std::vector<int> evaluated;
  for (const auto& [t, rec] : state.iterations) {
    if (rec.status == Status::evaluated && !rec.metrics_json.empty()) evaluated.push_back(t);
  }
  if (evaluated.empty()) throw Error("nothing evaluated");

  const auto langs = report_languages(state, cfg);
  std::ostringstream out;
  const int w = 12;

  std::map<int, json> metrics;
  for (int t : evaluated) metrics[t] = json::parse(state.iterations.at(t).metrics_json);

  for (int t : evaluated) {
    const json& m = metrics.at(t);
    out << "iteration " << t;
    if (static_cast<std::size_t>(t) < state.model_tags.size()) {
      out << "  (" << state.model_tags[t];
      if (static_cast<std::size_t>(t) + 1 < state.model_tags.size()) {
        out << " -> " << state.model_tags[t + 1];
      }
      out << ")";
    }
    out << "\n";

    out << std::left << std::setw(24) << "  metric";
    for (const auto& lang : langs) out << std::setw(w) << lang;
    out << "\n";

    auto row = [&](const std::string& name, const std::function<std::string(const std::string&)>& cell) {
      out << std::left << std::setw(24) << ("  " + name);
      for (const auto& lang : langs) out << std::setw(w) << cell(lang);
      out << "\n";
    };

    const json& acc = m.at("reward_accuracy");
    row("reward_accuracy", [&](const std::string& lang) {
      return acc.contains(lang) ? fmt3(acc.at(lang).at("accuracy").get<double>()) : "-";
    });
    row("classification", [&](const std::string& lang) {
      if (!acc.contains(lang)) return std::string("-");
      return acc.at(lang).at("classification").get<std::string>() == "high_reward"
                 ? std::string("high")
                 : std::string("low");
    });
    const json& off = m.at("off_target");
    row("off_target", [&](const std::string& lang) {
      return off.contains(lang) ? fmt3(off.at(lang).get<double>()) : "-";
    });

    if (metrics.contains(t - 1)) {
      const json& prev = metrics.at(t - 1).at("reward_accuracy");
      row("delta_reward_acc", [&](const std::string& lang) {
        if (!acc.contains(lang) || !prev.contains(lang)) return std::string("-");
        const double d =
            acc.at(lang).at("accuracy").get<double>() - prev.at(lang).at("accuracy").get<double>();
        return (d >= 0 ? "+" : "") + fmt3(d);
      });
    }

    const json& wr = m.at("win_rate");
    out << "  win/loss/tie = " << fmt3(wr.at("win").get<double>()) << "/"
        << fmt3(wr.at("loss").get<double>()) << "/" << fmt3(wr.at("tie").get<double>())
        << "   delta(W-L) = " << fmt3(wr.at("delta").get<double>()) << "\n\n";
  }
  return out.str();
}

std::string report_json(const IterationState& state, const PipelineConfig& cfg) {
  std::vector<int> evaluated;
  for (const auto& [t, rec] : state.iterations) {
    if (rec.status == Status::evaluated && !rec.metrics_json.empty()) evaluated.push_back(t);
  }
  if (evaluated.empty()) throw Error("nothing evaluated");

  json out;
  out["languages"] = report_languages(state, cfg);
  out["model_tags"] = state.model_tags;
  json iters = json::array();
  for (int t : evaluated) iters.push_back(json::parse(state.iterations.at(t).metrics_json));
  out["iterations"] = std::move(iters);
  return out.dump(2) + "\n";
}

namespace {

struct CliContext {
  std::string config_path;
  std::string workdir_override;
  std::optional<std::uint64_t> seed_override;
  int iteration = 0;

  PipelineConfig load() const {
    if (config_path.empty()) throw UsageError("--config is required for this subcommand");
    PipelineConfig cfg = PipelineConfig::load(config_path);
    if (!workdir_override.empty()) cfg.workdir = workdir_override;
    if (seed_override) cfg.seed = *seed_override;
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* cmd, CliContext& ctx, bool with_iteration = true) {
  cmd->add_option("--config", ctx.config_path, "pipeline config file");
  cmd->add_option("--workdir", ctx.workdir_override, "override the configured workdir");
  cmd->add_option("--seed", ctx.seed_override, "override the configured seed");
  if (with_iteration) cmd->add_option("--iteration", ctx.iteration, "iteration index t");
}

IterationState load_state(const PipelineConfig& cfg) {
  return IterationState::load(state_path(cfg).string());
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"multilingual self-rewarding preference pipeline"};
  app.require_subcommand(1);

  CliContext ctx;
  std::string text_arg, input_path, output_path, pairs_path;

  auto* c_generate = app.add_subcommand("generate", "generate native responses for iteration t");
  add_common(c_generate, ctx);
  auto* c_translate = app.add_subcommand("translate", "self-translate generated responses");
  add_common(c_translate, ctx);
  auto* c_pairs = app.add_subcommand("build-pairs", "build and filter preference pairs");
  add_common(c_pairs, ctx);
  auto* c_train = app.add_subcommand("train-toy", "train the toy policy on the pair dataset");
  add_common(c_train, ctx);
  auto* c_export = app.add_subcommand("export", "export the pair dataset for an external trainer");
  add_common(c_export, ctx);
  auto* c_judge = app.add_subcommand("judge", "head-to-head judge a JSONL of response pairs");
  add_common(c_judge, ctx, false);
  c_judge->add_option("--input", input_path, "JSONL with instruction, r1, r2, lang")->required();
  c_judge->add_option("--output", output_path, "verdict JSONL output path");
  auto* c_reward = app.add_subcommand("reward-accuracy", "judge sampled pairs and report accuracy");
  add_common(c_reward, ctx);
  c_reward->add_option("--pairs", pairs_path, "explicit pairs JSONL (instead of the iteration dir)");
  c_reward->add_option("--output", output_path, "write the report as JSON");
  auto* c_detect = app.add_subcommand("detect-lang", "identify the language of a text");
  add_common(c_detect, ctx, false);
  c_detect->add_option("--text", text_arg, "text to classify");
  c_detect->add_option("--input", input_path, "JSONL with text and expected_lang");
  auto* c_reason = app.add_subcommand("score-reasoning", "score numeric answers in responses");
  add_common(c_reason, ctx, false);
  c_reason->add_option("--input", input_path, "JSONL with response, gold, lang")->required();
  auto* c_run = app.add_subcommand("run-iteration", "run one full pipeline iteration");
  add_common(c_run, ctx);
  auto* c_report = app.add_subcommand("report", "print per-iteration metric tables");
  add_common(c_report, ctx, false);

  std::vector<char*> argv;
  std::vector<std::string> owned = args;
  std::string prog = "mpref";
  argv.push_back(prog.data());
  for (auto& a : owned) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (c_generate->parsed()) {
      auto cfg = ctx.load();
      WorkdirLock lock(cfg.workdir);
      stage_generate(cfg, load_state(cfg), ctx.iteration);
      std::cout << "generated responses for iteration " << ctx.iteration << "\n";
    } else if (c_translate->parsed()) {
      auto cfg = ctx.load();
      WorkdirLock lock(cfg.workdir);
      stage_translate(cfg, load_state(cfg), ctx.iteration);
      std::cout << "translated responses for iteration " << ctx.iteration << "\n";
    } else if (c_pairs->parsed()) {
      auto cfg = ctx.load();
      WorkdirLock lock(cfg.workdir);
      stage_build_pairs(cfg, load_state(cfg), ctx.iteration);
      const auto dataset = jsonl::read_dataset(iter_paths(cfg, ctx.iteration).pairs.string());
      const auto drops = jsonl::read_drop_report(iter_paths(cfg, ctx.iteration).drops.string());
      std::size_t dropped = 0;
      for (const auto& [reason, count] : drops) dropped += count;
      std::cout << "pairs: " << dataset.pairs.size() << " (dropped " << dropped << ")\n";
    } else if (c_train->parsed() || c_export->parsed()) {
      auto cfg = ctx.load();
      cfg.mode = c_train->parsed() ? Mode::toy : Mode::export_data;
      WorkdirLock lock(cfg.workdir);
      stage_train_or_export(cfg, load_state(cfg), ctx.iteration);
      std::cout << (c_train->parsed() ? "trained toy policy" : "exported training file")
                << " for iteration " << ctx.iteration << "\n";
    } else if (c_judge->parsed()) {
      auto cfg = ctx.load();
      client::ChatClient judge_client(cfg.judge);
      eval::JudgeFn judge = [&](const std::string& p) { return judge_client.chat("", p); };
      std::ifstream in(input_path);
      if (!in) throw Error("cannot open " + input_path);
      std::vector<eval::JudgeVerdict> verdicts;
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        verdicts.push_back(eval::judge_head_to_head(
            j.at("instruction").get<std::string>(), j.at("r1").get<std::string>(),
            j.at("r2").get<std::string>(), j.value("lang", "en"), judge,
            cfg.judge.max_retries, j.value("id", "")));
      }
      if (verdicts.empty()) throw Error("no judgeable lines in " + input_path);
      std::ostringstream lines;
      for (const auto& v : verdicts) lines << eval::verdict_to_json_line(v) << '\n';
      if (!output_path.empty()) jsonl::write_file(output_path, lines.str());
      else std::cout << lines.str();
      const auto wr = eval::win_rate(verdicts);
      std::cout << "win/loss/tie = " << fmt3(wr.win) << "/" << fmt3(wr.loss) << "/"
                << fmt3(wr.tie) << "  delta(W-L) = " << fmt3(wr.delta) << "\n";
    } else if (c_reward->parsed()) {
      auto cfg = ctx.load();
      std::vector<pairs::PreferencePair> all;
      if (!pairs_path.empty()) {
        all = jsonl::read_pairs_file(pairs_path);
      } else {
        all = jsonl::read_pairs_file(iter_paths(cfg, ctx.iteration).pairs.string());
      }
      if (all.empty()) throw Error("no pairs to judge");
      client::ChatClient judge_client(cfg.judge);
      eval::JudgeFn judge = [&](const std::string& p) { return judge_client.chat("", p); };
      const auto report = eval::reward_accuracy(all, judge, cfg.judge.max_retries, ctx.iteration);
      json report_doc;
      report_doc["iteration"] = ctx.iteration;
      for (const auto& [lang, acc] : report.per_language) {
        std::cout << lang << "  accuracy=" << fmt3(acc.accuracy) << "  n=" << acc.sample_count
                  << "  " << (acc.high_reward ? "high_reward" : "low_reward") << "\n";
        report_doc["per_language"][lang] = {
            {"accuracy", acc.accuracy},
            {"n", acc.sample_count},
            {"errors", acc.error_count},
            {"classification", acc.high_reward ? "high_reward" : "low_reward"}};
      }
      if (!output_path.empty()) jsonl::write_file(output_path, report_doc.dump(2) + "\n");
    } else if (c_detect->parsed()) {
      const auto& detector = langid::Detector::builtin();
      if (!text_arg.empty()) {
        const auto d = detector.detect(text_arg);
        if (d) std::cout << d->lang << "\t" << fmt3(d->confidence) << "\n";
        else std::cout << "undetermined\n";
      } else if (!input_path.empty()) {
        std::ifstream in(input_path);
        if (!in) throw Error("cannot open " + input_path);
        std::vector<std::pair<std::string, LanguageCode>> records;
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          const json j = json::parse(line);
          records.emplace_back(j.at("text").get<std::string>(),
                               j.at("expected_lang").get<std::string>());
        }
        std::cout << "off_target_rate = " << fmt3(langid::off_target_rate(detector, records))
                  << "\n";
      } else {
        throw UsageError("detect-lang needs --text or --input");
      }
    } else if (c_reason->parsed()) {
      std::ifstream in(input_path);
      if (!in) throw Error("cannot open " + input_path);
      std::size_t n = 0, correct = 0, off = 0;
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        const auto score = eval::score_reasoning(
            j.at("response").get<std::string>(), j.at("gold").get<std::string>(),
            j.value("lang", "en"), langid::Detector::builtin());
        ++n;
        if (score.correct) ++correct;
        if (score.off_target) ++off;
      }
      if (n == 0) throw Error("no cases in " + input_path);
      std::cout << "accuracy = " << fmt3(static_cast<double>(correct) / n)
                << "  off_target_rate = " << fmt3(static_cast<double>(off) / n) << "\n";
    } else if (c_run->parsed()) {
      auto cfg = ctx.load();
      run_iteration(cfg, load_state(cfg), ctx.iteration);
      std::cout << "iteration " << ctx.iteration << " complete\n";
    } else if (c_report->parsed()) {
      auto cfg = ctx.load();
      const auto state = load_state(cfg);
      const std::string text = report_text(state, cfg);
      jsonl::write_file((fs::path(cfg.workdir) / "report.txt").string(), text);
      jsonl::write_file((fs::path(cfg.workdir) / "report.json").string(),
                        report_json(state, cfg));
      std::cout << text;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace mpref::pipeline
