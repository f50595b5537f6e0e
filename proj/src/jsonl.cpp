#include "mpref/jsonl.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mpref::jsonl {

using nlohmann::json;

namespace {

json parse_line(const std::string& line, const char* what) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(std::string("malformed ") + what + " line: " + line.substr(0, 120));
  }
  return j;
}

template <typename T, typename FromLine>
std::vector<T> read_lines(const std::string& path, FromLine from_line) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::vector<T> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(from_line(line));
  }
  return out;
}

}  // namespace

std::string prompt_to_line(const MultilingualPrompt& p) {
  json j;
  j["prompt_id"] = p.prompt_id;
  j["lang"] = p.lang;
  j["text"] = p.text;
  return j.dump();
}

MultilingualPrompt prompt_from_line(const std::string& line) {
  json j = parse_line(line, "prompt");
  MultilingualPrompt p;
  p.prompt_id = j.at("prompt_id").get<std::string>();
  p.lang = j.at("lang").get<std::string>();
  p.text = j.at("text").get<std::string>();
  return p;
}

std::string record_to_line(const ResponseRecord& r) {
  json j;
  j["prompt_id"] = r.prompt_id;
  j["lang"] = r.lang;
  j["text"] = r.text;
  j["kind"] = to_string(r.kind);
  j["source_lang"] = r.source_lang ? json(*r.source_lang) : json(nullptr);
  j["model_id"] = r.model_id;
  j["finish_reason"] = to_string(r.finish_reason);
  return j.dump();
}

ResponseRecord record_from_line(const std::string& line) {
  json j = parse_line(line, "response record");
  ResponseRecord r;
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.lang = j.at("lang").get<std::string>();
  r.text = j.at("text").get<std::string>();
  r.kind = response_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("source_lang") && !j.at("source_lang").is_null()) {
    r.source_lang = j.at("source_lang").get<std::string>();
  }
  r.model_id = j.value("model_id", "");
  r.finish_reason = finish_reason_from_string(j.at("finish_reason").get<std::string>());
  if (r.kind == ResponseKind::translation && (!r.source_lang || *r.source_lang == r.lang)) {
    throw Error("translation record for " + r.prompt_id + " needs a distinct source_lang");
  }
  return r;
}

std::string pair_to_line(const pairs::PreferencePair& p) {
  json j;
  j["pair_id"] = p.pair_id;
  j["iteration"] = p.iteration;
  j["prompt_id"] = p.prompt_id;
  j["prompt_lang"] = p.prompt_lang;
  j["prompt_text"] = p.prompt_text;
  j["chosen_text"] = p.chosen_text;
  j["rejected_text"] = p.rejected_text;
  j["chosen_origin"] = pairs::to_string(p.chosen_origin);
  j["rejected_origin"] = pairs::to_string(p.rejected_origin);
  j["source_lang"] = p.source_lang;
  j["pair_type"] = pairs::to_string(p.pair_type);
  return j.dump();
}

pairs::PreferencePair pair_from_line(const std::string& line) {
  json j = parse_line(line, "preference pair");
  pairs::PreferencePair p;
  p.pair_id = j.at("pair_id").get<std::string>();
  p.iteration = j.at("iteration").get<int>();
  p.prompt_id = j.at("prompt_id").get<std::string>();
  p.prompt_lang = j.at("prompt_lang").get<std::string>();
  p.prompt_text = j.at("prompt_text").get<std::string>();
  p.chosen_text = j.at("chosen_text").get<std::string>();
  p.rejected_text = j.at("rejected_text").get<std::string>();
  p.chosen_origin = pairs::origin_from_string(j.at("chosen_origin").get<std::string>());
  p.rejected_origin = pairs::origin_from_string(j.at("rejected_origin").get<std::string>());
  p.source_lang = j.at("source_lang").get<std::string>();
  p.pair_type = pairs::pair_type_from_string(j.at("pair_type").get<std::string>());
  return p;
}

std::vector<MultilingualPrompt> read_prompts(const std::string& path) {
  return read_lines<MultilingualPrompt>(path, prompt_from_line);
}

std::vector<ResponseRecord> read_records(const std::string& path) {
  return read_lines<ResponseRecord>(path, record_from_line);
}

std::vector<pairs::PreferencePair> read_pairs_file(const std::string& path) {
  return read_lines<pairs::PreferencePair>(path, pair_from_line);
}

void write_prompts(const std::string& path, const std::vector<MultilingualPrompt>& prompts) {
  std::ostringstream out;
  for (const auto& p : prompts) out << prompt_to_line(p) << '\n';
  write_file(path, out.str());
}

void write_records(const std::string& path, const std::vector<ResponseRecord>& records) {
  std::ostringstream out;
  for (const auto& r : records) out << record_to_line(r) << '\n';
  write_file(path, out.str());
}

void write_pairs_file(const std::string& path,
                      const std::vector<pairs::PreferencePair>& pairs) {
  std::ostringstream out;
  for (const auto& p : pairs) out << pair_to_line(p) << '\n';
  write_file(path, out.str());
}

void write_dataset(const std::string& path, const pairs::PairDataset& dataset) {
  write_pairs_file(path, dataset.pairs);
  json meta;
  meta["iteration"] = dataset.iteration;
  meta["seed"] = dataset.seed;
  meta["counts"] = dataset.counts;
  write_file(path + ".meta.json", meta.dump(2) + "\n");
}

pairs::PairDataset read_dataset(const std::string& path) {
  pairs::PairDataset ds;
  ds.pairs = read_pairs_file(path);
  json meta = json::parse(read_file(path + ".meta.json"));
  ds.iteration = meta.at("iteration").get<int>();
  ds.seed = meta.at("seed").get<std::uint64_t>();
  ds.counts = meta.at("counts").get<pairs::PairCounts>();
  return ds;
}

void write_drop_report(const std::string& path, const pairs::DropReport& drops) {
  write_file(path, json(drops).dump(2) + "\n");
}

pairs::DropReport read_drop_report(const std::string& path) {
  return json::parse(read_file(path)).get<pairs::DropReport>();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << content;
  if (!out) throw Error("short write to " + path);
}

}  // namespace mpref::jsonl
