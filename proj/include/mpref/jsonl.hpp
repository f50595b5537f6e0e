#pragma once

#include <string>
#include <vector>

#include "mpref/pair_builder.hpp"
#include "mpref/types.hpp"

namespace mpref::jsonl {

// JSON Lines readers/writers. Field names match the domain types exactly;
// UTF-8 text passes through unescaped.

std::string prompt_to_line(const MultilingualPrompt& p);
MultilingualPrompt prompt_from_line(const std::string& line);

std::string record_to_line(const ResponseRecord& r);
ResponseRecord record_from_line(const std::string& line);

std::string pair_to_line(const pairs::PreferencePair& p);
pairs::PreferencePair pair_from_line(const std::string& line);

std::vector<MultilingualPrompt> read_prompts(const std::string& path);
std::vector<ResponseRecord> read_records(const std::string& path);
std::vector<pairs::PreferencePair> read_pairs_file(const std::string& path);

void write_prompts(const std::string& path, const std::vector<MultilingualPrompt>& prompts);
void write_records(const std::string& path, const std::vector<ResponseRecord>& records);
void write_pairs_file(const std::string& path, const std::vector<pairs::PreferencePair>& pairs);

/// Read/write a PairDataset: pairs as JSONL plus `<path>.meta.json` holding
/// iteration, seed and counts.
void write_dataset(const std::string& path, const pairs::PairDataset& dataset);
pairs::PairDataset read_dataset(const std::string& path);

void write_drop_report(const std::string& path, const pairs::DropReport& drops);
pairs::DropReport read_drop_report(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace mpref::jsonl
