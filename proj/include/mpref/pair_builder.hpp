#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mpref/types.hpp"

namespace mpref::langid {
class Detector;
}

namespace mpref::pairs {

struct LanguageConfig {
  LanguageCode dominant;
  std::vector<LanguageCode> non_dominant;
  std::vector<LanguageCode> unseen;  // evaluation only

  void validate() const;
};

enum class Origin { native, translated };
enum class PairType { dominant, non_dominant };

const char* to_string(Origin origin);
const char* to_string(PairType type);
Origin origin_from_string(const std::string& s);
PairType pair_type_from_string(const std::string& s);

struct PreferencePair {
  std::string pair_id;
  int iteration = 0;
  std::string prompt_id;
  LanguageCode prompt_lang;
  std::string prompt_text;
  std::string chosen_text;
  std::string rejected_text;
  Origin chosen_origin = Origin::native;
  Origin rejected_origin = Origin::translated;
  LanguageCode source_lang;  // the non-dominant language involved
  PairType pair_type = PairType::dominant;

  void validate(const LanguageConfig& langs) const;
};

/// Keyed "pair_type:lang", e.g. "dominant:en", "non_dominant:es".
using PairCounts = std::map<std::string, std::size_t>;

struct PairDataset {
  std::vector<PreferencePair> pairs;
  int iteration = 0;
  std::uint64_t seed = 0;
  PairCounts counts;
};

/// reason -> number of pairs dropped for it
using DropReport = std::map<std::string, std::size_t>;

struct BuildResult {
  PairDataset dataset;
  DropReport drops;
};

/// Per-prompt uniform draw of the non-dominant language whose response gets
/// translated into the dominant one. Deterministic under a fixed seed.
std::map<std::string, LanguageCode> select_translation_sources(
    std::span<const std::string> prompt_ids, std::span<const LanguageCode> non_dominant,
    std::uint64_t seed);

/// Assembles one dominant pair per prompt (native dominant chosen, selected
/// nl->dl translation rejected) and one non-dominant pair per configured
/// language (dl->nl translation chosen, native nl rejected). Pairs touching
/// error records, missing records, or equal texts are dropped with a reason.
/// Duplicate records for the same key are an error.
BuildResult build_pairs(std::span<const MultilingualPrompt> prompts,
                        std::span<const ResponseRecord> native,
                        std::span<const ResponseRecord> translations,
                        const LanguageConfig& langs, std::uint64_t seed, int iteration = 0);

struct FilterPolicy {
  bool check_chosen_language = true;
  bool drop_undetermined = false;  // undetermined chosen text survives by default
};

struct FilterResult {
  PairDataset dataset;
  DropReport drops;
};

/// Language-consistency gate on the chosen side only; rejected-side off-target
/// text stays (it is legitimately worse).
FilterResult filter_pairs(const PairDataset& dataset, const FilterPolicy& policy,
                          const langid::Detector& detector);

}  // namespace mpref::pairs
