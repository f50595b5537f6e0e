#include "mpref/pair_builder.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <unordered_map>

#include "mpref/lang_detect.hpp"
#include "mpref/rng.hpp"

namespace mpref::pairs {

namespace {

std::string trimmed(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

struct RecordKey {
  std::string prompt_id;
  LanguageCode lang;
  LanguageCode source;  // empty for generations

  bool operator<(const RecordKey& other) const {
    return std::tie(prompt_id, lang, source) <
           std::tie(other.prompt_id, other.lang, other.source);
  }
};

using RecordIndex = std::map<RecordKey, const ResponseRecord*>;

RecordIndex index_records(std::span<const ResponseRecord> records, bool translations) {
  RecordIndex index;
  for (const auto& r : records) {
    if (translations != (r.kind == ResponseKind::translation)) continue;
    RecordKey key{r.prompt_id, r.lang, r.source_lang.value_or("")};
    auto [it, inserted] = index.emplace(key, &r);
    if (!inserted) {
      throw Error("duplicate record for prompt " + r.prompt_id + " lang " + r.lang +
                  (key.source.empty() ? "" : " source " + key.source));
    }
  }
  return index;
}

const ResponseRecord* find(const RecordIndex& index, const std::string& prompt_id,
                           const LanguageCode& lang, const LanguageCode& source) {
  auto it = index.find({prompt_id, lang, source});
  return it == index.end() ? nullptr : it->second;
}

std::string count_key(PairType type, const LanguageCode& lang) {
  return std::string(to_string(type)) + ":" + lang;
}

}  // namespace

void LanguageConfig::validate() const {
  if (dominant.empty()) throw Error("dominant language must be set");
  if (non_dominant.empty()) throw Error("at least one non-dominant language is required");
  std::set<LanguageCode> seen{dominant};
  for (const auto& l : non_dominant) {
    if (!seen.insert(l).second) {
      throw Error("language " + l + " duplicated or equal to the dominant one");
    }
  }
  for (const auto& l : unseen) {
    if (!seen.insert(l).second) {
      throw Error("unseen language " + l + " overlaps the training languages");
    }
  }
}

const char* to_string(Origin origin) {
  return origin == Origin::native ? "native" : "translated";
}

const char* to_string(PairType type) {
  return type == PairType::dominant ? "dominant" : "non_dominant";
}

Origin origin_from_string(const std::string& s) {
  if (s == "native") return Origin::native;
  if (s == "translated") return Origin::translated;
  throw Error("unknown origin: " + s);
}

PairType pair_type_from_string(const std::string& s) {
  if (s == "dominant") return PairType::dominant;
  if (s == "non_dominant") return PairType::non_dominant;
  throw Error("unknown pair type: " + s);
}

void PreferencePair::validate(const LanguageConfig& langs) const {
  if (chosen_text == rejected_text) throw Error("pair " + pair_id + " is degenerate");
  if (pair_type == PairType::dominant) {
    if (prompt_lang != langs.dominant || chosen_origin != Origin::native ||
        rejected_origin != Origin::translated) {
      throw Error("pair " + pair_id + " violates the dominant ranking");
    }
  } else {
    if (prompt_lang != source_lang || chosen_origin != Origin::translated ||
        rejected_origin != Origin::native) {
      throw Error("pair " + pair_id + " violates the non-dominant ranking");
    }
    if (std::find(langs.non_dominant.begin(), langs.non_dominant.end(), prompt_lang) ==
        langs.non_dominant.end()) {
      throw Error("pair " + pair_id + " prompt language is not configured non-dominant");
    }
  }
}

std::map<std::string, LanguageCode> select_translation_sources(
    std::span<const std::string> prompt_ids, std::span<const LanguageCode> non_dominant,
    std::uint64_t seed) {
  if (non_dominant.empty()) throw Error("select_translation_sources: no non-dominant languages");
  std::map<std::string, LanguageCode> out;
  std::mt19937_64 gen(seed);
  for (const auto& id : prompt_ids) {
    out[id] = non_dominant[rng::uniform_below(gen, non_dominant.size())];
  }
  return out;
}

BuildResult build_pairs(std::span<const MultilingualPrompt> prompts,
                        std::span<const ResponseRecord> native,
                        std::span<const ResponseRecord> translations,
                        const LanguageConfig& langs, std::uint64_t seed, int iteration) {
  langs.validate();

  std::map<std::pair<std::string, LanguageCode>, const MultilingualPrompt*> prompt_index;
  std::vector<std::string> prompt_order;
  for (const auto& p : prompts) {
    if (prompt_index.emplace(std::make_pair(p.prompt_id, p.lang), &p).second == false) {
      throw Error("duplicate prompt " + p.prompt_id + " for language " + p.lang);
    }
    if (std::find(prompt_order.begin(), prompt_order.end(), p.prompt_id) == prompt_order.end()) {
      prompt_order.push_back(p.prompt_id);
    }
  }

  const RecordIndex native_index = index_records(native, /*translations=*/false);
  const RecordIndex translation_index = index_records(translations, /*translations=*/true);
  const auto sources = select_translation_sources(prompt_order, langs.non_dominant, seed);

  BuildResult result;
  result.dataset.iteration = iteration;
  result.dataset.seed = seed;

  auto drop = [&](const std::string& reason) { ++result.drops[reason]; };

  auto emit = [&](PreferencePair&& pair) {
    if (trimmed(pair.chosen_text) == trimmed(pair.rejected_text)) {
      drop("degenerate");
      return;
    }
    pair.validate(langs);
    ++result.dataset.counts[count_key(pair.pair_type, pair.prompt_lang)];
    result.dataset.pairs.push_back(std::move(pair));
  };

  for (const auto& prompt_id : prompt_order) {
    const LanguageCode& dl = langs.dominant;
    const LanguageCode selected_nl = sources.at(prompt_id);

    // dominant pair: native dl response beats the selected nl->dl translation
    {
      const auto* prompt = [&]() -> const MultilingualPrompt* {
        auto it = prompt_index.find({prompt_id, dl});
        return it == prompt_index.end() ? nullptr : it->second;
      }();
      const ResponseRecord* chosen = find(native_index, prompt_id, dl, "");
      const ResponseRecord* rejected = find(translation_index, prompt_id, dl, selected_nl);
      if (!prompt) {
        drop("missing_prompt");
      } else if (!chosen) {
        drop("missing_native_dominant");
      } else if (!rejected) {
        drop("missing_translation_to_dominant");
      } else if (!chosen->ok() || !rejected->ok()) {
        drop("error_record");
      } else {
        PreferencePair pair;
        pair.pair_id = prompt_id + ":" + dl + ":dominant";
        pair.iteration = iteration;
        pair.prompt_id = prompt_id;
        pair.prompt_lang = dl;
        pair.prompt_text = prompt->text;
        pair.chosen_text = chosen->text;
        pair.rejected_text = rejected->text;
        pair.chosen_origin = Origin::native;
        pair.rejected_origin = Origin::translated;
        pair.source_lang = selected_nl;
        pair.pair_type = PairType::dominant;
        emit(std::move(pair));
      }
    }

    // one non-dominant pair per configured language: dl->nl translation
    // beats the native nl response
    for (const auto& nl : langs.non_dominant) {
      const auto* prompt = [&]() -> const MultilingualPrompt* {
        auto it = prompt_index.find({prompt_id, nl});
        return it == prompt_index.end() ? nullptr : it->second;
      }();
      const ResponseRecord* chosen = find(translation_index, prompt_id, nl, dl);
      const ResponseRecord* rejected = find(native_index, prompt_id, nl, "");
      if (!prompt) {
        drop("missing_prompt");
        continue;
      }
      if (!chosen) {
        drop("missing_translation_to_" + nl);
        continue;
      }
      if (!rejected) {
        drop("missing_native_" + nl);
        continue;
      }
      if (!chosen->ok() || !rejected->ok()) {
        drop("error_record");
        continue;
      }
      PreferencePair pair;
      pair.pair_id = prompt_id + ":" + nl + ":non_dominant";
      pair.iteration = iteration;
      pair.prompt_id = prompt_id;
      pair.prompt_lang = nl;
      pair.prompt_text = prompt->text;
      pair.chosen_text = chosen->text;
      pair.rejected_text = rejected->text;
      pair.chosen_origin = Origin::translated;
      pair.rejected_origin = Origin::native;
      pair.source_lang = nl;
      pair.pair_type = PairType::non_dominant;
      emit(std::move(pair));
    }
  }

  return result;
}

FilterResult filter_pairs(const PairDataset& dataset, const FilterPolicy& policy,
                          const langid::Detector& detector) {
  FilterResult result;
  result.dataset.iteration = dataset.iteration;
  result.dataset.seed = dataset.seed;

  for (const auto& pair : dataset.pairs) {
    if (policy.check_chosen_language) {
      const auto detection = detector.detect(pair.chosen_text);
      if (!detection) {
        if (policy.drop_undetermined) {
          ++result.drops["chosen_undetermined"];
          continue;
        }
      } else if (detection->lang != pair.prompt_lang) {
        ++result.drops["chosen_off_target"];
        continue;
      }
    }
    ++result.dataset.counts[count_key(pair.pair_type, pair.prompt_lang)];
    result.dataset.pairs.push_back(pair);
  }
  return result;
}

}  // namespace mpref::pairs
