#include "mpref/lang_detect.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <sstream>
#include <unordered_map>

#include "mpref/embedded/stopword_profiles.hpp"
#include "mpref/jsonl.hpp"

namespace mpref::langid {

namespace {

// Decodes one UTF-8 code point starting at `i`; advances `i` past it.
// Malformed bytes decode as U+FFFD and advance one byte.
char32_t next_codepoint(std::string_view s, std::size_t& i) {
  const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
  const unsigned char b0 = byte(i);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    ++i;
    return 0xFFFD;
  }
  if (i + len > s.size()) {
    ++i;
    return 0xFFFD;
  }
  for (int k = 1; k < len; ++k) {
    const unsigned char bk = byte(i + k);
    if ((bk & 0xC0) != 0x80) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | (bk & 0x3F);
  }
  i += len;
  return cp;
}

enum class Script { latin, cyrillic, han, kana, thai, bengali, other };

Script script_of(char32_t cp) {
  if ((cp >= 'A' && cp <= 'Z') || (cp >= 'a' && cp <= 'z')) return Script::latin;
  if ((cp >= 0x00C0 && cp <= 0x024F) && cp != 0x00D7 && cp != 0x00F7) return Script::latin;
  if (cp >= 0x0400 && cp <= 0x04FF) return Script::cyrillic;
  if (cp >= 0x3040 && cp <= 0x309F) return Script::kana;  // hiragana
  if ((cp >= 0x30A0 && cp <= 0x30FF) || (cp >= 0x31F0 && cp <= 0x31FF)) return Script::kana;
  if ((cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF) ||
      (cp >= 0xF900 && cp <= 0xFAFF)) {
    return Script::han;
  }
  if (cp >= 0x0E00 && cp <= 0x0E7F) return Script::thai;
  if (cp >= 0x0980 && cp <= 0x09FF) return Script::bengali;
  return Script::other;
}

struct ScriptCounts {
  std::size_t latin = 0;
  std::size_t cyrillic = 0;
  std::size_t han = 0;
  std::size_t kana = 0;
  std::size_t thai = 0;
  std::size_t bengali = 0;

  std::size_t non_latin() const { return cyrillic + han + kana + thai + bengali; }
};

ScriptCounts count_scripts(std::string_view text) {
  ScriptCounts c;
  std::size_t i = 0;
  while (i < text.size()) {
    switch (script_of(next_codepoint(text, i))) {
      case Script::latin: ++c.latin; break;
      case Script::cyrillic: ++c.cyrillic; break;
      case Script::han: ++c.han; break;
      case Script::kana: ++c.kana; break;
      case Script::thai: ++c.thai; break;
      case Script::bengali: ++c.bengali; break;
      case Script::other: break;
    }
  }
  return c;
}

// Lowercased word tokens; multi-byte sequences stay intact so accented
// stopwords match as written in the profile.
std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isalpha(uc) || uc >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

}  // namespace

const Detector& Detector::builtin() {
  static const Detector instance = Detector::from_profile_text(embedded::stopword_profiles);
  return instance;
}

Detector Detector::from_profile_text(std::string_view text) {
  Detector d;
  std::map<LanguageCode, DetectorProfile> by_lang;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string lang, token, weight_str;
    if (!std::getline(fields, lang, '\t') || !std::getline(fields, token, '\t') ||
        !std::getline(fields, weight_str)) {
      throw Error("stopword profile line " + std::to_string(lineno) + " is not lang\\ttoken\\tweight");
    }
    by_lang[lang].lang = lang;
    by_lang[lang].stopwords.emplace_back(token, std::stod(weight_str));
  }
  if (by_lang.empty()) throw Error("stopword profile text defines no languages");
  for (auto& [lang, profile] : by_lang) d.profiles_.push_back(std::move(profile));
  return d;
}

Detector Detector::from_profile_file(const std::string& path) {
  return from_profile_text(jsonl::read_file(path));
}

std::optional<Detection> Detector::detect(std::string_view text) const {
  const ScriptCounts scripts = count_scripts(text);

  // Stage 1: unique-script shortcut, decided by majority script mass. Kana
  // wins over Han because Japanese text mixes both while Chinese has no kana.
  if (scripts.non_latin() > scripts.latin) {
    const std::size_t jazh = scripts.han + scripts.kana;
    const std::size_t best =
        std::max({jazh, scripts.cyrillic, scripts.thai, scripts.bengali});
    if (best == jazh && jazh > 0) {
      return Detection{scripts.kana > 0 ? "ja" : "zh", 1.0};
    }
    if (best == scripts.cyrillic) return Detection{"ru", 1.0};
    if (best == scripts.thai) return Detection{"th", 1.0};
    return Detection{"bn", 1.0};
  }

  // Stage 2: stopword-profile scoring over Latin-script candidates.
  const auto tokens = word_tokens(text);
  if (tokens.empty()) return std::nullopt;

  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& t : tokens) ++counts[t];

  double total = 0.0;
  double best_score = 0.0;
  const DetectorProfile* best = nullptr;
  for (const auto& profile : profiles_) {
    double score = 0.0;
    for (const auto& [token, weight] : profile.stopwords) {
      auto it = counts.find(token);
      if (it != counts.end()) score += weight * static_cast<double>(it->second);
    }
    total += score;
    if (score > best_score) {
      best_score = score;
      best = &profile;
    }
  }
  if (!best || total <= 0.0) return std::nullopt;
  const double confidence = best_score / total;
  if (confidence < confidence_floor_) return std::nullopt;
  return Detection{best->lang, confidence};
}

double off_target_rate(const Detector& detector,
                       std::span<const std::pair<std::string, LanguageCode>> records) {
  if (records.empty()) throw Error("off_target_rate: empty input");
  std::size_t off = 0;
  for (const auto& [text, expected] : records) {
    const auto detection = detector.detect(text);
    if (!detection || detection->lang != expected) ++off;
  }
  return static_cast<double>(off) / static_cast<double>(records.size());
}

}  // namespace mpref::langid
