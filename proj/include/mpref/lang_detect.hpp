#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mpref/types.hpp"

namespace mpref::langid {

struct Detection {
  LanguageCode lang;
  double confidence = 0.0;  // in [0, 1]; script-stage hits are 1.0

  bool is(const LanguageCode& code) const { return lang == code; }
};

struct DetectorProfile {
  LanguageCode lang;
  std::vector<std::pair<std::string, double>> stopwords;  // token -> weight
};

/// Two-stage detector: unique-script shortcut (Cyrillic->ru, Han->zh,
/// Kana->ja, Thai->th, Bengali->bn), then stopword-profile scoring for
/// Latin-script text. Pure and thread-safe once constructed.
class Detector {
 public:
  /// Profiles embedded at build time from data/stopword_profiles.tsv.
  static const Detector& builtin();

  /// Parses `lang<TAB>token<TAB>weight` lines; '#' starts a comment.
  static Detector from_profile_text(std::string_view text);
  static Detector from_profile_file(const std::string& path);

  /// nullopt when no stage reaches the confidence floor.
  std::optional<Detection> detect(std::string_view text) const;

  const std::vector<DetectorProfile>& profiles() const { return profiles_; }

 private:
  std::vector<DetectorProfile> profiles_;
  double confidence_floor_ = 0.35;
};

/// Fraction of records whose detected language differs from the expected one;
/// undetermined counts as off-target. Errors on empty input.
double off_target_rate(const Detector& detector,
                       std::span<const std::pair<std::string, LanguageCode>> records);

}  // namespace mpref::langid
