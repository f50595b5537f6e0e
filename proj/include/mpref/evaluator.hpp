#pragma once

#include <array>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mpref/lang_detect.hpp"
#include "mpref/pair_builder.hpp"
#include "mpref/types.hpp"

namespace mpref::eval {

/// Raw judge transport: user prompt in, assistant reply out. Production code
/// adapts ChatClient; tests script it.
using JudgeFn = std::function<std::string(const std::string& user_prompt)>;

enum class Winner { first, second, tie };

const char* to_string(Winner w);
Winner winner_from_string(const std::string& s);

struct JudgeVerdict {
  std::string pair_id;
  std::array<int, 2> order1_scores{-1, -1};  // (answer1 slot, answer2 slot), r1 first
  std::array<int, 2> order2_scores{-1, -1};  // responses swapped, r1 sits in slot 2
  Winner winner = Winner::tie;
  std::array<std::string, 2> raw_replies;
  bool error = false;
  std::string error_reason;
};

/// The two-order win rule: a side wins the head-to-head when it wins both
/// orders, or wins one and draws the other. Everything else is a tie.
Winner resolve_winner(const std::array<int, 2>& order1_scores,
                      const std::array<int, 2>& order2_scores);

/// Scores (r1, r2) and then (r2, r1) through the judge to cancel position
/// bias. Score markers that stay unparseable after max_retries fresh calls
/// yield an error verdict.
JudgeVerdict judge_head_to_head(const std::string& instruction, const std::string& r1,
                                const std::string& r2, const LanguageCode& lang,
                                const JudgeFn& judge, int max_retries = 0,
                                const std::string& pair_id = "");

struct AbsoluteScore {
  std::string prompt_id;
  LanguageCode lang;
  int score = -1;  // 0..10
  std::string explanation;
  bool error = false;
  std::string error_reason;
};

AbsoluteScore absolute_score(const std::string& instruction, const std::string& answer,
                             const LanguageCode& lang, const JudgeFn& judge,
                             int max_retries = 0, const std::string& prompt_id = "");

/// Parses the trailing "Score:" line of a scoring reply; -1 when absent or
/// out of the 0..10 range.
int parse_score_line(const std::string& reply, std::string* explanation = nullptr);

constexpr double kHighRewardThreshold = 0.60;

struct LanguageAccuracy {
  double accuracy = 0.0;
  std::size_t sample_count = 0;
  std::size_t error_count = 0;
  bool high_reward = false;  // accuracy > 0.60
};

struct RewardAccuracyReport {
  std::map<LanguageCode, LanguageAccuracy> per_language;
  int iteration = 0;
};

/// Judges every pair (chosen as r1 vs rejected as r2) and aggregates, per
/// prompt language, the fraction preferring the chosen side; ties count 0.5.
/// Languages whose verdicts all errored are omitted with a warning.
RewardAccuracyReport reward_accuracy(std::span<const pairs::PreferencePair> sample,
                                     const JudgeFn& judge, int max_retries = 0,
                                     int iteration = 0,
                                     std::vector<JudgeVerdict>* verdicts_out = nullptr);

struct WinRate {
  double win = 0.0;
  double loss = 0.0;
  double tie = 0.0;
  double delta = 0.0;  // win - loss
};

/// Fractions from the first side's perspective; error verdicts are excluded
/// from the denominator.
WinRate win_rate(std::span<const JudgeVerdict> verdicts);

struct ReasoningScore {
  bool correct = false;
  bool off_target = false;
  std::string reason;  // "no_answer" when no number was found
};

/// Compares the last number in the response against the gold answer after
/// stripping "," and "." thousands separators; off_target comes from the
/// detector.
ReasoningScore score_reasoning(const std::string& response_text, const std::string& gold_answer,
                               const LanguageCode& expected_lang,
                               const langid::Detector& detector);

/// Last-number extraction used by score_reasoning; nullopt when the text
/// carries no number.
std::optional<double> extract_last_number(const std::string& text);

std::string verdict_to_json_line(const JudgeVerdict& v);
JudgeVerdict verdict_from_json_line(const std::string& line);

}  // namespace mpref::eval
