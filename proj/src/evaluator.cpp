#include "mpref/evaluator.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include <json.hpp>

#include "mpref/client.hpp"
#include "mpref/log.hpp"
#include "mpref/templates.hpp"

namespace mpref::eval {

using nlohmann::json;

namespace {

int sign(int a, int b) { return a == b ? 0 : (a > b ? 1 : -1); }

// score inside <scoreN>...</scoreN>, -1 when missing or out of range
int parse_marked_score(const std::string& reply, int slot) {
  const std::string open = "<score" + std::to_string(slot) + ">";
  const std::string close = "</score" + std::to_string(slot) + ">";
  const auto body = client::extract_marked(reply, open, close);
  if (!body) return -1;
  std::string digits;
  for (char c : *body) {
    if (std::isdigit(static_cast<unsigned char>(c))) {
      digits.push_back(c);
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      return -1;
    }
  }
  if (digits.empty() || digits.size() > 2) return -1;
  const int value = std::atoi(digits.c_str());
  return value >= 0 && value <= 10 ? value : -1;
}

std::optional<std::array<int, 2>> parse_score_pair(const std::string& reply) {
  const int s1 = parse_marked_score(reply, 1);
  const int s2 = parse_marked_score(reply, 2);
  if (s1 < 0 || s2 < 0) return std::nullopt;
  return std::array<int, 2>{s1, s2};
}

// One judged order with a parse-retry budget; the raw reply of the last
// attempt is kept either way. Transport failures burn an attempt like a
// parse failure does.
std::optional<std::array<int, 2>> judge_one_order(const std::string& prompt,
                                                  const JudgeFn& judge, int max_retries,
                                                  std::string& raw_out) {
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    try {
      raw_out = judge(prompt);
    } catch (const Error& e) {
      raw_out = std::string("<judge call failed: ") + e.what() + ">";
      continue;
    }
    const auto scores = parse_score_pair(raw_out);
    if (scores) return scores;
  }
  return std::nullopt;
}

}  // namespace

const char* to_string(Winner w) {
  switch (w) {
    case Winner::first: return "first";
    case Winner::second: return "second";
    case Winner::tie: return "tie";
  }
  return "tie";
}

Winner winner_from_string(const std::string& s) {
  if (s == "first") return Winner::first;
  if (s == "second") return Winner::second;
  if (s == "tie") return Winner::tie;
  throw Error("unknown winner: " + s);
}

Winner resolve_winner(const std::array<int, 2>& order1_scores,
                      const std::array<int, 2>& order2_scores) {
  // r1 sits in slot 1 of order 1 and slot 2 of order 2
  const int o1 = sign(order1_scores[0], order1_scores[1]);
  const int o2 = sign(order2_scores[1], order2_scores[0]);
  const int wins = (o1 > 0) + (o2 > 0);
  const int losses = (o1 < 0) + (o2 < 0);
  if (wins == 2 || (wins == 1 && losses == 0)) return Winner::first;
  if (losses == 2 || (losses == 1 && wins == 0)) return Winner::second;
  return Winner::tie;
}

JudgeVerdict judge_head_to_head(const std::string& instruction, const std::string& r1,
                                const std::string& r2, const LanguageCode& lang,
                                const JudgeFn& judge, int max_retries,
                                const std::string& pair_id) {
  if (r1.empty() || r2.empty()) throw Error("judge_head_to_head: empty response");

  JudgeVerdict v;
  v.pair_id = pair_id;
  const std::string name = language_name(lang);

  const auto order1 = judge_one_order(tmpl::build_head_to_head_prompt(name, instruction, r1, r2),
                                      judge, max_retries, v.raw_replies[0]);
  const auto order2 = judge_one_order(tmpl::build_head_to_head_prompt(name, instruction, r2, r1),
                                      judge, max_retries, v.raw_replies[1]);
  if (!order1 || !order2) {
    v.error = true;
    v.error_reason = "unparseable_scores";
    return v;
  }
  v.order1_scores = *order1;
  v.order2_scores = *order2;
  v.winner = resolve_winner(v.order1_scores, v.order2_scores);
  return v;
}

int parse_score_line(const std::string& reply, std::string* explanation) {
  std::istringstream in(reply);
  std::string line;
  int score = -1;
  while (std::getline(in, line)) {
    if (line.starts_with("Explanation:") && explanation) {
      std::string text = line.substr(std::string("Explanation:").size());
      const auto start = text.find_first_not_of(' ');
      *explanation = start == std::string::npos ? "" : text.substr(start);
    }
    if (line.starts_with("Score:")) {
      std::string tail = line.substr(std::string("Score:").size());
      std::string digits;
      for (char c : tail) {
        if (std::isdigit(static_cast<unsigned char>(c))) digits.push_back(c);
        else if (!std::isspace(static_cast<unsigned char>(c))) { digits.clear(); break; }
      }
      if (!digits.empty() && digits.size() <= 2) {
        const int value = std::atoi(digits.c_str());
        score = value >= 0 && value <= 10 ? value : -1;
      } else {
        score = -1;
      }
    }
  }
  return score;
}

AbsoluteScore absolute_score(const std::string& instruction, const std::string& answer,
                             const LanguageCode& lang, const JudgeFn& judge, int max_retries,
                             const std::string& prompt_id) {
  if (answer.empty()) throw Error("absolute_score: empty answer");

  AbsoluteScore out;
  out.prompt_id = prompt_id;
  out.lang = lang;
  const std::string prompt = tmpl::build_score_prompt(language_name(lang), instruction, answer);
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    std::string reply;
    try {
      reply = judge(prompt);
    } catch (const Error&) {
      continue;
    }
    const int score = parse_score_line(reply, &out.explanation);
    // the template demands both lines; a score without an explanation is a
    // malformed reply
    if (score >= 0 && !out.explanation.empty()) {
      out.score = score;
      return out;
    }
  }
  out.error = true;
  out.error_reason = "unparseable_score";
  return out;
}

RewardAccuracyReport reward_accuracy(std::span<const pairs::PreferencePair> sample,
                                     const JudgeFn& judge, int max_retries, int iteration,
                                     std::vector<JudgeVerdict>* verdicts_out) {
  if (sample.empty()) throw Error("reward_accuracy: empty sample");

  struct Tally {
    double score = 0.0;
    std::size_t judged = 0;
    std::size_t errors = 0;
  };
  std::map<LanguageCode, Tally> tallies;

  for (const auto& pair : sample) {
    JudgeVerdict v = judge_head_to_head(pair.prompt_text, pair.chosen_text, pair.rejected_text,
                                        pair.prompt_lang, judge, max_retries, pair.pair_id);
    auto& tally = tallies[pair.prompt_lang];
    if (v.error) {
      ++tally.errors;
    } else {
      ++tally.judged;
      if (v.winner == Winner::first) tally.score += 1.0;
      else if (v.winner == Winner::tie) tally.score += 0.5;
    }
    if (verdicts_out) verdicts_out->push_back(std::move(v));
  }

  RewardAccuracyReport report;
  report.iteration = iteration;
  for (const auto& [lang, tally] : tallies) {
    if (tally.judged == 0) {
      logx::warn("reward_accuracy: every verdict for " + lang + " errored; language omitted");
      continue;
    }
    LanguageAccuracy acc;
    acc.accuracy = tally.score / static_cast<double>(tally.judged);
    acc.sample_count = tally.judged;
    acc.error_count = tally.errors;
    acc.high_reward = acc.accuracy > kHighRewardThreshold;
    report.per_language[lang] = acc;
  }
  return report;
}

WinRate win_rate(std::span<const JudgeVerdict> verdicts) {
  if (verdicts.empty()) throw Error("win_rate: empty verdict list");
  std::size_t wins = 0, losses = 0, ties = 0;
  for (const auto& v : verdicts) {
    if (v.error) continue;
    if (v.winner == Winner::first) ++wins;
    else if (v.winner == Winner::second) ++losses;
    else ++ties;
  }
  const std::size_t n = wins + losses + ties;
  if (n == 0) throw Error("win_rate: all verdicts errored");
  WinRate r;
  r.win = static_cast<double>(wins) / static_cast<double>(n);
  r.loss = static_cast<double>(losses) / static_cast<double>(n);
  r.tie = static_cast<double>(ties) / static_cast<double>(n);
  r.delta = r.win - r.loss;
  return r;
}

std::optional<double> extract_last_number(const std::string& text) {
  // last run of digits possibly extended by ',' '.' groups and a sign
  std::optional<std::size_t> begin, end;
  for (std::size_t i = text.size(); i-- > 0;) {
    if (std::isdigit(static_cast<unsigned char>(text[i]))) {
      end = i + 1;
      std::size_t j = i;
      while (j > 0) {
        const char prev = text[j - 1];
        if (std::isdigit(static_cast<unsigned char>(prev))) {
          --j;
        } else if ((prev == ',' || prev == '.') && j >= 2 &&
                   std::isdigit(static_cast<unsigned char>(text[j - 2]))) {
          j -= 2;
        } else {
          break;
        }
      }
      if (j > 0 && (text[j - 1] == '-' || text[j - 1] == '+')) --j;
      begin = j;
      break;
    }
  }
  if (!begin) return std::nullopt;
  std::string token = text.substr(*begin, *end - *begin);

  // Classify ',' and '.': both present -> the later one is the decimal mark;
  // a single separator followed by exactly three digits is a thousands mark
  // ("1.200" and "1,200" both read 1200), otherwise it is a decimal mark.
  const auto last_comma = token.rfind(',');
  const auto last_dot = token.rfind('.');
  char decimal_sep = '\0';
  if (last_comma != std::string::npos && last_dot != std::string::npos) {
    decimal_sep = last_comma > last_dot ? ',' : '.';
  } else if (last_comma != std::string::npos || last_dot != std::string::npos) {
    const char sep = last_comma != std::string::npos ? ',' : '.';
    const auto last = last_comma != std::string::npos ? last_comma : last_dot;
    const std::size_t digits_after = token.size() - last - 1;
    const bool repeated = std::count(token.begin(), token.end(), sep) > 1;
    std::string head = token.substr(0, last);
    if (!head.empty() && (head[0] == '-' || head[0] == '+')) head.erase(0, 1);
    // a thousands group never follows a bare zero, so "0.125" stays decimal
    if (!repeated && (digits_after != 3 || head == "0")) decimal_sep = sep;
  }

  std::string normalized;
  for (char c : token) {
    if (c == ',' || c == '.') {
      if (c == decimal_sep) normalized.push_back('.');
    } else {
      normalized.push_back(c);
    }
  }
  return std::strtod(normalized.c_str(), nullptr);
}

ReasoningScore score_reasoning(const std::string& response_text, const std::string& gold_answer,
                               const LanguageCode& expected_lang,
                               const langid::Detector& detector) {
  char* end = nullptr;
  const double gold = std::strtod(gold_answer.c_str(), &end);
  if (end == gold_answer.c_str()) throw Error("gold answer is not numeric: " + gold_answer);

  ReasoningScore out;
  const auto detection = detector.detect(response_text);
  out.off_target = !detection || detection->lang != expected_lang;

  const auto answer = extract_last_number(response_text);
  if (!answer) {
    out.reason = "no_answer";
    return out;
  }
  const double scale = std::max({1.0, std::fabs(gold), std::fabs(*answer)});
  out.correct = std::fabs(*answer - gold) <= 1e-9 * scale;
  return out;
}

std::string verdict_to_json_line(const JudgeVerdict& v) {
  json j;
  j["pair_id"] = v.pair_id;
  j["order1_scores"] = v.order1_scores;
  j["order2_scores"] = v.order2_scores;
  j["winner"] = to_string(v.winner);
  j["raw_replies"] = v.raw_replies;
  j["error"] = v.error;
  if (v.error) j["error_reason"] = v.error_reason;
  return j.dump();
}

JudgeVerdict verdict_from_json_line(const std::string& line) {
  json j = json::parse(line);
  JudgeVerdict v;
  v.pair_id = j.at("pair_id").get<std::string>();
  v.order1_scores = j.at("order1_scores").get<std::array<int, 2>>();
  v.order2_scores = j.at("order2_scores").get<std::array<int, 2>>();
  v.winner = winner_from_string(j.at("winner").get<std::string>());
  v.raw_replies = j.at("raw_replies").get<std::array<std::string, 2>>();
  v.error = j.value("error", false);
  v.error_reason = j.value("error_reason", "");
  return v;
}

}  // namespace mpref::eval
