#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace mpref {

/// BCP-47-style lowercase two-letter tag ("en", "es", ...).
using LanguageCode = std::string;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Authentication failures abort a whole batch instead of degrading to
/// per-record errors.
class AuthError : public Error {
 public:
  using Error::Error;
};

/// Bad invocation (missing config, unknown flag); maps to exit code 1.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct MultilingualPrompt {
  std::string prompt_id;
  LanguageCode lang;
  std::string text;
};

enum class ResponseKind { generation, translation };
enum class FinishReason { stop, length, error };

struct ResponseRecord {
  std::string prompt_id;
  LanguageCode lang;
  std::string text;
  ResponseKind kind = ResponseKind::generation;
  std::optional<LanguageCode> source_lang;  // set iff kind == translation
  std::string model_id;
  FinishReason finish_reason = FinishReason::stop;

  bool ok() const { return finish_reason != FinishReason::error; }
};

struct EndpointConfig {
  std::string base_url;
  std::string api_key_env = "MPREF_API_KEY";
  std::string model_id;
  double temperature = 0.0;  // 0 means greedy decoding
  int max_tokens = 1024;
  int max_in_flight = 4;
  int max_retries = 2;
  double timeout_s = 60.0;
  bool cache_enabled = true;
  std::string cache_dir = ".chat_cache";

  void validate() const;
};

const char* to_string(ResponseKind kind);
const char* to_string(FinishReason reason);
ResponseKind response_kind_from_string(const std::string& s);
FinishReason finish_reason_from_string(const std::string& s);

/// English name used when filling [LANG] / [LANGUAGE] template slots.
/// Unknown codes fall back to the code itself.
std::string language_name(const LanguageCode& code);

}  // namespace mpref
